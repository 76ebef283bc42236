//! Unsupervised point grouping into segments.

use crate::config::{ModelConfig, Segmenter};
use crate::error::Result;
use crate::fps::fps;
use crate::knn::{knn_graph, Edge};
use crate::scene::{Scene, Vec3};

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins two roots; the larger tree (lower index on ties) becomes the root.
    fn union(&mut self, a: usize, b: usize, weight: f64) -> usize {
        let (root, child) = if self.size[a] > self.size[b] || (self.size[a] == self.size[b] && a < b) {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[child] = root;
        self.size[root] += self.size[child];
        self.internal[root] = self.internal[root].max(self.internal[child]).max(weight);
        root
    }
}

/// Relabels ids to `0..M` in order of first occurrence.
pub fn compact_ids(raw: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    raw.iter()
        .map(|&r| {
            let next = map.len();
            *map.entry(r).or_insert(next)
        })
        .collect()
}

/// Felzenszwalb–Huttenlocher merging over `edges`, followed by a size pass
/// that absorbs components smaller than `min_size`.
pub fn fh_segments(n: usize, edges: &[Edge], tau: f64, min_size: usize) -> Vec<usize> {
    let mut sorted: Vec<Edge> = edges.to_vec();
    sorted.sort_by(|a, b| a.weight.total_cmp(&b.weight).then((a.i, a.j).cmp(&(b.i, b.j))));
    let mut ds = DisjointSet::new(n);
    for e in &sorted {
        let (a, b) = (ds.find(e.i), ds.find(e.j));
        if a == b {
            continue;
        }
        let ta = ds.internal[a] + tau / ds.size[a] as f64;
        let tb = ds.internal[b] + tau / ds.size[b] as f64;
        if e.weight <= ta.min(tb) {
            ds.union(a, b, e.weight);
        }
    }
    for e in &sorted {
        let (a, b) = (ds.find(e.i), ds.find(e.j));
        if a != b && (ds.size[a] < min_size || ds.size[b] < min_size) {
            ds.union(a, b, e.weight);
        }
    }
    // components the graph cannot reach are folded into the largest one
    let mut roots: Vec<usize> = (0..n).filter(|&x| ds.find(x) == x).collect();
    if roots.len() > 1 {
        roots.sort_by(|&a, &b| ds.size[b].cmp(&ds.size[a]).then(a.cmp(&b)));
        let mut big = roots[0];
        for &r in &roots[1..] {
            if ds.size[r] < min_size {
                let r = ds.find(r);
                big = ds.find(big);
                big = ds.union(big, r, 0.0);
            }
        }
    }
    let raw: Vec<usize> = (0..n).map(|x| ds.find(x)).collect();
    compact_ids(&raw)
}

/// Assigns every point to its nearest farthest-point seed.
pub fn voronoi_segments(points: &[Vec3], count: usize) -> Result<Vec<usize>> {
    let seeds = fps(points, count.min(points.len()), 0)?;
    let raw: Vec<usize> = points
        .iter()
        .map(|p| {
            let mut best = (f64::INFINITY, 0);
            for (s, &idx) in seeds.iter().enumerate() {
                let q = &points[idx];
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d < best.0 {
                    best = (d, s);
                }
            }
            best.1
        })
        .collect();
    Ok(compact_ids(&raw))
}

/// Segments a scene according to the model configuration.
pub fn segment_scene(scene: &Scene, cfg: &ModelConfig) -> Result<Vec<usize>> {
    let n = scene.len();
    if n == 1 {
        return Ok(vec![0]);
    }
    match cfg.segmenter {
        Segmenter::Graph => {
            let k = cfg.knn_k.min(n - 1);
            let edges = knn_graph(&scene.points, Some(&scene.colors), cfg.color_weight, k)?;
            Ok(fh_segments(n, &edges, cfg.fh_k, cfg.fh_min_size))
        }
        Segmenter::Voronoi => voronoi_segments(&scene.points, cfg.voronoi_segments),
    }
}

/// Number of segments in a compacted id list.
pub fn segment_count(ids: &[usize]) -> usize {
    ids.iter().max().map_or(0, |m| m + 1)
}

/// Member point indices of each segment, ascending.
pub fn members(ids: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); segment_count(ids)];
    for (p, &s) in ids.iter().enumerate() {
        out[s].push(p);
    }
    out
}
