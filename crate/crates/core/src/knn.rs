//! k-nearest-neighbour graphs in a joint position/color metric.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scene::Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

fn norm(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `‖Δp‖ + β‖Δc‖`; colors may be omitted for a purely spatial metric.
pub fn joint_distance(points: &[Vec3], colors: Option<&[Vec3]>, beta: f64, i: usize, j: usize) -> f64 {
    let d = norm(&points[i], &points[j]);
    match colors {
        Some(c) if beta != 0.0 => d + beta * norm(&c[i], &c[j]),
        _ => d,
    }
}

type Cell = [i64; 3];

struct Grid {
    size: f64,
    cells: HashMap<Cell, Vec<usize>>,
}

impl Grid {
    fn new(points: &[Vec3], k: usize) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let volume: f64 = (0..3).map(|a| (hi[a] - lo[a]).max(1e-3)).product();
        // aim for roughly k points per occupied cell
        let size = (volume * k.max(1) as f64 / points.len() as f64).cbrt().max(1e-6);
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell_of(p, size)).or_default().push(i);
        }
        Self { size, cells }
    }

    fn cell_of(p: &Vec3, size: f64) -> Cell {
        p.map(|x| (x / size).floor() as i64)
    }
}

/// For each point, its `k` nearest other points, ordered by (distance, index).
pub fn neighbours(points: &[Vec3], colors: Option<&[Vec3]>, beta: f64, k: usize) -> Result<Vec<Vec<(f64, usize)>>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Invalid(format!("kNN graph needs at least 2 points, got {n}")));
    }
    if k == 0 || k >= n {
        return Err(Error::Invalid(format!("kNN requires 1 <= k < N, got k={k}, N={n}")));
    }
    let grid = Grid::new(points, k);
    let mut out = Vec::with_capacity(n);
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(4 * k);
    for i in 0..n {
        best.clear();
        let home = Grid::cell_of(&points[i], grid.size);
        let mut ring: i64 = 0;
        loop {
            let shell = (2 * ring + 1).pow(3) - (2 * ring - 1).max(0).pow(3);
            if shell as usize > grid.cells.len() {
                // sparse grid: a full scan is cheaper than more rings
                best.clear();
                best.extend((0..n).filter(|&j| j != i).map(|j| (joint_distance(points, colors, beta, i, j), j)));
                best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                best.truncate(k);
                break;
            }
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let cell = [home[0] + dx, home[1] + dy, home[2] + dz];
                        if let Some(members) = grid.cells.get(&cell) {
                            for &j in members {
                                if j != i {
                                    best.push((joint_distance(points, colors, beta, i, j), j));
                                }
                            }
                        }
                    }
                }
            }
            best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            best.truncate(k);
            // anything outside the scanned rings is at least `ring * size` away
            let bound = ring as f64 * grid.size;
            if best.len() == k && best[k - 1].0 <= bound {
                break;
            }
            ring += 1;
        }
        out.push(best.clone());
    }
    Ok(out)
}

/// Symmetric kNN edge list with `i < j`, deduplicated, in (i, j) order.
pub fn knn_graph(points: &[Vec3], colors: Option<&[Vec3]>, beta: f64, k: usize) -> Result<Vec<Edge>> {
    let nb = neighbours(points, colors, beta, k)?;
    let mut edges: Vec<Edge> = Vec::with_capacity(points.len() * k);
    for (i, list) in nb.iter().enumerate() {
        for &(weight, j) in list {
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            edges.push(Edge { i: a, j: b, weight });
        }
    }
    edges.sort_by(|x, y| (x.i, x.j).cmp(&(y.i, y.j)));
    edges.dedup_by(|x, y| x.i == y.i && x.j == y.j);
    Ok(edges)
}
