//! Segment-level scene features: precomputed per-scene inputs and the
//! trainable voxel, image, point and location streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qtensor::{Tensor, Var};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::fourier::FourierPE;
use crate::fps::fps;
use crate::params::{Graph, Init, Linear, Mlp2};
use crate::render::{backproject, render_views};
use crate::scene::{Scene, Vec3};
use crate::segment::{members, segment_count, segment_scene};
use crate::voxel::{voxelize, VoxelGrid, BASE_CHANNELS, LEVELS};

/// Row-wise mean over each segment's member points, summing in point order.
pub fn segment_mean<'a>(members: &[Vec<usize>], width: usize, row: impl Fn(usize) -> &'a [f64]) -> Tensor {
    let mut data = vec![0.0; members.len() * width];
    for (m, out) in members.iter().zip(data.chunks_exact_mut(width)) {
        for &p in m {
            for (o, x) in out.iter_mut().zip(row(p)) {
                *o += x;
            }
        }
        for o in out.iter_mut() {
            *o /= m.len() as f64;
        }
    }
    Tensor::new(vec![members.len(), width], data).expect("sized")
}

/// Segment mask of every instance: a segment belongs to the instance owning
/// the plurality of its points (background counts as a label; ties go to
/// the lowest instance index, background last).
pub fn instance_segment_masks(scene: &Scene, members: &[Vec<usize>]) -> Tensor {
    let owner = scene.point_instances();
    let g = scene.instances.len();
    let mut data = vec![0.0; members.len() * g];
    for (s, m) in members.iter().enumerate() {
        let mut counts = vec![0usize; g + 1];
        for &p in m {
            counts[owner[p].unwrap_or(g)] += 1;
        }
        let mut best = g;
        for k in 0..=g {
            if counts[k] > counts[best] || (counts[k] == counts[best] && k < best) {
                best = k;
            }
        }
        if best < g {
            data[s * g + best] = 1.0;
        }
    }
    Tensor::new(vec![members.len(), g], data).expect("sized")
}

/// Everything about a scene that does not depend on trainable parameters.
#[derive(Clone, Debug)]
pub struct SceneCache {
    pub scene_id: u64,
    pub n_points: usize,
    pub segment_ids: Vec<usize>,
    pub members: Vec<Vec<usize>>,
    /// M×3
    pub centroids: Tensor,
    /// Per level, M×(4+D) pooled voxel descriptors.
    pub voxel_pooled: Vec<Tensor>,
    /// M×(D+3) pooled back-projected pixel features.
    pub image_pooled: Tensor,
    /// (M·S)×6 normalised point samples, S consecutive rows per segment.
    pub point_samples: Tensor,
    pub samples_per_segment: usize,
    pub query_positions: Vec<Vec3>,
    /// Q×D Fourier encoding of the query positions.
    pub query_pe: Tensor,
    /// M×G segment masks of every instance.
    pub gt_masks: Tensor,
    pub instance_points: Vec<Vec<usize>>,
}

impl SceneCache {
    pub fn m(&self) -> usize {
        self.members.len()
    }

    pub fn build(scene: &Scene, cfg: &ModelConfig, embed: &Tensor, pe: &FourierPE, seed: u64) -> Result<Self> {
        let segment_ids = if scene.segment_ids.is_empty() {
            segment_scene(scene, cfg)?
        } else {
            scene.segment_ids.clone()
        };
        Self::with_segments(scene, segment_ids, cfg, embed, pe, seed)
    }

    pub fn with_segments(
        scene: &Scene,
        segment_ids: Vec<usize>,
        cfg: &ModelConfig,
        embed: &Tensor,
        pe: &FourierPE,
        seed: u64,
    ) -> Result<Self> {
        let n = scene.len();
        if segment_ids.len() != n {
            return Err(Error::Invalid("segment ids misaligned with points".into()));
        }
        let mem = members(&segment_ids);
        if mem.iter().any(Vec::is_empty) || segment_count(&segment_ids) == 0 {
            return Err(Error::Invalid("segment ids must be compact with no empty segment".into()));
        }
        let centroids = segment_mean(&mem, 3, |p| &scene.points[p]);

        let grid: VoxelGrid = voxelize(&scene.points, cfg.voxel_size);
        let voxel_pooled = (0..LEVELS)
            .map(|l| {
                let desc = grid.descriptors(l, &scene.colors, pe);
                let lv = &grid.levels[l];
                segment_mean(&mem, desc.cols(), |p| desc.row(lv.point_voxel[p]))
            })
            .collect();

        let classes = scene.point_classes();
        let width = embed.cols() + 3;
        let mut feat = Vec::with_capacity(n * width);
        for p in 0..n {
            feat.extend_from_slice(embed.row(class_row(classes[p])));
            feat.extend_from_slice(&scene.colors[p]);
        }
        let point_features = Tensor::new(vec![n, width], feat).expect("sized");
        let views = render_views(&scene.cameras, &scene.points, cfg.splat_radius);
        let per_point = backproject(&views, &point_features, n);
        let image_pooled = segment_mean(&mem, width, |p| per_point.row(p));

        let s = cfg.points_per_segment;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ scene.id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut samples = Vec::with_capacity(mem.len() * s * 6);
        for (k, m) in mem.iter().enumerate() {
            let c = centroids.row(k);
            let radius = m
                .iter()
                .map(|&p| {
                    let q = &scene.points[p];
                    ((q[0] - c[0]).powi(2) + (q[1] - c[1]).powi(2) + (q[2] - c[2]).powi(2)).sqrt()
                })
                .fold(0.0, f64::max);
            let scale = if radius > 0.0 { 1.0 / radius } else { 1.0 };
            for _ in 0..s {
                let p = m[rng.random_range(0..m.len())];
                let q = &scene.points[p];
                for a in 0..3 {
                    samples.push((q[a] - c[a]) * scale);
                }
                samples.extend_from_slice(&scene.colors[p]);
            }
        }
        let point_samples = Tensor::new(vec![mem.len() * s, 6], samples).expect("sized");

        if cfg.num_queries > n {
            return Err(Error::Invalid(format!(
                "{} queries requested for a scene of {n} points",
                cfg.num_queries
            )));
        }
        let qidx = fps(&scene.points, cfg.num_queries, 0)?;
        let query_positions: Vec<Vec3> = qidx.iter().map(|&i| scene.points[i]).collect();
        let query_pe = pe.encode(&query_positions);

        Ok(Self {
            scene_id: scene.id,
            n_points: n,
            gt_masks: instance_segment_masks(scene, &mem),
            segment_ids,
            members: mem,
            centroids,
            voxel_pooled,
            image_pooled,
            point_samples,
            samples_per_segment: s,
            query_positions,
            query_pe,
            instance_points: scene.instances.iter().map(|i| i.point_indices.clone()).collect(),
        })
    }

    /// Expands a per-segment prediction to the set of points in segments at or
    /// above `threshold`.
    pub fn points_of(&self, seg_scores: &[f64], threshold: f64) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.n_points)
            .filter(|&p| seg_scores[self.segment_ids[p]] >= threshold)
            .collect();
        out.sort_unstable();
        out
    }
}

/// Row of the class embedding table used for a class id (floor included).
pub fn class_row(class_id: usize) -> usize {
    // class tokens follow [SOS], [EOS], [object] in the built-in vocabulary
    3 + class_id
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rep {
    Voxel,
    Image,
    Point,
}

impl Rep {
    pub const ALL: [Rep; 3] = [Rep::Voxel, Rep::Image, Rep::Point];

    pub fn letter(self) -> char {
        match self {
            Rep::Voxel => 'V',
            Rep::Image => 'I',
            Rep::Point => 'P',
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Rep>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let rep = match part {
                "V" | "v" => Rep::Voxel,
                "I" | "i" => Rep::Image,
                "P" | "p" => Rep::Point,
                other => return Err(Error::Invalid(format!("unknown representation {other:?}"))),
            };
            if !out.contains(&rep) {
                out.push(rep);
            }
        }
        if out.is_empty() {
            return Err(Error::Invalid("representation subset must be nonempty".into()));
        }
        out.sort();
        Ok(out)
    }

    pub fn label(reps: &[Rep]) -> String {
        reps.iter().map(|r| r.letter().to_string()).collect::<Vec<_>>().join(",")
    }
}

/// Segment features on the tape.
#[derive(Clone, Copy, Debug)]
pub struct SegmentVars {
    pub v: Var,
    pub i: Var,
    pub p: Var,
    pub l: Var,
}

impl SegmentVars {
    pub fn get(&self, rep: Rep) -> Var {
        match rep {
            Rep::Voxel => self.v,
            Rep::Image => self.i,
            Rep::Point => self.p,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SceneEncoder {
    pub voxel_levels: Vec<Linear>,
    pub voxel_proj: Linear,
    pub image: Linear,
    pub point: Mlp2,
    pub location: Mlp2,
}

impl SceneEncoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Self {
        let d = cfg.hidden_dim;
        Self {
            voxel_levels: (0..LEVELS)
                .map(|l| Linear::new(init, &format!("scene.voxel.level{l}"), BASE_CHANNELS + d, d / 4))
                .collect(),
            voxel_proj: Linear::new(init, "scene.voxel.proj", d, d),
            image: Linear::new(init, "scene.image", d + 3, d),
            point: Mlp2::new(init, "scene.point", 6, cfg.point_hidden, d),
            location: Mlp2::new(init, "scene.location", 3, d, d),
        }
    }

    pub fn voxel(&self, g: &mut Graph, cache: &SceneCache) -> Result<Var> {
        let mut parts = Vec::with_capacity(LEVELS);
        for (lin, pooled) in self.voxel_levels.iter().zip(&cache.voxel_pooled) {
            let x = g.constant(pooled.clone())?;
            parts.push(lin.forward(g, x)?);
        }
        let cat = g.tape.concat_cols(&parts)?;
        self.voxel_proj.forward(g, cat)
    }

    pub fn image(&self, g: &mut Graph, cache: &SceneCache) -> Result<Var> {
        let x = g.constant(cache.image_pooled.clone())?;
        self.image.forward(g, x)
    }

    pub fn point(&self, g: &mut Graph, cache: &SceneCache) -> Result<Var> {
        let x = g.constant(cache.point_samples.clone())?;
        let h = self.point.forward(g, x)?;
        Ok(g.tape.group_max(h, cache.samples_per_segment)?)
    }

    pub fn location(&self, g: &mut Graph, cache: &SceneCache) -> Result<Var> {
        let x = g.constant(cache.centroids.clone())?;
        self.location.forward(g, x)
    }

    pub fn encode(&self, g: &mut Graph, cache: &SceneCache) -> Result<SegmentVars> {
        Ok(SegmentVars {
            v: self.voxel(g, cache)?,
            i: self.image(g, cache)?,
            p: self.point(g, cache)?,
            l: self.location(g, cache)?,
        })
    }
}
