//! Run configuration. Every section rejects unknown keys.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub min_points: usize,
    pub max_points: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Side length of the square floor, meters.
    pub room_extent: f64,
    /// Minimum free gap between object footprints, meters.
    pub margin: f64,
    pub floor_fraction: f64,
    pub color_noise: f64,
    pub place_retries: usize,
    pub cameras: usize,
    pub camera_width: usize,
    pub camera_height: usize,
    pub camera_fov: f64,
    pub camera_elevation: f64,
    pub zero_target_prompts: usize,
    pub max_relation_prompts: usize,
    /// Required distance advantage of the nearest referent over the runner-up.
    pub relation_margin: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_points: 2000,
            max_points: 6000,
            min_objects: 4,
            max_objects: 10,
            room_extent: 6.0,
            margin: 0.15,
            floor_fraction: 0.3,
            color_noise: 0.03,
            place_retries: 500,
            cameras: 4,
            camera_width: 80,
            camera_height: 60,
            camera_fov: 70.0,
            camera_elevation: 2.5,
            zero_target_prompts: 2,
            max_relation_prompts: 4,
            relation_margin: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Main,
    Parallel,
    Sequential,
}

impl Structure {
    pub const ALL: [Structure; 3] = [Structure::Main, Structure::Parallel, Structure::Sequential];

    pub fn name(self) -> &'static str {
        match self {
            Structure::Main => "main",
            Structure::Parallel => "parallel",
            Structure::Sequential => "sequential",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segmenter {
    /// Felzenszwalb–Huttenlocher over a kNN graph.
    Graph,
    /// Nearest-seed partition around farthest-point seeds; fixed segment count.
    Voronoi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub decoder_layers: usize,
    pub num_queries: usize,
    pub points_per_segment: usize,
    pub point_hidden: usize,
    pub voxel_size: f64,
    pub fourier_sigma: f64,
    pub segmenter: Segmenter,
    pub fh_k: f64,
    pub fh_min_size: usize,
    pub knn_k: usize,
    pub color_weight: f64,
    pub voronoi_segments: usize,
    pub structure: Structure,
    pub extra_residuals: bool,
    pub dropout_rate: f64,
    pub splat_radius: usize,
    pub max_answer_len: usize,
    pub generator_blocks: usize,
    pub ln_eps: f64,
    pub mask_threshold: f64,
    /// Replace intermediate attention masks by matched ground-truth masks at
    /// evaluation time.
    pub gt_mask_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            decoder_layers: 4,
            num_queries: 16,
            points_per_segment: 128,
            point_hidden: 32,
            voxel_size: 0.05,
            fourier_sigma: 0.5,
            segmenter: Segmenter::Graph,
            fh_k: 0.08,
            fh_min_size: 20,
            knn_k: 8,
            color_weight: 0.5,
            voronoi_segments: 12,
            structure: Structure::Main,
            extra_residuals: false,
            dropout_rate: 0.6,
            splat_radius: 0,
            max_answer_len: 16,
            generator_blocks: 2,
            ln_eps: 1e-5,
            mask_threshold: 0.5,
            gt_mask_attention: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub mask: f64,
    pub grounding: f64,
    pub generation: f64,
    pub bce: f64,
    pub dice: f64,
    /// Weight of the empty-mask BCE applied to unmatched queries.
    pub no_object: f64,
    pub dice_smooth: f64,
    pub bce_clamp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mask: 1.0,
            grounding: 10.0,
            generation: 1.0,
            bce: 1.0,
            dice: 1.0,
            no_object: 0.1,
            dice_smooth: 1.0,
            bce_clamp: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub stage1_fraction: f64,
    pub warmup_fraction: f64,
    pub gt_mask_guidance: bool,
    /// Share of stage 1 that runs with ground-truth attention masks when
    /// guidance is enabled.
    pub guidance_fraction: f64,
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 4,
            steps: 3000,
            stage1_fraction: 0.25,
            warmup_fraction: 0.1,
            gt_mask_guidance: false,
            guidance_fraction: 0.25,
            divergence_threshold: 1e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
}

/// Full-scale values for the knobs that are scaled down by default. Emitted
/// next to every config echo.
#[derive(Clone, Debug, Serialize)]
pub struct FullScale {
    pub hidden_dim: usize,
    pub decoder_layers: usize,
    pub num_queries: usize,
    pub points_per_segment: usize,
    pub voxel_size: f64,
    pub grounding_head_hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
}

pub const FULL_SCALE: FullScale = FullScale {
    hidden_dim: 768,
    decoder_layers: 4,
    num_queries: 120,
    points_per_segment: 1024,
    voxel_size: 0.02,
    grounding_head_hidden: 384,
    lr: 1e-4,
    batch_size: 16,
};

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let s = &self.scene;
        if s.min_points == 0 || s.min_points > s.max_points {
            return bad(format!("point budget {}..{}", s.min_points, s.max_points));
        }
        if s.min_objects == 0 || s.min_objects > s.max_objects {
            return bad(format!("object count {}..{}", s.min_objects, s.max_objects));
        }
        if s.camera_width < 8 || s.camera_height < 8 {
            return bad("camera resolution must be at least 8x8".into());
        }
        if !(s.camera_fov > 10.0 && s.camera_fov < 170.0) {
            return bad(format!("camera fov {} outside (10, 170)", s.camera_fov));
        }
        if s.cameras == 0 {
            return bad("at least one camera required".into());
        }
        if !(0.0..1.0).contains(&s.floor_fraction) || s.room_extent <= 0.0 {
            return bad("floor_fraction must be in [0,1) and room_extent > 0".into());
        }
        let m = &self.model;
        if m.hidden_dim < 4 || m.hidden_dim % 4 != 0 {
            return bad(format!("hidden_dim {} must be a positive multiple of 4", m.hidden_dim));
        }
        if m.num_queries == 0 || m.points_per_segment == 0 || m.point_hidden == 0 {
            return bad("num_queries, points_per_segment and point_hidden must be positive".into());
        }
        if m.voxel_size <= 0.0 || m.knn_k == 0 {
            return bad("voxel_size and knn_k must be positive".into());
        }
        if !(0.0..1.0).contains(&m.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0,1)", m.dropout_rate));
        }
        if m.max_answer_len == 0 || m.generator_blocks == 0 {
            return bad("generator needs at least one block and one token".into());
        }
        if m.segmenter == Segmenter::Voronoi && m.voronoi_segments == 0 {
            return bad("voronoi_segments must be positive".into());
        }
        let l = &self.loss;
        if [l.mask, l.grounding, l.generation, l.bce, l.dice, l.no_object]
            .iter()
            .any(|w| *w < 0.0)
        {
            return bad("loss weights must be non-negative".into());
        }
        let t = &self.train;
        if t.lr <= 0.0 {
            return bad("lr must be positive".into());
        }
        if !(0.0..=1.0).contains(&t.stage1_fraction) || !(0.0..=1.0).contains(&t.warmup_fraction) {
            return bad("stage1_fraction and warmup_fraction must be in [0,1]".into());
        }
        if t.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    /// Hash of everything that determines parameter shapes and their
    /// initialisation.
    pub fn model_hash(&self) -> String {
        let canon = serde_json::json!({ "seed": self.seed, "model": self.model });
        hex::encode(Sha256::digest(canon.to_string().as_bytes()))
    }

    /// Canonical JSON echo embedded in artifacts.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self,
            "full_scale": FULL_SCALE,
            "model_hash": self.model_hash(),
        })
    }

    /// Small dimensions used by gradient checks.
    pub fn tiny() -> Self {
        let mut cfg = RunConfig::default();
        cfg.scene.min_points = 160;
        cfg.scene.max_points = 160;
        cfg.scene.min_objects = 2;
        cfg.scene.max_objects = 2;
        cfg.scene.room_extent = 3.0;
        cfg.scene.camera_width = 16;
        cfg.scene.camera_height = 12;
        cfg.model.hidden_dim = 16;
        cfg.model.decoder_layers = 2;
        cfg.model.num_queries = 4;
        cfg.model.points_per_segment = 4;
        cfg.model.point_hidden = 4;
        cfg.model.segmenter = Segmenter::Voronoi;
        cfg.model.voronoi_segments = 12;
        cfg.model.max_answer_len = 8;
        cfg.model.generator_blocks = 2;
        cfg
    }
}
