//! Depth, structure and representation sweeps.

use serde::Serialize;

use crate::config::{RunConfig, Structure};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::eval::{build_caches, evaluate, EvalOptions, MetricsReport};
use crate::features::{Rep, SceneCache};
use crate::gradcheck::{check_model, tiny_variant};
use crate::model::Model;
use crate::train::train;

pub const DEPTHS: [usize; 3] = [2, 4, 6];

/// The representation subsets evaluated without retraining.
pub fn rep_subsets() -> Vec<Vec<Rep>> {
    vec![vec![Rep::Voxel], vec![Rep::Voxel, Rep::Point], Rep::ALL.to_vec()]
}

pub const TABLE_METRICS: [&str; 5] = ["ground.acc@0.5", "segment.ap25", "multiground.f1@0.5", "qa.em", "caption.em"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub trainable_scalars: usize,
    /// Mean loss over the last tenth of training.
    pub final_loss: f64,
    pub metrics: MetricsReport,
    pub grad_max_rel_err: Option<f64>,
    pub grad_passed: Option<bool>,
}

pub fn depth_variants(cfg: &RunConfig) -> Vec<(String, RunConfig)> {
    DEPTHS
        .iter()
        .map(|&n| {
            let mut c = cfg.clone();
            c.model.decoder_layers = n;
            (format!("N={n}"), c)
        })
        .collect()
}

pub fn structure_variants(cfg: &RunConfig) -> Vec<(String, RunConfig)> {
    Structure::ALL
        .iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.model.structure = s;
            (s.name().to_string(), c)
        })
        .collect()
}

/// Trains, evaluates and gradient-checks every variant.
pub fn training_sweep(variants: &[(String, RunConfig)], data: &Dataset) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for (label, cfg) in variants {
        log::info!("ablation variant {label}");
        let mut model = Model::new(&cfg.model, cfg.seed)?;
        let caches = build_caches(&model, data)?;
        let log = train(&mut model, cfg, data, &caches)?;
        let tail = (log.curve.len() / 10).max(1);
        let final_loss = if log.curve.is_empty() {
            f64::NAN
        } else {
            let last = &log.curve[log.curve.len().saturating_sub(tail)..];
            last.iter().map(|r| r.total).sum::<f64>() / last.len() as f64
        };
        let mut metrics = evaluate(&model, data, &caches, &EvalOptions::all())?;
        metrics.config = cfg.echo();
        let mut tiny = tiny_variant(cfg);
        tiny.model.decoder_layers = cfg.model.decoder_layers;
        let grad = check_model(&tiny, false)?;
        rows.push(AblationRow {
            variant: label.clone(),
            trainable_scalars: model.store.num_trainable_scalars(),
            final_loss,
            metrics,
            grad_max_rel_err: Some(grad.max_rel_err),
            grad_passed: Some(grad.passed()),
        });
    }
    Ok(rows)
}

/// Evaluates one trained model under each representation subset.
pub fn reps_sweep(model: &Model, cfg: &RunConfig, data: &Dataset, caches: &[SceneCache]) -> Result<Vec<AblationRow>> {
    rep_subsets()
        .into_iter()
        .map(|reps| {
            let opts = EvalOptions {
                reps: reps.clone(),
                gt_mask_attention: cfg.model.gt_mask_attention,
            };
            let mut metrics = evaluate(model, data, caches, &opts)?;
            metrics.config = cfg.echo();
            Ok(AblationRow {
                variant: format!("{{{}}}", Rep::label(&reps)),
                trainable_scalars: model.store.num_trainable_scalars(),
                final_loss: f64::NAN,
                metrics,
                grad_max_rel_err: None,
                grad_passed: None,
            })
        })
        .collect()
}

/// Markdown comparison table.
pub fn render_table(title: &str, rows: &[AblationRow]) -> String {
    let mut s = format!("## {title}\n\n| variant | params | final loss |");
    for m in TABLE_METRICS {
        s.push_str(&format!(" {m} |"));
    }
    s.push_str(" grad max rel err | grad check |\n|---|---|---|");
    s.push_str(&"---|".repeat(TABLE_METRICS.len() + 2));
    s.push('\n');
    for r in rows {
        let loss = if r.final_loss.is_finite() { format!("{:.4}", r.final_loss) } else { "-".into() };
        s.push_str(&format!("| {} | {} | {loss} |", r.variant, r.trainable_scalars));
        for m in TABLE_METRICS {
            s.push_str(&format!(" {:.4} |", r.metrics.get(m).unwrap_or(f64::NAN)));
        }
        match (r.grad_max_rel_err, r.grad_passed) {
            (Some(e), Some(p)) => s.push_str(&format!(" {e:.3e} | {} |\n", if p { "pass" } else { "FAIL" })),
            _ => s.push_str(" - | - |\n"),
        }
    }
    s
}
