//! Inference and dataset-level evaluation.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::decoder::MaskPolicy;
use crate::error::{Error, Result};
use crate::features::{Rep, SceneCache};
use crate::metrics::{exact_match, grounding_accuracy, instance_ap, mask_iou, multi_f1, top1, ScoredPrediction};
use crate::model::Model;
use crate::params::Graph;
use crate::tasks::{PromptSpec, TaskKind, TaskSample};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub reps: Vec<Rep>,
    /// Attend through the matched ground-truth masks instead of predictions.
    pub gt_mask_attention: bool,
}

impl EvalOptions {
    pub fn all() -> Self {
        Self {
            reps: Rep::ALL.to_vec(),
            gt_mask_attention: false,
        }
    }
}

/// Per-query outputs of one prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    /// Segment mask probabilities, one Vec per query.
    pub seg_probs: Vec<Vec<f64>>,
    pub grounding_logits: Vec<f64>,
    pub grounding_probs: Vec<f64>,
    pub answer: Option<Vec<usize>>,
}

impl Inference {
    pub fn point_mask(&self, cache: &SceneCache, query: usize, threshold: f64) -> Vec<usize> {
        cache.points_of(&self.seg_probs[query], threshold)
    }
}

/// Runs the model on one prompt; decodes text when `decode` is set.
pub fn infer(
    model: &Model,
    cache: &SceneCache,
    prompt: &PromptSpec,
    opts: &EvalOptions,
    decode: bool,
) -> Result<Inference> {
    let mut g = Graph::new(&model.store);
    let feats = model.encode_scene(&mut g, cache)?;
    let loss_weights = crate::config::LossWeights::default();
    let policy = if opts.gt_mask_attention {
        MaskPolicy::GroundTruth {
            gt: &cache.gt_masks,
            weights: &loss_weights,
        }
    } else {
        MaskPolicy::Predicted
    };
    let out = model.forward(&mut g, &feats, cache, prompt, &opts.reps, policy)?;
    let pm = g.value(out.p_mask);
    let seg_probs = (0..pm.cols()).map(|q| (0..pm.rows()).map(|s| pm.at(s, q)).collect()).collect();
    let grounding_logits = g.value(out.grounding.logits).data().to_vec();
    let grounding_probs = g.value(out.grounding.probs).data().to_vec();
    let answer = if decode {
        Some(model.generator.greedy(&mut g, out.decoder.queries, &model.vocab)?)
    } else {
        None
    };
    Ok(Inference {
        seg_probs,
        grounding_logits,
        grounding_probs,
        answer,
    })
}

/// Class-embedding visual prompt with Gaussian noise.
pub fn visual_prompt(model: &Model, class_id: usize, sigma: f64, rng: &mut ChaCha8Rng) -> PromptSpec {
    let row = model.embed_table().row(model.vocab.class_token(class_id));
    let normal = Normal::new(0.0, sigma).expect("nonnegative sigma");
    PromptSpec::Visual(row.iter().map(|x| x + normal.sample(rng)).collect())
}

pub fn seeded_visual_prompt(model: &Model, class_id: usize, sigma: f64, seed: u64) -> PromptSpec {
    visual_prompt(model, class_id, sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub reps: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
    pub config: serde_json::Value,
}

impl MetricsReport {
    /// Canonical JSON: keys sorted at every level, floats round-tripped.
    pub fn to_canonical_string(&self) -> String {
        let v = serde_json::to_value(self).expect("report serializes");
        let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }
}

pub fn build_caches(model: &Model, data: &Dataset) -> Result<Vec<SceneCache>> {
    data.entries.iter().map(|e| model.cache(&e.scene)).collect()
}

fn target_points(cache: &SceneCache, task: &TaskSample) -> Vec<Vec<usize>> {
    task.targets.iter().map(|&t| cache.instance_points[t].clone()).collect()
}

/// Evaluates every task in `data`.
pub fn evaluate(model: &Model, data: &Dataset, caches: &[SceneCache], opts: &EvalOptions) -> Result<MetricsReport> {
    if caches.len() != data.entries.len() {
        return Err(Error::Invalid("one scene cache per dataset entry required".into()));
    }
    let thr = model.cfg.mask_threshold;
    let eos = model.vocab.eos();
    let mut ground_ious = Vec::new();
    let mut multi = Vec::new();
    let mut qa = Vec::new();
    let mut captions = Vec::new();
    // per class: pooled predictions and GT count
    let mut seg: BTreeMap<usize, (Vec<ScoredPrediction>, usize)> = BTreeMap::new();

    for (entry, cache) in data.entries.iter().zip(caches) {
        for task in &entry.tasks {
            let out = infer(model, cache, &task.prompt, opts, task.kind.has_answer())?;
            let q = out.seg_probs.len();
            match task.kind {
                TaskKind::Ground => {
                    let k = top1(&out.grounding_probs).expect("at least one query");
                    let gt = target_points(cache, task);
                    ground_ious.push(mask_iou(&out.point_mask(cache, k, thr), &gt[0]));
                }
                TaskKind::Multiground => {
                    let preds = (0..q)
                        .filter(|&k| out.grounding_probs[k] >= 0.5)
                        .map(|k| out.point_mask(cache, k, thr))
                        .collect();
                    multi.push((preds, target_points(cache, task)));
                }
                TaskKind::Segment => {
                    let class = entry.scene.instances[task.targets[0]].class_id;
                    let slot = seg.entry(class).or_default();
                    let offset = slot.1;
                    let gts = target_points(cache, task);
                    for k in 0..q {
                        let mask = out.point_mask(cache, k, thr);
                        if mask.is_empty() {
                            continue;
                        }
                        slot.0.push(ScoredPrediction {
                            confidence: out.grounding_logits[k],
                            ious: gts.iter().enumerate().map(|(j, g)| (offset + j, mask_iou(&mask, g))).collect(),
                        });
                    }
                    slot.1 += gts.len();
                }
                TaskKind::Qa => qa.push(exact_match(out.answer.as_deref().unwrap_or(&[]), &task.answer, eos)),
                TaskKind::Caption => {
                    captions.push(exact_match(out.answer.as_deref().unwrap_or(&[]), &task.answer, eos))
                }
            }
        }
    }

    let mut metrics = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let rate = |v: &[bool]| if v.is_empty() { 0.0 } else { v.iter().filter(|&&b| b).count() as f64 / v.len() as f64 };
    metrics.insert("ground.acc@0.25".into(), grounding_accuracy(&ground_ious, 0.25));
    metrics.insert("ground.acc@0.5".into(), grounding_accuracy(&ground_ious, 0.5));
    counts.insert("ground".into(), ground_ious.len());
    metrics.insert("multiground.f1@0.25".into(), multi_f1(&multi, 0.25));
    metrics.insert("multiground.f1@0.5".into(), multi_f1(&multi, 0.5));
    counts.insert("multiground".into(), multi.len());
    let classes: Vec<_> = seg.values().filter(|(_, n)| *n > 0).map(|(p, n)| instance_ap(p, *n)).collect();
    let mean = |f: &dyn Fn(&crate::metrics::ApSummary) -> f64| {
        if classes.is_empty() {
            0.0
        } else {
            classes.iter().map(f).sum::<f64>() / classes.len() as f64
        }
    };
    metrics.insert("segment.ap".into(), mean(&|a| a.ap));
    metrics.insert("segment.ap50".into(), mean(&|a| a.ap50));
    metrics.insert("segment.ap25".into(), mean(&|a| a.ap25));
    counts.insert("segment.classes".into(), classes.len());
    metrics.insert("qa.em".into(), rate(&qa));
    counts.insert("qa".into(), qa.len());
    metrics.insert("caption.em".into(), rate(&captions));
    counts.insert("caption".into(), captions.len());

    Ok(MetricsReport {
        reps: Rep::label(&opts.reps),
        seed: model.seed,
        metrics,
        counts,
        config: serde_json::Value::Null,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptMode {
    Text,
    Visual,
}

/// Top-1 grounding accuracy at IoU 0.5 on single-instance class prompts,
/// prompted either by the class word or by a noisy class embedding.
pub fn class_prompt_accuracy(
    model: &Model,
    data: &Dataset,
    caches: &[SceneCache],
    mode: PromptMode,
    sigma: f64,
    seed: u64,
) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = EvalOptions::all();
    let mut ious = Vec::new();
    for (entry, cache) in data.entries.iter().zip(caches) {
        for task in &entry.tasks {
            if task.kind != TaskKind::Segment || task.targets.len() != 1 {
                continue;
            }
            let class = entry.scene.instances[task.targets[0]].class_id;
            let prompt = match mode {
                PromptMode::Text => task.prompt.clone(),
                PromptMode::Visual => visual_prompt(model, class, sigma, &mut rng),
            };
            let out = infer(model, cache, &prompt, &opts, false)?;
            let k = top1(&out.grounding_probs).expect("at least one query");
            ious.push(mask_iou(&out.point_mask(cache, k, model.cfg.mask_threshold), &cache.instance_points[task.targets[0]]));
        }
    }
    Ok((grounding_accuracy(&ious, 0.5), ious.len()))
}
