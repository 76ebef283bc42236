//! Two-stage AdamW training over mixed-task batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::decoder::MaskPolicy;
use crate::error::{Error, Result};
use crate::features::SceneCache;
use crate::losses::sum_vars;
use crate::model::{sample_reps, Model};
use crate::optim::{learning_rate, AdamW, AdamWConfig};
use crate::params::Graph;
use crate::tasks::TaskKind;

const TRAIN_SALT: u64 = 0x5ca1_ab1e;

/// One row of the loss curve; losses are batch means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub stage: u8,
    pub lr: f64,
    pub total: f64,
    pub mask: f64,
    pub grounding: f64,
    pub generation: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainLog {
    pub curve: Vec<LossRecord>,
    pub events: Vec<String>,
}

impl TrainLog {
    /// One JSON object per line.
    pub fn curve_jsonl(&self) -> String {
        self.curve
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

pub fn stage1_steps(cfg: &RunConfig) -> usize {
    (cfg.train.stage1_fraction * cfg.train.steps as f64).round() as usize
}

pub fn guidance_steps(cfg: &RunConfig) -> usize {
    if cfg.train.gt_mask_guidance {
        (cfg.train.guidance_fraction * stage1_steps(cfg) as f64).round() as usize
    } else {
        0
    }
}

/// (entry, task) indices grouped by task kind, in dataset order.
fn task_index(data: &Dataset) -> Vec<(TaskKind, Vec<(usize, usize)>)> {
    TaskKind::ALL
        .into_iter()
        .map(|kind| {
            let tasks = data
                .entries
                .iter()
                .enumerate()
                .flat_map(|(e, entry)| {
                    entry
                        .tasks
                        .iter()
                        .enumerate()
                        .filter(move |(_, t)| t.kind == kind)
                        .map(move |(k, _)| (e, k))
                })
                .collect();
            (kind, tasks)
        })
        .filter(|(_, v): &(TaskKind, Vec<(usize, usize)>)| !v.is_empty())
        .collect()
}

pub struct Trainer<'a> {
    pub cfg: &'a RunConfig,
    pub data: &'a Dataset,
    pub caches: &'a [SceneCache],
    rng: ChaCha8Rng,
    optim: AdamW,
    index: Vec<(TaskKind, Vec<(usize, usize)>)>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &Model, cfg: &'a RunConfig, data: &'a Dataset, caches: &'a [SceneCache]) -> Result<Self> {
        if data.num_tasks() == 0 {
            return Err(Error::Invalid("training needs a nonempty dataset".into()));
        }
        if caches.len() != data.entries.len() {
            return Err(Error::Invalid("one scene cache per dataset entry required".into()));
        }
        let t = &cfg.train;
        Ok(Self {
            cfg,
            data,
            caches,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_SALT),
            optim: AdamW::new(
                AdamWConfig {
                    beta1: t.beta1,
                    beta2: t.beta2,
                    eps: t.eps,
                    weight_decay: t.weight_decay,
                },
                model.store.len(),
            ),
            index: task_index(data),
        })
    }

    fn pick(&mut self, stage: u8) -> Result<(usize, usize)> {
        let pool = if stage == 1 {
            self.index
                .iter()
                .find(|(k, _)| *k == TaskKind::Segment)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::Invalid("stage 1 needs segmentation tasks".into()))?
        } else {
            &self.index[self.rng.random_range(0..self.index.len())].1
        };
        Ok(pool[self.rng.random_range(0..pool.len())])
    }

    /// Runs one optimisation step.
    pub fn step(&mut self, model: &mut Model, step: usize) -> Result<LossRecord> {
        let cfg = self.cfg;
        let stage = if step < stage1_steps(cfg) { 1 } else { 2 };
        let guided = step < guidance_steps(cfg);
        let mut picks = Vec::with_capacity(cfg.train.batch_size);
        for _ in 0..cfg.train.batch_size {
            let task = self.pick(stage)?;
            let reps = sample_reps(&mut self.rng, cfg.model.dropout_rate);
            picks.push((task, reps));
        }

        let lr = learning_rate(step, cfg.train.steps, cfg.train.lr, cfg.train.warmup_fraction);
        let (record, grads) = {
            let mut g = Graph::new(&model.store);
            let mut encoded = Vec::new();
            let mut terms = Vec::with_capacity(picks.len());
            let mut sums = [0.0f64; 3];
            for ((e, k), reps) in &picks {
                let feats = match encoded.iter().find(|(i, _)| i == e) {
                    Some((_, f)) => *f,
                    None => {
                        let f = model.encode_scene(&mut g, &self.caches[*e])?;
                        encoded.push((*e, f));
                        f
                    }
                };
                let cache = &self.caches[*e];
                let policy = if guided {
                    MaskPolicy::GroundTruth {
                        gt: &cache.gt_masks,
                        weights: &cfg.loss,
                    }
                } else {
                    MaskPolicy::Predicted
                };
                let task = &self.data.entries[*e].tasks[*k];
                let l = model.sample_loss(&mut g, &feats, cache, task, reps, policy, &cfg.loss, None)?;
                sums[0] += l.parts.mask;
                sums[1] += l.parts.grounding;
                sums[2] += l.parts.generation;
                terms.push(l.loss);
            }
            let n = picks.len() as f64;
            let s = sum_vars(&mut g, &terms)?;
            let loss = g.tape.scale(s, 1.0 / n)?;
            let total = g.value(loss).item()?;
            if !total.is_finite() || total > cfg.train.divergence_threshold {
                return Err(Error::Diverged {
                    step,
                    message: format!(
                        "loss {total} (mask {:.4e}, grounding {:.4e}, generation {:.4e})",
                        sums[0] / n,
                        sums[1] / n,
                        sums[2] / n
                    ),
                });
            }
            let record = LossRecord {
                step,
                stage,
                lr,
                total,
                mask: sums[0] / n,
                grounding: sums[1] / n,
                generation: sums[2] / n,
            };
            (record, g.gradients(loss)?)
        };
        self.optim
            .step(&mut model.store, &grads, lr)
            .map_err(|e| Error::Diverged { step, message: e.to_string() })?;
        Ok(record)
    }
}

/// Trains `model` in place for `cfg.train.steps` steps.
pub fn train(model: &mut Model, cfg: &RunConfig, data: &Dataset, caches: &[SceneCache]) -> Result<TrainLog> {
    let mut trainer = Trainer::new(model, cfg, data, caches)?;
    let mut log = TrainLog::default();
    let s1 = stage1_steps(cfg);
    log.events.push(format!(
        "start: {} steps, stage 1 for {s1}, gt-mask guidance for {}, batch {}",
        cfg.train.steps,
        guidance_steps(cfg),
        cfg.train.batch_size
    ));
    for step in 0..cfg.train.steps {
        if step == s1 && s1 > 0 {
            log.events.push(format!("step {step}: stage 2 begins"));
        }
        let rec = trainer.step(model, step)?;
        if step % 100 == 0 || step + 1 == cfg.train.steps {
            log::info!("step {step} stage {} loss {:.5}", rec.stage, rec.total);
        }
        log.curve.push(rec);
    }
    log.events.push(format!("finished after {} steps", cfg.train.steps));
    Ok(log)
}
