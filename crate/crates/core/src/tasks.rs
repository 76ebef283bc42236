//! Task samples derived from a scene through a small template grammar.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SceneConfig;
use crate::error::{Error, Result};
use crate::scene::{Scene, Vec3};
use crate::vocab::{Vocab, CLASSES, COLORS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Segment,
    Ground,
    Multiground,
    Qa,
    Caption,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Segment,
        TaskKind::Ground,
        TaskKind::Multiground,
        TaskKind::Qa,
        TaskKind::Caption,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Segment => "segment",
            TaskKind::Ground => "ground",
            TaskKind::Multiground => "multiground",
            TaskKind::Qa => "qa",
            TaskKind::Caption => "caption",
        }
    }

    pub fn has_mask_supervision(self) -> bool {
        self != TaskKind::Caption
    }

    pub fn has_grounding_supervision(self) -> bool {
        self != TaskKind::Caption
    }

    pub fn has_answer(self) -> bool {
        matches!(self, TaskKind::Qa | TaskKind::Caption)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum PromptSpec {
    /// Content token ids; start and end markers are added by the encoder.
    Text(Vec<usize>),
    /// Feature substituted into the object slot.
    Visual(Vec<f64>),
    /// A 3D location (3 floats) or a box as center+size (6 floats).
    Numerical(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSample {
    pub kind: TaskKind,
    pub prompt: PromptSpec,
    /// Indices into the scene's instance list.
    pub targets: Vec<usize>,
    /// Answer token ids ending with the end marker; empty when unsupervised.
    pub answer: Vec<usize>,
}

impl TaskSample {
    pub fn validate(&self, scene: &Scene, vocab: &Vocab) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("{} task: {m}", self.kind.name())));
        if self.targets.iter().any(|&t| t >= scene.instances.len()) {
            return bad("target out of range");
        }
        if self.targets.windows(2).any(|w| w[0] >= w[1]) {
            return bad("targets not strictly sorted");
        }
        if self.kind == TaskKind::Ground && self.targets.len() != 1 {
            return bad("grounding needs exactly one target");
        }
        if self.kind.has_answer() && self.answer.is_empty() {
            return bad("answer required");
        }
        vocab.check_ids(&self.answer)?;
        match &self.prompt {
            PromptSpec::Text(ids) => vocab.check_ids(ids)?,
            PromptSpec::Numerical(v) if v.len() != 3 && v.len() != 6 => {
                return bad("numerical prompt needs 3 or 6 values")
            }
            PromptSpec::Numerical(v) | PromptSpec::Visual(v) if v.iter().any(|x| !x.is_finite()) => {
                return bad("non-finite prompt payload")
            }
            _ => {}
        }
        Ok(())
    }
}

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn text(vocab: &Vocab, words: &str) -> PromptSpec {
    PromptSpec::Text(vocab.encode(words).expect("template words are in the vocabulary"))
}

fn answer(vocab: &Vocab, words: &str) -> Vec<usize> {
    let mut ids = vocab.encode(words).expect("template words are in the vocabulary");
    ids.push(vocab.eos());
    ids
}

/// Resolves "the `a` nearest the `b`": `b` must be unique, and the nearest `a`
/// must beat the runner-up by `margin`.
pub fn resolve_nearest(scene: &Scene, a: usize, b: usize, margin: f64) -> Option<usize> {
    let anchors = scene.instances_of(b);
    if a == b || anchors.len() != 1 {
        return None;
    }
    let anchor = scene.instances[anchors[0]].bbox.center;
    let mut cands: Vec<(f64, usize)> = scene
        .instances_of(a)
        .into_iter()
        .map(|k| (dist(&scene.instances[k].bbox.center, &anchor), k))
        .collect();
    if cands.len() < 2 {
        return None;
    }
    cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    (cands[1].0 - cands[0].0 >= margin).then_some(cands[0].1)
}

/// Class of the instance nearest to `k` by box center, ties to the lower index.
pub fn nearest_other_class(scene: &Scene, k: usize) -> Option<usize> {
    let c = scene.instances[k].bbox.center;
    (0..scene.instances.len())
        .filter(|&j| j != k)
        .min_by(|&i, &j| {
            dist(&scene.instances[i].bbox.center, &c)
                .total_cmp(&dist(&scene.instances[j].bbox.center, &c))
                .then(i.cmp(&j))
        })
        .map(|j| scene.instances[j].class_id)
}

pub fn generate_tasks(scene: &Scene, seed: u64, cfg: &SceneConfig, vocab: &Vocab) -> Result<Vec<TaskSample>> {
    if scene.instances.is_empty() {
        return Err(Error::Scene("task generation needs at least one instance".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a5c_5eed);
    let present: Vec<usize> = (0..CLASSES.len())
        .filter(|&c| !scene.instances_of(c).is_empty())
        .collect();
    let mut absent: Vec<usize> = (0..CLASSES.len()).filter(|c| !present.contains(c)).collect();
    absent.shuffle(&mut rng);
    absent.truncate(cfg.zero_target_prompts);
    absent.sort_unstable();

    let mut tasks = Vec::new();
    for &c in &present {
        tasks.push(TaskSample {
            kind: TaskKind::Segment,
            prompt: text(vocab, CLASSES[c]),
            targets: scene.instances_of(c),
            answer: Vec::new(),
        });
    }

    for (k, inst) in scene.instances.iter().enumerate() {
        let same = scene
            .instances
            .iter()
            .filter(|o| o.class_id == inst.class_id && o.color == inst.color)
            .count();
        if same == 1 {
            tasks.push(TaskSample {
                kind: TaskKind::Ground,
                prompt: text(vocab, &format!("the {} {}", COLORS[inst.color], CLASSES[inst.class_id])),
                targets: vec![k],
                answer: Vec::new(),
            });
        }
    }
    let mut relations = Vec::new();
    for &a in &present {
        for &b in &present {
            if let Some(k) = resolve_nearest(scene, a, b, cfg.relation_margin) {
                relations.push((a, b, k));
            }
        }
    }
    relations.shuffle(&mut rng);
    relations.truncate(cfg.max_relation_prompts);
    relations.sort_unstable();
    for (a, b, k) in relations {
        tasks.push(TaskSample {
            kind: TaskKind::Ground,
            prompt: text(vocab, &format!("the {} nearest the {}", CLASSES[a], CLASSES[b])),
            targets: vec![k],
            answer: Vec::new(),
        });
    }

    let queried: Vec<usize> = {
        let mut v: Vec<usize> = present.iter().chain(&absent).copied().collect();
        v.sort_unstable();
        v
    };
    for &c in &queried {
        tasks.push(TaskSample {
            kind: TaskKind::Multiground,
            prompt: text(vocab, &format!("all {}", CLASSES[c])),
            targets: scene.instances_of(c),
            answer: Vec::new(),
        });
    }
    for &c in &queried {
        let targets = scene.instances_of(c);
        if targets.len() > 9 {
            continue;
        }
        tasks.push(TaskSample {
            kind: TaskKind::Qa,
            prompt: text(vocab, &format!("how many {}", CLASSES[c])),
            answer: answer(vocab, &targets.len().to_string()),
            targets,
        });
    }

    for (k, inst) in scene.instances.iter().enumerate() {
        if let Some(near) = nearest_other_class(scene, k) {
            tasks.push(TaskSample {
                kind: TaskKind::Caption,
                prompt: PromptSpec::Numerical(inst.bbox.to_payload()),
                targets: vec![k],
                answer: answer(
                    vocab,
                    &format!("a {} {} near the {}", COLORS[inst.color], CLASSES[inst.class_id], CLASSES[near]),
                ),
            });
        }
    }
    for t in &tasks {
        t.validate(scene, vocab)?;
    }
    Ok(tasks)
}
