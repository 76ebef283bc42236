//! End-to-end finite-difference check of the model gradients.

use std::collections::BTreeMap;

use qtensor::{grad_check, Tensor, DEFAULT_STEP};

use crate::config::RunConfig;
use crate::decoder::MaskPolicy;
use crate::error::{Error, Result};
use crate::features::{Rep, SceneCache};
use crate::model::{Frozen, Model};
use crate::params::{Graph, ParamId};
use crate::scene::{generate_scene, Scene};
use crate::tasks::{PromptSpec, TaskKind, TaskSample};

pub const TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub group: String,
    pub scalars: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradReport {
    pub segments: usize,
    pub queries: usize,
    pub dim: usize,
    pub layers: usize,
    pub prompt_len: usize,
    pub scalars: usize,
    pub groups: Vec<GroupError>,
    pub max_rel_err: f64,
}

impl ModelGradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "grad-check M={} Q={} D={} N={} T={} scalars={}\n",
            self.segments, self.queries, self.dim, self.layers, self.prompt_len, self.scalars
        );
        for g in &self.groups {
            s.push_str(&format!("{:<40} {:>6} {:.3e}\n", g.group, g.scalars, g.max_rel_err));
        }
        s.push_str(&format!("max relative error {:.3e}\n", self.max_rel_err));
        s
    }
}

/// Tiny dimensions with the seed, decoder structure and residual setting of
/// `cfg`, and at most two decoder layers.
pub fn tiny_variant(cfg: &RunConfig) -> RunConfig {
    let mut t = RunConfig::tiny();
    t.seed = cfg.seed;
    t.model.structure = cfg.model.structure;
    t.model.extra_residuals = cfg.model.extra_residuals;
    t.model.decoder_layers = cfg.model.decoder_layers.min(2);
    t
}

/// Parameter group of a parameter name: the name without its last component.
pub fn group_of(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(head, _)| head)
}

/// The two probe tasks: a one-word segmentation prompt and a box caption.
pub fn probe_tasks(model: &Model, scene: &Scene) -> Result<Vec<TaskSample>> {
    let inst = scene
        .instances
        .first()
        .ok_or_else(|| Error::Scene("grad-check scene has no objects".into()))?;
    let v = &model.vocab;
    let segment = TaskSample {
        kind: TaskKind::Segment,
        prompt: PromptSpec::Text(vec![v.class_token(inst.class_id)]),
        targets: scene.instances_of(inst.class_id),
        answer: Vec::new(),
    };
    let caption = TaskSample {
        kind: TaskKind::Caption,
        prompt: PromptSpec::Numerical(inst.bbox.to_payload()),
        targets: vec![0],
        answer: vec![v.color_token(inst.color), v.class_token(inst.class_id), v.eos()],
    };
    Ok(vec![segment, caption])
}

fn batch_loss(model: &Model, g: &mut Graph, cache: &SceneCache, tasks: &[TaskSample], frozen: &[Frozen]) -> Result<(qtensor::Var, Vec<Frozen>)> {
    let feats = model.encode_scene(g, cache)?;
    let mut terms = Vec::with_capacity(tasks.len());
    let mut out = Vec::with_capacity(tasks.len());
    for (k, task) in tasks.iter().enumerate() {
        let l = model.sample_loss(
            g,
            &feats,
            cache,
            task,
            &Rep::ALL,
            MaskPolicy::Predicted,
            &RunConfig::default().loss,
            frozen.get(k),
        )?;
        terms.push(l.loss);
        out.push(l.frozen);
    }
    let s = crate::losses::sum_vars(g, &terms)?;
    Ok((g.tape.scale(s, 1.0 / tasks.len() as f64)?, out))
}

/// Checks every trainable parameter of the model described by `cfg`.
/// `sabotage` perturbs the analytic gradient, for negative controls.
pub fn check_model(cfg: &RunConfig, sabotage: bool) -> Result<ModelGradReport> {
    let model = Model::new(&cfg.model, cfg.seed)?;
    let scene = generate_scene(cfg.seed, &cfg.scene)?;
    let cache = model.cache(&scene)?;
    let tasks = probe_tasks(&model, &scene)?;

    let mut g = Graph::new(&model.store);
    let (_, frozen) = batch_loss(&model, &mut g, &cache, &tasks, &[])?;
    let mut g = Graph::new(&model.store);
    let (loss, _) = batch_loss(&model, &mut g, &cache, &tasks, &frozen)?;
    let grads = g.gradients(loss)?;

    let ids: Vec<ParamId> = grads.iter().map(|(id, _)| *id).collect();
    let values: Vec<Tensor> = ids.iter().map(|&id| model.store.get(id).clone()).collect();
    let mut analytic: Vec<Tensor> = grads.into_iter().map(|(_, t)| t).collect();
    if sabotage {
        if let Some(first) = analytic.first_mut() {
            first.data_mut().iter_mut().for_each(|x| *x = *x * 1.5 + 1e-2);
        }
    }
    let f = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::with_overrides(&model.store, &ids, vals);
        let (l, _) = batch_loss(&model, &mut g, &cache, &tasks, &frozen).expect("replayed loss");
        g.value(l).item().expect("scalar loss")
    };
    let report = grad_check(f, &values, &analytic, DEFAULT_STEP);

    let mut groups: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for pc in &report.params {
        let id = ids[pc.index];
        let e = groups.entry(group_of(model.store.name(id)).to_string()).or_default();
        e.0 += model.store.get(id).numel();
        e.1 = e.1.max(pc.max_rel_err);
    }
    let prompt_len = match &tasks[0].prompt {
        PromptSpec::Text(ids) => ids.len() + 2,
        _ => 1,
    };
    Ok(ModelGradReport {
        segments: cache.m(),
        queries: cache.query_positions.len(),
        dim: cfg.model.hidden_dim,
        layers: cfg.model.decoder_layers,
        prompt_len,
        scalars: values.iter().map(Tensor::numel).sum(),
        groups: groups
            .into_iter()
            .map(|(group, (scalars, max_rel_err))| GroupError { group, scalars, max_rel_err })
            .collect(),
        max_rel_err: report.max_rel_err,
    })
}
