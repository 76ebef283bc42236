//! Dataset generation: scenes, their segmentation, and task prompts.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{Dataset, Entry};
use crate::error::{Error, Result};
use crate::scene::generate_scene;
use crate::segment::{segment_count, segment_scene};
use crate::tasks::generate_tasks;
use crate::vocab::Vocab;

/// Seed of scene `index` within a dataset generated from `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// `count` scenes with ids `0..count`, segmented with the model settings.
pub fn generate_dataset(cfg: &RunConfig, seed: u64, count: usize) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Invalid("a dataset needs at least one scene".into()));
    }
    let vocab = Vocab::default();
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let s = scene_seed(seed, i);
        let mut scene = generate_scene(s, &cfg.scene)?;
        scene.id = i as u64;
        scene.segment_ids = segment_scene(&scene, &cfg.model)?;
        let tasks = generate_tasks(&scene, s, &cfg.scene, &vocab)?;
        entries.push(Entry { scene, tasks });
    }
    Ok(Dataset { entries })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub scenes: usize,
    pub points: usize,
    pub instances: usize,
    pub mean_segments: f64,
    pub tasks: usize,
    pub tasks_by_kind: BTreeMap<String, usize>,
}

pub fn summarize(data: &Dataset) -> DatasetSummary {
    let mut by_kind = BTreeMap::new();
    let mut segs = 0usize;
    for e in &data.entries {
        segs += if e.scene.segment_ids.is_empty() { 0 } else { segment_count(&e.scene.segment_ids) };
        for t in &e.tasks {
            *by_kind.entry(t.kind.name().to_string()).or_insert(0) += 1;
        }
    }
    DatasetSummary {
        scenes: data.entries.len(),
        points: data.entries.iter().map(|e| e.scene.len()).sum(),
        instances: data.entries.iter().map(|e| e.scene.instances.len()).sum(),
        mean_segments: if data.entries.is_empty() { 0.0 } else { segs as f64 / data.entries.len() as f64 },
        tasks: data.num_tasks(),
        tasks_by_kind: by_kind,
    }
}
