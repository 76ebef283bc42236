use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use promptq::ablation::{depth_variants, render_table, reps_sweep, structure_variants, training_sweep};
use promptq::checkpoint::Checkpoint;
use promptq::eval::build_caches;

use crate::{read_config, read_dataset, train_model, Axis};

pub fn run(config: &Path, data: &Path, axis: Axis, out: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = read_config(config)?;
    let data = read_dataset(data)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (name, rows) = match axis {
        Axis::Depth => ("depth", training_sweep(&depth_variants(&cfg), &data)?),
        Axis::Structure => ("structure", training_sweep(&structure_variants(&cfg), &data)?),
        Axis::Reps => {
            let (model, cfg) = match checkpoint {
                Some(p) => {
                    let ck = Checkpoint::load(p)?;
                    (ck.to_model()?, ck.manifest.config)
                }
                None => (train_model(&cfg, &data)?.0, cfg),
            };
            let caches = build_caches(&model, &data)?;
            ("reps", reps_sweep(&model, &cfg, &data, &caches)?)
        }
    };
    let table = render_table(&format!("{name} sweep"), &rows);
    fs::write(out.join(format!("ablate_{name}.md")), &table)?;
    fs::write(out.join(format!("ablate_{name}.json")), serde_json::to_string_pretty(&rows)? + "\n")?;
    print!("{table}");
    Ok(())
}
