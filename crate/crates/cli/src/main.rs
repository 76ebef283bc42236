use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use promptq::checkpoint::Checkpoint;
use promptq::config::RunConfig;
use promptq::dataset::Dataset;
use promptq::eval::{build_caches, evaluate, infer, seeded_visual_prompt, EvalOptions, MetricsReport};
use promptq::features::Rep;
use promptq::generate::{generate_dataset, summarize};
use promptq::gradcheck::{check_model, tiny_variant};
use promptq::model::Model;
use promptq::tasks::PromptSpec;
use promptq::train::train;

mod ablate;

#[derive(Parser)]
#[command(name = "promptq", version, about = "Promptable instance queries over synthetic 3D scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PromptKindArg {
    Text,
    Visual,
    Numerical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Depth,
    Structure,
    Reps,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        scenes: usize,
        #[arg(long)]
        out: PathBuf,
        /// Scene and segmentation settings (defaults when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model and write checkpoint, loss curve and train metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint under a representation subset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated subset of V, I, P.
        #[arg(long, default_value = "V,I,P")]
        reps: String,
        #[arg(long)]
        out: PathBuf,
        /// Expected run config; evaluation refuses a checkpoint built from a different model config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        /// Attend through matched ground-truth masks.
        #[arg(long)]
        gt_mask_attention: bool,
    },
    /// Run one prompt against one scene.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene_id: u64,
        #[arg(long, value_enum)]
        prompt_kind: PromptKindArg,
        /// Words for text; a class word or comma-separated floats for visual;
        /// 3 or 6 comma-separated floats for numerical.
        #[arg(long, allow_hyphen_values = true)]
        prompt: String,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        /// Noise added to class-word visual prompts.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long, default_value = "V,I,P")]
        reps: String,
    },
    /// Sweep one axis and emit a comparison table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        out: PathBuf,
        /// Reuse a trained checkpoint for the reps axis.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference check of all gradients at tiny dimensions.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, hide = true)]
        sabotage: bool,
    },
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(RunConfig::from_toml(&text)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::read(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn with_echo(mut report: MetricsReport, cfg: &RunConfig) -> MetricsReport {
    report.config = cfg.echo();
    report
}

fn cmd_gen_data(seed: u64, scenes: usize, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = match config {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    let data = generate_dataset(&cfg, seed, scenes)?;
    data.write(out)?;
    let summary = summarize(&data);
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

pub fn train_model(cfg: &RunConfig, data: &Dataset) -> Result<(Model, promptq::train::TrainLog, Vec<promptq::features::SceneCache>)> {
    let mut model = Model::new(&cfg.model, cfg.seed)?;
    let caches = build_caches(&model, data)?;
    let log = train(&mut model, cfg, data, &caches)?;
    Ok((model, log, caches))
}

fn cmd_train(config: &Path, data: &Path, out: &Path) -> Result<()> {
    let cfg = read_config(config)?;
    let data = read_dataset(data)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (model, log, caches) = train_model(&cfg, &data)?;
    Checkpoint::from_model(&model, &cfg, cfg.train.steps as u64).save(&out.join("model.ckpt"))?;
    write(&out.join("loss_curve.jsonl"), log.curve_jsonl())?;
    write(&out.join("events.log"), log.events.join("\n") + "\n")?;
    write(&out.join("config.toml"), cfg.to_toml())?;
    let report = with_echo(evaluate(&model, &data, &caches, &EvalOptions::all())?, &cfg);
    write(&out.join("metrics.json"), report.to_canonical_string())?;
    println!("{}", serde_json::to_string_pretty(&report.metrics)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    reps: &str,
    out: &Path,
    config: Option<&Path>,
    force: bool,
    gt_mask_attention: bool,
) -> Result<()> {
    let reps = Rep::parse_list(reps)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    if let Some(p) = config {
        let expected = read_config(p)?;
        let (want, have) = (expected.model_hash(), &ckpt.manifest.model_hash);
        if &want != have {
            if force {
                log::warn!("config hash {want} differs from checkpoint hash {have}; continuing (--force)");
            } else {
                bail!("checkpoint config hash {have} does not match {want} from {}; pass --force to evaluate anyway", p.display());
            }
        }
    }
    let cfg = ckpt.manifest.config.clone();
    let model = ckpt.to_model()?;
    let data = read_dataset(data)?;
    let caches = build_caches(&model, &data)?;
    let opts = EvalOptions {
        reps,
        gt_mask_attention: gt_mask_attention || cfg.model.gt_mask_attention,
    };
    let report = with_echo(evaluate(&model, &data, &caches, &opts)?, &cfg);
    write(out, report.to_canonical_string())?;
    println!("{}", serde_json::to_string_pretty(&report.metrics)?);
    Ok(())
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().with_context(|| format!("not a number: {x:?}")))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    checkpoint: &Path,
    data: &Path,
    scene_id: u64,
    kind: PromptKindArg,
    prompt: &str,
    top_k: usize,
    noise: f64,
    noise_seed: u64,
    reps: &str,
) -> Result<()> {
    let reps = Rep::parse_list(reps)?;
    let model = Checkpoint::load(checkpoint)?.to_model()?;
    let data = read_dataset(data)?;
    let entry = data
        .entries
        .iter()
        .find(|e| e.scene.id == scene_id)
        .with_context(|| format!("no scene with id {scene_id}"))?;
    let spec = match kind {
        PromptKindArg::Text => PromptSpec::Text(model.vocab.encode(prompt)?),
        PromptKindArg::Visual => {
            if let Some(c) = promptq::vocab::CLASSES.iter().position(|&c| c == prompt.trim()) {
                seeded_visual_prompt(&model, c, noise, noise_seed)
            } else {
                PromptSpec::Visual(parse_floats(prompt)?)
            }
        }
        PromptKindArg::Numerical => PromptSpec::Numerical(parse_floats(prompt)?),
    };
    let cache = model.cache(&entry.scene)?;
    let opts = EvalOptions {
        reps,
        gt_mask_attention: false,
    };
    let out = infer(&model, &cache, &spec, &opts, true)?;
    let mut order: Vec<usize> = (0..out.grounding_probs.len()).collect();
    order.sort_by(|&a, &b| out.grounding_probs[b].total_cmp(&out.grounding_probs[a]).then(a.cmp(&b)));
    let top: Vec<_> = order
        .iter()
        .take(top_k)
        .map(|&q| {
            serde_json::json!({
                "query": q,
                "grounding_score": out.grounding_probs[q],
                "points": out.point_mask(&cache, q, model.cfg.mask_threshold),
            })
        })
        .collect();
    let text = out.answer.as_ref().map(|a| {
        let end = a.iter().position(|&t| t == model.vocab.eos()).unwrap_or(a.len());
        model.vocab.decode(&a[..end])
    });
    let result = serde_json::json!({
        "scene_id": scene_id,
        "prompt_kind": format!("{kind:?}").to_lowercase(),
        "top": top,
        "text": text,
    });
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

/// Returns whether the check passed.
fn cmd_grad_check(config: Option<&Path>, sabotage: bool) -> Result<bool> {
    let base = match config {
        Some(p) => read_config(p)?,
        None => RunConfig::tiny(),
    };
    let cfg = tiny_variant(&base);
    let report = check_model(&cfg, sabotage)?;
    print!("{}", report.render());
    println!("{}", if report.passed() { "PASS" } else { "FAIL" });
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData { seed, scenes, out, config } => cmd_gen_data(seed, scenes, &out, config.as_deref())?,
        Command::Train { config, data, out } => cmd_train(&config, &data, &out)?,
        Command::Eval {
            checkpoint,
            data,
            reps,
            out,
            config,
            force,
            gt_mask_attention,
        } => cmd_eval(&checkpoint, &data, &reps, &out, config.as_deref(), force, gt_mask_attention)?,
        Command::Infer {
            checkpoint,
            data,
            scene_id,
            prompt_kind,
            prompt,
            top_k,
            noise,
            noise_seed,
            reps,
        } => cmd_infer(&checkpoint, &data, scene_id, prompt_kind, &prompt, top_k, noise, noise_seed, &reps)?,
        Command::Ablate {
            config,
            data,
            axis,
            out,
            checkpoint,
        } => ablate::run(&config, &data, axis, &out, checkpoint.as_deref())?,
        Command::GradCheck { config, sabotage } => {
            if !cmd_grad_check(config.as_deref(), sabotage)? {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
