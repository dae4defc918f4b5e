//! Command-line front end: `synth`, `train`, `infer`, `eval` and `bench`.
//!
//! Each verb is also available as a library function so experiments can be
//! scripted without spawning processes.

pub mod bench;
pub mod config;
mod error;
pub mod eval;
pub mod infer;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use derain::image::BitDepth;
use derain::network::ModelKind;
use derain::pipeline::{parse_sequence, PipelineConfig, Stage};
use derain::synthesis::Mode;

pub use crate::config::ExperimentConfig;
pub use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "derain", version, about = "Rain synthesis, joint rain detection/removal training and evaluation")]
pub struct Cli {
    /// Directory that relative output paths are placed under.
    #[arg(long, global = true, env = "DERAIN_OUTPUT_ROOT")]
    pub output_root: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate paired rain datasets, or regenerate one from its manifest.
    Synth(SynthArgs),
    /// Train a derain or dehaze network.
    Train(TrainArgs),
    /// Restore images with trained checkpoints.
    Infer(InferArgs),
    /// Compare results with ground truth (PSNR/SSIM on luminance).
    Eval(EvalArgs),
    /// Time inference at several image sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment configuration (JSON); defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any configuration field, e.g. `--set training.steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Experiment output directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Destination of the splits; `<output_dir>/data` by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Regenerate the split described by this manifest into `--out`.
    #[arg(long, conflicts_with_all = ["mode"])]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub tau: Option<usize>,
    /// Continue from the latest checkpoint of the run.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Pipeline configuration (JSON); flags below override it.
    #[arg(long)]
    pub pipeline: Option<PathBuf>,
    #[arg(long)]
    pub derain: Option<PathBuf>,
    #[arg(long)]
    pub dehaze: Option<PathBuf>,
    /// Comma-separated stages, e.g. `derain,dehaze,derain`.
    #[arg(long)]
    pub sequence: Option<String>,
    #[arg(long)]
    pub tau: Option<usize>,
}

impl PipelineArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.pipeline {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if self.derain.is_some() {
            cfg.derain_checkpoint = self.derain.clone();
        }
        if self.dehaze.is_some() {
            cfg.dehaze_checkpoint = self.dehaze.clone();
        }
        if let Some(seq) = &self.sequence {
            cfg.stage_sequence = parse_sequence(seq)?;
        }
        if let Some(tau) = self.tau {
            cfg.tau = tau;
        }
        if self.pipeline.is_none() && self.sequence.is_none() {
            cfg.stage_sequence = match (&cfg.derain_checkpoint, &cfg.dehaze_checkpoint) {
                (Some(_), None) => vec![Stage::Derain],
                (None, Some(_)) => vec![Stage::Dehaze],
                _ => cfg.stage_sequence,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// PNG files or directories (a synthesized split contributes its `*_O.png`).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// PNG bit depth of the outputs.
    #[arg(long, value_parser = parse_depth)]
    pub depth: Option<BitDepth>,
    /// Also write input-and-stages side-by-side images.
    #[arg(long)]
    pub montage: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Stem suffix of result files (stripped to get the id).
    #[arg(long, default_value = "")]
    pub result_tag: String,
    #[arg(long, default_value = "_B")]
    pub truth_tag: String,
    #[arg(long, default_value = "method")]
    pub method: String,
    #[arg(long, default_value = "dataset")]
    pub dataset: String,
    /// Add wall-time columns from the inference manifest.
    #[arg(long)]
    pub timing: bool,
    /// Write `<OUT>.csv` and `<OUT>.json` instead of printing CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Square image sides to time.
    #[arg(long, value_delimiter = ',', default_value = "80,500")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub images: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Write `<OUT>.csv` and `<OUT>.json` instead of printing CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: derain::Error| e.to_string())
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    match s {
        "derain" => Ok(ModelKind::Derain),
        "dehaze" => Ok(ModelKind::Dehaze),
        other => Err(format!("unknown model `{other}` (expected derain or dehaze)")),
    }
}

fn parse_depth(s: &str) -> std::result::Result<BitDepth, String> {
    match s {
        "8" => Ok(BitDepth::Eight),
        "16" => Ok(BitDepth::Sixteen),
        other => Err(format!("unsupported bit depth `{other}` (expected 8 or 16)")),
    }
}

fn experiment(args: &ConfigArgs, root: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.output_dir = config::under_root(root, &cfg.output_dir);
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Executes a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::Synth(args) => {
            if let Some(manifest) = &args.replay {
                let out = args
                    .out
                    .as_ref()
                    .ok_or_else(|| CliError::usage("--replay needs --out"))?;
                let summary = synth::replay(manifest, &config::under_root(root, out))?;
                println!("{}: {} examples (config {})", summary.dir.display(), summary.examples, summary.config_hash);
                return Ok(());
            }
            let mut cfg = experiment(&args.config, root)?;
            if let Some(mode) = args.mode {
                cfg.data.mode = mode;
            }
            let out = match &args.out {
                Some(out) => config::under_root(root, out),
                None => cfg.output_dir.join("data"),
            };
            for s in synth::synthesize(&cfg, &out)? {
                println!("{}: {} examples (config {})", s.dir.display(), s.examples, s.config_hash);
            }
        }
        Command::Train(args) => {
            let mut cfg = experiment(&args.config, root)?;
            if let Some(model) = args.model {
                cfg.training.model = model;
            }
            if let Some(steps) = args.steps {
                cfg.training.steps = steps;
            }
            if let Some(tau) = args.tau {
                cfg.training.tau = tau;
            }
            cfg.validate()?;
            let summary = train::train(&cfg, args.resume)?;
            let m = &summary.manifest;
            println!(
                "trained {} steps {}..{} in {}; final checkpoint {}",
                m.model,
                summary.start_step,
                m.step,
                summary.run_dir.display(),
                m.final_checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into())
            );
            if let Some(best) = &m.best {
                println!("best validation PSNR {:.3} dB at step {}", best.validation_psnr.unwrap_or(f64::NAN), best.step);
            }
        }
        Command::Infer(args) => {
            let mut cfg = args.pipeline.resolve()?;
            if let Some(depth) = args.depth {
                cfg.export_depth = depth;
            }
            let out = config::under_root(root, &args.out);
            let manifest = infer::infer(&args.inputs, &cfg, &out, args.montage)?;
            println!(
                "{} images restored into {} ({} failed)",
                manifest.images.len(),
                out.display(),
                manifest.failures.len()
            );
            if !manifest.failures.is_empty() {
                return Err(CliError::Runtime(format!(
                    "{} of {} inputs failed",
                    manifest.failures.len(),
                    manifest.failures.len() + manifest.images.len()
                )));
            }
        }
        Command::Eval(args) => {
            let opts = eval::EvalOptions {
                results: args.results,
                truth: args.truth,
                result_tag: args.result_tag,
                truth_tag: args.truth_tag,
                method: args.method,
                dataset: args.dataset,
                timing: args.timing,
            };
            let report = eval::evaluate(&opts)?;
            for id in &report.unmatched {
                eprintln!("warning: unmatched {id}");
            }
            match &args.out {
                Some(prefix) => {
                    let (csv, json) = eval::write_report(&report, &config::under_root(root, prefix))?;
                    println!("wrote {} and {}", csv.display(), json.display());
                }
                None => print!("{}", report.to_csv()),
            }
        }
        Command::Bench(args) => {
            let opts = bench::BenchOptions {
                pipeline: args.pipeline.resolve()?,
                sizes: args.sizes,
                images: args.images,
                warmup: args.warmup,
                repeats: args.repeats,
                ..Default::default()
            };
            let rows = bench::bench(&opts)?;
            let csv = bench::to_csv(&rows);
            match &args.out {
                Some(prefix) => {
                    let prefix = config::under_root(root, prefix);
                    write_text(&prefix.with_extension("csv"), &csv)?;
                    write_text(
                        &prefix.with_extension("json"),
                        &serde_json::to_string_pretty(&rows).expect("rows serialize"),
                    )?;
                }
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}
