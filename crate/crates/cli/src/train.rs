//! `derain train`: derain or dehaze training with periodic checkpoints,
//! best-on-validation selection, a per-step loss log and resumption.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use derain::metrics::psnr;
use derain::network::{sample_crops, Checkpoint, LossBreakdown, ModelKind};
use derain::pipeline::{derain_recurrent, mix_clean, DehazeNet, DehazeTrainer, DerainModel, RecurrentTrainer};
use derain::synthesis::{example_rng, load_split, RainExample};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const LATEST_CHECKPOINT: &str = "latest.safetensors";
pub const BEST_CHECKPOINT: &str = "best.safetensors";

const RESUME_KEY: &str = "resume_key";

/// Hash of everything except the step budget, so a finished run can be
/// extended by resuming with more steps.
fn resume_key(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.training.steps = 0;
    c.hash()
}

/// Stream offset separating crop sampling from dataset synthesis streams.
const CROP_STREAM: u64 = 1 << 40;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Zero-based index of the optimizer step; the loss is the one the
    /// step descended on.
    pub step: u64,
    pub total: f64,
    /// Loss breakdown per recurrence (one entry for dehaze).
    pub terms: Vec<LossBreakdown>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: u64,
    /// Relative to the run directory.
    pub path: PathBuf,
    pub validation_psnr: Option<f64>,
}

/// Written next to the checkpoints and updated at every save.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub model: ModelKind,
    pub step: u64,
    pub final_checkpoint: Option<PathBuf>,
    pub best: Option<CheckpointRecord>,
    pub checkpoints: Vec<CheckpointRecord>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifests serialize");
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub start_step: u64,
    pub manifest: RunManifest,
    /// Losses logged during this invocation, in order.
    pub losses: Vec<f64>,
}

enum Model {
    Derain(RecurrentTrainer),
    Dehaze(DehazeTrainer),
}

impl Model {
    fn fresh(config: &ExperimentConfig) -> Result<Self> {
        let t = &config.training;
        Ok(match t.model {
            ModelKind::Derain => {
                let model = DerainModel::new(config.network.clone(), t.tau, t.shared_weights, config.seed)?;
                Model::Derain(RecurrentTrainer::new(model, config.optimizer, config.loss, t.tau)?)
            }
            ModelKind::Dehaze => Model::Dehaze(DehazeTrainer::new(
                DehazeNet::new(config.network.clone(), config.seed)?,
                config.optimizer,
            )),
        })
    }

    fn resume(config: &ExperimentConfig, ck: &Checkpoint) -> Result<Self> {
        Ok(match config.training.model {
            ModelKind::Derain => Model::Derain(RecurrentTrainer::resume(
                ck,
                config.optimizer,
                config.loss,
                config.training.tau,
            )?),
            ModelKind::Dehaze => Model::Dehaze(DehazeTrainer::resume(ck, config.optimizer)?),
        })
    }

    fn set_learning_rate(&mut self, rate: f64) {
        match self {
            Model::Derain(t) => t.set_learning_rate(rate),
            Model::Dehaze(t) => t.set_learning_rate(rate),
        }
    }

    fn set_last_checkpoint(&mut self, path: PathBuf) {
        match self {
            Model::Derain(t) => t.last_checkpoint = Some(path),
            Model::Dehaze(t) => t.last_checkpoint = Some(path),
        }
    }

    fn step(&mut self, batch: &mut [RainExample], clean_fraction: f64, rng: &mut ChaCha8Rng) -> Result<LogEntry> {
        match self {
            Model::Derain(t) => {
                let step = t.step;
                mix_clean(batch, clean_fraction, rng);
                let loss = t.train_step(batch)?;
                Ok(LogEntry {
                    step,
                    total: loss.total,
                    terms: loss.per_iteration,
                })
            }
            Model::Dehaze(t) => {
                let step = t.step();
                mix_clean(batch, clean_fraction, rng);
                let mse = t.train_step(batch)?;
                Ok(LogEntry {
                    step,
                    total: mse,
                    terms: vec![LossBreakdown {
                        background_mse: mse,
                        background_term: mse,
                        total: mse,
                        ..Default::default()
                    }],
                })
            }
        }
    }

    fn checkpoint(&self, hash: &str) -> Checkpoint {
        match self {
            Model::Derain(t) => t.checkpoint(hash),
            Model::Dehaze(t) => t.net.to_checkpoint(t.step(), hash, Some(&t.optimizer)),
        }
    }

    /// Mean clipped PSNR of the model's restoration on `examples`.
    fn validate(&self, examples: &[RainExample], tau: usize) -> Result<f64> {
        let mut total = 0.0;
        for ex in examples {
            let out = match self {
                Model::Derain(t) => derain_recurrent(&ex.rain, &t.model, tau)?.0,
                Model::Dehaze(t) => t.net.forward(&ex.rain)?,
            };
            total += psnr(&out.clip(), &ex.background)?;
        }
        Ok(total / examples.len() as f64)
    }
}

/// Keeps the log lines of steps before `step`, dropping what a resumed run
/// is about to redo.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let reader = BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?);
    let mut kept = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let entry: LogEntry =
            serde_json::from_str(&line).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        if entry.step < step {
            kept.push(line);
        }
    }
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn train(config: &ExperimentConfig, resume: bool) -> Result<TrainSummary> {
    config.validate()?;
    let hash = config.hash();
    let t = &config.training;
    let run_dir = config.run_dir();
    let ck_dir = run_dir.join("checkpoints");
    std::fs::create_dir_all(&ck_dir).map_err(|e| CliError::io(&ck_dir, e))?;
    let manifest_path = run_dir.join(RUN_MANIFEST_FILE);
    let log_path = run_dir.join(TRAIN_LOG_FILE);

    // the derain stage leaves the veil to the dehaze stage
    let targets = |set: Vec<RainExample>| -> Result<Vec<RainExample>> {
        if t.model == ModelKind::Derain {
            Ok(set.iter().map(RainExample::with_veiled_targets).collect::<derain::Result<_>>()?)
        } else {
            Ok(set)
        }
    };
    let train_set = targets(load_split(&config.train_dir())?)?;
    let validation = config.validation_dir().map(|d| load_split(&d).map_err(CliError::from).and_then(targets)).transpose()?;

    let (mut model, mut manifest) = if resume {
        let latest = ck_dir.join(LATEST_CHECKPOINT);
        if !latest.exists() {
            return Err(CliError::usage(format!("nothing to resume: {} does not exist", latest.display())));
        }
        let ck = Checkpoint::load(&latest)?;
        ck.expect_kind(t.model, &latest)?;
        if ck.extra.get(RESUME_KEY) != Some(&resume_key(config)) {
            return Err(CliError::usage(format!(
                "{} was written by a different configuration",
                latest.display()
            )));
        }
        let mut model = Model::resume(config, &ck)?;
        model.set_last_checkpoint(latest);
        let mut manifest = RunManifest::load(&manifest_path)?;
        manifest.config_hash = hash.clone();
        truncate_log(&log_path, ck.step)?;
        (model, manifest)
    } else {
        if log_path.exists() {
            std::fs::remove_file(&log_path).map_err(|e| CliError::io(&log_path, e))?;
        }
        let manifest = RunManifest {
            config_hash: hash.clone(),
            model: t.model,
            step: 0,
            final_checkpoint: None,
            best: None,
            checkpoints: Vec::new(),
        };
        (Model::fresh(config)?, manifest)
    };
    config.save(&run_dir.join("config.json"))?;

    let start_step = manifest.step;
    let mut log = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| CliError::io(&log_path, e))?,
    );
    let mut losses = Vec::new();
    for step in start_step..t.steps {
        let mut rng = example_rng(config.seed, CROP_STREAM + step);
        let mut batch = sample_crops(&train_set, t.batch_size, t.crop_size, &mut rng)?;
        model.set_learning_rate(t.lr_decay.rate(config.optimizer.learning_rate, step, t.steps));
        let entry = model.step(&mut batch, t.clean_fraction, &mut rng)?;
        if step % t.log_every == 0 {
            serde_json::to_writer(&mut log, &entry).expect("log entries serialize");
            writeln!(log).map_err(|e| CliError::io(&log_path, e))?;
            losses.push(entry.total);
        }
        let done = step + 1;
        if done % t.checkpoint_every == 0 || done == t.steps {
            log.flush().map_err(|e| CliError::io(&log_path, e))?;
            let mut ck = model.checkpoint(&hash);
            ck.extra.insert(RESUME_KEY.into(), resume_key(config));
            let name = PathBuf::from("checkpoints").join(format!("step_{done:06}.safetensors"));
            ck.save(&run_dir.join(&name))?;
            ck.save(&ck_dir.join(LATEST_CHECKPOINT))?;
            let score = match &validation {
                Some(v) if !v.is_empty() => Some(model.validate(v, t.tau)?),
                _ => None,
            };
            let record = CheckpointRecord {
                step: done,
                path: name.clone(),
                validation_psnr: score,
            };
            let improved = match (&manifest.best, score) {
                (_, None) => false,
                (None, Some(_)) => true,
                (Some(best), Some(s)) => best.validation_psnr.is_none_or(|b| s > b),
            };
            if improved {
                ck.save(&ck_dir.join(BEST_CHECKPOINT))?;
                manifest.best = Some(record.clone());
            }
            manifest.checkpoints.push(record);
            manifest.step = done;
            manifest.final_checkpoint = Some(name);
            manifest.save(&manifest_path)?;
            model.set_last_checkpoint(ck_dir.join(LATEST_CHECKPOINT));
        }
    }
    log.flush().map_err(|e| CliError::io(&log_path, e))?;
    manifest.save(&manifest_path)?;
    Ok(TrainSummary {
        run_dir,
        start_step,
        manifest,
        losses,
    })
}

/// Reads every entry of a training log.
pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    let reader = BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?);
    reader
        .lines()
        .map(|line| {
            let line = line.map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
        })
        .collect()
}
