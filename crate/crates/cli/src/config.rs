//! Experiment configuration files and flag overrides.

use std::path::{Path, PathBuf};

use derain::network::{LossWeights, ModelKind, NetworkConfig};
use derain::nn::{AdamConfig, StepDecay};
use derain::pipeline::PipelineConfig;
use derain::provenance::config_hash;
use derain::synthesis::{HazeRanges, Mode, SynthesisConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const EXPERIMENT_SCHEMA_VERSION: u32 = 1;

/// Where synthesis takes its clean backgrounds from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackgroundSpec {
    /// Generated scenes, a fresh set per split.
    Procedural { height: usize, width: usize },
    /// PNG files of a directory, sorted by name and handed out to the
    /// splits in order.
    Directory { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    /// Number of backgrounds (examples per background come from
    /// `synthesis.repetitions`).
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub mode: Mode,
    /// Adds the default atmospheric veil to heavy rain.
    pub veil: bool,
    /// Full synthesis parameters; the preset for `mode` when absent.
    pub synthesis: Option<SynthesisConfig>,
    pub backgrounds: BackgroundSpec,
    pub splits: Vec<SplitSpec>,
    /// Training split; `<output_dir>/data/train` when absent.
    pub train_dir: Option<PathBuf>,
    /// Validation split; `<output_dir>/data/validation` when absent and present on disk.
    pub validation_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            mode: Mode::Light,
            veil: false,
            synthesis: None,
            backgrounds: BackgroundSpec::Procedural { height: 96, width: 96 },
            splits: vec![
                SplitSpec {
                    name: "train".into(),
                    count: 20,
                },
                SplitSpec {
                    name: "validation".into(),
                    count: 4,
                },
                SplitSpec {
                    name: "test".into(),
                    count: 8,
                },
            ],
            train_dir: None,
            validation_dir: None,
        }
    }
}

impl DataConfig {
    /// Synthesis parameters used for the split with seed `seed`.
    pub fn synthesis_for(&self, seed: u64) -> SynthesisConfig {
        let mut cfg = match &self.synthesis {
            Some(cfg) => cfg.clone(),
            None => match self.mode {
                Mode::Light => SynthesisConfig::light(seed),
                Mode::Heavy => SynthesisConfig::heavy(seed),
                Mode::Haze => SynthesisConfig::haze(seed),
            },
        };
        if self.veil && cfg.haze.is_none() {
            cfg.haze = Some(HazeRanges::default());
        }
        cfg.rng_seed = seed;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub model: ModelKind,
    pub steps: u64,
    pub batch_size: usize,
    pub crop_size: usize,
    /// Recurrences trained jointly (derain only).
    pub tau: usize,
    /// One network for every recurrence instead of one per recurrence.
    pub shared_weights: bool,
    pub checkpoint_every: u64,
    pub log_every: u64,
    /// Share of each batch replaced by rain- and haze-free pairs.
    pub clean_fraction: f64,
    pub lr_decay: StepDecay,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            model: ModelKind::Derain,
            steps: 2000,
            batch_size: 8,
            crop_size: 64,
            tau: 1,
            shared_weights: false,
            checkpoint_every: 500,
            log_every: 1,
            clean_fraction: 0.25,
            lr_decay: StepDecay::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub loss: LossWeights,
    pub optimizer: AdamConfig,
    pub training: TrainingConfig,
    pub pipeline: PipelineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: EXPERIMENT_SCHEMA_VERSION,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            network: NetworkConfig::default(),
            loss: LossWeights::default(),
            optimizer: AdamConfig::default(),
            training: TrainingConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("configs serialize");
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != EXPERIMENT_SCHEMA_VERSION {
            return Err(CliError::usage(format!(
                "experiment schema version {} is not supported (expected {EXPERIMENT_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.network.validate()?;
        self.loss.validate()?;
        self.pipeline.validate()?;
        self.data.synthesis_for(self.seed).validate()?;
        let t = &self.training;
        if t.batch_size == 0 || t.crop_size == 0 || t.tau == 0 || t.checkpoint_every == 0 || t.log_every == 0 {
            return Err(CliError::usage(
                "training batch_size, crop_size, tau, checkpoint_every and log_every must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&t.clean_fraction) {
            return Err(CliError::usage("training.clean_fraction must lie in [0, 1]"));
        }
        t.lr_decay.validate()?;
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(CliError::usage("optimizer.learning_rate must be positive"));
        }
        if self.data.splits.iter().any(|s| s.count == 0 || s.name.is_empty()) {
            return Err(CliError::usage("every split needs a name and a positive count"));
        }
        Ok(())
    }

    /// Applies `key.path=value` overrides. Values are parsed as JSON and
    /// fall back to plain strings.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        if overrides.is_empty() {
            return Ok(());
        }
        let mut tree = serde_json::to_value(&*self).expect("configs serialize");
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("override `{item}` is not of the form key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut tree, key, value)?;
        }
        *self = serde_json::from_value(tree).map_err(|e| CliError::usage(format!("override rejected: {e}")))?;
        Ok(())
    }

    /// Hash of the full configuration, stamped onto every artifact.
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn train_dir(&self) -> PathBuf {
        self.data
            .train_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("data").join("train"))
    }

    pub fn validation_dir(&self) -> Option<PathBuf> {
        match &self.data.validation_dir {
            Some(dir) => Some(dir.clone()),
            None => {
                let dir = self.output_dir.join("data").join("validation");
                dir.exists().then_some(dir)
            }
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join("run")
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let unknown = || CliError::usage(format!("unknown configuration key `{key}`"));
        let slot = match node {
            Value::Object(map) => map.get_mut(*part).ok_or_else(unknown)?,
            Value::Array(items) => {
                let index: usize = part.parse().map_err(|_| unknown())?;
                items.get_mut(index).ok_or_else(unknown)?
            }
            _ => return Err(unknown()),
        };
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Err(CliError::usage("empty configuration key"))
}

/// Joins relative output paths onto `root` when one is given.
pub fn under_root(root: Option<&Path>, path: &Path) -> PathBuf {
    match root {
        Some(root) if path.is_relative() => root.join(path),
        _ => path.to_path_buf(),
    }
}
