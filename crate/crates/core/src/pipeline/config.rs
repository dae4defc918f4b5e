use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::BitDepth;

pub const PIPELINE_SCHEMA_VERSION: u32 = 1;

/// One step of a restoration sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Derain,
    Dehaze,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Derain => "derain",
            Stage::Dehaze => "dehaze",
        })
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "derain" => Ok(Stage::Derain),
            "dehaze" => Ok(Stage::Dehaze),
            other => Err(Error::Config(format!("unknown stage `{other}`"))),
        }
    }
}

/// Parses a comma-separated list such as `derain,dehaze,derain`.
pub fn parse_sequence(s: &str) -> Result<Vec<Stage>> {
    let stages = s.split(',').map(str::parse).collect::<Result<Vec<Stage>>>()?;
    if stages.is_empty() {
        return Err(Error::Config("empty stage sequence".into()));
    }
    Ok(stages)
}

pub fn format_sequence(stages: &[Stage]) -> String {
    stages.iter().map(Stage::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Recurrence count of every derain stage.
    pub tau: usize,
    pub stage_sequence: Vec<Stage>,
    pub derain_checkpoint: Option<PathBuf>,
    pub dehaze_checkpoint: Option<PathBuf>,
    pub export_depth: BitDepth,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: PIPELINE_SCHEMA_VERSION,
            tau: 3,
            stage_sequence: vec![Stage::Derain, Stage::Dehaze, Stage::Derain],
            derain_checkpoint: None,
            dehaze_checkpoint: None,
            export_depth: BitDepth::Sixteen,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != PIPELINE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "pipeline schema version {} is not supported (expected {PIPELINE_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.tau == 0 {
            return Err(Error::Config("tau must be at least 1".into()));
        }
        if self.stage_sequence.is_empty() {
            return Err(Error::Config("stage sequence is empty".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn checkpoint_for(&self, stage: Stage) -> Option<&Path> {
        match stage {
            Stage::Derain => self.derain_checkpoint.as_deref(),
            Stage::Dehaze => self.dehaze_checkpoint.as_deref(),
        }
    }
}
