//! Self-describing checkpoint files in the safetensors container.
//!
//! Tensors are stored as little-endian `f32` under `stage{t}.{param}` and,
//! when optimizer state is present, `stage{t}.adam.m.{param}` /
//! `stage{t}.adam.v.{param}`. Everything else lives in a single JSON
//! header entry so that files are byte-for-byte reproducible.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::nn::{Adam, AdamConfig, ParamSet};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const HEADER_KEY: &str = "derain";

/// Which network a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Derain,
    Dehaze,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Derain => "derain",
            ModelKind::Dehaze => "dehaze",
        })
    }
}

/// Parameters (and optionally optimizer moments) of one recurrence stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageState {
    pub params: ParamSet<f32>,
    pub optimizer: Option<Adam<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub network: NetworkConfig,
    /// One parameter set reused by every recurrence.
    pub shared: bool,
    pub step: u64,
    pub config_hash: String,
    pub stages: Vec<StageState>,
    /// Free-form annotations such as the best validation score.
    pub extra: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    kind: ModelKind,
    network: NetworkConfig,
    shared: bool,
    step: u64,
    config_hash: String,
    stages: usize,
    /// Parameter names in registration order, identical for every stage.
    param_order: Vec<String>,
    /// Per stage: optimizer hyper-parameters and step, if saved.
    optimizer: Vec<Option<(AdamConfig, u64)>>,
    extra: BTreeMap<String, String>,
}

fn to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn st_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {e}", path.display()))
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let first = self
            .stages
            .first()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no stages".into()))?;
        let param_order: Vec<String> = first.params.iter().map(|p| p.name.clone()).collect();
        let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for (t, stage) in self.stages.iter().enumerate() {
            let names: Vec<&str> = stage.params.iter().map(|p| p.name.as_str()).collect();
            if names != param_order.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(Error::Checkpoint(format!("stage {t} has a different parameter layout")));
            }
            if !stage.params.all_finite() {
                return Err(Error::NonFinite(format!("parameters of stage {t}")));
            }
            for p in stage.params.iter() {
                buffers.push((format!("stage{t}.{}", p.name), p.shape.clone(), to_bytes(&p.data)));
            }
            if let Some(adam) = &stage.optimizer {
                for (prefix, set) in [("m", &adam.first_moment), ("v", &adam.second_moment)] {
                    for p in set.iter() {
                        buffers.push((format!("stage{t}.adam.{prefix}.{}", p.name), p.shape.clone(), to_bytes(&p.data)));
                    }
                }
            }
        }
        let header = Header {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            kind: self.kind,
            network: self.network.clone(),
            shared: self.shared,
            step: self.step,
            config_hash: self.config_hash.clone(),
            stages: self.stages.len(),
            param_order,
            optimizer: self
                .stages
                .iter()
                .map(|s| s.optimizer.as_ref().map(|a| (a.config, a.step)))
                .collect(),
            extra: self.extra.clone(),
        };
        let views = buffers
            .iter()
            .map(|(name, shape, bytes)| {
                TensorView::new(Dtype::F32, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| st_err(path, e))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = HashMap::from([(HEADER_KEY.to_string(), serde_json::to_string(&header)?)]);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // write to a sibling file first so an interrupted save never leaves a truncated checkpoint
        let tmp = path.with_extension("tmp");
        safetensors::tensor::serialize_to_file(views, Some(meta), &tmp).map_err(|e| st_err(path, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| st_err(path, e))?;
        let (_, metadata) = SafeTensors::read_metadata(&bytes).map_err(|e| st_err(path, e))?;
        let raw = metadata
            .metadata()
            .as_ref()
            .and_then(|m| m.get(HEADER_KEY))
            .ok_or_else(|| st_err(path, "missing checkpoint header"))?;
        let header: Header = serde_json::from_str(raw)?;
        if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(st_err(
                path,
                format!(
                    "schema version {} (this build reads {CHECKPOINT_SCHEMA_VERSION})",
                    header.schema_version
                ),
            ));
        }
        if header.optimizer.len() != header.stages {
            return Err(st_err(path, "optimizer entries do not match stage count"));
        }
        let read_set = |prefix: String| -> Result<ParamSet<f32>> {
            let mut set = ParamSet::new();
            for name in &header.param_order {
                let key = format!("{prefix}{name}");
                let view = st.tensor(&key).map_err(|e| st_err(path, format!("{key}: {e}")))?;
                if view.dtype() != Dtype::F32 {
                    return Err(st_err(path, format!("{key} is {:?}, expected F32", view.dtype())));
                }
                let data: Vec<f32> = view
                    .data()
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                set.insert(name.clone(), view.shape().to_vec(), data);
            }
            Ok(set)
        };
        let stages = (0..header.stages)
            .map(|t| {
                let params = read_set(format!("stage{t}."))?;
                let optimizer = match header.optimizer[t] {
                    None => None,
                    Some((config, step)) => Some(Adam {
                        config,
                        step,
                        first_moment: read_set(format!("stage{t}.adam.m."))?,
                        second_moment: read_set(format!("stage{t}.adam.v."))?,
                    }),
                };
                Ok(StageState { params, optimizer })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint {
            kind: header.kind,
            network: header.network,
            shared: header.shared,
            step: header.step,
            config_hash: header.config_hash,
            stages,
            extra: header.extra,
        })
    }

    pub fn expect_kind(&self, kind: ModelKind, path: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "{} holds a {} model, expected {kind}",
                path.display(),
                self.kind
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::JorderNet;

    fn sample(with_optimizer: bool) -> Checkpoint {
        let cfg = NetworkConfig {
            feature_channels: 4,
            ..Default::default()
        };
        let stages = (0..2)
            .map(|t| {
                let net = JorderNet::<f32>::new(cfg.clone(), t).unwrap();
                let mut adam = Adam::new(AdamConfig::default(), net.params());
                adam.step = 7;
                adam.first_moment.get_mut(0).data[0] = 0.25;
                StageState {
                    params: net.params().clone(),
                    optimizer: with_optimizer.then_some(adam),
                }
            })
            .collect();
        Checkpoint {
            kind: ModelKind::Derain,
            network: cfg,
            shared: false,
            step: 7,
            config_hash: "abc".into(),
            stages,
            extra: BTreeMap::from([("best_psnr".to_string(), "31.5".to_string())]),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for opt in [false, true] {
            let ck = sample(opt);
            let path = dir.path().join("nested/ck.safetensors");
            ck.save(&path).unwrap();
            assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        }
    }

    #[test]
    fn saving_twice_gives_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.safetensors"), dir.path().join("b.safetensors"));
        sample(true).save(&a).unwrap();
        sample(true).save(&b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn garbage_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.safetensors");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
        assert!(matches!(
            Checkpoint::load(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn wrong_kind_is_reported() {
        let ck = sample(false);
        assert!(ck.expect_kind(ModelKind::Dehaze, Path::new("x")).is_err());
        assert!(ck.expect_kind(ModelKind::Derain, Path::new("x")).is_ok());
    }
}
