use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Order in which the three heads consume each other's outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadOrdering {
    /// Mask from `F`, streaks from `[F, R̂]`, background last.
    #[default]
    #[serde(rename = "R_S_B")]
    RSB,
    /// Streaks from `F`, mask from `[F, Ŝ]`, background last.
    #[serde(rename = "S_R_B")]
    SRB,
    /// Mask and streaks both from `F`, background last.
    #[serde(rename = "parallel")]
    Parallel,
}

impl std::str::FromStr for HeadOrdering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "R_S_B" | "rsb" => Ok(HeadOrdering::RSB),
            "S_R_B" | "srb" => Ok(HeadOrdering::SRB),
            "parallel" => Ok(HeadOrdering::Parallel),
            other => Err(Error::Config(format!("unknown head ordering `{other}`"))),
        }
    }
}

/// Shape of the contextualized dilated network.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub feature_channels: usize,
    /// Feature-refinement rounds inside the extractor.
    pub intra_recurrences: usize,
    pub dilation_factors: Vec<usize>,
    pub kernel_size: usize,
    pub head_ordering: HeadOrdering,
    pub input_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            feature_channels: 16,
            intra_recurrences: 2,
            dilation_factors: vec![1, 2, 3],
            kernel_size: 3,
            head_ordering: HeadOrdering::RSB,
            input_channels: 3,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_channels == 0 {
            return Err(Error::Config("feature_channels must be positive".into()));
        }
        if self.kernel_size != 3 {
            return Err(Error::Config(format!(
                "kernel_size must be 3, got {}",
                self.kernel_size
            )));
        }
        if self.dilation_factors.is_empty() || self.dilation_factors.contains(&0) {
            return Err(Error::Config(format!(
                "dilation factors must be positive and nonempty, got {:?}",
                self.dilation_factors
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be positive".into()));
        }
        Ok(())
    }

    /// Receptive field of the dilated path with factor `d`: two stacked
    /// 3×3 convolutions.
    pub fn path_receptive_field(&self, dilation: usize) -> usize {
        2 * dilation * (self.kernel_size - 1) + 1
    }

    /// Side of the square an output feature can see after the input
    /// transform and all refinement rounds.
    pub fn extractor_receptive_field(&self) -> usize {
        let widest = self.dilation_factors.iter().copied().max().unwrap_or(0);
        let per_round = 2 * widest * (self.kernel_size - 1);
        self.kernel_size + self.intra_recurrences * per_round
    }
}

/// Weights of the background and detection terms relative to the streak term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) || !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(Error::Config(format!(
                "loss weights must be finite and nonnegative, got {} / {}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_paths_see_5_9_13() {
        let cfg = NetworkConfig::default();
        let fields: Vec<usize> = cfg.dilation_factors.iter().map(|&d| cfg.path_receptive_field(d)).collect();
        assert_eq!(fields, vec![5, 9, 13]);
        let one_round = NetworkConfig {
            intra_recurrences: 1,
            ..cfg
        };
        assert_eq!(one_round.extractor_receptive_field(), 15);
    }

    #[test]
    fn ordering_uses_letter_names() {
        assert_eq!(serde_json::to_string(&HeadOrdering::RSB).unwrap(), "\"R_S_B\"");
        assert_eq!("parallel".parse::<HeadOrdering>().unwrap(), HeadOrdering::Parallel);
        assert!("RBS".parse::<HeadOrdering>().is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = NetworkConfig {
            kernel_size: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(LossWeights { lambda1: -1.0, lambda2: 0.0 }.validate().is_err());
        assert!(LossWeights { lambda1: f64::NAN, lambda2: 0.0 }.validate().is_err());
    }
}
