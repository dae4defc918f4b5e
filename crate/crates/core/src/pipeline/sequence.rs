use crate::error::{Error, Result};
use crate::image::Image;
use crate::pipeline::{derain_recurrent, DehazeNet, DerainModel, PipelineConfig, RecurrenceTrace, Stage};

/// Output of one stage of a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub stage: Stage,
    pub output: Image,
    /// Per-iteration detail of derain stages.
    pub trace: Option<RecurrenceTrace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceOutput {
    pub output: Image,
    pub stages: Vec<StageRecord>,
}

/// Loaded models plus the configuration that chains them.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub derain: Option<DerainModel>,
    pub dehaze: Option<DehazeNet<f32>>,
}

impl Pipeline {
    /// Loads the checkpoint of every stage named in the sequence.
    pub fn load(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let needs = |s: Stage| config.stage_sequence.contains(&s);
        let path_for = |s: Stage| {
            config
                .checkpoint_for(s)
                .ok_or_else(|| Error::MissingStage(s.to_string()))
        };
        let derain = if needs(Stage::Derain) {
            Some(DerainModel::load(path_for(Stage::Derain)?)?)
        } else {
            None
        };
        let dehaze = if needs(Stage::Dehaze) {
            Some(DehazeNet::load(path_for(Stage::Dehaze)?)?)
        } else {
            None
        };
        Ok(Pipeline { config, derain, dehaze })
    }

    pub fn from_models(config: PipelineConfig, derain: Option<DerainModel>, dehaze: Option<DehazeNet<f32>>) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline { config, derain, dehaze })
    }

    /// Runs the configured sequence.
    pub fn run(&self, image: &Image) -> Result<SequenceOutput> {
        self.run_sequence(image, &self.config.stage_sequence)
    }

    /// Runs an arbitrary sequence with the loaded models.
    pub fn run_sequence(&self, image: &Image, sequence: &[Stage]) -> Result<SequenceOutput> {
        if sequence.is_empty() {
            return Err(Error::Config("stage sequence is empty".into()));
        }
        let mut current = image.clone();
        let mut stages = Vec::with_capacity(sequence.len());
        for &stage in sequence {
            let (output, trace) = match stage {
                Stage::Derain => {
                    let model = self
                        .derain
                        .as_ref()
                        .ok_or_else(|| Error::MissingStage(Stage::Derain.to_string()))?;
                    let (out, trace) = derain_recurrent(&current, model, self.config.tau)?;
                    (out, Some(trace))
                }
                Stage::Dehaze => {
                    let net = self
                        .dehaze
                        .as_ref()
                        .ok_or_else(|| Error::MissingStage(Stage::Dehaze.to_string()))?;
                    (net.forward(&current)?, None)
                }
            };
            current = output.clone();
            stages.push(StageRecord { stage, output, trace });
        }
        Ok(SequenceOutput {
            output: current,
            stages,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;

    fn small() -> NetworkConfig {
        NetworkConfig {
            feature_channels: 4,
            intra_recurrences: 1,
            ..Default::default()
        }
    }

    fn image() -> Image {
        Image::from_fn(16, 16, 3, |c, y, x| ((c * 5 + y * 7 + x * 3) % 17) as f64 / 17.0)
    }

    fn pipeline() -> Pipeline {
        Pipeline::from_models(
            PipelineConfig {
                tau: 2,
                ..Default::default()
            },
            Some(DerainModel::new(small(), 2, false, 1).unwrap()),
            Some(DehazeNet::new(small(), 2).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn default_sequence_records_three_stages() {
        let out = pipeline().run(&image()).unwrap();
        assert_eq!(out.stages.len(), 3);
        assert_eq!(out.stages[2].output, out.output);
        assert!(out.stages[0].trace.is_some() && out.stages[1].trace.is_none());
    }

    #[test]
    fn derain_only_equals_the_recurrence() {
        let p = pipeline();
        let out = p.run_sequence(&image(), &[Stage::Derain]).unwrap();
        let (b, _) = derain_recurrent(&image(), p.derain.as_ref().unwrap(), 2).unwrap();
        assert_eq!(out.output, b);
    }

    #[test]
    fn deterministic() {
        let p = pipeline();
        assert_eq!(p.run(&image()).unwrap(), p.run(&image()).unwrap());
    }

    #[test]
    fn missing_checkpoint_names_the_stage() {
        let cfg = PipelineConfig::default();
        match Pipeline::load(cfg) {
            Err(Error::MissingStage(msg)) => assert_eq!(msg, "derain"),
            other => panic!("{other:?}"),
        }
        let p = Pipeline::from_models(PipelineConfig::default(), None, None).unwrap();
        match p.run_sequence(&image(), &[Stage::Dehaze]) {
            Err(Error::MissingStage(msg)) => assert_eq!(msg, "dehaze"),
            other => panic!("{other:?}"),
        }
    }
}
