use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::network::{guard, Checkpoint, Extractor, LossBreakdown, ModelKind, NetworkConfig, StageState};
use crate::nn::{Adam, AdamConfig, ConvLayer, ConvShape, Graph, NodeId, ParamSet, Real, Tensor};
use crate::synthesis::{RainExample, RainMask, StreakLayer};

/// Dehazing network: the dilated extractor with a single refinement round
/// and one convolution on `[F, O]` predicting a correction added to `O`.
#[derive(Clone, Debug, PartialEq)]
pub struct DehazeNet<T: Real> {
    config: NetworkConfig,
    extractor: Extractor,
    head: ConvLayer,
    params: ParamSet<T>,
}

impl<T: Real> DehazeNet<T> {
    /// `config.intra_recurrences` is forced to 1 and the head ordering is
    /// irrelevant. The head starts at zero, so a fresh network is the
    /// identity.
    pub fn new(mut config: NetworkConfig, seed: u64) -> Result<Self> {
        config.intra_recurrences = 1;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let extractor = Extractor::register(&mut params, &config, 1, &mut rng);
        let shape = ConvShape {
            in_channels: config.feature_channels + config.input_channels,
            out_channels: config.input_channels,
            kernel: config.kernel_size,
            dilation: 1,
        };
        let head = ConvLayer::register(&mut params, "dehaze.head", shape, 0.0, &mut rng);
        Ok(DehazeNet {
            config,
            extractor,
            head,
            params,
        })
    }

    pub fn from_params(config: NetworkConfig, params: &ParamSet<T>) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        net.params.load_from(params)?;
        if !net.params.all_finite() {
            return Err(Error::NonFinite("dehaze parameters".into()));
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        if image.channels() != self.config.input_channels {
            return Err(Error::Shape(format!(
                "dehaze network expects {} channels, got {}",
                self.config.input_channels,
                image.channels()
            )));
        }
        if !image.is_finite() {
            return Err(Error::NonFinite("dehaze input".into()));
        }
        Ok(())
    }

    fn build<'p>(&self, g: &mut Graph<'p, T>, image: NodeId) -> NodeId {
        let features = self.extractor.build(g, image);
        let cat = g.concat(&[features, image]);
        let correction = g.conv(cat, self.head);
        g.add(&[image, correction])
    }

    pub fn forward(&self, image: &Image) -> Result<Image> {
        self.check_input(image)?;
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::from_image(image));
        let y = self.build(&mut g, x);
        Ok(g.value(y).to_image())
    }

    /// MSE against `target` and its parameter gradient (added into `grads`).
    fn accumulate(&self, input: &Image, target: &Image, grads: &mut ParamSet<T>) -> Result<f64> {
        self.check_input(input)?;
        if !input.same_shape(target) {
            return Err(Error::Shape(format!("{:?} vs {:?}", input.dims(), target.dims())));
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::from_image(input));
        let y = self.build(&mut g, x);
        let out = g.value(y);
        let n = out.data.len() as f64;
        let mut sse = 0.0;
        let seed: Vec<T> = out
            .data
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let e = p.as_f64() - t;
                sse += e * e;
                T::from_f64_lossy(2.0 * e / n)
            })
            .collect();
        g.backward(vec![(y, seed)], grads);
        Ok(sse / n)
    }

    pub fn cast<U: Real>(&self) -> DehazeNet<U> {
        DehazeNet {
            config: self.config.clone(),
            extractor: self.extractor.clone(),
            head: self.head,
            params: self.params.cast(),
        }
    }
}

impl DehazeNet<f32> {
    pub fn to_checkpoint(&self, step: u64, config_hash: &str, optimizer: Option<&Adam<f32>>) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Dehaze,
            network: self.config.clone(),
            shared: true,
            step,
            config_hash: config_hash.to_string(),
            stages: vec![StageState {
                params: self.params.clone(),
                optimizer: optimizer.cloned(),
            }],
            extra: BTreeMap::new(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let stage = ck
            .stages
            .first()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no stages".into()))?;
        Self::from_params(ck.network.clone(), &stage.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(ModelKind::Dehaze, path)?;
        Self::from_checkpoint(&ck)
    }
}

/// Haze removal with a trained dehaze network.
pub fn dehaze(image: &Image, net: &DehazeNet<f32>) -> Result<Image> {
    net.forward(image)
}

/// Adam training of a [`DehazeNet`] on `(hazy, clean)` pairs taken from
/// examples' `rain` and `background` images.
#[derive(Clone, Debug)]
pub struct DehazeTrainer {
    pub net: DehazeNet<f32>,
    pub optimizer: Adam<f32>,
    pub last_checkpoint: Option<PathBuf>,
}

impl DehazeTrainer {
    pub fn new(net: DehazeNet<f32>, adam: AdamConfig) -> Self {
        let optimizer = Adam::new(adam, net.params());
        DehazeTrainer {
            net,
            optimizer,
            last_checkpoint: None,
        }
    }

    pub fn resume(ck: &Checkpoint, adam: AdamConfig) -> Result<Self> {
        let mut trainer = Self::new(DehazeNet::from_checkpoint(ck)?, adam);
        if let Some(saved) = ck.stages.first().and_then(|s| s.optimizer.as_ref()) {
            trainer.optimizer.config = saved.config;
            trainer.optimizer.step = saved.step;
            trainer.optimizer.first_moment.load_from(&saved.first_moment)?;
            trainer.optimizer.second_moment.load_from(&saved.second_moment)?;
        }
        Ok(trainer)
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn set_learning_rate(&mut self, rate: f64) {
        self.optimizer.config.learning_rate = rate;
    }

    /// One step on the batch-mean MSE; returns the pre-update loss.
    pub fn train_step(&mut self, batch: &[RainExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Parameter("empty training batch".into()));
        }
        let net = &self.net;
        let parts = batch
            .par_iter()
            .map(|ex| {
                let mut grads = net.params().zeros_like();
                let loss = net.accumulate(&ex.rain, &ex.background, &mut grads)?;
                Ok((loss, grads))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = batch.len() as f64;
        let mut grads = self.net.params().zeros_like();
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l / n;
            grads.add_assign(g);
        }
        grads.scale(1.0 / n as f32);
        let summary = LossBreakdown {
            background_mse: loss,
            total: loss,
            ..Default::default()
        };
        guard(&summary, &grads, self.optimizer.step, &self.last_checkpoint)?;
        self.optimizer.update(self.net.params_mut(), &grads);
        Ok(loss)
    }
}

/// Replaces a `clean_fraction` share of the batch by rain- and haze-free
/// pairs (`rain = background`, no streaks, empty mask) so the network
/// learns to leave clear images alone.
pub fn mix_clean<R: Rng + ?Sized>(batch: &mut [RainExample], clean_fraction: f64, rng: &mut R) {
    for ex in batch.iter_mut() {
        if rng.random_bool(clean_fraction.clamp(0.0, 1.0)) {
            let (h, w) = (ex.height(), ex.width());
            ex.rain = ex.background.clone();
            ex.streak = StreakLayer::zeros(h, w);
            ex.mask = RainMask::zeros(h, w);
            ex.haze = None;
        }
    }
}
