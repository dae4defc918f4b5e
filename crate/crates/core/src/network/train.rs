use std::path::PathBuf;

use rand::{Rng, RngExt};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::network::loss::output_gradients;
use crate::network::{JorderNet, LossBreakdown, LossWeights, TermWeights};
use crate::nn::{Adam, AdamConfig, Graph, ParamSet, Real, Tensor};
use crate::synthesis::RainExample;

fn check_example(ex: &RainExample) -> Result<()> {
    if !ex.rain.is_finite() {
        return Err(Error::NonFinite(format!("rain image of `{}`", ex.id)));
    }
    Ok(())
}

/// Loss of one example and its gradient with respect to every parameter.
pub fn example_gradients<T: Real>(
    net: &JorderNet<T>,
    ex: &RainExample,
    weights: TermWeights,
) -> Result<(LossBreakdown, ParamSet<T>)> {
    let mut grads = net.params().zeros_like();
    let (loss, _) = accumulate_gradients(net, &ex.rain, ex, weights, &mut grads)?;
    Ok((loss, grads))
}

/// Like [`example_gradients`] but feeds `input` to the network and adds the
/// gradients into `grads`. Also returns the predicted background. Used by
/// the recurrent trainer, whose later iterations see earlier outputs
/// instead of the rainy image.
pub fn accumulate_gradients<T: Real>(
    net: &JorderNet<T>,
    input: &Image,
    truth: &RainExample,
    weights: TermWeights,
    grads: &mut ParamSet<T>,
) -> Result<(LossBreakdown, Image)> {
    net.check_input(input)?;
    let mut g = Graph::new(net.params());
    let x = g.input(Tensor::from_image(input));
    let out = net.build_graph(&mut g, x);
    let og = output_gradients(g.value(out.logits), g.value(out.streak), g.value(out.background), truth, weights)?;
    g.backward(
        vec![(out.logits, og.logits), (out.streak, og.streak), (out.background, og.background)],
        grads,
    );
    Ok((og.loss, g.value(out.background).to_image()))
}

/// Forward-only loss, as used by finite-difference checks.
pub fn example_loss<T: Real>(net: &JorderNet<T>, ex: &RainExample, weights: TermWeights) -> Result<LossBreakdown> {
    check_example(ex)?;
    let mut g = Graph::new(net.params());
    let x = g.input(Tensor::from_image(&ex.rain));
    let out = net.build_graph(&mut g, x);
    Ok(output_gradients(g.value(out.logits), g.value(out.streak), g.value(out.background), ex, weights)?.loss)
}

/// Batch-mean loss and gradients, computed in parallel over examples.
pub(crate) fn batch_gradients<T: Real>(
    net: &JorderNet<T>,
    inputs: &[&Image],
    batch: &[RainExample],
    weights: TermWeights,
) -> Result<(LossBreakdown, ParamSet<T>)> {
    let parts = inputs
        .par_iter()
        .zip(batch.par_iter())
        .map(|(input, ex)| {
            let mut grads = net.params().zeros_like();
            let (loss, _) = accumulate_gradients(net, input, ex, weights, &mut grads)?;
            Ok((loss, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let losses: Vec<LossBreakdown> = parts.iter().map(|(l, _)| *l).collect();
    let mut iter = parts.into_iter().map(|(_, g)| g);
    let mut total = iter.next().expect("nonempty batch");
    for g in iter {
        total.add_assign(&g);
    }
    total.scale(T::from_f64_lossy(1.0 / batch.len() as f64));
    Ok((LossBreakdown::mean(&losses), total))
}

pub(crate) fn guard(loss: &LossBreakdown, grads: &ParamSet<impl Real>, step: u64, checkpoint: &Option<PathBuf>) -> Result<()> {
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::Diverged {
            step,
            loss: loss.total,
            checkpoint: checkpoint.clone(),
        });
    }
    Ok(())
}

/// One optimizer step on the batch mean of the joint loss. Returns the
/// loss before the update.
pub fn train_step(
    batch: &[RainExample],
    net: &mut JorderNet<f32>,
    weights: &LossWeights,
    optimizer: &mut Adam<f32>,
) -> Result<LossBreakdown> {
    train_step_inner(batch, net, weights, optimizer, &None)
}

fn train_step_inner(
    batch: &[RainExample],
    net: &mut JorderNet<f32>,
    weights: &LossWeights,
    optimizer: &mut Adam<f32>,
    last_checkpoint: &Option<PathBuf>,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Parameter("empty training batch".into()));
    }
    weights.validate()?;
    for ex in batch {
        check_example(ex)?;
    }
    let inputs: Vec<&Image> = batch.iter().map(|e| &e.rain).collect();
    let (loss, grads) = batch_gradients(net, &inputs, batch, (*weights).into())?;
    guard(&loss, &grads, optimizer.step, last_checkpoint)?;
    optimizer.update(net.params_mut(), &grads);
    Ok(loss)
}

/// Network, optimizer state and loss weights of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: JorderNet<f32>,
    pub optimizer: Adam<f32>,
    pub weights: LossWeights,
    /// Reported by the divergence guard.
    pub last_checkpoint: Option<PathBuf>,
}

impl Trainer {
    pub fn new(net: JorderNet<f32>, adam: AdamConfig, weights: LossWeights) -> Self {
        let optimizer = Adam::new(adam, net.params());
        Trainer {
            net,
            optimizer,
            weights,
            last_checkpoint: None,
        }
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn set_learning_rate(&mut self, rate: f64) {
        self.optimizer.config.learning_rate = rate;
    }

    pub fn train_step(&mut self, batch: &[RainExample]) -> Result<LossBreakdown> {
        train_step_inner(batch, &mut self.net, &self.weights, &mut self.optimizer, &self.last_checkpoint)
    }
}

/// Draws `count` random `size×size` crops (with replacement) from `pool`.
pub fn sample_crops<R: Rng + ?Sized>(
    pool: &[RainExample],
    count: usize,
    size: usize,
    rng: &mut R,
) -> Result<Vec<RainExample>> {
    if pool.is_empty() {
        return Err(Error::Parameter("no training examples".into()));
    }
    (0..count)
        .map(|_| {
            let ex = &pool[rng.random_range(0..pool.len())];
            if ex.height() < size || ex.width() < size {
                return Err(Error::Shape(format!(
                    "example `{}` ({}x{}) is smaller than the {size}x{size} crop",
                    ex.id,
                    ex.height(),
                    ex.width()
                )));
            }
            let top = rng.random_range(0..=ex.height() - size);
            let left = rng.random_range(0..=ex.width() - size);
            ex.crop(top, left, size, size)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;
    use crate::synthesis::{RainMask, StreakLayer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(h: usize, w: usize) -> RainExample {
        let background = Image::from_fn(h, w, 3, |c, y, x| 0.2 + 0.05 * ((c + 2 * y + x) % 5) as f64);
        let s: Vec<f64> = (0..h * w).map(|i| if (i % w + i / w).is_multiple_of(6) { 0.4 } else { 0.0 }).collect();
        let mask_values: Vec<f64> = s.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        let mask = RainMask::from_values(h, w, &mask_values).unwrap();
        let streak = StreakLayer::from_data(h, w, s).unwrap();
        let rain = Image::from_fn(h, w, 3, |c, y, x| background.get(c, y, x) + streak.data[y * w + x]);
        RainExample {
            id: "toy".into(),
            rain,
            background,
            streak,
            mask,
            haze: None,
        }
    }

    fn small() -> NetworkConfig {
        NetworkConfig {
            feature_channels: 4,
            intra_recurrences: 1,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let net = JorderNet::new(small(), 2).unwrap();
        let mut trainer = Trainer::new(
            net.clone(),
            AdamConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            LossWeights::default(),
        );
        trainer.train_step(&[toy(16, 16)]).unwrap();
        assert_eq!(trainer.net.params(), net.params());
        assert_eq!(trainer.step(), 1);
    }

    #[test]
    fn returns_the_pre_update_loss() {
        let net = JorderNet::new(small(), 2).unwrap();
        let ex = toy(16, 16);
        let before = example_loss(&net, &ex, LossWeights::default().into()).unwrap();
        let mut trainer = Trainer::new(net, AdamConfig::default(), LossWeights::default());
        let reported = trainer.train_step(&[ex]).unwrap();
        assert!((reported.total - before.total).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_and_nan_are_errors() {
        let mut trainer = Trainer::new(JorderNet::new(small(), 2).unwrap(), AdamConfig::default(), LossWeights::default());
        assert!(trainer.train_step(&[]).is_err());
        let mut ex = toy(16, 16);
        ex.rain.set(1, 2, 3, f64::NAN);
        assert!(matches!(trainer.train_step(&[ex]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn exploding_parameters_trip_the_guard() {
        let mut trainer = Trainer::new(JorderNet::new(small(), 2).unwrap(), AdamConfig::default(), LossWeights::default());
        trainer.last_checkpoint = Some(PathBuf::from("ckpt/step_500.safetensors"));
        for p in trainer.net.params_mut().iter_mut() {
            p.data.iter_mut().for_each(|v| *v = 1e30);
        }
        match trainer.train_step(&[toy(16, 16)]) {
            Err(Error::Diverged { checkpoint, .. }) => {
                assert_eq!(checkpoint.unwrap(), PathBuf::from("ckpt/step_500.safetensors"))
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn crops_have_the_requested_size() {
        let pool = vec![toy(20, 24)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let crops = sample_crops(&pool, 5, 16, &mut rng).unwrap();
        assert_eq!(crops.len(), 5);
        assert!(crops.iter().all(|c| c.height() == 16 && c.width() == 16));
        assert!(sample_crops(&pool, 1, 32, &mut rng).is_err());
    }
}
