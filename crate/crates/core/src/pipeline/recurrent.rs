use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::network::{
    accumulate_gradients, guard, Checkpoint, JorderNet, LossBreakdown, LossWeights, ModelKind, NetworkConfig,
    StageState, TermWeights,
};
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::synthesis::{RainExample, RainMask, StreakLayer};

/// Streak intensity below which a pixel no longer counts as rainy.
const REMAINING_RAIN_THRESHOLD: f64 = 0.05;

/// Derain network(s) for the recurrent pipeline: one per iteration, or a
/// single shared one.
#[derive(Clone, Debug, PartialEq)]
pub struct DerainModel {
    pub stages: Vec<JorderNet<f32>>,
    pub shared: bool,
}

impl DerainModel {
    /// `stages` independently initialised networks (or one when `shared`).
    pub fn new(config: NetworkConfig, stages: usize, shared: bool, seed: u64) -> Result<Self> {
        if stages == 0 {
            return Err(Error::Config("a derain model needs at least one stage".into()));
        }
        let count = if shared { 1 } else { stages };
        let stages = (0..count)
            .map(|t| JorderNet::new(config.clone(), seed.wrapping_add(t as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(DerainModel { stages, shared })
    }

    pub fn single(net: JorderNet<f32>) -> Self {
        DerainModel {
            stages: vec![net],
            shared: true,
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        self.stages[0].config()
    }

    /// Network applied at iteration `t` (0-based). Iterations past the last
    /// trained stage reuse it.
    pub fn stage(&self, t: usize) -> &JorderNet<f32> {
        &self.stages[t.min(self.stages.len() - 1)]
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.stages.is_empty() {
            return Err(Error::Checkpoint("checkpoint has no stages".into()));
        }
        let stages = ck
            .stages
            .iter()
            .map(|s| JorderNet::from_params(ck.network.clone(), &s.params))
            .collect::<Result<Vec<_>>>()?;
        Ok(DerainModel {
            stages,
            shared: ck.shared,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(ModelKind::Derain, path)?;
        Self::from_checkpoint(&ck)
    }

    pub fn to_checkpoint(&self, step: u64, config_hash: &str, optimizers: Option<&[Adam<f32>]>) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Derain,
            network: self.config().clone(),
            shared: self.shared,
            step,
            config_hash: config_hash.to_string(),
            stages: self
                .stages
                .iter()
                .enumerate()
                .map(|(t, net)| StageState {
                    params: net.params().clone(),
                    optimizer: optimizers.map(|o| o[t].clone()),
                })
                .collect(),
            extra: BTreeMap::new(),
        }
    }
}

/// One application of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct DerainOutput {
    /// `O − B̂`.
    pub residual: Image,
    pub mask_prob: Image,
    pub streak: Image,
    pub background: Image,
}

pub fn derain_once(rain: &Image, net: &JorderNet<f32>) -> Result<DerainOutput> {
    let pred = net.forward(rain)?;
    let residual = rain.zip_map(&pred.background, |o, b| o - b)?;
    Ok(DerainOutput {
        residual,
        mask_prob: pred.mask_prob,
        streak: pred.streak,
        background: pred.background,
    })
}

/// Record of one recurrence: input, predicted residue and side outputs,
/// and the resulting background `B_t = O_t − ε_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrenceStep {
    pub input: Image,
    pub residual: Image,
    pub mask_prob: Image,
    pub streak: Image,
    pub background: Image,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecurrenceTrace {
    pub steps: Vec<RecurrenceStep>,
}

impl RecurrenceTrace {
    /// Recomputes `B_τ` from `O_0` and the logged residues alone.
    pub fn replay(&self, rain: &Image) -> Result<Image> {
        let mut current = rain.clone();
        for step in &self.steps {
            current = current.zip_map(&step.residual, |o, e| o - e)?;
        }
        Ok(current)
    }

    /// `O_0 − Σ ε_t`.
    pub fn telescoped(&self, rain: &Image) -> Result<Image> {
        let mut total = Image::zeros(rain.height(), rain.width(), rain.channels());
        for step in &self.steps {
            total = total.zip_map(&step.residual, |a, e| a + e)?;
        }
        rain.zip_map(&total, |o, s| o - s)
    }

    pub fn outputs(&self) -> impl Iterator<Item = &Image> {
        self.steps.iter().map(|s| &s.background)
    }
}

/// `τ` rounds of `ε_t = T(O_t)`, `B_t = O_t − ε_t`, `O_{t+1} = B_t`.
/// Intermediate images stay unclipped.
pub fn derain_recurrent(rain: &Image, model: &DerainModel, tau: usize) -> Result<(Image, RecurrenceTrace)> {
    if tau == 0 {
        return Err(Error::Parameter("tau must be at least 1".into()));
    }
    let mut trace = RecurrenceTrace::default();
    let mut current = rain.clone();
    for t in 0..tau {
        let out = derain_once(&current, model.stage(t))?;
        let next = current.zip_map(&out.residual, |o, e| o - e)?;
        trace.steps.push(RecurrenceStep {
            input: std::mem::replace(&mut current, next.clone()),
            residual: out.residual,
            mask_prob: out.mask_prob,
            streak: out.streak,
            background: next,
        });
    }
    Ok((current, trace))
}

/// Targets for an iteration whose input is `current`: the background is
/// unchanged, the streak layer keeps only the rain not yet removed
/// (`S − mean_c(O_0 − O_t)`, floored at zero) and the mask drops pixels
/// whose remaining streak falls below the threshold.
pub fn remaining_rain(ex: &RainExample, current: &Image) -> Result<RainExample> {
    let (h, w, c) = ex.rain.dims();
    if current.dims() != (h, w, c) {
        return Err(Error::Shape(format!(
            "iteration input is {:?}, example `{}` is {:?}",
            current.dims(),
            ex.id,
            ex.rain.dims()
        )));
    }
    let streak: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let removed = (0..c).map(|k| ex.rain.get(k, y, x) - current.get(k, y, x)).sum::<f64>() / c as f64;
            (ex.streak.data[i] - removed).max(0.0)
        })
        .collect();
    let mask: Vec<f64> = ex
        .mask
        .data()
        .iter()
        .zip(&streak)
        .map(|(&r, &s)| if r == 1 && s > REMAINING_RAIN_THRESHOLD { 1.0 } else { 0.0 })
        .collect();
    Ok(RainExample {
        id: ex.id.clone(),
        rain: current.clone(),
        background: ex.background.clone(),
        streak: StreakLayer::from_data(h, w, streak)?,
        mask: RainMask::from_values(h, w, &mask)?,
        haze: ex.haze.clone(),
    })
}

/// Summed loss of one recurrent training step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecurrentLoss {
    /// Batch-mean joint loss of each iteration.
    pub per_iteration: Vec<LossBreakdown>,
    pub total: f64,
}

/// Trains all iterations jointly on `Σ_t L(Θ_t, t)`.
///
/// Iteration `t` sees the (detached) output of iteration `t − 1` and is
/// scored against the original background and the rain still present in
/// its input (see [`remaining_rain`]).
#[derive(Clone, Debug)]
pub struct RecurrentTrainer {
    pub model: DerainModel,
    pub optimizers: Vec<Adam<f32>>,
    pub weights: LossWeights,
    pub tau: usize,
    pub step: u64,
    pub last_checkpoint: Option<PathBuf>,
}

impl RecurrentTrainer {
    pub fn new(model: DerainModel, adam: AdamConfig, weights: LossWeights, tau: usize) -> Result<Self> {
        if tau == 0 {
            return Err(Error::Config("tau must be at least 1".into()));
        }
        if !model.shared && model.stages.len() != tau {
            return Err(Error::Config(format!(
                "{} stages cannot be trained with tau = {tau}",
                model.stages.len()
            )));
        }
        let optimizers = model.stages.iter().map(|n| Adam::new(adam, n.params())).collect();
        Ok(RecurrentTrainer {
            model,
            optimizers,
            weights,
            tau,
            step: 0,
            last_checkpoint: None,
        })
    }

    /// Restores model and optimizer state from a checkpoint written by
    /// [`RecurrentTrainer::checkpoint`].
    pub fn resume(ck: &Checkpoint, adam: AdamConfig, weights: LossWeights, tau: usize) -> Result<Self> {
        let model = DerainModel::from_checkpoint(ck)?;
        let mut trainer = Self::new(model, adam, weights, tau)?;
        for (opt, stage) in trainer.optimizers.iter_mut().zip(&ck.stages) {
            if let Some(saved) = &stage.optimizer {
                opt.config = saved.config;
                opt.step = saved.step;
                opt.first_moment.load_from(&saved.first_moment)?;
                opt.second_moment.load_from(&saved.second_moment)?;
            }
        }
        trainer.step = ck.step;
        Ok(trainer)
    }

    pub fn set_learning_rate(&mut self, rate: f64) {
        for opt in &mut self.optimizers {
            opt.config.learning_rate = rate;
        }
    }

    pub fn checkpoint(&self, config_hash: &str) -> Checkpoint {
        self.model.to_checkpoint(self.step, config_hash, Some(&self.optimizers))
    }

    pub fn train_step(&mut self, batch: &[RainExample]) -> Result<RecurrentLoss> {
        if batch.is_empty() {
            return Err(Error::Parameter("empty training batch".into()));
        }
        self.weights.validate()?;
        let weights: TermWeights = self.weights.into();
        let tau = self.tau;
        let model = &self.model;
        let slot = |t: usize| if model.shared { 0 } else { t };
        let per_example = batch
            .par_iter()
            .map(|ex| {
                if !ex.rain.is_finite() {
                    return Err(Error::NonFinite(format!("rain image of `{}`", ex.id)));
                }
                let mut grads: Vec<ParamSet<f32>> = model.stages.iter().map(|n| n.params().zeros_like()).collect();
                let mut losses = Vec::with_capacity(tau);
                let mut current = ex.rain.clone();
                for t in 0..tau {
                    let target = if t == 0 { None } else { Some(remaining_rain(ex, &current)?) };
                    let truth = target.as_ref().unwrap_or(ex);
                    let (loss, background) =
                        accumulate_gradients(&model.stages[slot(t)], &current, truth, weights, &mut grads[slot(t)])?;
                    losses.push(loss);
                    if t + 1 < tau {
                        // ε_t = O_t − B̂_t, so O_{t+1} = O_t − ε_t = B̂_t up to rounding
                        let residual = current.zip_map(&background, |o, b| o - b)?;
                        current = current.zip_map(&residual, |o, e| o - e)?;
                        if !current.is_finite() {
                            // surfaces as divergence below instead of an input error
                            losses.push(LossBreakdown {
                                total: f64::NAN,
                                ..Default::default()
                            });
                            break;
                        }
                    }
                }
                Ok((losses, grads))
            })
            .collect::<Result<Vec<_>>>()?;

        let n = batch.len() as f32;
        let mut grads: Vec<ParamSet<f32>> = self.model.stages.iter().map(|s| s.params().zeros_like()).collect();
        let mut per_iteration = vec![Vec::with_capacity(batch.len()); tau];
        for (losses, g) in per_example {
            for (t, l) in losses.into_iter().enumerate().take(tau) {
                per_iteration[t].push(l);
            }
            for (acc, gi) in grads.iter_mut().zip(&g) {
                acc.add_assign(gi);
            }
        }
        for g in &mut grads {
            g.scale(1.0 / n);
        }
        let per_iteration: Vec<LossBreakdown> = per_iteration.iter().map(|l| LossBreakdown::mean(l)).collect();
        let total = LossBreakdown::sum(&per_iteration);
        for g in &grads {
            guard(&total, g, self.step, &self.last_checkpoint)?;
        }
        for ((opt, net), g) in self.optimizers.iter_mut().zip(&mut self.model.stages).zip(&grads) {
            opt.update(net.params_mut(), g);
        }
        self.step += 1;
        Ok(RecurrentLoss {
            per_iteration,
            total: total.total,
        })
    }
}
