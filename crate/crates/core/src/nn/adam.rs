use serde::{Deserialize, Serialize};

use crate::nn::{ParamSet, Real};
use crate::{Error, Result};

/// Hyper-parameters of the adaptive-moment optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Step decay of the learning rate: the base rate is multiplied by
/// `factor` from step `at · total` on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepDecay {
    pub at: f64,
    pub factor: f64,
}

impl Default for StepDecay {
    fn default() -> Self {
        StepDecay { at: 0.75, factor: 0.1 }
    }
}

impl StepDecay {
    /// No decay at all.
    pub fn none() -> Self {
        StepDecay { at: 1.0, factor: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.at) || !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::Config(format!(
                "learning-rate decay needs at in [0, 1] and factor in (0, 1], got at {} factor {}",
                self.at, self.factor
            )));
        }
        Ok(())
    }

    /// Learning rate for zero-based `step` of a run of `total` steps.
    pub fn rate(&self, base: f64, step: u64, total: u64) -> f64 {
        if step as f64 >= self.at * total as f64 {
            base * self.factor
        } else {
            base
        }
    }
}

/// Adam state for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: ParamSet<T>,
    pub second_moment: ParamSet<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        Adam {
            config,
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let step_size = T::from_f64_lossy(c.learning_rate * bias2.sqrt() / bias1);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let eps = T::from_f64_lossy(c.epsilon * bias2.sqrt());
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let moments = self.first_moment.iter_mut().zip(self.second_moment.iter_mut());
        for ((p, g), (m, v)) in params.iter_mut().zip(grads.iter()).zip(moments) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + one_b1 * gi;
                v.data[i] = b2 * v.data[i] + one_b2 * gi * gi;
                p.data[i] -= step_size * m.data[i] / (v.data[i].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_a_quadratic() {
        let mut params = ParamSet::<f64>::new();
        params.insert("x", vec![2], vec![3.0, -2.0]);
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.05, ..Default::default() }, &params);
        for _ in 0..2000 {
            let mut g = params.zeros_like();
            for (gv, &x) in g.get_mut(0).data.iter_mut().zip(&params.get(0).data) {
                *gv = 2.0 * (x - 1.0);
            }
            adam.update(&mut params, &g);
        }
        for &x in &params.get(0).data {
            assert!((x - 1.0).abs() < 1e-3, "{x}");
        }
    }

    #[test]
    fn step_decay_switches_once() {
        let d = StepDecay::default();
        assert_eq!(d.rate(1e-3, 0, 100), 1e-3);
        assert_eq!(d.rate(1e-3, 74, 100), 1e-3);
        assert_eq!(d.rate(1e-3, 75, 100), 1e-3 * 0.1);
        assert_eq!(d.rate(1e-3, 99, 100), 1e-3 * 0.1);
        assert_eq!(StepDecay::none().rate(1e-3, 99, 100), 1e-3);
        assert!(StepDecay { at: 0.5, factor: 0.0 }.validate().is_err());
        assert!(StepDecay { at: 1.5, factor: 0.5 }.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bitwise_unchanged() {
        let mut params = ParamSet::<f32>::new();
        params.insert("w", vec![3], vec![0.1, -0.7, 2.5]);
        let before = params.clone();
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.0, ..Default::default() }, &params);
        let mut g = params.zeros_like();
        g.get_mut(0).data.copy_from_slice(&[1.0, -3.0, 0.5]);
        adam.update(&mut params, &g);
        assert_eq!(params, before);
    }
}
