use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::network::{LossWeights, Prediction};
use crate::nn::{Real, Tensor};
use crate::synthesis::RainExample;

/// Joint loss with its three weighted terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub streak_mse: f64,
    pub background_mse: f64,
    /// Mean per-pixel cross-entropy in nats.
    pub detection_ce: f64,
    pub streak_term: f64,
    pub background_term: f64,
    pub detection_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }

    /// Component-wise mean.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut out = LossBreakdown::default();
        for l in items {
            out.streak_mse += l.streak_mse / n;
            out.background_mse += l.background_mse / n;
            out.detection_ce += l.detection_ce / n;
            out.streak_term += l.streak_term / n;
            out.background_term += l.background_term / n;
            out.detection_term += l.detection_term / n;
            out.total += l.total / n;
        }
        out
    }

    /// Component-wise sum.
    pub fn sum(items: &[LossBreakdown]) -> LossBreakdown {
        let mut out = LossBreakdown::mean(items);
        let n = items.len() as f64;
        for v in [
            &mut out.streak_mse,
            &mut out.background_mse,
            &mut out.detection_ce,
            &mut out.streak_term,
            &mut out.background_term,
            &mut out.detection_term,
            &mut out.total,
        ] {
            *v *= n;
        }
        out
    }
}

/// Multipliers of the streak, background and detection terms. The joint
/// loss uses `(1, λ1, λ2)`; other settings isolate single terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermWeights {
    pub streak: f64,
    pub background: f64,
    pub detection: f64,
}

impl From<LossWeights> for TermWeights {
    fn from(w: LossWeights) -> Self {
        TermWeights {
            streak: 1.0,
            background: w.lambda1,
            detection: w.lambda2,
        }
    }
}

/// Gradients of the loss with respect to the three network outputs.
pub(crate) struct OutputGradients<T> {
    pub loss: LossBreakdown,
    pub logits: Vec<T>,
    pub streak: Vec<T>,
    pub background: Vec<T>,
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_targets(truth: &RainExample, height: usize, width: usize, channels: usize) -> Result<()> {
    let bg = &truth.background;
    if bg.dims() != (height, width, channels)
        || truth.streak.shape() != (height, width)
        || (truth.mask.height, truth.mask.width) != (height, width)
    {
        return Err(Error::Shape(format!(
            "prediction is {height}x{width}x{channels}, truth `{}` is {:?}",
            truth.id,
            bg.dims()
        )));
    }
    if !bg.is_finite() || !truth.streak.data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("targets of `{}`", truth.id)));
    }
    Ok(())
}

pub(crate) fn output_gradients<T: Real>(
    logits: &Tensor<T>,
    streak: &Tensor<T>,
    background: &Tensor<T>,
    truth: &RainExample,
    w: TermWeights,
) -> Result<OutputGradients<T>> {
    let (h, wd) = (streak.height, streak.width);
    check_targets(truth, h, wd, background.channels)?;
    let n = h * wd;
    let nb = background.data.len();

    let mut d_streak = vec![T::zero(); n];
    let mut streak_sse = 0.0;
    for (i, (&p, &t)) in streak.data.iter().zip(&truth.streak.data).enumerate() {
        let e = p.as_f64() - t;
        streak_sse += e * e;
        d_streak[i] = T::from_f64_lossy(w.streak * 2.0 * e / n as f64);
    }

    let mut d_background = vec![T::zero(); nb];
    let mut bg_sse = 0.0;
    for (i, (&p, &t)) in background.data.iter().zip(truth.background.data()).enumerate() {
        let e = p.as_f64() - t;
        bg_sse += e * e;
        d_background[i] = T::from_f64_lossy(w.background * 2.0 * e / nb as f64);
    }

    let mut d_logits = vec![T::zero(); 2 * n];
    let mut ce_sum = 0.0;
    for (i, &m) in truth.mask.data().iter().enumerate() {
        let (l0, l1) = (logits.data[i].as_f64(), logits.data[n + i].as_f64());
        let r = m as f64;
        // −log p1 = softplus(l0 − l1), −log p0 = softplus(l1 − l0)
        ce_sum += r * softplus(l0 - l1) + (1.0 - r) * softplus(l1 - l0);
        let p1 = 1.0 / (1.0 + (l0 - l1).exp());
        let g1 = w.detection * (p1 - r) / n as f64;
        d_logits[i] = T::from_f64_lossy(-g1);
        d_logits[n + i] = T::from_f64_lossy(g1);
    }

    let streak_mse = streak_sse / n as f64;
    let background_mse = bg_sse / nb as f64;
    let detection_ce = ce_sum / n as f64;
    let streak_term = w.streak * streak_mse;
    let background_term = w.background * background_mse;
    let detection_term = w.detection * detection_ce;
    Ok(OutputGradients {
        loss: LossBreakdown {
            streak_mse,
            background_mse,
            detection_ce,
            streak_term,
            background_term,
            detection_term,
            total: streak_term + background_term + detection_term,
        },
        logits: d_logits,
        streak: d_streak,
        background: d_background,
    })
}

fn tensor(img: &Image) -> Tensor<f64> {
    Tensor::from_image(img)
}

/// `MSE(Ŝ,S) + λ1·MSE(B̂,B) + λ2·CE(logits,R)`, each a per-pixel mean.
pub fn joint_loss(pred: &Prediction, truth: &RainExample, w: &LossWeights) -> Result<LossBreakdown> {
    w.validate()?;
    for (name, img) in [
        ("detection logits", &pred.detection_logits),
        ("streak prediction", &pred.streak),
        ("background prediction", &pred.background),
    ] {
        if !img.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
    }
    let g = output_gradients(
        &tensor(&pred.detection_logits),
        &tensor(&pred.streak),
        &tensor(&pred.background),
        truth,
        (*w).into(),
    )?;
    Ok(g.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::{RainMask, StreakLayer};

    fn example(h: usize, w: usize, mask: Vec<f64>) -> RainExample {
        let background = Image::from_fn(h, w, 3, |c, y, x| 0.1 + 0.02 * ((c + y + x) % 7) as f64);
        let streak = StreakLayer::from_data(h, w, mask.iter().map(|m| 0.3 * m).collect()).unwrap();
        RainExample {
            id: "t".into(),
            rain: background.clone(),
            background,
            streak,
            mask: RainMask::from_values(h, w, &mask).unwrap(),
            haze: None,
        }
    }

    fn logits_for(mask: &[f64], h: usize, w: usize, margin: f64) -> Image {
        let n = h * w;
        let mut data = vec![0.0; 2 * n];
        for (i, &m) in mask.iter().enumerate() {
            data[i] = if m == 0.0 { margin } else { 0.0 };
            data[n + i] = if m == 1.0 { margin } else { 0.0 };
        }
        Image::from_planar(h, w, 2, data).unwrap()
    }

    fn perfect(ex: &RainExample, margin: f64) -> Prediction {
        let (h, w) = (ex.height(), ex.width());
        let mask = ex.mask.to_f64();
        Prediction {
            detection_logits: logits_for(&mask, h, w, margin),
            mask_prob: Image::from_planar(h, w, 1, mask.clone()).unwrap(),
            streak: ex.streak.to_image(),
            background: ex.background.clone(),
        }
    }

    fn stripes(h: usize, w: usize) -> Vec<f64> {
        (0..h * w).map(|i| if i % w < 3 { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn perfect_prediction_with_saturated_logits() {
        let ex = example(8, 8, stripes(8, 8));
        let l = joint_loss(&perfect(&ex, 20.0), &ex, &LossWeights::default()).unwrap();
        assert_eq!(l.streak_mse, 0.0);
        assert_eq!(l.background_mse, 0.0);
        assert!(l.detection_ce < 1e-6);
        assert!(l.total < 1e-6);
    }

    #[test]
    fn zero_lambdas_leave_the_streak_term() {
        let ex = example(8, 8, stripes(8, 8));
        let mut pred = perfect(&ex, 0.0);
        pred.streak = pred.streak.map(|v| v + 0.2);
        pred.background = pred.background.map(|v| v - 0.3);
        let l = joint_loss(&pred, &ex, &LossWeights { lambda1: 0.0, lambda2: 0.0 }).unwrap();
        assert!((l.total - 0.04).abs() < 1e-12);
        assert_eq!(l.total, l.streak_mse);
    }

    #[test]
    fn uniform_logits_cost_ln2_whatever_the_mask() {
        for ones in [0usize, 5, 32, 64] {
            let mask: Vec<f64> = (0..64).map(|i| if i < ones { 1.0 } else { 0.0 }).collect();
            let ex = example(8, 8, mask.clone());
            let mut pred = perfect(&ex, 0.0);
            pred.detection_logits = Image::filled(8, 8, 2, 0.7);
            let l = joint_loss(&pred, &ex, &LossWeights::default()).unwrap();
            let direct: f64 = mask
                .iter()
                .map(|&r| {
                    let p1 = (0.7f64).exp() / (2.0 * 0.7f64.exp());
                    -(r * p1.ln() + (1.0 - r) * (1.0 - p1).ln())
                })
                .sum::<f64>()
                / 64.0;
            assert!((l.detection_ce - std::f64::consts::LN_2).abs() < 1e-12);
            assert!((l.detection_ce - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn total_is_the_sum_of_terms() {
        let ex = example(8, 8, stripes(8, 8));
        let mut pred = perfect(&ex, 1.5);
        pred.streak = pred.streak.map(|v| 0.5 * v + 0.01);
        pred.background = pred.background.map(|v| v * 1.1);
        let l = joint_loss(&pred, &ex, &LossWeights { lambda1: 0.7, lambda2: 0.3 }).unwrap();
        let sum = l.streak_term + l.background_term + l.detection_term;
        assert!((l.total - sum).abs() <= 1e-9 * l.total.abs());
        assert!((l.background_term - 0.7 * l.background_mse).abs() < 1e-15);
    }

    #[test]
    fn nan_predictions_are_rejected() {
        let ex = example(8, 8, stripes(8, 8));
        let mut pred = perfect(&ex, 1.0);
        pred.streak.set(0, 0, 0, f64::NAN);
        assert!(matches!(
            joint_loss(&pred, &ex, &LossWeights::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let ex = example(8, 8, stripes(8, 8));
        let other = example(8, 9, stripes(8, 9));
        assert!(matches!(
            joint_loss(&perfect(&other, 1.0), &ex, &LossWeights::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let ex = example(8, 8, stripes(8, 8));
        let l = joint_loss(&perfect(&ex, -800.0), &ex, &LossWeights::default()).unwrap();
        assert!(l.detection_ce.is_finite() && l.detection_ce > 700.0);
    }
}
