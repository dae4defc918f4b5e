use rand::{Rng, RngExt};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{example_gradients, example_loss, JorderNet, TermWeights};
use crate::synthesis::RainExample;

/// Analytic against central-difference derivative of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientCheck {
    pub samples: Vec<GradientSample>,
    /// Draws discarded because `θ ± ε` switched a ReLU unit, where the
    /// loss is not differentiable and the difference quotient is
    /// meaningless.
    pub skipped_at_kinks: usize,
}

impl GradientCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.samples.iter().map(|s| s.relative_error).fold(0.0, f64::max)
    }
}

/// `|a − n| / max(|a|, |n|)`, and 0 when both vanish below `1e-12`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

const GROUPS: [&str; 4] = ["detect.", "streak.", "background.", "extractor."];

/// Compares analytic gradients with central differences for `count`
/// parameters drawn at random, cycling through the detection, streak,
/// background and extractor groups so every head is covered.
pub fn check_gradients<R: Rng + ?Sized>(
    net: &JorderNet<f64>,
    ex: &RainExample,
    weights: TermWeights,
    count: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<GradientCheck> {
    let (_, grads) = example_gradients(net, ex, weights)?;
    let groups: Vec<Vec<usize>> = GROUPS
        .iter()
        .map(|prefix| {
            (0..net.params().len())
                .filter(|&i| net.params().get(i).name.starts_with(prefix))
                .collect()
        })
        .collect();
    let mut samples = Vec::with_capacity(count);
    let mut skipped = 0;
    while samples.len() < count {
        if skipped > 50 * count {
            return Err(Error::Parameter("too many draws land on ReLU kinks".into()));
        }
        let group = &groups[samples.len() % groups.len()];
        let pid = group[rng.random_range(0..group.len())];
        let index = rng.random_range(0..net.params().get(pid).data.len());
        let shifted = |delta: f64| {
            let mut n = net.clone();
            n.params_mut().get_mut(pid).data[index] += delta;
            n
        };
        let (plus, minus) = (shifted(epsilon), shifted(-epsilon));
        if plus.relu_pattern(&ex.rain)? != minus.relu_pattern(&ex.rain)? {
            skipped += 1;
            continue;
        }
        let numeric = (example_loss(&plus, ex, weights)?.total - example_loss(&minus, ex, weights)?.total) / (2.0 * epsilon);
        let analytic = grads.get(pid).data[index];
        samples.push(GradientSample {
            param: net.params().get(pid).name.clone(),
            index,
            analytic,
            numeric,
            relative_error: relative_error(analytic, numeric),
        });
    }
    Ok(GradientCheck {
        samples,
        skipped_at_kinks: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 0.5), 0.5);
        assert_eq!(relative_error(-2.0, 2.0), 2.0);
    }
}
