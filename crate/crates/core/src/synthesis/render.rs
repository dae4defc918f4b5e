use rand::RngExt;

use crate::error::{Error, Result};
use crate::synthesis::{RainMask, Streak, StreakLayer, SynthesisConfig, MAX_SIDE};

fn draw(rng: &mut impl rand::Rng, (lo, hi): (f64, f64)) -> f64 {
    // One draw per call even for degenerate ranges keeps the stream layout fixed.
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Renders one direction-consistent layer of line streaks.
///
/// The number of streaks is `round(density · H · W / 1000)`. Streak
/// parameters are drawn in a fixed order from `rng`, so a higher density
/// renders a superset of the streaks of a lower one.
pub fn render_streak_layer(
    cfg: &SynthesisConfig,
    direction_index: usize,
    shape: (usize, usize),
    rng: &mut impl rand::Rng,
) -> Result<StreakLayer> {
    let (height, width) = shape;
    if height == 0 || width == 0 || height > MAX_SIDE || width > MAX_SIDE {
        return Err(Error::Config(format!("unsupported layer shape {height}x{width}")));
    }
    let params = cfg.streaks.get(direction_index).ok_or_else(|| {
        Error::Config(format!(
            "direction index {direction_index} out of range ({} configured)",
            cfg.streaks.len()
        ))
    })?;
    if direction_index >= cfg.num_directions {
        return Err(Error::Config(format!(
            "direction index {direction_index} ≥ num_directions {}",
            cfg.num_directions
        )));
    }
    params.validate()?;

    let base = draw(rng, params.direction_range_deg);
    let count = (params.density * (height * width) as f64 / 1000.0).round() as usize;
    let jitter = params.direction_jitter_deg;

    let mut layer = StreakLayer::zeros(height, width);
    layer.direction_deg = Some(base);
    for _ in 0..count {
        let cx = draw(rng, (0.0, width as f64));
        let cy = draw(rng, (0.0, height as f64));
        let angle = base + draw(rng, (-jitter, jitter));
        let streak = Streak {
            angle_deg: angle,
            center: (cx, cy),
            length: draw(rng, params.length_range),
            width: draw(rng, params.width_range),
            intensity: draw(rng, params.intensity_range),
        };
        splat(&mut layer, &streak);
        layer.streaks.push(streak);
    }
    Ok(layer)
}

/// Adds one streak: a segment with a truncated Gaussian cross-section.
fn splat(layer: &mut StreakLayer, s: &Streak) {
    let theta = s.angle_deg.to_radians();
    // Direction in image coordinates (y grows downwards).
    let (ux, uy) = (theta.cos(), -theta.sin());
    let half = s.length / 2.0;
    let cutoff = s.cutoff();
    let inv_two_var = 1.0 / (2.0 * s.sigma() * s.sigma());
    let reach_x = half * ux.abs() + cutoff + 1.0;
    let reach_y = half * uy.abs() + cutoff + 1.0;
    let (cx, cy) = s.center;
    let x0 = (cx - reach_x).floor().max(0.0) as usize;
    let x1 = ((cx + reach_x).ceil().max(0.0) as usize).min(layer.width);
    let y0 = (cy - reach_y).floor().max(0.0) as usize;
    let y1 = ((cy + reach_y).ceil().max(0.0) as usize).min(layer.height);
    for y in y0..y1 {
        let dy = y as f64 + 0.5 - cy;
        for x in x0..x1 {
            let dx = x as f64 + 0.5 - cx;
            let along = dx * ux + dy * uy;
            let across = dx * (-uy) + dy * ux;
            if along.abs() > half || across.abs() > cutoff {
                continue;
            }
            layer.data[y * layer.width + x] += s.intensity * (-across * across * inv_two_var).exp();
        }
    }
}

/// Hard-thresholds the summed streak intensity: `R(x) = [Σₜ Sₜ(x) > threshold]`.
pub fn derive_mask(streaks: &[StreakLayer], threshold: f64) -> Result<RainMask> {
    if !(threshold > 0.0) {
        return Err(Error::Parameter(format!("mask threshold {threshold} must be > 0")));
    }
    let first = streaks
        .first()
        .ok_or_else(|| Error::Parameter("at least one streak layer is required".into()))?;
    let (h, w) = first.shape();
    if let Some(bad) = streaks.iter().find(|s| s.shape() != (h, w)) {
        return Err(Error::Shape(format!(
            "streak layer {:?} does not match {:?}",
            bad.shape(),
            (h, w)
        )));
    }
    let values: Vec<f64> = (0..h * w)
        .map(|i| {
            let total: f64 = streaks.iter().map(|s| s.data[i]).sum();
            if total > threshold {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    RainMask::from_values(h, w, &values)
}
