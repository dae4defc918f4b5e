use crate::error::{Error, Result};
use crate::image::Image;
use crate::synthesis::{HazeParams, RainMask, StreakLayer};

fn check_layer(b: &Image, s: &StreakLayer) -> Result<()> {
    if s.shape() != (b.height(), b.width()) {
        return Err(Error::Shape(format!(
            "streak layer {:?} vs background {}x{}",
            s.shape(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

fn check_mask(b: &Image, r: &RainMask) -> Result<()> {
    if (r.height, r.width) != (b.height(), b.width()) {
        return Err(Error::Shape(format!(
            "mask {}x{} vs background {}x{}",
            r.height,
            r.width,
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Element-wise sum of equally sized layers.
pub fn sum_layers(layers: &[StreakLayer]) -> Result<StreakLayer> {
    let first = layers
        .first()
        .ok_or_else(|| Error::Parameter("at least one streak layer is required".into()))?;
    let mut total = StreakLayer::zeros(first.height, first.width);
    for layer in layers {
        if layer.shape() != first.shape() {
            return Err(Error::Shape(format!("{:?} vs {:?}", layer.shape(), first.shape())));
        }
        for (t, v) in total.data.iter_mut().zip(&layer.data) {
            *t += v;
        }
        total.streaks.extend(layer.streaks.iter().cloned());
    }
    Ok(total)
}

/// `O = clip(B + S⊙R)`, with `S` and `R` broadcast over channels.
pub fn compose_light_rain(b: &Image, s: &StreakLayer, r: &RainMask) -> Result<Image> {
    check_layer(b, s)?;
    check_mask(b, r)?;
    let n = b.plane_len();
    let mut out = b.clone();
    for c in 0..b.channels() {
        for (i, o) in out.plane_mut(c).iter_mut().enumerate() {
            *o += s.data[i] * r.data()[i] as f64;
        }
    }
    debug_assert_eq!(out.data().len(), n * b.channels());
    Ok(out.clip())
}

/// `O = clip(α·(B + Σₜ Sₜ⊙R) + (1 − α)·A)`.
pub fn compose_heavy_rain(b: &Image, streaks: &[StreakLayer], r: &RainMask, haze: &HazeParams) -> Result<Image> {
    if streaks.is_empty() {
        return Err(Error::Parameter("heavy rain needs at least one streak layer".into()));
    }
    for s in streaks {
        check_layer(b, s)?;
    }
    check_mask(b, r)?;
    haze.validate(b.height(), b.width(), b.channels())?;
    let total = sum_layers(streaks)?;
    let mut out = b.clone();
    for c in 0..b.channels() {
        let light = haze.light(c);
        for (i, o) in out.plane_mut(c).iter_mut().enumerate() {
            let alpha = haze.alpha_at(i);
            *o = alpha * (*o + total.data[i] * r.data()[i] as f64) + (1.0 - alpha) * light;
        }
    }
    Ok(out.clip())
}

/// `O = clip(α·B + (1 − α)·A)`.
pub fn compose_haze_only(b: &Image, haze: &HazeParams) -> Result<Image> {
    haze.validate(b.height(), b.width(), b.channels())?;
    let mut out = b.clone();
    for c in 0..b.channels() {
        let light = haze.light(c);
        for (i, o) in out.plane_mut(c).iter_mut().enumerate() {
            let alpha = haze.alpha_at(i);
            *o = alpha * *o + (1.0 - alpha) * light;
        }
    }
    Ok(out.clip())
}
