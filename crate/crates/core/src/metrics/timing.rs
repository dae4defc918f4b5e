use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Seconds-per-image statistics for one image scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub height: usize,
    pub width: usize,
    pub images: usize,
    pub repeats: usize,
    pub median_s: f64,
    pub mean_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    /// Median absolute deviation from the median.
    pub mad_s: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Times `f` on every image, grouped by spatial size (first-seen order).
///
/// Each repeat runs the whole group once; the per-image time of a repeat is
/// its wall time divided by the group size. Runs on the calling thread.
pub fn time_inference<R>(
    mut f: impl FnMut(&Image) -> R,
    images: &[Image],
    warmup: usize,
    repeats: usize,
) -> Result<Vec<TimingStats>> {
    if repeats < 3 {
        return Err(Error::Parameter(format!("need at least 3 repeats, got {repeats}")));
    }
    let mut scales: Vec<(usize, usize)> = Vec::new();
    for img in images {
        let s = (img.height(), img.width());
        if !scales.contains(&s) {
            scales.push(s);
        }
    }
    let mut out = Vec::with_capacity(scales.len());
    for (h, w) in scales {
        let group: Vec<&Image> = images.iter().filter(|i| (i.height(), i.width()) == (h, w)).collect();
        for _ in 0..warmup {
            for img in &group {
                std::hint::black_box(f(img));
            }
        }
        let mut samples: Vec<f64> = (0..repeats)
            .map(|_| {
                let start = Instant::now();
                for img in &group {
                    std::hint::black_box(f(img));
                }
                start.elapsed().as_secs_f64() / group.len() as f64
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let med = median(&mut samples);
        let (min, max) = (samples[0], samples[samples.len() - 1]);
        let mut dev: Vec<f64> = samples.iter().map(|s| (s - med).abs()).collect();
        out.push(TimingStats {
            height: h,
            width: w,
            images: group.len(),
            repeats,
            median_s: med,
            mean_s: mean,
            min_s: min,
            max_s: max,
            mad_s: median(&mut dev),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_op_is_essentially_free() {
        let imgs = vec![Image::zeros(8, 8, 3); 4];
        let stats = time_inference(|_| (), &imgs, 1, 5).unwrap();
        assert_eq!(stats.len(), 1);
        assert!(stats[0].median_s < 1e-3);
    }

    #[test]
    fn scales_are_reported_separately() {
        let imgs = vec![Image::zeros(80, 80, 3), Image::zeros(50, 50, 3), Image::zeros(80, 80, 3)];
        let stats = time_inference(|i| i.data().iter().sum::<f64>(), &imgs, 0, 3).unwrap();
        let dims: Vec<_> = stats.iter().map(|s| (s.height, s.width, s.images)).collect();
        assert_eq!(dims, vec![(80, 80, 2), (50, 50, 1)]);
    }

    #[test]
    fn deterministic_work_has_small_spread() {
        let imgs = vec![Image::filled(64, 64, 3, 0.5)];
        let work = |i: &Image| {
            let mut acc = 0.0;
            for _ in 0..50 {
                acc += i.data().iter().map(|v| v.sqrt()).sum::<f64>();
            }
            acc
        };
        let stats = time_inference(work, &imgs, 2, 5).unwrap();
        assert!(stats[0].median_s > 0.0);
        assert!(stats[0].mad_s <= stats[0].median_s);
    }

    #[test]
    fn too_few_repeats() {
        assert!(time_inference(|_| (), &[Image::zeros(2, 2, 1)], 0, 2).is_err());
    }
}
