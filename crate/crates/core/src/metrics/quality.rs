use crate::error::{Error, Result};
use crate::image::Image;

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Luminance plane (`H×W`): BT.601 for RGB, identity for single-channel.
pub fn to_luminance(img: &Image) -> Result<Vec<f64>> {
    match img.channels() {
        1 => Ok(img.plane(0).to_vec()),
        3 => {
            let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
            Ok((0..img.plane_len())
                .map(|i| LUMA_WEIGHTS[0] * r[i] + LUMA_WEIGHTS[1] * g[i] + LUMA_WEIGHTS[2] * b[i])
                .collect())
        }
        c => Err(Error::Shape(format!("luminance needs 1 or 3 channels, got {c}"))),
    }
}

fn luminance_pair(a: &Image, b: &Image) -> Result<(Vec<f64>, Vec<f64>)> {
    if (a.height(), a.width()) != (b.height(), b.width()) || a.channels() != b.channels() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok((to_luminance(a)?, to_luminance(b)?))
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Luminance PSNR in dB with peak 1.0. Identical inputs give `+∞`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let (la, lb) = luminance_pair(a, b)?;
    let mse = compensated_sum(la.iter().zip(&lb).map(|(x, y)| (x - y) * (x - y))) / la.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Window and stabilising constants for SSIM.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

impl SsimParams {
    /// Normalised 1-D Gaussian taps.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / sum).collect()
    }
}

/// Separable "valid" filtering: output is `(h−k+1)×(w−k+1)`.
fn filter_valid(src: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = kernel.iter().zip(&line[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = kernel.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid window positions of the luminance planes.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default())
}

pub fn ssim_with(a: &Image, b: &Image, params: &SsimParams) -> Result<f64> {
    let (la, lb) = luminance_pair(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < params.window || w < params.window {
        return Err(Error::Shape(format!(
            "{h}x{w} image is smaller than the {0}x{0} SSIM window",
            params.window
        )));
    }
    let kernel = params.kernel();
    let c1 = (params.k1 * params.peak).powi(2);
    let c2 = (params.k2 * params.peak).powi(2);
    let aa: Vec<f64> = la.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = lb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&la, h, w, &kernel);
    let mu_b = filter_valid(&lb, h, w, &kernel);
    let e_aa = filter_valid(&aa, h, w, &kernel);
    let e_bb = filter_valid(&bb, h, w, &kernel);
    let e_ab = filter_valid(&ab, h, w, &kernel);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}
