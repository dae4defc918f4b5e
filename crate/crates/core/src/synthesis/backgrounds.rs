//! Seeded procedural backgrounds for when no photo collection is at hand.
//!
//! Scenes mix a colour gradient, two octaves of value noise, flat shapes with
//! hard edges and occasional stripe textures, then clamp into `[0.02, 0.8]`
//! so that added streaks rarely saturate.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

const STREAM_SALT: u64 = 0x6261_636b_6772_6f75;

fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ STREAM_SALT);
    rng.set_stream(index);
    rng
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise with lattice spacing `cell`, values in `[-1, 1]`.
fn value_noise(rng: &mut ChaCha8Rng, height: usize, width: usize, cell: f64) -> Vec<f64> {
    let gh = (height as f64 / cell).ceil() as usize + 2;
    let gw = (width as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let fy = y as f64 / cell;
        let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for x in 0..width {
            let fx = x as f64 / cell;
            let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let at = |yy: usize, xx: usize| lattice[yy * gw + xx];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

fn color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    // A shared grey level plus a modest tint keeps colours natural.
    let grey = rng.random_range(lo..hi);
    [0, 1, 2].map(|_| (grey + rng.random_range(-0.12..0.12)).clamp(lo, hi))
}

/// Renders background number `index` of the family identified by `seed`.
pub fn procedural(seed: u64, index: u64, height: usize, width: usize) -> Image {
    let mut rng = rng_for(seed, index);
    let (c0, c1) = (color(&mut rng, 0.1, 0.6), color(&mut rng, 0.1, 0.6));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());
    let diag = ((height * height + width * width) as f64).sqrt().max(1.0);

    let coarse = value_noise(&mut rng, height, width, 16.0);
    let fine = value_noise(&mut rng, height, width, 5.0);
    let tint = color(&mut rng, 0.0, 1.0);

    let mut img = Image::from_fn(height, width, 3, |c, y, x| {
        let t = 0.5 + ((x as f64 - width as f64 / 2.0) * gx + (y as f64 - height as f64 / 2.0) * gy) / diag;
        let t = t.clamp(0.0, 1.0);
        let i = y * width + x;
        c0[c] * (1.0 - t) + c1[c] * t + 0.08 * coarse[i] + 0.03 * fine[i] * (0.5 + tint[c])
    });

    let shapes = rng.random_range(3..9);
    for _ in 0..shapes {
        let kind = rng.random_range(0..3u32);
        let col = color(&mut rng, 0.03, 0.78);
        let cy = rng.random_range(0.0..height as f64);
        let cx = rng.random_range(0.0..width as f64);
        let ry = rng.random_range(0.08..0.35) * height as f64;
        let rx = rng.random_range(0.08..0.35) * width as f64;
        let opacity = rng.random_range(0.6..1.0);
        let stripes = rng.random_bool(0.3);
        let period = rng.random_range(3.0..9.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let inside = match kind {
                    0 => dy.abs() <= ry && dx.abs() <= rx,
                    1 => (dy / ry).powi(2) + (dx / rx).powi(2) <= 1.0,
                    _ => dy.abs() <= ry * 0.3,
                };
                if !inside {
                    continue;
                }
                let texture = if stripes {
                    0.06 * ((y as f64 * 2.0 * std::f64::consts::PI / period) + phase).sin()
                } else {
                    0.0
                };
                for (c, &v) in col.iter().enumerate() {
                    let old = img.get(c, y, x);
                    img.set(c, y, x, old * (1.0 - opacity) + (v + texture) * opacity);
                }
            }
        }
    }
    img.map(|v| v.clamp(0.02, 0.8))
}
