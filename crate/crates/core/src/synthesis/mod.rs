//! Rain formation models and paired dataset synthesis.
//!
//! Light rain is `O = B + S⊙R`; heavy rain overlays several direction-consistent
//! streak layers and an atmospheric veil,
//! `O = α·(B + Σₜ Sₜ⊙R) + (1 − α)·A`. Every composite is clipped to `[0, 1]`.

pub mod backgrounds;
mod compose;
mod dataset;
mod render;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub use compose::{compose_haze_only, compose_heavy_rain, compose_light_rain, sum_layers};
pub use dataset::{
    build_dataset, example_rng, load_split, replay_manifest, write_split, Background, BackgroundSource,
    Dataset, ExampleRecord, Manifest, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION,
};
pub use render::{derive_mask, render_streak_layer};

/// Largest supported side length for rendered layers.
pub const MAX_SIDE: usize = 8192;

/// One rendered line streak.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Streak {
    /// Orientation in degrees, counter-clockwise from the +x axis (y up).
    pub angle_deg: f64,
    /// Centre in pixel coordinates (pixel `(x, y)` covers `[x, x+1)×[y, y+1)`).
    pub center: (f64, f64),
    pub length: f64,
    /// Full width at half maximum of the Gaussian cross-section.
    pub width: f64,
    pub intensity: f64,
}

impl Streak {
    pub fn sigma(&self) -> f64 {
        self.width / (8.0 * std::f64::consts::LN_2).sqrt()
    }

    /// Half-width beyond which the cross-section is truncated to zero.
    pub fn cutoff(&self) -> f64 {
        3.0 * self.sigma()
    }
}

/// Additive streak intensities for one direction (or a sum of several).
#[derive(Clone, Debug, PartialEq)]
pub struct StreakLayer {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    /// Base direction the layer was rendered around; `None` for sums.
    pub direction_deg: Option<f64>,
    pub streaks: Vec<Streak>,
}

impl StreakLayer {
    pub fn zeros(height: usize, width: usize) -> Self {
        StreakLayer {
            height,
            width,
            data: vec![0.0; height * width],
            direction_deg: None,
            streaks: Vec::new(),
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width} streak layer",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter("streak intensities must be finite and ≥ 0".into()));
        }
        Ok(StreakLayer {
            height,
            width,
            data,
            direction_deg: None,
            streaks: Vec::new(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn to_image(&self) -> Image {
        Image::from_planar(self.height, self.width, 1, self.data.clone()).expect("consistent layer")
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> StreakLayer {
        let mut data = Vec::with_capacity(height * width);
        for y in top..top + height {
            data.extend_from_slice(&self.data[y * self.width + left..y * self.width + left + width]);
        }
        StreakLayer {
            height,
            width,
            data,
            direction_deg: self.direction_deg,
            streaks: Vec::new(),
        }
    }
}

/// Binary rain-region indicator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RainMask {
    pub height: usize,
    pub width: usize,
    data: Vec<u8>,
}

impl RainMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        RainMask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    /// Accepts only exact 0/1 values.
    pub fn from_values(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width} mask",
                values.len()
            )));
        }
        let data = values
            .iter()
            .map(|&v| match v {
                v if v == 0.0 => Ok(0),
                v if v == 1.0 => Ok(1),
                v => Err(Error::Parameter(format!("mask value {v} is not binary"))),
            })
            .collect::<Result<_>>()?;
        Ok(RainMask { height, width, data })
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn count_positive(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn positive_fraction(&self) -> f64 {
        self.count_positive() as f64 / self.data.len() as f64
    }

    pub fn to_image(&self) -> Image {
        Image::from_planar(self.height, self.width, 1, self.to_f64()).expect("consistent mask")
    }

    /// Reads a mask image, thresholding at one half.
    pub fn from_image(img: &Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::Shape("mask image must have one channel".into()));
        }
        Ok(RainMask {
            height: img.height(),
            width: img.width(),
            data: img.data().iter().map(|&v| u8::from(v >= 0.5)).collect(),
        })
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> RainMask {
        let mut data = Vec::with_capacity(height * width);
        for y in top..top + height {
            data.extend_from_slice(&self.data[y * self.width + left..y * self.width + left + width]);
        }
        RainMask { height, width, data }
    }
}

/// Scene transmission: one value for the whole image or one per pixel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transmission {
    Uniform(f64),
    Map { height: usize, width: usize, data: Vec<f64> },
}

/// Atmospheric-veil parameters `(α, A)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazeParams {
    pub transmission: Transmission,
    /// Global atmospheric light, one value shared by all channels or one per channel.
    pub atmospheric_light: Vec<f64>,
}

impl HazeParams {
    pub fn uniform(alpha: f64, light: f64) -> Self {
        HazeParams {
            transmission: Transmission::Uniform(alpha),
            atmospheric_light: vec![light],
        }
    }

    /// `α = 1`: no veil at all.
    pub fn clear() -> Self {
        Self::uniform(1.0, 0.0)
    }

    pub fn validate(&self, height: usize, width: usize, channels: usize) -> Result<()> {
        // α = 0 (pure veil) is accepted so the limit case stays expressible.
        let alpha_ok = |a: f64| (0.0..=1.0).contains(&a);
        match &self.transmission {
            Transmission::Uniform(a) => {
                if !alpha_ok(*a) {
                    return Err(Error::Parameter(format!("transmission {a} outside [0, 1]")));
                }
            }
            Transmission::Map { height: h, width: w, data } => {
                if (*h, *w) != (height, width) || data.len() != h * w {
                    return Err(Error::Shape(format!(
                        "transmission map {h}x{w} for a {height}x{width} image"
                    )));
                }
                if let Some(a) = data.iter().find(|a| !alpha_ok(**a)) {
                    return Err(Error::Parameter(format!("transmission {a} outside [0, 1]")));
                }
            }
        }
        let n = self.atmospheric_light.len();
        if n != 1 && n != channels {
            return Err(Error::Parameter(format!(
                "{n} atmospheric light values for {channels} channels"
            )));
        }
        if let Some(a) = self.atmospheric_light.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Parameter(format!("atmospheric light {a} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn alpha_at(&self, index: usize) -> f64 {
        match &self.transmission {
            Transmission::Uniform(a) => *a,
            Transmission::Map { data, .. } => data[index],
        }
    }

    pub fn light(&self, channel: usize) -> f64 {
        if self.atmospheric_light.len() == 1 {
            self.atmospheric_light[0]
        } else {
            self.atmospheric_light[channel]
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> HazeParams {
        let transmission = match &self.transmission {
            Transmission::Uniform(a) => Transmission::Uniform(*a),
            Transmission::Map { width: w, data, .. } => {
                let mut out = Vec::with_capacity(height * width);
                for y in top..top + height {
                    out.extend_from_slice(&data[y * w + left..y * w + left + width]);
                }
                Transmission::Map { height, width, data: out }
            }
        };
        HazeParams {
            transmission,
            atmospheric_light: self.atmospheric_light.clone(),
        }
    }
}

/// Sampling ranges for one streak direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreakParams {
    /// The base angle is drawn uniformly from this range once per layer.
    pub direction_range_deg: (f64, f64),
    /// Each streak deviates from the base angle by at most this much.
    pub direction_jitter_deg: f64,
    pub length_range: (f64, f64),
    pub width_range: (f64, f64),
    pub intensity_range: (f64, f64),
    /// Streaks per thousand pixels.
    pub density: f64,
}

impl StreakParams {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, (lo, hi): (f64, f64), min: f64| {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo < min {
                Err(Error::Config(format!("{name} range ({lo}, {hi}) is empty or invalid")))
            } else {
                Ok(())
            }
        };
        range("direction", self.direction_range_deg, f64::NEG_INFINITY)?;
        range("length", self.length_range, 0.0)?;
        range("width", self.width_range, 0.0)?;
        range("intensity", self.intensity_range, 0.0)?;
        if self.width_range.0 <= 0.0 {
            return Err(Error::Config("streak width must be positive".into()));
        }
        if !(self.direction_jitter_deg >= 0.0 && self.direction_jitter_deg.is_finite()) {
            return Err(Error::Config("direction jitter must be ≥ 0".into()));
        }
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return Err(Error::Config("density must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Sampling ranges for the atmospheric veil.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazeRanges {
    pub transmission: (f64, f64),
    pub atmospheric_light: (f64, f64),
}

impl Default for HazeRanges {
    fn default() -> Self {
        HazeRanges {
            transmission: (0.6, 0.95),
            atmospheric_light: (0.7, 1.0),
        }
    }
}

impl HazeRanges {
    pub fn validate(&self) -> Result<()> {
        let (a0, a1) = self.transmission;
        let (l0, l1) = self.atmospheric_light;
        if !(a0 > 0.0 && a0 <= a1 && a1 <= 1.0) {
            return Err(Error::Config(format!("transmission range ({a0}, {a1}) not within (0, 1]")));
        }
        if !(0.0 <= l0 && l0 <= l1 && l1 <= 1.0) {
            return Err(Error::Config(format!("atmospheric light range ({l0}, {l1}) not within [0, 1]")));
        }
        Ok(())
    }
}

/// What kind of degradation a dataset carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One streak direction, no veil.
    Light,
    /// `num_directions` overlapping directions, optional veil.
    Heavy,
    /// Veil only, no streaks.
    Haze,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "light" => Ok(Mode::Light),
            "heavy" => Ok(Mode::Heavy),
            "haze" => Ok(Mode::Haze),
            other => Err(Error::Config(format!("unknown synthesis mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Number of direction-consistent streak layers `s` used in heavy mode.
    pub num_directions: usize,
    /// Upper bound on the number of overlapping layers.
    pub overlap_count: usize,
    /// Per-direction parameters; at least `num_directions` entries.
    pub streaks: Vec<StreakParams>,
    pub mask_threshold: f64,
    pub haze: Option<HazeRanges>,
    pub rng_seed: u64,
    /// Examples generated per background.
    #[serde(default = "one")]
    pub repetitions: usize,
}

fn one() -> usize {
    1
}

impl SynthesisConfig {
    /// Dense single-direction rain, close to vertical.
    pub fn light(seed: u64) -> Self {
        SynthesisConfig {
            num_directions: 1,
            overlap_count: 1,
            streaks: vec![StreakParams {
                direction_range_deg: (65.0, 115.0),
                direction_jitter_deg: 4.0,
                length_range: (10.0, 28.0),
                width_range: (1.2, 2.2),
                intensity_range: (0.35, 0.75),
                density: 5.0,
            }],
            mask_threshold: 0.05,
            haze: None,
            rng_seed: seed,
            repetitions: 1,
        }
    }

    /// Five overlapping directions, each from its own sub-range of
    /// [50°, 130°] so the base angles are distinct. No veil; see
    /// [`SynthesisConfig::with_haze`].
    pub fn heavy(seed: u64) -> Self {
        let bins = 5;
        let span = 80.0 / bins as f64;
        let streaks = (0..bins)
            .map(|i| StreakParams {
                direction_range_deg: (50.0 + i as f64 * span, 50.0 + (i + 1) as f64 * span),
                direction_jitter_deg: 4.0,
                length_range: (10.0, 36.0),
                width_range: (1.0, 2.2),
                intensity_range: (0.2, 0.55),
                density: 1.6,
            })
            .collect();
        SynthesisConfig {
            num_directions: bins,
            overlap_count: bins,
            streaks,
            mask_threshold: 0.05,
            haze: None,
            rng_seed: seed,
            repetitions: 1,
        }
    }

    pub fn haze(seed: u64) -> Self {
        SynthesisConfig {
            haze: Some(HazeRanges::default()),
            ..Self::light(seed)
        }
    }

    pub fn with_haze(mut self, ranges: HazeRanges) -> Self {
        self.haze = Some(ranges);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_directions == 0 {
            return Err(Error::Config("num_directions must be ≥ 1".into()));
        }
        if self.overlap_count == 0 || self.num_directions > self.overlap_count {
            return Err(Error::Config(format!(
                "num_directions {} exceeds overlap bound {}",
                self.num_directions, self.overlap_count
            )));
        }
        if self.streaks.len() < self.num_directions {
            return Err(Error::Config(format!(
                "{} streak parameter sets for {} directions",
                self.streaks.len(),
                self.num_directions
            )));
        }
        for s in &self.streaks {
            s.validate()?;
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold.is_finite()) {
            return Err(Error::Config("mask_threshold must be > 0".into()));
        }
        if let Some(h) = &self.haze {
            h.validate()?;
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One paired sample: rainy image, clean background, streaks, mask, veil.
#[derive(Clone, Debug, PartialEq)]
pub struct RainExample {
    pub id: String,
    pub rain: Image,
    pub background: Image,
    pub streak: StreakLayer,
    pub mask: RainMask,
    pub haze: Option<HazeParams>,
}

impl RainExample {
    pub fn height(&self) -> usize {
        self.rain.height()
    }

    pub fn width(&self) -> usize {
        self.rain.width()
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<RainExample> {
        Ok(RainExample {
            id: self.id.clone(),
            rain: self.rain.crop(top, left, height, width)?,
            background: self.background.crop(top, left, height, width)?,
            streak: self.streak.crop(top, left, height, width),
            mask: self.mask.crop(top, left, height, width),
            haze: self.haze.as_ref().map(|h| h.crop(top, left, height, width)),
        })
    }

    /// Targets for a derain stage that leaves the veil in place: the
    /// background becomes `α·B + (1 − α)·A` and the streaks `α·S`, so
    /// `O = clip(B' + S'⊙R)` as in light rain. Veil-free examples are
    /// returned unchanged.
    pub fn with_veiled_targets(&self) -> Result<RainExample> {
        let Some(haze) = &self.haze else {
            return Ok(self.clone());
        };
        let mut streak = self.streak.clone();
        for (i, v) in streak.data.iter_mut().enumerate() {
            *v *= haze.alpha_at(i);
        }
        Ok(RainExample {
            id: self.id.clone(),
            rain: self.rain.clone(),
            background: compose::compose_haze_only(&self.background, haze)?,
            streak,
            mask: self.mask.clone(),
            haze: None,
        })
    }

    /// Re-evaluates the forward model from the stored layers without clipping.
    pub fn reconstruct_unclipped(&self) -> Vec<f64> {
        let n = self.background.plane_len();
        let mut out = Vec::with_capacity(self.background.data().len());
        for c in 0..self.background.channels() {
            let plane = self.background.plane(c);
            for i in 0..n {
                let rain = plane[i] + self.streak.data[i] * self.mask.data()[i] as f64;
                out.push(match &self.haze {
                    Some(h) => h.alpha_at(i) * rain + (1.0 - h.alpha_at(i)) * h.light(c),
                    None => rain,
                });
            }
        }
        out
    }
}
