//! Paired dataset generation, on-disk layout and manifest replay.
//!
//! A split directory holds `{id}_O.png` (rainy), `{id}_B.png` (background),
//! `{id}_S.png` (streaks) as 16-bit PNG, `{id}_R.png` (mask, 0/255) as 8-bit
//! PNG, and a `manifest.json` that is sufficient to regenerate every file.

use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BitDepth, Image};
use crate::provenance::config_hash;
use crate::synthesis::{
    backgrounds, compose_haze_only, compose_heavy_rain, compose_light_rain, derive_mask, render_streak_layer,
    sum_layers, HazeParams, HazeRanges, Mode, RainExample, RainMask, StreakLayer, SynthesisConfig,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Where a background image came from, recorded so it can be reloaded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackgroundSource {
    File { path: PathBuf },
    Procedural { seed: u64, index: u64, height: usize, width: usize },
    /// Supplied by the caller; cannot be replayed from the manifest alone.
    Memory { index: usize },
}

impl BackgroundSource {
    pub fn load(&self) -> Result<Image> {
        match self {
            BackgroundSource::File { path } => Image::load_png(path),
            BackgroundSource::Procedural { seed, index, height, width } => {
                Ok(backgrounds::procedural(*seed, *index, *height, *width))
            }
            BackgroundSource::Memory { index } => Err(Error::dataset(
                format!("<memory #{index}>"),
                "in-memory backgrounds cannot be reloaded",
            )),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Background {
    pub source: BackgroundSource,
    pub image: Image,
}

impl Background {
    pub fn load(source: BackgroundSource) -> Result<Self> {
        let image = source.load()?;
        Ok(Background { source, image })
    }

    pub fn in_memory(index: usize, image: Image) -> Self {
        Background {
            source: BackgroundSource::Memory { index },
            image,
        }
    }

    pub fn procedural(seed: u64, index: u64, height: usize, width: usize) -> Self {
        Background::load(BackgroundSource::Procedural { seed, index, height, width })
            .expect("procedural backgrounds always load")
    }

    /// Every `*.png` directly inside `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Vec<Background>> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::dataset(dir, "no PNG backgrounds found"));
        }
        paths
            .into_iter()
            .map(|path| Background::load(BackgroundSource::File { path }))
            .collect()
    }
}

/// Per-example parameters written to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub background: usize,
    pub repetition: usize,
    /// ChaCha stream the example was drawn from.
    pub stream: u64,
    pub directions_deg: Vec<f64>,
    pub streak_counts: Vec<usize>,
    pub haze: Option<HazeParams>,
    pub mask_positive: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub mode: Mode,
    pub config: SynthesisConfig,
    pub config_hash: String,
    pub backgrounds: Vec<BackgroundSource>,
    pub examples: Vec<ExampleRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::dataset(
                path,
                format!("unsupported manifest schema {}", manifest.schema_version),
            ));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub examples: Vec<RainExample>,
    pub manifest: Manifest,
}

/// Independent RNG for example `index`: one ChaCha stream per example.
pub fn example_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn sample_haze(rng: &mut ChaCha8Rng, ranges: &HazeRanges) -> HazeParams {
    let alpha = ranges.transmission.0 + (ranges.transmission.1 - ranges.transmission.0) * rng.random::<f64>();
    let light =
        ranges.atmospheric_light.0 + (ranges.atmospheric_light.1 - ranges.atmospheric_light.0) * rng.random::<f64>();
    HazeParams::uniform(alpha, light)
}

fn synthesize_one(
    index: usize,
    bg_index: usize,
    repetition: usize,
    background: &Image,
    cfg: &SynthesisConfig,
    mode: Mode,
) -> Result<(RainExample, ExampleRecord)> {
    let stream = index as u64;
    let mut rng = example_rng(cfg.rng_seed, stream);
    let shape = (background.height(), background.width());
    let id = format!("{index:04}");

    let (layers, haze) = match mode {
        Mode::Light => (vec![render_streak_layer(cfg, 0, shape, &mut rng)?], None),
        Mode::Heavy => {
            let layers = (0..cfg.num_directions)
                .map(|t| render_streak_layer(cfg, t, shape, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let haze = cfg.haze.as_ref().map(|r| sample_haze(&mut rng, r));
            (layers, haze)
        }
        Mode::Haze => {
            let ranges = cfg.haze.clone().unwrap_or_default();
            (Vec::new(), Some(sample_haze(&mut rng, &ranges)))
        }
    };

    let (rain, streak, mask) = match mode {
        Mode::Light => {
            let mask = derive_mask(&layers, cfg.mask_threshold)?;
            let rain = compose_light_rain(background, &layers[0], &mask)?;
            (rain, layers[0].clone(), mask)
        }
        Mode::Heavy => {
            let mask = derive_mask(&layers, cfg.mask_threshold)?;
            let veil = haze.clone().unwrap_or_else(HazeParams::clear);
            let rain = compose_heavy_rain(background, &layers, &mask, &veil)?;
            (rain, sum_layers(&layers)?, mask)
        }
        Mode::Haze => {
            let rain = compose_haze_only(background, haze.as_ref().expect("haze mode samples a veil"))?;
            (rain, StreakLayer::zeros(shape.0, shape.1), RainMask::zeros(shape.0, shape.1))
        }
    };

    let record = ExampleRecord {
        id: id.clone(),
        background: bg_index,
        repetition,
        stream,
        directions_deg: layers.iter().filter_map(|l| l.direction_deg).collect(),
        streak_counts: layers.iter().map(|l| l.streaks.len()).collect(),
        haze: haze.clone(),
        mask_positive: mask.count_positive(),
    };
    let example = RainExample {
        id,
        rain,
        background: background.clone(),
        streak,
        mask,
        haze,
    };
    Ok((example, record))
}

/// Generates `repetitions` examples per background. Examples are independent
/// (each has its own RNG stream) and are produced in parallel.
pub fn build_dataset(backgrounds: &[Background], cfg: &SynthesisConfig, mode: Mode) -> Result<Dataset> {
    cfg.validate()?;
    if backgrounds.is_empty() {
        return Err(Error::Config("at least one background is required".into()));
    }
    for (i, bg) in backgrounds.iter().enumerate() {
        let c = bg.image.channels();
        if c != 1 && c != 3 {
            return Err(Error::Shape(format!("background {i} has {c} channels")));
        }
    }
    let jobs: Vec<(usize, usize, usize)> = (0..backgrounds.len())
        .flat_map(|b| (0..cfg.repetitions).map(move |r| (b, r)))
        .enumerate()
        .map(|(i, (b, r))| (i, b, r))
        .collect();
    let produced = jobs
        .par_iter()
        .map(|&(i, b, r)| synthesize_one(i, b, r, &backgrounds[b].image, cfg, mode))
        .collect::<Result<Vec<_>>>()?;
    let (examples, records): (Vec<_>, Vec<_>) = produced.into_iter().unzip();
    let sources: Vec<BackgroundSource> = backgrounds.iter().map(|b| b.source.clone()).collect();
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed: cfg.rng_seed,
        mode,
        config: cfg.clone(),
        config_hash: config_hash(&(mode, cfg, &sources)),
        backgrounds: sources,
        examples: records,
    };
    Ok(Dataset { examples, manifest })
}

fn layer_path(dir: &Path, id: &str, tag: char) -> PathBuf {
    dir.join(format!("{id}_{tag}.png"))
}

/// Writes every example plus the manifest into `dir`.
pub fn write_split(dir: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    dataset.examples.par_iter().try_for_each(|ex| -> Result<()> {
        ex.rain.save_png(layer_path(dir, &ex.id, 'O'), BitDepth::Sixteen)?;
        ex.background.save_png(layer_path(dir, &ex.id, 'B'), BitDepth::Sixteen)?;
        ex.streak.to_image().save_png(layer_path(dir, &ex.id, 'S'), BitDepth::Sixteen)?;
        ex.mask.to_image().save_png(layer_path(dir, &ex.id, 'R'), BitDepth::Eight)?;
        Ok(())
    })?;
    dataset.manifest.save(&dir.join(MANIFEST_FILE))
}

/// Reads a split written by [`write_split`].
pub fn load_split(dir: &Path) -> Result<Vec<RainExample>> {
    let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
    manifest
        .examples
        .par_iter()
        .map(|rec| {
            let load = |tag| {
                let path = layer_path(dir, &rec.id, tag);
                if !path.exists() {
                    return Err(Error::dataset(&path, "missing file"));
                }
                Image::load_png(&path)
            };
            let rain = load('O')?;
            let background = load('B')?;
            let s = load('S')?;
            let mask = RainMask::from_image(&load('R')?)?;
            let streak = StreakLayer::from_data(s.height(), s.width(), s.into_data())?;
            if !rain.same_shape(&background) || streak.shape() != (rain.height(), rain.width()) {
                return Err(Error::dataset(dir.join(&rec.id), "layer shapes disagree"));
            }
            Ok(RainExample {
                id: rec.id.clone(),
                rain,
                background,
                streak,
                mask,
                haze: rec.haze.clone(),
            })
        })
        .collect()
}

/// Regenerates a dataset from its manifest and checks every per-example
/// record matches.
pub fn replay_manifest(manifest: &Manifest) -> Result<Dataset> {
    let backgrounds = manifest
        .backgrounds
        .iter()
        .cloned()
        .map(Background::load)
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = manifest.config.clone();
    cfg.rng_seed = manifest.seed;
    let dataset = build_dataset(&backgrounds, &cfg, manifest.mode)?;
    if dataset.manifest.examples != manifest.examples {
        return Err(Error::dataset(
            MANIFEST_FILE,
            "replayed parameters differ from the recorded ones",
        ));
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn procedural_backgrounds(n: usize, size: usize) -> Vec<Background> {
        (0..n).map(|i| Background::procedural(5, i as u64, size, size)).collect()
    }

    #[test]
    fn light_examples_satisfy_the_additive_model() {
        let ds = build_dataset(&procedural_backgrounds(4, 40), &SynthesisConfig::light(9), Mode::Light).unwrap();
        assert_eq!(ds.examples.len(), 4);
        for ex in &ds.examples {
            assert!(ex.haze.is_none());
            let model = ex.reconstruct_unclipped();
            for (o, m) in ex.rain.data().iter().zip(&model) {
                if *m < 1.0 {
                    assert!((o - m).abs() <= 1e-12);
                }
            }
            assert_eq!(derive_mask(std::slice::from_ref(&ex.streak), 0.05).unwrap(), ex.mask);
        }
    }

    #[test]
    fn heavy_mode_records_five_distinct_directions() {
        let cfg = SynthesisConfig::heavy(2).with_haze(HazeRanges::default());
        let ds = build_dataset(&procedural_backgrounds(3, 32), &cfg, Mode::Heavy).unwrap();
        for rec in &ds.manifest.examples {
            assert_eq!(rec.directions_deg.len(), 5);
            let mut d = rec.directions_deg.clone();
            d.sort_by(f64::total_cmp);
            d.dedup();
            assert_eq!(d.len(), 5);
            assert!(d.iter().all(|a| (50.0..=130.0).contains(a)));
            let h = rec.haze.as_ref().unwrap();
            let alpha = h.alpha_at(0);
            assert!((0.6..=0.95).contains(&alpha));
            assert!((0.7..=1.0).contains(&h.atmospheric_light[0]));
        }
    }

    #[test]
    fn repetitions_multiply_examples() {
        let mut cfg = SynthesisConfig::light(1);
        cfg.repetitions = 3;
        let ds = build_dataset(&procedural_backgrounds(2, 24), &cfg, Mode::Light).unwrap();
        assert_eq!(ds.examples.len(), 6);
        assert_eq!(ds.manifest.examples[4].background, 1);
        assert_eq!(ds.manifest.examples[4].repetition, 1);
    }

    #[test]
    fn haze_mode_has_no_streaks() {
        let ds = build_dataset(&procedural_backgrounds(2, 24), &SynthesisConfig::haze(1), Mode::Haze).unwrap();
        for ex in &ds.examples {
            assert_eq!(ex.mask.count_positive(), 0);
            assert!(ex.haze.is_some());
        }
    }

    #[test]
    fn empty_background_list_is_rejected() {
        assert!(build_dataset(&[], &SynthesisConfig::light(1), Mode::Light).is_err());
    }

    #[test]
    fn write_load_and_replay_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(&procedural_backgrounds(2, 32), &SynthesisConfig::light(4), Mode::Light).unwrap();
        write_split(dir.path(), &ds).unwrap();
        let loaded = load_split(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in loaded.iter().zip(&ds.examples) {
            assert!(a.rain.max_abs_diff(&b.rain).unwrap() <= 0.5 / 65535.0 + 1e-12);
            assert_eq!(a.mask, b.mask);
        }
        let manifest = Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        let replayed = replay_manifest(&manifest).unwrap();
        for (a, b) in replayed.examples.iter().zip(&ds.examples) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn missing_layer_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(&procedural_backgrounds(1, 20), &SynthesisConfig::light(4), Mode::Light).unwrap();
        write_split(dir.path(), &ds).unwrap();
        std::fs::remove_file(dir.path().join("0000_S.png")).unwrap();
        match load_split(dir.path()) {
            Err(Error::Dataset { path, .. }) => assert!(path.ends_with("0000_S.png")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
