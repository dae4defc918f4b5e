use derain::image::BitDepth;
use derain::synthesis::{
    build_dataset, compose_haze_only, compose_heavy_rain, compose_light_rain, derive_mask, load_split, replay_manifest,
    write_split, Background, HazeParams, HazeRanges, Mode, StreakLayer, SynthesisConfig,
};
use derain::Image;
use proptest::prelude::*;

fn backgrounds(seed: u64, count: u64, size: usize) -> Vec<Background> {
    (0..count).map(|i| Background::procedural(seed, i, size, size)).collect()
}

#[test]
fn light_rain_is_background_plus_masked_streaks() {
    let ds = build_dataset(&backgrounds(1, 50, 48), &SynthesisConfig::light(2), Mode::Light).unwrap();
    assert_eq!(ds.examples.len(), 50);
    let mut checked = 0;
    for ex in &ds.examples {
        let (h, w, c) = ex.rain.dims();
        for k in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let o = ex.rain.get(k, y, x);
                    if o >= 1.0 {
                        continue;
                    }
                    let i = y * w + x;
                    let want = ex.background.get(k, y, x) + ex.streak.data[i] * ex.mask.data()[i] as f64;
                    assert!((o - want).abs() <= 1e-6, "{}: {o} vs {want}", ex.id);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 50 * 48 * 48);
}

#[test]
fn heavy_rain_follows_the_veiled_model() {
    let cfg = SynthesisConfig::heavy(3).with_haze(HazeRanges::default());
    let ds = build_dataset(&backgrounds(4, 10, 48), &cfg, Mode::Heavy).unwrap();
    for ex in &ds.examples {
        let haze = ex.haze.as_ref().unwrap();
        let (h, w, c) = ex.rain.dims();
        for k in 0..c {
            for i in 0..h * w {
                let o = ex.rain.plane(k)[i];
                if o >= 1.0 {
                    continue;
                }
                let a = haze.alpha_at(i);
                let want = a * (ex.background.plane(k)[i] + ex.streak.data[i] * ex.mask.data()[i] as f64)
                    + (1.0 - a) * haze.light(k);
                assert!((o - want).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn veiled_targets_turn_heavy_rain_into_light_rain() {
    let cfg = SynthesisConfig::heavy(15).with_haze(HazeRanges::default());
    let ds = build_dataset(&backgrounds(16, 4, 32), &cfg, Mode::Heavy).unwrap();
    for ex in &ds.examples {
        let veiled = ex.with_veiled_targets().unwrap();
        assert!(veiled.haze.is_none());
        assert_eq!(veiled.rain, ex.rain);
        let light = compose_light_rain(&veiled.background, &veiled.streak, &veiled.mask).unwrap();
        assert!(light.max_abs_diff(&ex.rain).unwrap() <= 1e-12);
    }
    let plain = build_dataset(&backgrounds(16, 1, 32), &SynthesisConfig::heavy(17), Mode::Heavy).unwrap();
    assert_eq!(plain.examples[0].with_veiled_targets().unwrap(), plain.examples[0]);
}

#[test]
fn haze_only_has_no_streaks_and_follows_the_veil() {
    let ds = build_dataset(&backgrounds(5, 4, 32), &SynthesisConfig::haze(6), Mode::Haze).unwrap();
    for ex in &ds.examples {
        assert!(ex.streak.data.iter().all(|&v| v == 0.0));
        assert_eq!(ex.mask.count_positive(), 0);
        let haze = ex.haze.as_ref().unwrap();
        for k in 0..3 {
            for (i, (&o, &b)) in ex.rain.plane(k).iter().zip(ex.background.plane(k)).enumerate() {
                let a = haze.alpha_at(i);
                assert!((o - (a * b + (1.0 - a) * haze.light(k))).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn written_splits_replay_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(&backgrounds(7, 3, 24), &SynthesisConfig::heavy(8), Mode::Heavy).unwrap();
    write_split(dir.path(), &ds).unwrap();
    let again = replay_manifest(&ds.manifest).unwrap();
    assert_eq!(again.examples, ds.examples);
    let loaded = load_split(dir.path()).unwrap();
    assert_eq!(loaded.len(), 3);
    for (l, ex) in loaded.iter().zip(&ds.examples) {
        assert_eq!(l.id, ex.id);
        assert_eq!(l.mask, ex.mask);
        assert!(l.rain.max_abs_diff(&ex.rain.quantized(BitDepth::Sixteen)).unwrap() <= 1e-9);
    }
}

fn layer(h: usize, w: usize, values: Vec<f64>) -> StreakLayer {
    StreakLayer::from_data(h, w, values).unwrap()
}

proptest! {
    #[test]
    fn mask_is_the_thresholded_sum(a in prop::collection::vec(0.0f64..0.2, 36), b in prop::collection::vec(0.0f64..0.2, 36)) {
        let mask = derive_mask(&[layer(6, 6, a.clone()), layer(6, 6, b.clone())], 0.05).unwrap();
        for i in 0..36 {
            prop_assert_eq!(mask.data()[i] == 1, a[i] + b[i] > 0.05);
        }
    }

    #[test]
    fn composed_images_stay_in_range(
        bg in prop::collection::vec(0.0f64..=1.0, 3 * 25),
        s in prop::collection::vec(0.0f64..1.5, 25),
        alpha in 0.0f64..=1.0,
        light in 0.0f64..=1.0,
    ) {
        let b = Image::from_planar(5, 5, 3, bg).unwrap();
        let s = layer(5, 5, s);
        let r = derive_mask(std::slice::from_ref(&s), 0.05).unwrap();
        let haze = HazeParams::uniform(alpha, light);
        for img in [
            compose_light_rain(&b, &s, &r).unwrap(),
            compose_heavy_rain(&b, std::slice::from_ref(&s), &r, &haze).unwrap(),
            compose_haze_only(&b, &haze).unwrap(),
        ] {
            prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn clear_sky_heavy_rain_equals_light_rain(
        bg in prop::collection::vec(0.0f64..=1.0, 3 * 16),
        s in prop::collection::vec(0.0f64..0.6, 16),
    ) {
        let b = Image::from_planar(4, 4, 3, bg).unwrap();
        let s = layer(4, 4, s);
        let r = derive_mask(std::slice::from_ref(&s), 0.05).unwrap();
        let heavy = compose_heavy_rain(&b, std::slice::from_ref(&s), &r, &HazeParams::clear()).unwrap();
        let light = compose_light_rain(&b, &s, &r).unwrap();
        prop_assert!(heavy.max_abs_diff(&light).unwrap() <= 1e-15);
    }
}
