use derain::network::{perturbation_footprint, JorderNet, NetworkConfig};
use derain::nn::{uniform_fill, Real};
use derain::pipeline::{derain_recurrent, remaining_rain, DehazeNet, DerainModel, Pipeline, PipelineConfig, Stage};
use derain::synthesis::{build_dataset, Background, Mode, SynthesisConfig};
use derain::Image;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn perturb_heads<T: Real>(net: &mut JorderNet<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in net.params_mut().iter_mut() {
        if p.name.starts_with("streak") || p.name.starts_with("background") {
            for v in &mut p.data {
                *v += T::from_f64_lossy(rng.random_range(-0.05..0.05));
            }
        }
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, 3, |_, _, _| rng.random::<f64>())
}

#[test]
fn fresh_networks_return_their_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = random_image(&mut rng, 20, 17);
    let model = DerainModel::new(NetworkConfig::default(), 3, false, 2).unwrap();
    let (b, _) = derain_recurrent(&img, &model, 3).unwrap();
    assert!(b.max_abs_diff(&img).unwrap() <= 1e-6);
    let dehaze = DehazeNet::<f32>::new(NetworkConfig::default(), 3).unwrap();
    assert!(dehaze.forward(&img).unwrap().max_abs_diff(&img).unwrap() <= 1e-6);
}

#[test]
fn residues_telescope_for_every_tau() {
    let mut model = DerainModel::new(NetworkConfig::default(), 5, false, 4).unwrap();
    for (t, net) in model.stages.iter_mut().enumerate() {
        perturb_heads(net, 10 + t as u64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for tau in [1, 2, 3, 5] {
        for _ in 0..10 {
            let (h, w) = (rng.random_range(12..30), rng.random_range(12..30));
            let img = random_image(&mut rng, h, w);
            let (b, trace) = derain_recurrent(&img, &model, tau).unwrap();
            assert_eq!(trace.steps.len(), tau);
            let mut expected = img.clone();
            for step in &trace.steps {
                assert!(step.residual.data().iter().any(|&e| e != 0.0));
                expected = expected.zip_map(&step.residual, |o, e| o - e).unwrap();
            }
            assert!(expected.max_abs_diff(&b).unwrap() <= 1e-6);
            assert_eq!(trace.replay(&img).unwrap(), b);
        }
    }
}

#[test]
fn later_stages_reuse_the_last_network() {
    let mut model = DerainModel::new(NetworkConfig::default(), 2, false, 6).unwrap();
    for (t, net) in model.stages.iter_mut().enumerate() {
        perturb_heads(net, 20 + t as u64);
    }
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(7), 16, 16);
    let (_, trace) = derain_recurrent(&img, &model, 4).unwrap();
    let again = derain::pipeline::derain_once(&trace.steps[3].input, &model.stages[1]).unwrap();
    assert_eq!(again.residual, trace.steps[3].residual);
}

#[test]
fn remaining_rain_is_unchanged_on_the_rainy_input() {
    let bg = vec![Background::procedural(8, 0, 32, 32)];
    let ex = build_dataset(&bg, &SynthesisConfig::light(9), Mode::Light).unwrap().examples.remove(0);
    let same = remaining_rain(&ex, &ex.rain).unwrap();
    assert_eq!(same.mask, ex.mask);
    for (a, b) in same.streak.data.iter().zip(&ex.streak.data) {
        assert!((a - b).abs() <= 1e-12);
    }
    // only clipped pixels hide part of their streak from O − B
    let clean = remaining_rain(&ex, &ex.background).unwrap();
    let w = ex.width();
    for (i, &r) in clean.mask.data().iter().enumerate() {
        if r == 1 {
            assert!((0..3).any(|c| ex.rain.get(c, i / w, i % w) == 1.0));
        }
    }
}

#[test]
fn extractor_footprint_is_bounded_by_rounds_and_transform() {
    let mut cfg = NetworkConfig {
        feature_channels: 6,
        intra_recurrences: 1,
        ..Default::default()
    };
    let mut sizes = Vec::new();
    for rounds in [1, 2] {
        cfg.intra_recurrences = rounds;
        let mut net = JorderNet::<f64>::new(cfg.clone(), 11).unwrap();
        uniform_fill(net.params_mut(), 1.0, &mut ChaCha8Rng::seed_from_u64(12));
        for p in net.params_mut().iter_mut() {
            p.data.iter_mut().for_each(|v| *v = v.abs() + 0.01);
        }
        let n = 61;
        let base = Image::filled(n, n, 3, 0.5);
        let mut bumped = base.clone();
        for c in 0..3 {
            bumped.set(c, 30, 30, 0.9);
        }
        let a = net.extract_features(&base).unwrap();
        let b = net.extract_features(&bumped).unwrap();
        let fp = perturbation_footprint(&a, &b, 0.0).unwrap();
        // input 3×3 plus 12 pixels of context per round
        assert_eq!(fp.height(), 3 + 12 * rounds);
        assert_eq!(fp.width(), 3 + 12 * rounds);
        sizes.push(fp.height());
    }
    assert!(sizes[1] >= sizes[0]);
}

#[test]
fn single_derain_sequence_equals_the_recurrence() {
    let mut model = DerainModel::new(NetworkConfig::default(), 3, false, 13).unwrap();
    for (t, net) in model.stages.iter_mut().enumerate() {
        perturb_heads(net, 30 + t as u64);
    }
    let cfg = PipelineConfig {
        tau: 3,
        stage_sequence: vec![Stage::Derain],
        ..Default::default()
    };
    let pipeline = Pipeline::from_models(cfg, Some(model.clone()), None).unwrap();
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(14), 18, 18);
    let (b, _) = derain_recurrent(&img, &model, 3).unwrap();
    assert_eq!(pipeline.run(&img).unwrap().output, b);
}
