use derain::network::{check_gradients, HeadOrdering, JorderNet, LossWeights, NetworkConfig, TermWeights};
use derain::synthesis::{build_dataset, Background, Mode, RainExample, SynthesisConfig};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn light_example(seed: u64) -> RainExample {
    let bg = vec![Background::procedural(seed, 0, 16, 16)];
    build_dataset(&bg, &SynthesisConfig::light(seed), Mode::Light)
        .unwrap()
        .examples
        .remove(0)
}

/// Fresh networks have zero streak weights; move every head away from its
/// initial point so all gradient paths are exercised.
fn perturbed(mut net: JorderNet<f64>, seed: u64) -> JorderNet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in net.params_mut().iter_mut() {
        if p.name.starts_with("streak") || p.name.starts_with("background") {
            for v in &mut p.data {
                *v += rng.random_range(-0.05..0.05);
            }
        }
    }
    net
}

fn assert_matches(net: &JorderNet<f64>, ex: &RainExample, weights: TermWeights, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let check = check_gradients(net, ex, weights, 32, 1e-4, &mut rng).unwrap();
    assert_eq!(check.samples.len(), 32);
    for prefix in ["detect.", "streak.", "background.", "extractor."] {
        assert!(check.samples.iter().any(|s| s.param.starts_with(prefix)));
    }
    let worst = check
        .samples
        .iter()
        .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
        .unwrap();
    assert!(worst.relative_error < 1e-4, "{worst:?}");
}

#[test]
fn joint_loss_gradients_match_finite_differences() {
    let net = perturbed(JorderNet::new(NetworkConfig::default(), 1).unwrap(), 1);
    assert_matches(&net, &light_example(3), LossWeights::default().into(), 5);
}

#[test]
fn each_loss_term_is_differentiated_correctly() {
    let net = perturbed(JorderNet::new(NetworkConfig::default(), 2).unwrap(), 2);
    let ex = light_example(4);
    let terms = [
        TermWeights { streak: 1.0, background: 0.0, detection: 0.0 },
        TermWeights { streak: 0.0, background: 1.0, detection: 0.0 },
        TermWeights { streak: 0.0, background: 0.0, detection: 1.0 },
    ];
    for (i, w) in terms.into_iter().enumerate() {
        assert_matches(&net, &ex, w, 10 + i as u64);
    }
}

#[test]
fn alternative_head_orderings_differentiate_correctly() {
    for ordering in [HeadOrdering::SRB, HeadOrdering::Parallel] {
        let cfg = NetworkConfig {
            feature_channels: 8,
            head_ordering: ordering,
            ..Default::default()
        };
        let net = perturbed(JorderNet::new(cfg, 3).unwrap(), 3);
        assert_matches(&net, &light_example(5), LossWeights::default().into(), 21);
    }
}
