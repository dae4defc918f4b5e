use derain::metrics::{mask_metrics, psnr, ssim, to_luminance};
use derain::Image;
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn luma(img: &Image, y: usize, x: usize) -> f64 {
    0.299 * img.get(0, y, x) + 0.587 * img.get(1, y, x) + 0.114 * img.get(2, y, x)
}

fn brute_psnr(a: &Image, b: &Image) -> f64 {
    let (h, w, _) = a.dims();
    let mut sse = 0.0;
    for y in 0..h {
        for x in 0..w {
            let d = luma(a, y, x) - luma(b, y, x);
            sse += d * d;
        }
    }
    10.0 * (1.0 / (sse / (h * w) as f64)).log10()
}

/// Full 2-D Gaussian window and two-pass moments at every valid position.
fn brute_ssim(a: &Image, b: &Image) -> f64 {
    let (h, w, _) = a.dims();
    let k = 11;
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i * k + j] = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let sum: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= sum);
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    let mut n = 0;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let at = |img: &Image, i: usize| luma(img, y0 + i / k, x0 + i % k);
            let ma: f64 = (0..k * k).map(|i| win[i] * at(a, i)).sum();
            let mb: f64 = (0..k * k).map(|i| win[i] * at(b, i)).sum();
            let va: f64 = (0..k * k).map(|i| win[i] * (at(a, i) - ma).powi(2)).sum();
            let vb: f64 = (0..k * k).map(|i| win[i] * (at(b, i) - mb).powi(2)).sum();
            let cov: f64 = (0..k * k).map(|i| win[i] * (at(a, i) - ma) * (at(b, i) - mb)).sum();
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    total / n as f64
}

fn random_pair(rng: &mut ChaCha8Rng, noise: f64) -> (Image, Image) {
    let (h, w) = (rng.random_range(11..36), rng.random_range(11..36));
    let a = Image::from_fn(h, w, 3, |_, _, _| rng.random::<f64>());
    let b = Image::from_fn(h, w, 3, |c, y, x| (a.get(c, y, x) + noise * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0));
    (a, b)
}

#[test]
fn psnr_and_ssim_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..20 {
        let (a, b) = random_pair(&mut rng, 0.01 + 0.05 * i as f64);
        assert!((psnr(&a, &b).unwrap() - brute_psnr(&a, &b)).abs() <= 1e-9);
        assert!((ssim(&a, &b).unwrap() - brute_ssim(&a, &b)).abs() <= 1e-6);
    }
}

#[test]
fn tenth_offset_is_twenty_db() {
    let zero = Image::zeros(16, 16, 3);
    assert_eq!(psnr(&zero, &Image::filled(16, 16, 3, 0.1)).unwrap(), 20.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = Image::from_fn(16, 16, 3, |_, _, _| 0.9 * rng.random::<f64>());
    assert!((psnr(&a, &a.map(|v| v + 0.1)).unwrap() - 20.0).abs() <= 1e-12);
}

#[test]
fn mask_metrics_count_by_hand() {
    let truth = [1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let pred = [0.9, 0.2, 0.7, 0.1, 0.4, 0.6];
    let m = mask_metrics(&pred, &truth, 0.5).unwrap();
    // tp 2, fn 1, fp 1, tn 2
    assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-15);
    assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
}

fn image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..=1.0, 3 * h * w).prop_map(move |d| Image::from_planar(h, w, 3, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_symmetric_and_bounded(a in image(12, 13), b in image(12, 13)) {
        let (p1, p2) = (psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!(p1 == p2);
        prop_assert!(p1 >= 0.0);
        let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((s1 - s2).abs() <= 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s1));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn luminance_of_grey_is_the_grey_level(v in 0.0f64..=1.0) {
        let l = to_luminance(&Image::filled(2, 3, 3, v)).unwrap();
        prop_assert!(l.iter().all(|&x| (x - v).abs() <= 1e-15));
    }
}
