use nibkit::autodiff::Tensor;
use nibkit::nib::{make_noise_map, NoiseFamily, NoiseMode, NoiseSpec, Injection};

const SIDE: usize = 1000;

fn moments(t: &Tensor<f64>) -> (f64, f64) {
    let n = t.data().len() as f64;
    let mean = t.data().iter().sum::<f64>() / n;
    let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn lag1_correlation(t: &Tensor<f64>, dx: usize, dy: usize) -> f64 {
    let (mean, var) = moments(t);
    let s = t.shape();
    let mut acc = 0.0;
    let mut n = 0.0;
    for y in 0..s.h - dy {
        for x in 0..s.w - dx {
            acc += (t.at(0, 0, y, x) - mean) * (t.at(0, 0, y + dy, x + dx) - mean);
            n += 1.0;
        }
    }
    acc / n / var
}

fn spec(family: NoiseFamily) -> NoiseSpec {
    let injection = match family {
        NoiseFamily::Bernoulli { .. } => Injection::MultiplicativeComplementary,
        _ => Injection::AdditiveSymmetric,
    };
    NoiseSpec::new(NoiseMode::Stationary, family, injection, 42).unwrap()
}

#[test]
fn million_sample_moments_match_the_families() {
    let cases = [
        (NoiseFamily::Gaussian { mean: 0.0, sigma: 0.3 }, 0.0, 0.09),
        (NoiseFamily::Gaussian { mean: 0.5, sigma: 0.03 }, 0.5, 0.0009),
        (NoiseFamily::Uniform { lo: -0.3, hi: 0.3 }, 0.0, 0.36 / 12.0),
        (NoiseFamily::Bernoulli { p: 0.5 }, 0.5, 0.25),
        (NoiseFamily::Bernoulli { p: 0.2 }, 0.2, 0.16),
    ];
    for (family, want_mean, want_var) in cases {
        let m = make_noise_map::<f64>(&spec(family), SIDE, SIDE, 0).unwrap();
        let (mean, var) = moments(&m);
        let sd = f64::sqrt(want_var);
        // Five standard errors on the mean, 1% on the variance.
        assert!((mean - want_mean).abs() < 5.0 * sd / SIDE as f64, "{family:?}: mean {mean}");
        assert!((var / want_var - 1.0).abs() < 0.01, "{family:?}: var {var}");
    }
}

#[test]
fn noise_is_spatially_white() {
    let m = make_noise_map::<f64>(&NoiseSpec::default(), 512, 512, 0).unwrap();
    for (dx, dy) in [(1, 0), (0, 1), (1, 1), (2, 0), (0, 2)] {
        let r = lag1_correlation(&m, dx, dy);
        assert!(r.abs() < 0.01, "lag ({dx},{dy}) correlation {r}");
    }
}

#[test]
fn maps_are_crop_consistent() {
    let spec = NoiseSpec::default();
    let big = make_noise_map::<f64>(&spec, 96, 80, 0).unwrap();
    let small = make_noise_map::<f64>(&spec, 40, 24, 0).unwrap();
    assert_eq!(big.crop(0, 0, 40, 24).unwrap(), small);
}

#[test]
fn dynamic_maps_differ_between_samples() {
    let spec = NoiseSpec::from_label("D-N-0.3", 42).unwrap();
    let a = make_noise_map::<f64>(&spec, 256, 256, 3).unwrap();
    let b = make_noise_map::<f64>(&spec, 256, 256, 4).unwrap();
    let differ = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
    assert!(differ as f64 > 0.99 * a.data().len() as f64);
    assert_eq!(a, make_noise_map::<f64>(&spec, 256, 256, 3).unwrap());
}

#[test]
fn seeds_give_independent_maps() {
    let a = make_noise_map::<f64>(&NoiseSpec { seed: 1, ..NoiseSpec::default() }, 256, 256, 0).unwrap();
    let b = make_noise_map::<f64>(&NoiseSpec { seed: 2, ..NoiseSpec::default() }, 256, 256, 0).unwrap();
    let n = a.data().len() as f64;
    let corr = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>() / n / 0.09;
    assert!(corr.abs() < 0.02, "{corr}");
}
