//! Noise Incentive Block.
//!
//! The block perturbs its input symmetrically with a noise map and merges the
//! two branches through learned convolutions:
//!
//! ```text
//! additive_symmetric            f1(I + N) + f2(I - N)
//! multiplicative_complementary  f1(I * B) + f2(I * (1 - B))     B ~ Bernoulli
//! feature_domain                f1(I)     + f2(N)
//! ```
//!
//! Noise values are a pure function of `(seed, x, y, sample_id)` computed by
//! hashing the coordinates, so a stationary map is available at any size
//! without tiling and two requests always agree where they overlap.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Real, Shape, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::layers::Conv2dLayer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// One fixed map for every input.
    Stationary,
    /// A fresh map per input, indexed by `sample_id`.
    Dynamic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian { mean: f64, sigma: f64 },
    Uniform { lo: f64, hi: f64 },
    Bernoulli { p: f64 },
    /// Alternating horizontal 0/1 bands; `period` rows per 0+1 cycle.
    RegularGrid { period: usize },
}

impl NoiseFamily {
    /// Gaussian parameterized by variance instead of standard deviation.
    pub fn gaussian_from_variance(mean: f64, variance: f64) -> Self {
        NoiseFamily::Gaussian {
            mean,
            sigma: variance.sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    AdditiveSymmetric,
    MultiplicativeComplementary,
    FeatureDomain,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    #[serde(flatten)]
    pub family: NoiseFamily,
    pub injection: Injection,
    pub seed: u64,
    /// Independent noise per input channel instead of one broadcast map.
    #[serde(default)]
    pub per_channel: bool,
}

impl Default for NoiseSpec {
    /// Stationary gaussian(0, 0.3), additive symmetric, seed 42.
    fn default() -> Self {
        NoiseSpec {
            mode: NoiseMode::Stationary,
            family: NoiseFamily::Gaussian {
                mean: 0.0,
                sigma: 0.3,
            },
            injection: Injection::AdditiveSymmetric,
            seed: 42,
            per_channel: false,
        }
    }
}

impl NoiseSpec {
    pub fn new(mode: NoiseMode, family: NoiseFamily, injection: Injection, seed: u64) -> Result<Self> {
        let spec = NoiseSpec {
            mode,
            family,
            injection,
            seed,
            per_channel: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidNoiseSpec(m));
        match self.family {
            NoiseFamily::Gaussian { mean, sigma } => {
                if !(sigma > 0.0 && sigma.is_finite() && mean.is_finite()) {
                    return bad(format!("gaussian needs finite mean and sigma > 0, got sigma {sigma}"));
                }
            }
            NoiseFamily::Uniform { lo, hi } => {
                if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                    return bad(format!("uniform needs lo < hi, got [{lo}, {hi}]"));
                }
            }
            NoiseFamily::Bernoulli { p } => {
                if !(p > 0.0 && p < 1.0) {
                    return bad(format!("bernoulli needs 0 < p < 1, got {p}"));
                }
            }
            NoiseFamily::RegularGrid { period } => {
                if period < 2 {
                    return bad(format!("regular grid needs period >= 2, got {period}"));
                }
                if self.mode != NoiseMode::Stationary {
                    return bad("regular grid must be stationary".into());
                }
            }
        }
        let is_bernoulli = matches!(self.family, NoiseFamily::Bernoulli { .. });
        if self.injection == Injection::MultiplicativeComplementary && !is_bernoulli {
            return bad("multiplicative_complementary requires the bernoulli family".into());
        }
        Ok(())
    }

    /// Short study label such as `S-N-0.3`, `D-B-0.5`, `F-D-N-0.3` or `regular-grid`.
    pub fn label(&self) -> String {
        let mode = match self.mode {
            NoiseMode::Stationary => "S",
            NoiseMode::Dynamic => "D",
        };
        let fam = match self.family {
            NoiseFamily::Gaussian { sigma, .. } => format!("N-{sigma}"),
            NoiseFamily::Uniform { hi, .. } => format!("U-{hi}"),
            NoiseFamily::Bernoulli { p } => format!("B-{p}"),
            NoiseFamily::RegularGrid { period } => {
                return if period == 2 {
                    "regular-grid".into()
                } else {
                    format!("regular-grid-{period}")
                }
            }
        };
        match self.injection {
            Injection::FeatureDomain => format!("F-{mode}-{fam}"),
            _ => format!("{mode}-{fam}"),
        }
    }

    /// Inverse of [`NoiseSpec::label`] (seed set to `seed`).
    pub fn from_label(label: &str, seed: u64) -> Result<Self> {
        let bad = || Error::InvalidNoiseSpec(format!("unrecognized variant label `{label}`"));
        if let Some(rest) = label.strip_prefix("regular-grid") {
            let period = match rest.strip_prefix('-') {
                Some(p) => p.parse().map_err(|_| bad())?,
                None if rest.is_empty() => 2,
                None => return Err(bad()),
            };
            return NoiseSpec::new(
                NoiseMode::Stationary,
                NoiseFamily::RegularGrid { period },
                Injection::AdditiveSymmetric,
                seed,
            );
        }
        let (feature, body) = match label.strip_prefix("F-") {
            Some(b) => (true, b),
            None => (false, label),
        };
        let mut parts = body.splitn(3, '-');
        let mode = match parts.next() {
            Some("S") => NoiseMode::Stationary,
            Some("D") => NoiseMode::Dynamic,
            _ => return Err(bad()),
        };
        let fam = parts.next().ok_or_else(bad)?;
        let v: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let (family, injection) = match fam {
            "N" => (NoiseFamily::Gaussian { mean: 0.0, sigma: v }, Injection::AdditiveSymmetric),
            "U" => (NoiseFamily::Uniform { lo: -v, hi: v }, Injection::AdditiveSymmetric),
            "B" => (NoiseFamily::Bernoulli { p: v }, Injection::MultiplicativeComplementary),
            _ => return Err(bad()),
        };
        let injection = if feature {
            Injection::FeatureDomain
        } else {
            injection
        };
        NoiseSpec::new(mode, family, injection, seed)
    }

    /// Noise value at a pixel; stationary specs ignore `sample_id`.
    pub fn value(&self, x: u64, y: u64, sample_id: u64) -> f64 {
        let sample = match self.mode {
            NoiseMode::Stationary => 0,
            NoiseMode::Dynamic => sample_id,
        };
        noise_value(&self.family, self.seed, x, y, sample)
    }

    fn channel_seed(&self, c: usize) -> u64 {
        if self.per_channel && c > 0 {
            mix64(self.seed ^ mix64(c as u64))
        } else {
            self.seed
        }
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based hash of a pixel coordinate.
#[inline]
pub fn hash_coords(seed: u64, x: u64, y: u64, sample_id: u64, stream: u64) -> u64 {
    let mut h = mix64(seed.wrapping_add(GOLDEN));
    for v in [x, y, sample_id, stream] {
        h = mix64(h.wrapping_add(v).wrapping_add(GOLDEN));
    }
    h
}

/// Uniform in the open interval (0, 1) from the top 53 bits.
#[inline]
fn unit(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Pure noise sample for `(seed, x, y, sample_id)`.
pub fn noise_value(family: &NoiseFamily, seed: u64, x: u64, y: u64, sample_id: u64) -> f64 {
    match *family {
        NoiseFamily::Gaussian { mean, sigma } => {
            let u1 = unit(hash_coords(seed, x, y, sample_id, 0));
            let u2 = unit(hash_coords(seed, x, y, sample_id, 1));
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            mean + sigma * z
        }
        NoiseFamily::Uniform { lo, hi } => lo + (hi - lo) * unit(hash_coords(seed, x, y, sample_id, 0)),
        NoiseFamily::Bernoulli { p } => {
            if unit(hash_coords(seed, x, y, sample_id, 0)) < p {
                1.0
            } else {
                0.0
            }
        }
        NoiseFamily::RegularGrid { period } => {
            if (y as usize % period) < period / 2 {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// `(1, 1, h, w)` noise map.
pub fn make_noise_map<T: Real>(spec: &NoiseSpec, h: usize, w: usize, sample_id: u64) -> Result<Tensor<T>> {
    spec.validate()?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("make_noise_map", format!("empty size {h}x{w}")));
    }
    Ok(noise_planes(spec, 1, h, w, sample_id))
}

fn noise_planes<T: Real>(spec: &NoiseSpec, c: usize, h: usize, w: usize, sample_id: u64) -> Tensor<T> {
    Tensor::from_fn(Shape::new(1, c, h, w), |_, c, y, x| {
        let sample = match spec.mode {
            NoiseMode::Stationary => 0,
            NoiseMode::Dynamic => sample_id,
        };
        T::from_f64(noise_value(&spec.family, spec.channel_seed(c), x as u64, y as u64, sample))
    })
}

/// Noise for a whole batch, shaped like `shape`. Dynamic specs give batch
/// member `i` the sample id `sample_id + i`.
pub fn noise_for_batch<T: Real>(spec: &NoiseSpec, shape: Shape, sample_id: u64) -> Tensor<T> {
    let per_image = |sid| {
        let base = if spec.per_channel {
            noise_planes(spec, shape.c, shape.h, shape.w, sid)
        } else {
            noise_planes(spec, 1, shape.h, shape.w, sid)
        };
        base.broadcast_to(Shape::new(1, shape.c, shape.h, shape.w))
            .expect("noise plane matches spatial size")
    };
    match spec.mode {
        NoiseMode::Stationary => per_image(0)
            .broadcast_to(shape)
            .expect("batch broadcast of a single image"),
        NoiseMode::Dynamic => {
            let items: Vec<_> = (0..shape.n as u64).map(|i| per_image(sample_id + i)).collect();
            Tensor::stack(&items).expect("equal shapes")
        }
    }
}

/// The two branch convolutions of a NIB.
#[derive(Clone, Debug, PartialEq)]
pub struct NibParams {
    pub f1: Conv2dLayer,
    pub f2: Conv2dLayer,
    pub kernel: usize,
    pub out_channels: usize,
}

impl NibParams {
    pub fn new(f1: Conv2dLayer, f2: Conv2dLayer) -> Result<Self> {
        if (f1.in_channels, f1.out_channels, f1.kernel, f1.stride, f1.pad)
            != (f2.in_channels, f2.out_channels, f2.kernel, f2.stride, f2.pad)
        {
            return Err(Error::InvalidModelConfig("NIB branches f1 and f2 must have identical shapes".into()));
        }
        Ok(NibParams {
            kernel: f1.kernel,
            out_channels: f1.out_channels,
            f1,
            f2,
        })
    }
}

/// Applies the block to a batch.
pub fn nib_forward<'g, T: Real>(
    input: Var<'g, T>,
    spec: &NoiseSpec,
    params: &NibParams,
    bound: &Bound<'g, T>,
    sample_id: u64,
) -> Result<Var<'g, T>> {
    let s = input.shape();
    if s.c != params.f1.in_channels {
        return Err(Error::shape(
            "nib_forward",
            format!("input has {} channels, NIB expects {}", s.c, params.f1.in_channels),
        ));
    }
    let g = input.graph();
    let noise = noise_for_batch::<T>(spec, s, sample_id);
    let (a, b) = match spec.injection {
        Injection::AdditiveSymmetric => {
            // f1(I+N) + f2(I-N) = (W1+W2)*I + (W1-W2)*N + b1 + b2. Tied branches
            // give an exactly zero noise kernel, so N cancels bit for bit.
            let (f1, f2) = (&params.f1, &params.f2);
            let (w1, w2) = (bound.get(f1.weight), bound.get(f2.weight));
            let bias = match (f1.bias, f2.bias) {
                (Some(b1), Some(b2)) => Some(bound.get(b1).add(bound.get(b2))?),
                (b1, b2) => b1.or(b2).map(|b| bound.get(b)),
            };
            let signal = input.conv2d(w1.add(w2)?, bias, f1.stride, f1.pad)?;
            let residual = g.constant(noise).conv2d(w1.sub(w2)?, None, f1.stride, f1.pad)?;
            return signal.add(residual);
        }
        Injection::MultiplicativeComplementary => {
            let complement = noise.map(|v| T::ONE - v);
            (input.mul(g.constant(noise))?, input.mul(g.constant(complement))?)
        }
        Injection::FeatureDomain => (input, g.constant(noise)),
    };
    params.f1.forward(bound, a)?.add(params.f2.forward(bound, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_s_n_03() {
        let s = NoiseSpec::default();
        assert_eq!(s.label(), "S-N-0.3");
        assert_eq!(s.seed, 42);
    }

    #[test]
    fn labels_round_trip() {
        for l in ["S-N-0.3", "D-N-0.3", "S-N-0.03", "S-U-0.3", "D-B-0.5", "F-D-N-0.3", "regular-grid"] {
            assert_eq!(NoiseSpec::from_label(l, 1).unwrap().label(), l);
        }
        assert!(NoiseSpec::from_label("X-N-0.3", 1).is_err());
    }

    #[test]
    fn validation_rules() {
        let mk = |mode, family, inj| NoiseSpec::new(mode, family, inj, 0);
        use Injection::*;
        use NoiseMode::*;
        assert!(mk(Stationary, NoiseFamily::Gaussian { mean: 0.0, sigma: 0.0 }, AdditiveSymmetric).is_err());
        assert!(mk(Stationary, NoiseFamily::Uniform { lo: 0.3, hi: 0.3 }, AdditiveSymmetric).is_err());
        assert!(mk(Stationary, NoiseFamily::Bernoulli { p: 1.0 }, MultiplicativeComplementary).is_err());
        assert!(mk(Stationary, NoiseFamily::RegularGrid { period: 1 }, AdditiveSymmetric).is_err());
        assert!(mk(Dynamic, NoiseFamily::RegularGrid { period: 2 }, AdditiveSymmetric).is_err());
        assert!(mk(Stationary, NoiseFamily::Gaussian { mean: 0.0, sigma: 0.3 }, MultiplicativeComplementary).is_err());
        assert!(mk(Dynamic, NoiseFamily::Bernoulli { p: 0.5 }, MultiplicativeComplementary).is_ok());
    }

    #[test]
    fn regular_grid_rows_alternate() {
        let spec = NoiseSpec::from_label("regular-grid", 0).unwrap();
        let m: Tensor<f64> = make_noise_map(&spec, 6, 5, 0).unwrap();
        for y in 0..6 {
            let want = (y % 2) as f64;
            assert!((0..5).all(|x| m.at(0, 0, y, x) == want));
        }
    }

    #[test]
    fn variance_parameterization() {
        assert_eq!(
            NoiseFamily::gaussian_from_variance(0.0, 0.09),
            NoiseFamily::Gaussian { mean: 0.0, sigma: 0.3 }
        );
    }

    #[test]
    fn per_channel_noise_differs_between_channels() {
        let spec = NoiseSpec {
            per_channel: true,
            ..NoiseSpec::default()
        };
        let t: Tensor<f64> = noise_for_batch(&spec, Shape::new(1, 2, 8, 8), 0);
        assert_ne!(t.plane(0, 0), t.plane(0, 1));
        let shared: Tensor<f64> = noise_for_batch(&NoiseSpec::default(), Shape::new(1, 2, 8, 8), 0);
        assert_eq!(shared.plane(0, 0), shared.plane(0, 1));
        assert_eq!(t.plane(0, 0), shared.plane(0, 0));
    }
}
