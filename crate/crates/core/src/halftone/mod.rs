//! Deep neural dithering: loss terms, quality metrics, classical oracles and
//! the training loop.
//!
//! Tone is compared after a fixed gaussian low-pass (sigma 2, 11 taps by
//! default) because binary images only match a grayscale source on average.
//! The blue-noise term `L_B` is the mean absolute DCT coefficient of the soft
//! output after zeroing the lowest 5% of radial frequencies, and is applied
//! to constant-gray training patches only.

mod classical;
mod train;

pub use classical::{bayer_dither, bayer_matrix, floyd_steinberg};
pub use train::{
    evaluate, metrics_csv, train_halftoner, EvalSummary, MetricsRow, TrainOptions, TrainOutcome, METRICS_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Shape, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::Model;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalftoneLossConfig {
    pub blur_sigma: f64,
    pub blur_ksize: usize,
    pub w_tone: f64,
    pub w_bin: f64,
    pub w_blue: f64,
    pub mask_fraction: f64,
    /// Share of each batch made of constant-gray patches.
    pub constant_patch_ratio: f64,
}

impl Default for HalftoneLossConfig {
    fn default() -> Self {
        HalftoneLossConfig {
            blur_sigma: 2.0,
            blur_ksize: 11,
            w_tone: 1.0,
            w_bin: 0.1,
            w_blue: 0.05,
            mask_fraction: 0.05,
            constant_patch_ratio: 0.25,
        }
    }
}

impl HalftoneLossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::Config(d));
        if !(self.blur_sigma > 0.0) || self.blur_ksize % 2 == 0 {
            return bad(format!(
                "blur needs sigma > 0 and an odd size, got sigma {} size {}",
                self.blur_sigma, self.blur_ksize
            ));
        }
        for (k, v) in [("w_tone", self.w_tone), ("w_bin", self.w_bin), ("w_blue", self.w_blue)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{k} must be a non-negative number, got {v}"));
            }
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return bad(format!("mask_fraction must be in (0, 1), got {}", self.mask_fraction));
        }
        if !(0.0..1.0).contains(&self.constant_patch_ratio) {
            return bad(format!(
                "constant_patch_ratio must be in [0, 1), got {}",
                self.constant_patch_ratio
            ));
        }
        Ok(())
    }
}

/// MSE between the blurred soft output and the blurred target.
pub fn tone_loss<'g, T: Real>(soft: Var<'g, T>, gray: Var<'g, T>, cfg: &HalftoneLossConfig) -> Result<Var<'g, T>> {
    if soft.shape() != gray.shape() {
        return Err(Error::shape("tone_loss", format!("{} vs {}", soft.shape(), gray.shape())));
    }
    let a = soft.gaussian_blur(cfg.blur_sigma, cfg.blur_ksize)?;
    let b = gray.gaussian_blur(cfg.blur_sigma, cfg.blur_ksize)?;
    a.mse(b)
}

/// Mean of `min(s, 1 - s)`. At exactly 0.5 the gradient follows `s`.
pub fn binarization_penalty<'g, T: Real>(soft: Var<'g, T>) -> Var<'g, T> {
    soft.minimum(soft.affine(-1.0, 1.0))
        .expect("same shape by construction")
        .mean()
}

/// Zeroes the `ceil(fraction * h * w)` DCT coefficients with the smallest
/// radial frequency `sqrt((u/h)^2 + (v/w)^2)`, ties in `(u, v)` order.
pub fn build_lowfreq_mask<T: Real>(h: usize, w: usize, fraction: f64) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&fraction) || h == 0 || w == 0 {
        return Err(Error::invalid(
            "build_lowfreq_mask",
            format!("need fraction in [0, 1) and a non-empty size, got {fraction} for {h}x{w}"),
        ));
    }
    let zeros = (fraction * (h * w) as f64).ceil() as usize;
    let mut order: Vec<(f64, usize, usize)> = (0..h)
        .flat_map(|u| (0..w).map(move |v| (((u as f64 / h as f64).powi(2) + (v as f64 / w as f64).powi(2)).sqrt(), u, v)))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut mask = Tensor::full(Shape::new(1, 1, h, w), T::ONE);
    for &(_, u, v) in &order[..zeros] {
        mask.set(0, 0, u, v, T::ZERO);
    }
    Ok(mask)
}

/// `mean |dct2(soft) * mask|`, with `mask` broadcast over the batch.
pub fn blue_noise_loss<'g, T: Real>(soft: Var<'g, T>, mask: &Tensor<T>) -> Result<Var<'g, T>> {
    let s = soft.shape();
    let m = mask.shape();
    if (m.h, m.w) != (s.h, s.w) {
        return Err(Error::shape("blue_noise_loss", format!("mask {m} vs input {s}")));
    }
    let mask = soft.graph().constant(mask.broadcast_to(s)?);
    Ok(soft.dct2().mul(mask)?.abs().mean())
}

fn blur_plain(x: &Tensor, cfg: &HalftoneLossConfig) -> Result<Tensor<f64>> {
    x.cast::<f64>().gaussian_blur(cfg.blur_sigma, cfg.blur_ksize)
}

pub const PSNR_CAP_DB: f64 = 99.0;

/// PSNR between the blurred halftone and the blurred source, capped at 99 dB.
pub fn tone_psnr(halftone: &Tensor, gray: &Tensor, cfg: &HalftoneLossConfig) -> Result<f64> {
    if halftone.shape() != gray.shape() {
        return Err(Error::shape("tone_psnr", format!("{} vs {}", halftone.shape(), gray.shape())));
    }
    let a = blur_plain(halftone, cfg)?;
    let b = blur_plain(gray, cfg)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Raw (unblurred) PSNR with unit dynamic range.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", format!("{} vs {}", a.shape(), b.shape())));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(psnr_from_mse(mse))
}

pub const SSIM_WINDOW: usize = 11;

/// Mean SSIM over all valid 11x11 gaussian windows (sigma 1.5), K1 0.01,
/// K2 0.03, dynamic range 1. Inputs are single planes `(1, 1, h, w)`.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    let s = a.shape();
    if s != b.shape() || s.n != 1 || s.c != 1 {
        return Err(Error::shape("ssim", format!("{} vs {} (need equal single planes)", s, b.shape())));
    }
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", s.h, s.w),
        ));
    }
    let k = crate::autodiff::gaussian_kernel(1.5, SSIM_WINDOW)?;
    let (h, w) = (s.h, s.w);
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let filt = |img: &[f64]| -> Vec<f64> {
        let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
        let mut tmp = vec![0.0; h * ow];
        for r in 0..h {
            for c in 0..ow {
                tmp[r * ow + c] = (0..SSIM_WINDOW).map(|t| k[t] * img[r * w + c + t]).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                out[r * ow + c] = (0..SSIM_WINDOW).map(|t| k[t] * tmp[(r + t) * ow + c]).sum();
            }
        }
        out
    };
    let (mx, my) = (filt(&x), filt(&y));
    let (sxx, syy, sxy) = (filt(&prod(&x, &x)), filt(&prod(&y, &y)), filt(&prod(&x, &y)));
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Share of absolute DCT mass in the masked low-frequency set (DC included):
/// `sum |dct2(H) * (1 - M)| / sum |dct2(H)|`, over all planes of `h`.
pub fn lowfreq_share(h: &Tensor, fraction: f64) -> Result<f64> {
    let s = h.shape();
    let mask = build_lowfreq_mask::<f64>(s.h, s.w, fraction)?;
    let d = h.cast::<f64>().dct2();
    let (mut low, mut all) = (0.0, 0.0);
    for (i, v) in d.data().iter().enumerate() {
        let a = v.abs();
        all += a;
        if mask.data()[i % s.plane()] == 0.0 {
            low += a;
        }
    }
    Ok(if all > 0.0 { low / all } else { 0.0 })
}

/// Same as [`lowfreq_share`] with the DC coefficient left out of both sums.
pub fn lowfreq_share_ac(h: &Tensor, fraction: f64) -> Result<f64> {
    let s = h.shape();
    let mask = build_lowfreq_mask::<f64>(s.h, s.w, fraction)?;
    let d = h.cast::<f64>().dct2();
    let (mut low, mut all) = (0.0, 0.0);
    for (i, v) in d.data().iter().enumerate() {
        let j = i % s.plane();
        if j == 0 {
            continue;
        }
        all += v.abs();
        if mask.data()[j] == 0.0 {
            low += v.abs();
        }
    }
    Ok(if all > 0.0 { low / all } else { 0.0 })
}

/// `1` where `v >= 0.5`, else `0`.
pub fn threshold(t: &Tensor) -> Tensor {
    t.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalftoneMetrics {
    pub tone_psnr: f64,
    /// SSIM between the blurred halftone and the blurred source.
    pub ssim: f64,
    pub lowfreq_share: f64,
    /// Constant input produced a constant halftone (interior only for models).
    pub flatness_degraded: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HalftoneResult {
    pub binary: Tensor,
    pub soft: Tensor,
    pub metrics: HalftoneMetrics,
}

pub fn halftone_metrics(binary: &Tensor, gray: &Tensor, cfg: &HalftoneLossConfig) -> Result<HalftoneMetrics> {
    let blurred_b = blur_plain(binary, cfg)?.cast::<f32>();
    let blurred_g = blur_plain(gray, cfg)?.cast::<f32>();
    let is_const = |t: &Tensor| {
        let (lo, hi) = t.min_max();
        lo == hi
    };
    Ok(HalftoneMetrics {
        tone_psnr: tone_psnr(binary, gray, cfg)?,
        ssim: ssim(&blurred_b, &blurred_g)?,
        lowfreq_share: lowfreq_share(binary, cfg.mask_fraction)?,
        flatness_degraded: is_const(gray) && is_const(binary),
    })
}

/// Runs the model on one `(1, 1, h, w)` image, thresholds at 0.5 and scores
/// the result.
pub fn dither(model: &Model<f32>, gray: &Tensor, cfg: &HalftoneLossConfig) -> Result<HalftoneResult> {
    dither_with_id(model, gray, cfg, 0)
}

/// [`dither`] with an explicit sample id for dynamic-noise models.
pub fn dither_with_id(model: &Model<f32>, gray: &Tensor, cfg: &HalftoneLossConfig, sample_id: u64) -> Result<HalftoneResult> {
    if gray.shape().n != 1 || gray.shape().c != 1 {
        return Err(Error::shape("dither", format!("expected a (1, 1, h, w) image, got {}", gray.shape())));
    }
    let soft = model.infer(gray, sample_id)?;
    let binary = threshold(&soft);
    let mut metrics = halftone_metrics(&binary, gray, cfg)?;
    // Zero padding disturbs a border as wide as half the receptive field, so
    // only the interior is expected to stay constant.
    let (rf, _) = crate::models::receptive_field(model);
    let m = (rf - 1) / 2;
    let s = binary.shape();
    if !metrics.flatness_degraded && s.h > 2 * m && s.w > 2 * m {
        let (lo, hi) = gray.min_max();
        let (blo, bhi) = binary.crop(m, m, s.h - 2 * m, s.w - 2 * m)?.min_max();
        metrics.flatness_degraded = lo == hi && blo == bhi;
    }
    Ok(HalftoneResult { binary, soft, metrics })
}

/// Scores a classical halftone of `gray` with the same metrics as [`dither`].
pub fn score_halftone(binary: Tensor, gray: &Tensor, cfg: &HalftoneLossConfig) -> Result<HalftoneResult> {
    let metrics = halftone_metrics(&binary, gray, cfg)?;
    Ok(HalftoneResult {
        soft: binary.clone(),
        binary,
        metrics,
    })
}

/// Evaluates a loss closure on plain tensors.
pub fn eval_scalar(f: impl for<'g> FnOnce(&'g Graph<f64>) -> Result<Var<'g, f64>>) -> Result<f64> {
    let g = Graph::new();
    Ok(f(&g)?.item())
}
