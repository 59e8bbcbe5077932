//! Separable fixed smoothing with half-sample symmetric borders
//! (`d c b a | a b c d | d c b a`).
//!
//! With a symmetric kernel this border rule makes every input pixel
//! contribute a total weight of exactly one, so the image mean is preserved.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Normalized 1-D gaussian taps.
pub fn gaussian_kernel(sigma: f64, ksize: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("gaussian_blur", format!("sigma must be > 0, got {sigma}")));
    }
    if ksize % 2 == 0 {
        return Err(Error::invalid("gaussian_blur", format!("ksize must be odd, got {ksize}")));
    }
    let r = (ksize / 2) as f64;
    let mut k: Vec<f64> = (0..ksize)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - 1 - m) as usize
    } else {
        m as usize
    }
}

fn taps(n: usize, len: usize) -> Vec<usize> {
    let r = (len / 2) as isize;
    (0..n)
        .flat_map(|i| (0..len).map(move |t| reflect(i as isize + t as isize - r, n)))
        .collect()
}

pub(crate) fn forward<T: Real>(x: &Tensor<T>, kernel: &[T], vertical: bool) -> Tensor<T> {
    let s = x.shape();
    let len = kernel.len();
    let mut out = Tensor::zeros(s);
    let idx = taps(if vertical { s.h } else { s.w }, len);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            if vertical {
                for y in 0..s.h {
                    let row = &mut dst[y * s.w..(y + 1) * s.w];
                    for (t, &k) in kernel.iter().enumerate() {
                        let sy = idx[y * len + t];
                        for (d, &v) in row.iter_mut().zip(&src[sy * s.w..(sy + 1) * s.w]) {
                            *d += k * v;
                        }
                    }
                }
            } else {
                for y in 0..s.h {
                    let srow = &src[y * s.w..(y + 1) * s.w];
                    for xx in 0..s.w {
                        let mut acc = T::ZERO;
                        for (t, &k) in kernel.iter().enumerate() {
                            acc += k * srow[idx[xx * len + t]];
                        }
                        dst[y * s.w + xx] = acc;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn backward<T: Real>(g: &Tensor<T>, kernel: &[T], vertical: bool) -> Tensor<T> {
    let s = g.shape();
    let len = kernel.len();
    let mut out = Tensor::zeros(s);
    let idx = taps(if vertical { s.h } else { s.w }, len);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = g.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                for xx in 0..s.w {
                    let gv = src[y * s.w + xx];
                    for (t, &k) in kernel.iter().enumerate() {
                        if vertical {
                            dst[idx[y * len + t] * s.w + xx] += k * gv;
                        } else {
                            dst[y * s.w + idx[xx * len + t]] += k * gv;
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_is_half_sample_symmetric() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
    }

    #[test]
    fn kernel_sums_to_one() {
        let k = gaussian_kernel(2.0, 11).unwrap();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[10]);
    }

    #[test]
    fn rejects_bad_sigma_and_even_size() {
        assert!(gaussian_kernel(0.0, 5).is_err());
        assert!(gaussian_kernel(-1.0, 5).is_err());
        assert!(gaussian_kernel(1.0, 4).is_err());
    }
}
