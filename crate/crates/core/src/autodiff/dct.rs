//! Orthonormal 2-D DCT-II as a pair of dense matrix products per plane.

use super::tensor::{Real, Tensor};

/// `n x n` orthonormal DCT-II matrix, row `u` holding basis function `u`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let nf = n as f64;
    for u in 0..n {
        let alpha = if u == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for x in 0..n {
            m[u * n + x] =
                alpha * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2.0 * nf)).cos();
        }
    }
    m
}

/// Forward: `C_h X C_w^T`. Inverse: `C_h^T Y C_w`.
pub(crate) fn apply<T: Real>(x: &Tensor<T>, inverse: bool) -> Tensor<T> {
    let s = x.shape();
    let ch: Vec<T> = dct_matrix(s.h).into_iter().map(T::from_f64).collect();
    let cw: Vec<T> = dct_matrix(s.w).into_iter().map(T::from_f64).collect();
    let mut out = Tensor::zeros(s);
    let mut tmp = vec![T::ZERO; s.plane()];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            T::gemm(s.h, s.h, s.w, T::ONE, &ch, inverse, src, false, T::ZERO, &mut tmp);
            let dst = out.plane_mut(n, c);
            T::gemm(s.h, s.w, s.w, T::ONE, &tmp, false, &cw, !inverse, T::ZERO, dst);
        }
    }
    out
}
