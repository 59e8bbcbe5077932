//! 2-D cross-correlation with zero padding, lowered to GEMM through im2col.

use super::tensor::{Real, Shape, Tensor};
use crate::error::{Error, Result};

pub(crate) struct ConvGrads<T: Real> {
    pub x: Option<Tensor<T>>,
    pub w: Option<Tensor<T>>,
    pub b: Option<Tensor<T>>,
}

pub fn output_size(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < k {
        return None;
    }
    Some((input + 2 * pad - k) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn check<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, stride: usize, pad: usize) -> Result<Geometry> {
    let xs = x.shape();
    let ws = w.shape();
    if ws.h != ws.w {
        return Err(Error::shape("conv2d", format!("kernel must be square, weight is {ws}")));
    }
    if ws.h % 2 == 0 {
        return Err(Error::shape("conv2d", format!("kernel size {} is even", ws.h)));
    }
    if ws.c != xs.c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels, weight {ws} expects {}", xs.c, ws.c),
        ));
    }
    if let Some(b) = b {
        if b.shape() != Shape::new(1, ws.n, 1, 1) {
            return Err(Error::shape(
                "conv2d",
                format!("bias {} does not match {} output channels", b.shape(), ws.n),
            ));
        }
    }
    let k = ws.h;
    let (ho, wo) = match (output_size(xs.h, k, stride, pad), output_size(xs.w, k, stride, pad)) {
        (Some(ho), Some(wo)) => (ho, wo),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("input {xs} too small for kernel {k} with padding {pad}, stride {stride}"),
            ))
        }
    };
    Ok(Geometry {
        cin: xs.c,
        h: xs.h,
        w: xs.w,
        k,
        stride,
        pad,
        ho,
        wo,
    })
}

/// Unfolds one image `(cin, h, w)` into `(cin*k*k, ho*wo)`.
fn im2col<T: Real>(g: &Geometry, x: &[T], cols: &mut [T]) {
    let p = g.cols();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let seg = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`], accumulating into `x`.
fn col2im<T: Real>(g: &Geometry, cols: &[T], x: &mut [T]) {
    let p = g.cols();
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = check(x, w, b, stride, pad)?;
    let xs = x.shape();
    let cout = w.shape().n;
    let (kk, p) = (g.rows(), g.cols());
    let mut out = Tensor::zeros(Shape::new(xs.n, cout, g.ho, g.wo));
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::ZERO; kk * p] };
    let in_per = xs.c * xs.plane();
    for n in 0..xs.n {
        let xin = &x.data()[n * in_per..(n + 1) * in_per];
        let src: &[T] = if g.is_pointwise() {
            xin
        } else {
            im2col(&g, xin, &mut cols);
            &cols
        };
        let dst = &mut out.data_mut()[n * cout * p..(n + 1) * cout * p];
        if let Some(b) = b {
            for (c, chunk) in dst.chunks_mut(p).enumerate() {
                chunk.fill(b.data()[c]);
            }
        }
        let beta = if b.is_some() { T::ONE } else { T::ZERO };
        T::gemm(cout, kk, p, T::ONE, w.data(), false, src, false, beta, dst);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> ConvGrads<T> {
    let g = check(x, w, None, stride, pad).expect("validated in forward");
    let xs = x.shape();
    let cout = w.shape().n;
    let (kk, p) = (g.rows(), g.cols());
    let in_per = xs.c * xs.plane();
    let mut gx = want_x.then(|| Tensor::zeros(xs));
    let mut gw = want_w.then(|| Tensor::zeros(w.shape()));
    let mut gb = want_b.then(|| Tensor::zeros(Shape::new(1, cout, 1, 1)));
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::ZERO; kk * p] };
    let mut gcols = if g.is_pointwise() || !want_x {
        Vec::new()
    } else {
        vec![T::ZERO; kk * p]
    };
    for n in 0..xs.n {
        let gyn = &gy.data()[n * cout * p..(n + 1) * cout * p];
        if let Some(gb) = gb.as_mut() {
            for (c, chunk) in gyn.chunks(p).enumerate() {
                gb.data_mut()[c] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(gw) = gw.as_mut() {
            let xin = &x.data()[n * in_per..(n + 1) * in_per];
            let src: &[T] = if g.is_pointwise() {
                xin
            } else {
                im2col(&g, xin, &mut cols);
                &cols
            };
            T::gemm(cout, p, kk, T::ONE, gyn, false, src, true, T::ONE, gw.data_mut());
        }
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx.data_mut()[n * in_per..(n + 1) * in_per];
            if g.is_pointwise() {
                T::gemm(kk, cout, p, T::ONE, w.data(), true, gyn, false, T::ONE, dst);
            } else {
                T::gemm(kk, cout, p, T::ONE, w.data(), true, gyn, false, T::ZERO, &mut gcols);
                col2im(&g, &gcols, dst);
            }
        }
    }
    ConvGrads { x: gx, w: gw, b: gb }
}
