use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Floyd-Steinberg error diffusion in raster order. A pixel turns on when its
/// accumulated value is >= 0.5; error leaving the frame is dropped.
pub fn floyd_steinberg(gray: &Tensor) -> Tensor {
    let s = gray.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let (h, w) = (s.h, s.w);
            let mut buf: Vec<f64> = gray.plane(n, c).iter().map(|&v| v as f64).collect();
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                for x in 0..w {
                    let old = buf[y * w + x];
                    let new = if old >= 0.5 { 1.0 } else { 0.0 };
                    dst[y * w + x] = new as f32;
                    let err = old - new;
                    let mut push = |yy: usize, xx: isize, wgt: f64| {
                        if yy < h && xx >= 0 && (xx as usize) < w {
                            buf[yy * w + xx as usize] += err * wgt;
                        }
                    };
                    let xi = x as isize;
                    push(y, xi + 1, 7.0 / 16.0);
                    push(y + 1, xi - 1, 3.0 / 16.0);
                    push(y + 1, xi, 5.0 / 16.0);
                    push(y + 1, xi + 1, 1.0 / 16.0);
                }
            }
        }
    }
    out
}

/// Bayer index matrix of side `2^order`, built by the usual recurrence
/// `[[4M, 4M+2], [4M+3, 4M+1]]` from `[[0]]`.
pub fn bayer_matrix(order: u32) -> Result<Vec<Vec<u32>>> {
    if !(1..=3).contains(&order) {
        return Err(Error::invalid("bayer_matrix", format!("order must be 1, 2 or 3, got {order}")));
    }
    let mut m = vec![vec![0u32]];
    for _ in 0..order {
        let k = m.len();
        let mut next = vec![vec![0u32; 2 * k]; 2 * k];
        for (i, row) in m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                next[i][j] = 4 * v;
                next[i][j + k] = 4 * v + 2;
                next[i + k][j] = 4 * v + 3;
                next[i + k][j + k] = 4 * v + 1;
            }
        }
        m = next;
    }
    Ok(m)
}

/// Ordered dithering: on iff `gray > (B[i mod n][j mod n] + 0.5) / n^2`.
pub fn bayer_dither(gray: &Tensor, order: u32) -> Result<Tensor> {
    let m = bayer_matrix(order)?;
    let k = m.len();
    let levels = (k * k) as f32;
    Ok(Tensor::from_fn(gray.shape(), |n, c, y, x| {
        let t = (m[y % k][x % k] as f32 + 0.5) / levels;
        if gray.at(n, c, y, x) > t {
            1.0
        } else {
            0.0
        }
    }))
}
