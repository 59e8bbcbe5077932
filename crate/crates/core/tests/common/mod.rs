#![allow(dead_code)]

use nibkit::autodiff::{Graph, Shape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-4;

/// Deterministic pseudo-random tensor in `[lo, hi)`.
pub fn tensor(shape: [usize; 4], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    Tensor::from_fn(Shape::new(shape[0], shape[1], shape[2], shape[3]), |_, _, _, _| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        lo + (hi - lo) * ((s >> 11) as f64 / (1u64 << 53) as f64)
    })
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences, for every input coordinate. Returns the worst error measured
/// as `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn gradcheck(
    inputs: &[Tensor<f64>],
    f: impl for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> nibkit::Result<Var<'g, f64>>,
) -> f64 {
    let eval = |xs: &[Tensor<f64>]| -> (f64, Vec<Tensor<f64>>) {
        let g = Graph::<f64>::new();
        let vars: Vec<_> = xs.iter().map(|x| g.param(x.clone())).collect();
        let y = f(&g, &vars).expect("function evaluates");
        assert_eq!(y.shape(), Shape::SCALAR, "gradcheck needs a scalar output");
        y.backward().expect("backward");
        let grads = vars
            .iter()
            .zip(xs)
            .map(|(v, x)| v.grad().unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect();
        (y.item(), grads)
    };
    let (_, analytic) = eval(inputs);
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        for i in 0..x.data().len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * FD_STEP);
            let a = analytic[k].data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

/// Weighted sum with fixed pseudo-random weights, so every output element
/// contributes a distinct gradient.
pub fn probe_sum<'g>(g: &'g Graph<f64>, y: Var<'g, f64>, seed: u64) -> nibkit::Result<Var<'g, f64>> {
    let s = y.shape();
    let w = g.constant(tensor([s.n, s.c, s.h, s.w], seed, -1.0, 1.0));
    Ok(y.mul(w)?.sum())
}
