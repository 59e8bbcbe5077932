//! Reverse-mode gradients of a small conv + DCT expression checked against
//! central finite differences in f64.

use nibkit::autodiff::{Graph, Tensor};

fn loss(x: &Tensor<f64>, w: &Tensor<f64>) -> nibkit::Result<(f64, Tensor<f64>)> {
    let g = Graph::<f64>::new();
    let xv = g.param(x.clone());
    let wv = g.constant(w.clone());
    let y = xv.conv2d(wv, None, 1, 1)?.tanh().dct2().abs().mean();
    y.backward()?;
    Ok((y.item(), xv.grad().expect("tracked input")))
}

fn main() -> nibkit::Result<()> {
    let x = Tensor::<f64>::from_fn([1, 1, 6, 6], |_, _, y, x| ((x * 3 + y * 5) % 7) as f64 / 7.0 - 0.4);
    let w = Tensor::<f64>::from_fn([2, 1, 3, 3], |o, _, y, x| (o as f64 + 1.0) * 0.1 * (y as f64 - x as f64 + 0.5));
    let (_, analytic) = loss(&x, &w)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..x.data().len() {
        let (mut p, mut m) = (x.clone(), x.clone());
        p.data_mut()[i] += h;
        m.data_mut()[i] -= h;
        let numeric = (loss(&p, &w)?.0 - loss(&m, &w)?.0) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    println!("max relative error over {} inputs: {worst:.2e}", x.data().len());
    Ok(())
}
