//! Minimal reverse-mode differentiable tensor engine.
//!
//! Everything is dense NCHW. A [`Graph`] is the tape; [`Var`] handles are
//! cheap copies that refer to nodes on it. Parameters live outside the graph
//! in a [`ParamStore`] and are bound to a fresh graph on every step:
//!
//! ```
//! use nibkit::autodiff::{Graph, Tensor, Shape};
//!
//! let g = Graph::<f64>::new();
//! let x = g.param(Tensor::from_rows(&[&[1.0, -2.0], &[3.0, 0.5]]).unwrap());
//! let loss = x.mul(x).unwrap().sum();
//! loss.backward().unwrap();
//! assert_eq!(x.grad().unwrap().data(), &[2.0, -4.0, 6.0, 1.0]);
//! ```

mod blur;
mod conv;
pub mod dct;
mod graph;
mod optim;
mod params;
mod tensor;

pub use blur::gaussian_kernel;
pub use conv::output_size as conv_output_size;
pub use dct::dct_matrix;
pub use graph::{Graph, Var};
pub use optim::{OptimizerKind, OptimizerState, ADAM_DEFAULT_LR};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::{Real, Shape, Tensor};

/// Non-differentiable conveniences on plain tensors, routed through a
/// throwaway graph so that they share the exact kernels of the tape ops.
impl<T: Real> Tensor<T> {
    pub fn dct2(&self) -> Tensor<T> {
        dct::apply(self, false)
    }

    pub fn idct2(&self) -> Tensor<T> {
        dct::apply(self, true)
    }

    pub fn gaussian_blur(&self, sigma: f64, ksize: usize) -> crate::Result<Tensor<T>> {
        let g = Graph::new();
        let v = g.constant(self.clone()).gaussian_blur(sigma, ksize)?;
        Ok((*v.value()).clone())
    }

    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> crate::Result<Tensor<T>> {
        conv::forward(self, weight, bias, stride, pad)
    }
}
