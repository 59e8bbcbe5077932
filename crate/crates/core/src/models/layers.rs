use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Bound, ParamId, ParamStore, Real, Shape, Tensor, Var};
use crate::error::Result;

/// Deterministic Kaiming-style initializer.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Normal(0, gain * sqrt(2 / fan_in)) weights of the given shape.
    pub fn kaiming<T: Real>(&mut self, shape: Shape, gain: f64) -> Tensor<T> {
        let fan_in = (shape.c * shape.h * shape.w) as f64;
        let std = gain * (2.0 / fan_in).sqrt();
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::from_f64(std * z)
            })
            .collect();
        Tensor::from_vec(shape, data).expect("length matches shape")
    }
}

/// Square convolution with "same"-style zero padding `(k - 1) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dLayer {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
    ) -> Self {
        let w = init.kaiming(Shape::new(out_channels, in_channels, kernel, kernel), gain);
        let weight = store.insert(format!("{name}.weight"), w);
        let bias = Some(store.insert(format!("{name}.bias"), Tensor::zeros(Shape::new(1, out_channels, 1, 1))));
        Conv2dLayer {
            name: name.to_string(),
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad: (kernel - 1) / 2,
        }
    }

    pub fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.conv2d(p.get(self.weight), self.bias.map(|b| p.get(b)), self.stride, self.pad)
    }
}
