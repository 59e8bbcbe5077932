use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const ADAM_DEFAULT: OptimizerKind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

pub const ADAM_DEFAULT_LR: f64 = 2e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Real = f32> {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// First and second moments, one per parameter (Adam only).
    pub moments: Vec<(Tensor<T>, Tensor<T>)>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn sgd(lr: f64) -> Self {
        OptimizerState {
            kind: OptimizerKind::Sgd,
            lr,
            moments: Vec::new(),
            step: 0,
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerState {
            kind: OptimizerKind::ADAM_DEFAULT,
            lr,
            moments: Vec::new(),
            step: 0,
        }
    }

    /// Applies one update. `grads` is aligned with the parameter order of `params`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid(
                "optimizer_step",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (i, g) in grads.iter().enumerate() {
            match g {
                None => return Err(Error::MissingGrad(params.name(i).to_string())),
                Some(g) if g.shape() != params.value(i).shape() => {
                    return Err(Error::shape(
                        "optimizer_step",
                        format!("gradient {} for `{}` {}", g.shape(), params.name(i), params.value(i).shape()),
                    ))
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let lr = T::from_f64(self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for (i, g) in grads.iter().enumerate() {
                    let g = g.as_ref().unwrap();
                    for (p, &gv) in params.value_mut(i).data_mut().iter_mut().zip(g.data()) {
                        *p -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.moments.is_empty() {
                    self.moments = (0..params.len())
                        .map(|i| {
                            let s = params.value(i).shape();
                            (Tensor::zeros(s), Tensor::zeros(s))
                        })
                        .collect();
                }
                let t = self.step as i32;
                let bc1 = T::from_f64(1.0 - beta1.powi(t));
                let bc2 = T::from_f64(1.0 - beta2.powi(t));
                let (b1, b2, e) = (T::from_f64(beta1), T::from_f64(beta2), T::from_f64(eps));
                for (i, g) in grads.iter().enumerate() {
                    let g = g.as_ref().unwrap();
                    let (m, v) = &mut self.moments[i];
                    let p = params.value_mut(i).data_mut();
                    for (((p, m), v), &gv) in p
                        .iter_mut()
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                        .zip(g.data())
                    {
                        *m = b1 * *m + (T::ONE - b1) * gv;
                        *v = b2 * *v + (T::ONE - b2) * gv * gv;
                        let mh = *m / bc1;
                        let vh = *v / bc2;
                        *p -= lr * mh / (vh.sqrt() + e);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Shape;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::full(Shape::SCALAR, v));
        s
    }

    #[test]
    fn sgd_step() {
        let mut p = store(1.0);
        let mut opt = OptimizerState::sgd(0.1);
        opt.step(&mut p, &[Some(Tensor::scalar(2.0))]).unwrap();
        assert!((p.value(0).data()[0] - 0.8).abs() < 1e-12);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn sgd_zero_grad_is_noop() {
        let mut p = store(0.37);
        let mut opt = OptimizerState::sgd(0.5);
        opt.step(&mut p, &[Some(Tensor::scalar(0.0))]).unwrap();
        assert_eq!(p.value(0).data()[0], 0.37);
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_gradient() {
        for g in [3.5, -0.02] {
            let mut p = store(1.0);
            let mut opt = OptimizerState::adam(ADAM_DEFAULT_LR);
            opt.step(&mut p, &[Some(Tensor::scalar(g))]).unwrap();
            let delta = p.value(0).data()[0] - 1.0;
            // m_hat = g and v_hat = g^2 on the first step.
            let expected = -ADAM_DEFAULT_LR * g / (g.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-15, "{delta} vs {expected}");
            assert!(delta.signum() == -g.signum());
        }
    }

    #[test]
    fn missing_grad_is_rejected() {
        let mut p = store(1.0);
        let mut opt = OptimizerState::<f64>::adam(1e-3);
        assert!(matches!(opt.step(&mut p, &[None]), Err(Error::MissingGrad(n)) if n == "p"));
        assert_eq!(opt.step, 0);
    }
}
