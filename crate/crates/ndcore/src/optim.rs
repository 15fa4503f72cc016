//! First-order optimizers over a [`ParamStore`].

use crate::error::{NdError, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Adaptive moment estimation.
    Adam,
    /// Plain SGD with heavy-ball momentum.
    SgdMomentum,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" | "sgd_momentum" => Ok(Self::SgdMomentum),
            other => Err(format!("unknown optimizer `{other}` (expected adam|sgd_momentum)")),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::SgdMomentum => "sgd_momentum",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    pub step: u64,
    /// First moment (Adam) or velocity (SGD), aligned with the store order.
    pub m: Vec<Tensor<T>>,
    /// Second moment (Adam only).
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update; `grads` must align with `params` order.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(NdError::invalid(
                "optimizer",
                format!("expected {} gradients, got {}", params.len(), grads.len()),
            ));
        }
        self.step += 1;
        let lr = T::from_f64c(self.lr);
        match self.kind {
            OptimizerKind::Adam => {
                let (b1, b2) = (T::from_f64c(self.beta1), T::from_f64c(self.beta2));
                let bc1 = T::from_f64c(1.0 - self.beta1.powi(self.step as i32));
                let bc2 = T::from_f64c(1.0 - self.beta2.powi(self.step as i32));
                let eps = T::from_f64c(self.eps);
                for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    for (((p, &g), m), v) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let mh = *m / bc1;
                        let vh = *v / bc2;
                        *p = *p - lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::SgdMomentum => {
                let mu = T::from_f64c(self.momentum);
                for ((p, g), m) in params.tensors_mut().zip(grads).zip(&mut self.m) {
                    for ((p, &g), m) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()) {
                        *m = mu * *m + g;
                        *p = *p - lr * *m;
                    }
                }
            }
        }
        Ok(())
    }
}
