//! Minimal reverse-mode differentiable core for dilated 1-D convolutional
//! networks: tensors, a gradient tape, optimizers, a finite-difference
//! gradient checker and the `DVCK` parameter container.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod par;
pub mod params;
mod real;
pub mod rng;
mod tape;
mod tensor;

pub use error::{NdError, Result};
pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{lecun_normal, Bound, ParamStore};
pub use real::Real;
pub use tape::{cosine, BackwardMode, ConvSpec, Gradients, Tape, Var, SELU_ALPHA, SELU_LAMBDA};
pub use tensor::Tensor;
