//! DeepVOX learned filterbank and triplet speaker embedding.

pub mod ablation;
pub mod audio;
pub mod container;
pub mod corpus;
pub mod deepvox_net;
pub mod embed_net;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod mining;
pub mod model;
pub mod objective;
pub mod synth;
pub mod trainer;
pub mod wav;

pub use error::{DvError, Result};
pub use ndcore;
