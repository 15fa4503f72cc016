//! The combined frame-to-embedding network and its parameter store.

use ndcore::par::Exec;
use ndcore::{Bound, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;

use crate::audio::SpeechFrame;
use crate::deepvox_net::{self, DeepVoxConfig};
use crate::embed_net::{self, EmbedConfig, Embedding};
use crate::error::{DvError, Result};

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub deepvox: DeepVoxConfig,
    pub embed: EmbedConfig,
}

impl ModelConfig {
    /// Checks both stacks for frames of `units` speech units.
    pub fn validate(&self, units: usize) -> Result<()> {
        self.deepvox.validate()?;
        self.embed.validate(units)
    }
}

pub fn init_params_with<T: Real>(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamStore<T> {
    let mut p = deepvox_net::init_params(&cfg.deepvox, rng);
    p.merge(&embed_net::init_params(&cfg.embed, rng));
    p
}

/// Fresh parameters for both stacks, drawn from the `init` substream of `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamStore<f32> {
    init_params_with(cfg, &mut ndcore::rng::substream(seed, "init", &[]))
}

/// Linear classification head used only while pretraining.
pub fn init_head<T: Real>(embedding_dim: usize, classes: usize, rng: &mut impl Rng) -> ParamStore<T> {
    let mut p = ParamStore::new();
    p.insert(
        HEAD_WEIGHT,
        ndcore::lecun_normal(&[classes, embedding_dim], embedding_dim, rng),
    );
    p.insert(HEAD_BIAS, Tensor::zeros(&[classes]));
    p
}

/// Frame leaf to embedding `[embedding_dim]`.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    params: &Bound<T>,
    cfg: &ModelConfig,
    frame: Var,
    training: bool,
    seed: u64,
) -> Result<Var> {
    let feat = deepvox_net::forward_frame(tape, params, &cfg.deepvox, frame)?;
    embed_net::forward(tape, params, &cfg.embed, feat, training, seed)
}

fn to_embedding<T: Real>(t: &Tensor<T>) -> Result<Embedding> {
    Embedding::new(t.data().iter().map(|v| v.as_f64()).collect())
}

/// Evaluation-mode embedding of one frame.
pub fn embed_frame<T: Real>(frame: &SpeechFrame, params: &ParamStore<T>, cfg: &ModelConfig) -> Result<Embedding> {
    if frame.rows != cfg.deepvox.unit_length {
        return Err(DvError::Length {
            what: "frame rows",
            expected: cfg.deepvox.unit_length,
            got: frame.rows,
        });
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = deepvox_net::frame_input(&mut tape, frame, false)?;
    let y = forward(&mut tape, &bound, cfg, x, false, 0)?;
    to_embedding(tape.value(y))
}

/// Evaluation-mode embeddings of many frames, in input order.
pub fn embed_frames<T: Real>(
    frames: &[SpeechFrame],
    params: &ParamStore<T>,
    cfg: &ModelConfig,
) -> Result<Vec<Embedding>> {
    embed_frames_with(Exec::default(), frames, params, cfg)
}

pub fn embed_frames_with<T: Real>(
    exec: Exec,
    frames: &[SpeechFrame],
    params: &ParamStore<T>,
    cfg: &ModelConfig,
) -> Result<Vec<Embedding>> {
    ndcore::par::try_map_indexed_with(exec, frames.len(), |i| embed_frame(&frames[i], params, cfg))
}

/// Arithmetic mean of the per-frame embeddings of one utterance.
pub fn mean_embedding(embs: &[Embedding]) -> Result<Embedding> {
    let first = embs
        .first()
        .ok_or_else(|| DvError::Insufficient("utterance has no frames".into()))?;
    let mut acc = vec![0.0; first.values.len()];
    for e in embs {
        for (a, v) in acc.iter_mut().zip(&e.values) {
            *a += v;
        }
    }
    let n = embs.len() as f64;
    Embedding::new(acc.into_iter().map(|v| v / n).collect())
}

pub fn utterance_embedding<T: Real>(
    frames: &[SpeechFrame],
    params: &ParamStore<T>,
    cfg: &ModelConfig,
) -> Result<Embedding> {
    let embs: Result<Vec<_>> = frames.iter().map(|f| embed_frame(f, params, cfg)).collect();
    mean_embedding(&embs?)
}
