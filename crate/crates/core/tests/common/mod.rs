#![allow(dead_code)]

pub mod oracle;

use deepvox::audio::SpeechFrame;
use deepvox::deepvox_net::DeepVoxConfig;
use deepvox::embed_net::EmbedConfig;
use deepvox::model::ModelConfig;
use deepvox::ndcore::ConvSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_frame(rows: usize, cols: usize, seed: u64) -> SpeechFrame {
    let mut r = rng(seed);
    let data = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
    SpeechFrame::new(data, rows, cols, "rand", format!("f{seed}")).unwrap()
}

/// Two-layer filterbank, cheap enough for many forward passes.
pub fn small_deepvox() -> DeepVoxConfig {
    DeepVoxConfig {
        layers: vec![ConvSpec::new(1, 4, 5, 1), ConvSpec::new(4, 40, 3, 2)],
        unit_length: 160,
    }
}

pub fn small_embed(dim: usize) -> EmbedConfig {
    EmbedConfig {
        layers: vec![ConvSpec::new(40, 12, 3, 1), ConvSpec::new(12, 16, 3, 2)],
        dropout_p: 0.05,
        embedding_dim: dim,
    }
}

pub fn small_model() -> ModelConfig {
    ModelConfig {
        deepvox: small_deepvox(),
        embed: small_embed(32),
    }
}
