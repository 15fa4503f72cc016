//! Triplet embedding network over DeepVOX feature maps.

use ndcore::{Bound, ConvSpec, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;

use crate::deepvox_net::{DeepVoxFeature, FEATURE_CHANNELS};
use crate::error::{invalid, DvError, Result};

pub const EMBEDDING_DIM: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedConfig {
    pub layers: Vec<ConvSpec>,
    pub dropout_p: f64,
    pub embedding_dim: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        let chans = [FEATURE_CHANNELS, 64, 96, 128];
        let kernels = [5, 5, 3];
        let dilations = [1, 2, 4];
        Self {
            layers: (0..3)
                .map(|i| ConvSpec::new(chans[i], chans[i + 1], kernels[i], dilations[i]))
                .collect(),
            dropout_p: DEFAULT_DROPOUT,
            embedding_dim: EMBEDDING_DIM,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self, input_len: usize) -> Result<()> {
        if self.layers.is_empty() {
            return Err(invalid("embed: at least one layer required"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(invalid(format!(
                "embed: dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.embedding_dim == 0 {
            return Err(invalid("embed: embedding_dim must be positive"));
        }
        let mut channels = FEATURE_CHANNELS;
        let mut len = input_len;
        for (i, spec) in self.layers.iter().enumerate() {
            spec.validate()?;
            if spec.in_channels != channels {
                return Err(invalid(format!(
                    "embed layer {i}: expects {} input channels, previous layer gives {channels}",
                    spec.in_channels
                )));
            }
            len = spec
                .out_len(len)
                .ok_or_else(|| invalid(format!("embed layer {i}: kernel extent exceeds length {len}")))?;
            channels = spec.out_channels;
        }
        Ok(())
    }

    pub fn last_channels(&self) -> usize {
        self.layers.last().map_or(FEATURE_CHANNELS, |s| s.out_channels)
    }
}

pub fn weight_name(i: usize) -> String {
    format!("embed.conv{i}.weight")
}

pub fn bias_name(i: usize) -> String {
    format!("embed.conv{i}.bias")
}

pub const FC_WEIGHT: &str = "embed.fc.weight";
pub const FC_BIAS: &str = "embed.fc.bias";

pub fn init_params<T: Real>(cfg: &EmbedConfig, rng: &mut impl Rng) -> ParamStore<T> {
    let mut p = ParamStore::new();
    for (i, spec) in cfg.layers.iter().enumerate() {
        let fan_in = spec.in_channels * spec.kernel_size;
        p.insert(weight_name(i), ndcore::lecun_normal(&spec.weight_shape(), fan_in, rng));
        if spec.bias {
            p.insert(bias_name(i), Tensor::zeros(&[spec.out_channels]));
        }
    }
    let c = cfg.last_channels();
    p.insert(FC_WEIGHT, ndcore::lecun_normal(&[cfg.embedding_dim, c], c, rng));
    p.insert(FC_BIAS, Tensor::zeros(&[cfg.embedding_dim]));
    p
}

/// Seed of the alpha-dropout mask of one layer.
pub fn dropout_seed(seed: u64, layer: usize) -> u64 {
    ndcore::rng::substream_seed(seed, "alpha-dropout", &[layer as u64])
}

/// `[40, units]` feature map to a `[embedding_dim]` embedding.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    params: &Bound<T>,
    cfg: &EmbedConfig,
    x: Var,
    training: bool,
    seed: u64,
) -> Result<Var> {
    let mut h = x;
    for (i, spec) in cfg.layers.iter().enumerate() {
        let w = params.var(&weight_name(i))?;
        let b = if spec.bias {
            Some(params.var(&bias_name(i))?)
        } else {
            None
        };
        h = tape.conv1d(h, w, b, spec)?;
        h = tape.selu(h)?;
        h = tape.alpha_dropout(h, cfg.dropout_p, training, dropout_seed(seed, i))?;
    }
    let shape = tape.shape(h).to_vec();
    let len = shape[shape.len() - 1];
    let pooled = tape.avg_pool1d(h, len, len)?;
    let flat = tape.reshape(pooled, &[cfg.last_channels()])?;
    let (w, b) = (params.var(FC_WEIGHT)?, params.var(FC_BIAS)?);
    Ok(tape.linear(flat, w, Some(b))?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("embedding has non-finite values"));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(DvError::Nd(ndcore::NdError::DegenerateEmbedding));
        }
        Ok(Self { values })
    }

    pub fn cosine(&self, other: &Embedding) -> Result<f64> {
        Ok(ndcore::cosine(&self.values, &other.values)?)
    }

    pub fn to_bytes(&self, provenance: &str) -> Vec<u8> {
        let v: Vec<f32> = self.values.iter().map(|&x| x as f32).collect();
        crate::container::encode_embedding(&v, provenance)
    }
}

fn feature_tensor<T: Real>(feature: &DeepVoxFeature) -> Result<Tensor<T>> {
    if feature.channels != FEATURE_CHANNELS {
        return Err(DvError::Length {
            what: "feature channels",
            expected: FEATURE_CHANNELS,
            got: feature.channels,
        });
    }
    Ok(Tensor::from_vec(
        &[feature.channels, feature.units],
        feature.values.iter().map(|&v| T::from_f64c(v)).collect(),
    )?)
}

/// Embedding of one feature map; dropout masks depend only on `seed`.
pub fn embed<T: Real>(
    feature: &DeepVoxFeature,
    params: &ParamStore<T>,
    cfg: &EmbedConfig,
    training: bool,
    seed: u64,
) -> Result<Embedding> {
    let x = feature_tensor::<T>(feature)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = tape.leaf(x, false);
    let y = forward(&mut tape, &bound, cfg, x, training, seed)?;
    Embedding::new(tape.value(y).data().iter().map(|v| v.as_f64()).collect())
}

/// Anchor, positive and negative through the one shared parameter set.
pub fn embed_triplet<T: Real>(
    t: [&DeepVoxFeature; 3],
    params: &ParamStore<T>,
    cfg: &EmbedConfig,
    training: bool,
    seed: u64,
) -> Result<[Embedding; 3]> {
    Ok([
        embed(t[0], params, cfg, training, seed)?,
        embed(t[1], params, cfg, training, seed)?,
        embed(t[2], params, cfg, training, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config() {
        let cfg = EmbedConfig::default();
        cfg.validate(200).unwrap();
        assert!(cfg.validate(10).is_err());
        assert_eq!(cfg.last_channels(), 128);
    }

    #[test]
    fn zero_embedding_is_rejected() {
        assert!(Embedding::new(vec![0.0; 4]).is_err());
        assert!(Embedding::new(vec![f64::NAN, 1.0]).is_err());
    }
}
