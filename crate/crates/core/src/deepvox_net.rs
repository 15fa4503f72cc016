//! Learned filterbank: stacked dilated 1-D convolutions applied to every
//! speech unit independently, reducing each 160-sample unit to 40 responses.

use ndcore::{Bound, ConvSpec, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{SpeechFrame, SAMPLE_RATE, UNIT_LEN};
use crate::error::{invalid, DvError, Result};

pub const FEATURE_CHANNELS: usize = 40;
pub const RESPONSE_FFT_LEN: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct DeepVoxConfig {
    pub layers: Vec<ConvSpec>,
    pub unit_length: usize,
}

impl Default for DeepVoxConfig {
    fn default() -> Self {
        let chans = [1, 16, 32, 40, 40];
        let kernels = [7, 5, 5, 3];
        let dilations = [1, 2, 4, 2];
        let layers = (0..4)
            .map(|i| ConvSpec::new(chans[i], chans[i + 1], kernels[i], dilations[i]))
            .collect();
        Self {
            layers,
            unit_length: UNIT_LEN,
        }
    }
}

impl DeepVoxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(invalid("deepvox: at least one layer required"));
        }
        let mut channels = 1;
        let mut len = self.unit_length;
        for (i, spec) in self.layers.iter().enumerate() {
            spec.validate()?;
            if spec.in_channels != channels {
                return Err(invalid(format!(
                    "deepvox layer {i}: expects {} input channels, previous layer gives {channels}",
                    spec.in_channels
                )));
            }
            len = spec
                .out_len(len)
                .ok_or_else(|| invalid(format!("deepvox layer {i}: kernel extent exceeds length {len}")))?;
            channels = spec.out_channels;
        }
        if channels != FEATURE_CHANNELS {
            return Err(invalid(format!(
                "deepvox: last layer must have {FEATURE_CHANNELS} channels, got {channels}"
            )));
        }
        Ok(())
    }

    /// Samples spanned by one output tap of the convolution stack.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .layers
            .iter()
            .map(|s| (s.kernel_size - 1) * s.dilation)
            .sum::<usize>()
    }

    /// Length of the time axis inside a unit after the convolutions.
    pub fn stack_out_len(&self) -> Option<usize> {
        self.layers.iter().try_fold(self.unit_length, |l, s| s.out_len(l))
    }
}

pub fn weight_name(i: usize) -> String {
    format!("deepvox.conv{i}.weight")
}

pub fn bias_name(i: usize) -> String {
    format!("deepvox.conv{i}.bias")
}

/// LeCun-normal weights, zero biases.
pub fn init_params<T: Real>(cfg: &DeepVoxConfig, rng: &mut impl Rng) -> ParamStore<T> {
    let mut p = ParamStore::new();
    for (i, spec) in cfg.layers.iter().enumerate() {
        let fan_in = spec.in_channels * spec.kernel_size;
        p.insert(weight_name(i), ndcore::lecun_normal(&spec.weight_shape(), fan_in, rng));
        if spec.bias {
            p.insert(bias_name(i), Tensor::zeros(&[spec.out_channels]));
        }
    }
    p
}

/// Convolution stack without the final pooling: `[N, 1, L] -> [N, 40, L']`.
pub fn forward_stack<T: Real>(tape: &mut Tape<T>, params: &Bound<T>, cfg: &DeepVoxConfig, x: Var) -> Result<Var> {
    let mut h = x;
    for (i, spec) in cfg.layers.iter().enumerate() {
        let w = params.var(&weight_name(i))?;
        let b = if spec.bias {
            Some(params.var(&bias_name(i))?)
        } else {
            None
        };
        h = tape.conv1d(h, w, b, spec)?;
        if i + 1 < cfg.layers.len() {
            h = tape.selu(h)?;
        }
    }
    Ok(h)
}

/// `[N, 1, L]` units to `[N, 40]` responses (average over the remaining time axis).
pub fn forward_units<T: Real>(tape: &mut Tape<T>, params: &Bound<T>, cfg: &DeepVoxConfig, x: Var) -> Result<Var> {
    let h = forward_stack(tape, params, cfg, x)?;
    let shape = tape.shape(h).to_vec();
    let len = shape[2];
    let pooled = tape.avg_pool1d(h, len, len)?;
    Ok(tape.reshape(pooled, &[shape[0], shape[1]])?)
}

/// Places a frame on the tape as `[units, 1, unit_length]`.
pub fn frame_input<T: Real>(tape: &mut Tape<T>, frame: &SpeechFrame, requires_grad: bool) -> Result<Var> {
    let (rows, cols) = (frame.rows, frame.cols);
    let mut data = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            data[c * rows + r] = T::from_f64c(frame.data[r * cols + c]);
        }
    }
    Ok(tape.leaf(Tensor::from_vec(&[cols, 1, rows], data)?, requires_grad))
}

/// Full-frame forward on a tape: `[40, units]` feature map.
pub fn forward_frame<T: Real>(tape: &mut Tape<T>, params: &Bound<T>, cfg: &DeepVoxConfig, x: Var) -> Result<Var> {
    let per_unit = forward_units(tape, params, cfg, x)?;
    Ok(tape.transpose(per_unit)?)
}

/// Learned filterbank responses of one frame: 40 channels by units.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepVoxFeature {
    /// Row-major `channels x units`.
    pub values: Vec<f64>,
    pub channels: usize,
    pub units: usize,
    pub source_id: String,
}

impl DeepVoxFeature {
    pub fn get(&self, ch: usize, unit: usize) -> f64 {
        self.values[ch * self.units + unit]
    }

    pub fn column(&self, unit: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, unit)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        crate::container::encode_matrix(self.channels, self.units, &self.values, &self.source_id, "deepvox")
    }
}

fn check_frame(frame: &SpeechFrame, cfg: &DeepVoxConfig) -> Result<()> {
    if frame.rows != cfg.unit_length {
        return Err(DvError::Length {
            what: "frame rows",
            expected: cfg.unit_length,
            got: frame.rows,
        });
    }
    if frame.cols == 0 {
        return Err(invalid("frame has no units"));
    }
    Ok(())
}

pub fn extract_features<T: Real>(
    frame: &SpeechFrame,
    params: &ParamStore<T>,
    cfg: &DeepVoxConfig,
) -> Result<DeepVoxFeature> {
    check_frame(frame, cfg)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = frame_input(&mut tape, frame, false)?;
    let y = forward_frame(&mut tape, &bound, cfg, x)?;
    let t = tape.value(y);
    Ok(DeepVoxFeature {
        values: t.data().iter().map(|v| v.as_f64()).collect(),
        channels: t.shape()[0],
        units: t.shape()[1],
        source_id: format!("{}/{}", frame.source_id, frame.clip_id),
    })
}

/// One unit through the convolution stack only: `[40][L']` responses.
pub fn stack_response<T: Real>(unit: &[f64], params: &ParamStore<T>, cfg: &DeepVoxConfig) -> Result<Vec<Vec<f64>>> {
    if unit.len() != cfg.unit_length {
        return Err(DvError::Length {
            what: "unit length",
            expected: cfg.unit_length,
            got: unit.len(),
        });
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = Tensor::from_vec(&[1, 1, unit.len()], unit.iter().map(|&v| T::from_f64c(v)).collect())?;
    let x = tape.leaf(x, false);
    let y = forward_stack(&mut tape, &bound, cfg, x)?;
    let t = tape.value(y);
    let len = t.shape()[2];
    Ok(t.data()
        .chunks(len)
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect())
}

/// Linearized composition of the first `upto + 1` layers, SELUs and biases
/// dropped. Entry `o` holds correlation taps `h` such that the composed
/// stack computes `y_o[t] = sum_m h[m] x[t + m]`.
pub fn compose_layers<T: Real>(params: &ParamStore<T>, cfg: &DeepVoxConfig, upto: usize) -> Result<Vec<Vec<f64>>> {
    if upto >= cfg.layers.len() {
        return Err(invalid(format!(
            "layer index {upto} out of range (0..{})",
            cfg.layers.len()
        )));
    }
    let mut current: Vec<Vec<f64>> = vec![vec![1.0]];
    for (i, spec) in cfg.layers.iter().take(upto + 1).enumerate() {
        let w = params.require(&weight_name(i))?;
        if w.shape() != spec.weight_shape() {
            return Err(invalid(format!(
                "weight {i} has shape {:?}, expected {:?}",
                w.shape(),
                spec.weight_shape()
            )));
        }
        let (ci, k, d) = (spec.in_channels, spec.kernel_size, spec.dilation);
        let in_len = current[0].len();
        let out_len = in_len + (k - 1) * d;
        let mut next = vec![vec![0.0; out_len]; spec.out_channels];
        for (o, out) in next.iter_mut().enumerate() {
            for (c, prev) in current.iter().enumerate() {
                for j in 0..k {
                    let wv = w.data()[(o * ci + c) * k + j].as_f64();
                    for (m, &h) in prev.iter().enumerate() {
                        out[j * d + m] += wv * h;
                    }
                }
            }
        }
        current = next;
    }
    Ok(current)
}

/// One impulse response per output channel of the whole stack.
pub fn effective_filterbank<T: Real>(params: &ParamStore<T>, cfg: &DeepVoxConfig) -> Result<Vec<Vec<f64>>> {
    compose_layers(params, cfg, cfg.layers.len() - 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyResponse {
    pub freqs_hz: Vec<f64>,
    pub magnitude: Vec<f64>,
}

/// Magnitude spectra of `filters`, zero-padded to 1024 points and summed,
/// over the bins from 0 Hz to Nyquist.
pub fn summed_magnitude(filters: &[Vec<f64>]) -> Result<FrequencyResponse> {
    let n = RESPONSE_FFT_LEN;
    let bins = n / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut magnitude = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for f in filters {
        if f.len() > n {
            return Err(invalid(format!(
                "filter of {} taps exceeds {n}-point transform",
                f.len()
            )));
        }
        buf.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
        for (z, &v) in buf.iter_mut().zip(f) {
            z.re = v;
        }
        fft.process(&mut buf);
        for (m, z) in magnitude.iter_mut().zip(&buf) {
            *m += z.norm();
        }
    }
    let fs = SAMPLE_RATE as f64;
    Ok(FrequencyResponse {
        freqs_hz: (0..bins).map(|k| k as f64 * fs / n as f64).collect(),
        magnitude,
    })
}

/// Cumulative response of the linear composition up to `layer_index`.
pub fn layer_frequency_response<T: Real>(
    params: &ParamStore<T>,
    cfg: &DeepVoxConfig,
    layer_index: usize,
) -> Result<FrequencyResponse> {
    summed_magnitude(&compose_layers(params, cfg, layer_index)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn default_config_is_valid() {
        let cfg = DeepVoxConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.receptive_field(), 35);
        assert_eq!(cfg.stack_out_len(), Some(126));
    }

    #[test]
    fn config_rejects_broken_chains() {
        let mut cfg = DeepVoxConfig::default();
        cfg.layers[1].in_channels = 8;
        assert!(cfg.validate().is_err());
        let mut cfg = DeepVoxConfig::default();
        cfg.layers[3].out_channels = 39;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn feature_shape() {
        let cfg = DeepVoxConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = init_params::<f32>(&cfg, &mut rng);
        let frame = SpeechFrame::zeros(160, 200);
        let f = extract_features(&frame, &p, &cfg).unwrap();
        assert_eq!((f.channels, f.units), (40, 200));
        assert!(extract_features(&SpeechFrame::zeros(150, 200), &p, &cfg).is_err());
    }
}
