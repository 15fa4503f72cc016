//! Relevance analysis of the learned filterbank: guided backpropagation,
//! spectral overlap between input and relevance, and an autocorrelation
//! pitch estimator.

use ndcore::{BackwardMode, ParamStore, Real, Tape, Tensor};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{hamming_window, SpeechFrame, CLIP_LEN, SAMPLE_RATE, UNIT_STRIDE};
use crate::deepvox_net::{self, DeepVoxConfig, FEATURE_CHANNELS};
use crate::error::{invalid, DvError, Result};

pub const PSD_SEGMENT: usize = 256;
pub const BANDS_HZ: [(f64, f64); 4] = [(0.0, 500.0), (500.0, 1000.0), (1000.0, 2000.0), (2000.0, 4000.0)];
pub const VOICING_THRESHOLD: f64 = 0.3;
/// Candidate peaks within this fraction of the best one win if they sit at a
/// shorter lag, which guards against picking a sub-harmonic.
const OCTAVE_RATIO: f64 = 0.9;
/// Just inside the Hamming window's highest sidelobe.
pub const LEAKAGE_FLOOR_DB: f64 = -40.0;
/// First null of the pre-pitch smoothing filter.
const PITCH_SMOOTH_HZ: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureRef {
    Index(usize),
    Mean,
}

/// Relevance over the entries of a speech frame (`rows x cols`, row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceSignal {
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub feature: FeatureRef,
}

impl RelevanceSignal {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn to_frame(&self, source_id: &str) -> SpeechFrame {
        let clip = match self.feature {
            FeatureRef::Index(i) => format!("relevance{i}"),
            FeatureRef::Mean => "relevance-mean".into(),
        };
        SpeechFrame {
            data: self.values.clone(),
            rows: self.rows,
            cols: self.cols,
            source_id: source_id.to_owned(),
            clip_id: clip,
        }
    }
}

/// Input gradients of `sum(seed * features)` for one seed per entry of
/// `seeds`, sharing a single forward pass.
fn backprop_many<T: Real>(
    params: &ParamStore<T>,
    cfg: &DeepVoxConfig,
    frame: &SpeechFrame,
    seeds: &[Vec<f64>],
    mode: BackwardMode,
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = deepvox_net::frame_input(&mut tape, frame, true)?;
    let y = deepvox_net::forward_frame(&mut tape, &bound, cfg, x)?;
    let shape = tape.shape(y).to_vec();
    let (rows, cols) = (frame.rows, frame.cols);
    seeds
        .iter()
        .map(|s| {
            let seed = Tensor::from_vec(&shape, s.iter().map(|&v| T::from_f64c(v)).collect())?;
            let g = tape.backward_with(vec![(y, seed)], mode)?;
            let mut out = vec![0.0; rows * cols];
            if let Some(gx) = g.get(x) {
                for c in 0..cols {
                    for r in 0..rows {
                        out[r * cols + c] = gx.data()[c * rows + r].as_f64();
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

fn check_indices(frame: &SpeechFrame, feature: usize, unit: Option<usize>) -> Result<()> {
    if feature >= FEATURE_CHANNELS {
        return Err(invalid(format!(
            "feature index {feature} out of range 0..{FEATURE_CHANNELS}"
        )));
    }
    if let Some(u) = unit {
        if u >= frame.cols {
            return Err(invalid(format!("unit index {u} out of range 0..{}", frame.cols)));
        }
    }
    Ok(())
}

/// Relevance of output `(feature, unit)` with the chosen backward rule.
pub fn backprop_relevance<T: Real>(
    params: &ParamStore<T>,
    cfg: &DeepVoxConfig,
    frame: &SpeechFrame,
    feature: usize,
    unit: usize,
    mode: BackwardMode,
) -> Result<RelevanceSignal> {
    check_indices(frame, feature, Some(unit))?;
    let mut seed = vec![0.0; FEATURE_CHANNELS * frame.cols];
    seed[feature * frame.cols + unit] = 1.0;
    let values = backprop_many(params, cfg, frame, &[seed], mode)?.remove(0);
    Ok(RelevanceSignal {
        values,
        rows: frame.rows,
        cols: frame.cols,
        feature: FeatureRef::Index(feature),
    })
}

/// Guided backpropagation from one output entry.
pub fn guided_backprop<T: Real>(
    params: &ParamStore<T>,
    cfg: &DeepVoxConfig,
    frame: &SpeechFrame,
    feature: usize,
    unit: usize,
) -> Result<RelevanceSignal> {
    backprop_relevance(params, cfg, frame, feature, unit, BackwardMode::Guided)
}

/// Per-feature relevance summed over every unit position. Units never share
/// gradient paths, so one seed row of ones yields, in column `u`, exactly the
/// relevance of output `(feature, u)`.
pub fn feature_relevance<T: Real>(
    params: &ParamStore<T>,
    cfg: &DeepVoxConfig,
    frame: &SpeechFrame,
    features: &[usize],
    mode: BackwardMode,
) -> Result<Vec<RelevanceSignal>> {
    for &f in features {
        check_indices(frame, f, None)?;
    }
    let seeds: Vec<Vec<f64>> = features
        .iter()
        .map(|&f| {
            let mut s = vec![0.0; FEATURE_CHANNELS * frame.cols];
            s[f * frame.cols..(f + 1) * frame.cols].fill(1.0);
            s
        })
        .collect();
    Ok(backprop_many(params, cfg, frame, &seeds, mode)?
        .into_iter()
        .zip(features)
        .map(|(values, &f)| RelevanceSignal {
            values,
            rows: frame.rows,
            cols: frame.cols,
            feature: FeatureRef::Index(f),
        })
        .collect())
}

/// Arithmetic mean of signals of equal shape.
pub fn average_signals(signals: &[RelevanceSignal]) -> Result<RelevanceSignal> {
    let first = signals
        .first()
        .ok_or_else(|| invalid("no relevance signals to average"))?;
    let mut values = vec![0.0; first.values.len()];
    for s in signals {
        if s.values.len() != values.len() {
            return Err(invalid("relevance signals differ in shape"));
        }
        for (a, v) in values.iter_mut().zip(&s.values) {
            *a += v;
        }
    }
    let n = signals.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(RelevanceSignal {
        values,
        rows: first.rows,
        cols: first.cols,
        feature: FeatureRef::Mean,
    })
}

/// Mean guided relevance over all 40 features.
pub fn mean_relevance<T: Real>(
    params: &ParamStore<T>,
    cfg: &DeepVoxConfig,
    frame: &SpeechFrame,
) -> Result<RelevanceSignal> {
    let features: Vec<usize> = (0..FEATURE_CHANNELS).collect();
    average_signals(&feature_relevance(params, cfg, frame, &features, BackwardMode::Guided)?)
}

/// Relevance with respect to the raw clip samples: each frame entry is the
/// windowed sample `w[r] x[80 c + r]`, so entries are weighted by the window
/// and overlap-added at the framing stride. The zero tail padding is dropped.
pub fn relevance_to_signal(rel: &RelevanceSignal) -> Result<Vec<f64>> {
    let window = hamming_window(rel.rows)?;
    let mut out = vec![0.0; UNIT_STRIDE * (rel.cols - 1) + rel.rows];
    for c in 0..rel.cols {
        for (r, w) in window.iter().enumerate() {
            out[c * UNIT_STRIDE + r] += rel.get(r, c) * w;
        }
    }
    out.truncate(CLIP_LEN.min(out.len()));
    Ok(out)
}

/// Recovers the clip samples of a frame by undoing the window of the first
/// unit that covers each sample.
pub fn frame_to_signal(frame: &SpeechFrame) -> Result<Vec<f64>> {
    let window = hamming_window(frame.rows)?;
    let len = (UNIT_STRIDE * (frame.cols - 1) + frame.rows).min(CLIP_LEN);
    Ok((0..len)
        .map(|n| {
            let c = (n / UNIT_STRIDE).min(frame.cols - 1);
            let r = n - c * UNIT_STRIDE;
            frame.get(r, c) / window[r]
        })
        .collect())
}

/// One-sided power spectral density (Welch: 256-sample Hamming segments at
/// 50 % overlap). Returns `(freqs_hz, psd)`; `sum(psd) * fs / 256` equals the
/// mean square of a stationary signal.
pub fn psd(signal: &[f64], sample_rate: u32) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = PSD_SEGMENT;
    if signal.len() < n {
        return Err(DvError::Length {
            what: "psd input",
            expected: n,
            got: signal.len(),
        });
    }
    let fs = sample_rate as f64;
    let w = hamming_window(n)?;
    let wss: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let hop = n / 2;
    let segments = (signal.len() - n) / hop + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for s in 0..segments {
        for (i, z) in buf.iter_mut().enumerate() {
            *z = Complex::new(signal[s * hop + i] * w[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
    }
    let psd = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            one_sided * p / (segments as f64 * fs * wss)
        })
        .collect();
    let freqs = (0..bins).map(|k| k as f64 * fs / n as f64).collect();
    Ok((freqs, psd))
}

/// Total power implied by a PSD from [`psd`].
pub fn psd_power(psd: &[f64], sample_rate: u32) -> f64 {
    psd.iter().sum::<f64>() * sample_rate as f64 / PSD_SEGMENT as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsdReport {
    pub freqs: Vec<f64>,
    pub input_psd: Vec<f64>,
    pub relevance_psd: Vec<f64>,
    /// `(lo_hz, hi_hz, overlap)`.
    pub overlap_bands: Vec<(f64, f64, f64)>,
}

impl PsdReport {
    pub fn psd_csv(&self) -> String {
        let mut s = String::from("freq_hz,input_psd,relevance_psd\n");
        for ((f, a), b) in self.freqs.iter().zip(&self.input_psd).zip(&self.relevance_psd) {
            s.push_str(&format!("{f:.4},{a:.6e},{b:.6e}\n"));
        }
        s
    }

    pub fn overlap_csv(&self) -> String {
        let mut s = String::from("lo_hz,hi_hz,overlap\n");
        for (lo, hi, o) in &self.overlap_bands {
            s.push_str(&format!("{lo},{hi},{o:.6}\n"));
        }
        s
    }
}

fn in_band(f: f64, lo: f64, hi: f64) -> bool {
    f >= lo && (f < hi || hi >= SAMPLE_RATE as f64 / 2.0 && f <= hi)
}

/// Zeroes bins more than [`LEAKAGE_FLOOR_DB`] below the spectrum's peak.
fn above_floor(psd: &[f64]) -> Vec<f64> {
    let floor = psd.iter().cloned().fold(0.0, f64::max) * 10f64.powf(LEAKAGE_FLOOR_DB / 10.0);
    psd.iter().map(|&v| if v >= floor { v } else { 0.0 }).collect()
}

/// Per band, the normalized (uncentred) correlation of the two PSD
/// profiles over that band's bins, ignoring window leakage; 0 when either
/// band is empty of power.
pub fn psd_overlap(input: &[f64], relevance: &[f64]) -> Result<PsdReport> {
    let (freqs, input_psd) = psd(input, SAMPLE_RATE)?;
    let (_, relevance_psd) = psd(relevance, SAMPLE_RATE)?;
    let (a, b) = (above_floor(&input_psd), above_floor(&relevance_psd));
    let overlap_bands = BANDS_HZ
        .iter()
        .map(|&(lo, hi)| {
            let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
            for (k, &f) in freqs.iter().enumerate() {
                if in_band(f, lo, hi) {
                    ab += a[k] * b[k];
                    aa += a[k] * a[k];
                    bb += b[k] * b[k];
                }
            }
            let o = if aa > 0.0 && bb > 0.0 {
                ab / (aa * bb).sqrt()
            } else {
                0.0
            };
            (lo, hi, o)
        })
        .collect();
    Ok(PsdReport {
        freqs,
        input_psd,
        relevance_psd,
        overlap_bands,
    })
}

/// Two passes of a centred moving average of `len` samples.
fn smooth(x: &[f64], len: usize) -> Vec<f64> {
    if len < 2 {
        return x.to_vec();
    }
    let pass = |v: &[f64]| -> Vec<f64> {
        let half = len / 2;
        (0..v.len())
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + len - half).min(v.len());
                v[lo..hi].iter().sum::<f64>() / len as f64
            })
            .collect()
    };
    pass(&pass(x))
}

/// Autocorrelation pitch estimate with parabolic peak refinement. The signal
/// is low-passed first so the correlation peaks are wide compared to one lag.
pub fn estimate_f0(signal: &[f64], sample_rate: u32, f_min: f64, f_max: f64) -> Result<f64> {
    if !(f_min > 0.0 && f_max > f_min) {
        return Err(invalid(format!("need 0 < f_min < f_max, got {f_min} and {f_max}")));
    }
    let fs = sample_rate as f64;
    let lag_min = (fs / f_max).ceil() as usize;
    let lag_max = (fs / f_min).floor() as usize;
    let need = (2.0 * fs / f_min).ceil() as usize;
    if signal.len() < need {
        return Err(DvError::Length {
            what: "pitch input",
            expected: need,
            got: signal.len(),
        });
    }
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let x = smooth(
        &signal.iter().map(|v| v - mean).collect::<Vec<_>>(),
        (fs / PITCH_SMOOTH_HZ).round() as usize,
    );
    let corr = |lag: usize| -> f64 {
        let (a, b) = (&x[..x.len() - lag], &x[lag..]);
        let num: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        let den = (a.iter().map(|v| v * v).sum::<f64>() * b.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    };
    let lo = lag_min.saturating_sub(1).max(1);
    let r: Vec<f64> = (lo..=lag_max + 1).map(corr).collect();
    let at = |lag: usize| r[lag - lo];
    let candidates: Vec<usize> = (lag_min.max(lo + 1)..=lag_max)
        .filter(|&l| at(l) >= at(l - 1) && at(l) >= at(l + 1))
        .collect();
    let best = candidates.iter().map(|&l| at(l)).fold(f64::NEG_INFINITY, f64::max);
    if best.is_nan() || best < VOICING_THRESHOLD {
        return Err(DvError::Unvoiced);
    }
    let lag = *candidates
        .iter()
        .find(|&&l| at(l) >= OCTAVE_RATIO * best)
        .expect("best candidate qualifies");
    let (y0, y1, y2) = (at(lag - 1), at(lag), at(lag + 1));
    let denom = y0 - 2.0 * y1 + y2;
    let delta = if denom != 0.0 {
        (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Ok(fs / (lag as f64 + delta))
}
