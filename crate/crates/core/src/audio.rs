//! Raw audio to network-ready speech frames: energy VAD, 2 s segmentation,
//! Hamming framing and SNR-controlled degradation.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, DvError, Result};

pub const SAMPLE_RATE: u32 = 8000;
/// Samples per speech unit (20 ms).
pub const UNIT_LEN: usize = 160;
/// Hop between consecutive units (10 ms).
pub const UNIT_STRIDE: usize = 80;
/// Units per speech frame.
pub const UNITS_PER_FRAME: usize = 200;
/// Samples per clip (2 s).
pub const CLIP_LEN: usize = 16_000;
/// Remainders at least this long are zero-padded into a final clip.
pub const MIN_REMAINDER: usize = 8_000;
/// VAD analysis window (25 ms).
pub const VAD_WINDOW: usize = 200;
pub const DEFAULT_ENERGY_FLOOR_DB: f64 = -30.0;

// windows with mean-square energy at or below this are never voiced
const ABSOLUTE_ENERGY_FLOOR: f64 = 1e-12;

/// Mono audio at a fixed sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean-square power.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn require_rate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(DvError::SampleRate(self.sample_rate));
        }
        Ok(())
    }
}

pub fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Short-time energy voice activity detection.
///
/// The buffer is cut into consecutive 25 ms windows (the last one may be
/// shorter). A window is voiced when its mean-square energy exceeds the median
/// window energy scaled by `energy_floor_db`. Runs of voiced windows become
/// segments; segments shorter than `min_segment_ms` are dropped.
pub fn detect_voice(buf: &AudioBuffer, energy_floor_db: f64, min_segment_ms: f64) -> Result<Vec<Range<usize>>> {
    if buf.is_empty() {
        return Err(DvError::EmptyAudio);
    }
    buf.require_rate()?;
    let energies: Vec<f64> = buf.samples.chunks(VAD_WINDOW).map(mean_square).collect();
    let threshold = (median(&energies) * 10f64.powf(energy_floor_db / 10.0)).max(ABSOLUTE_ENERGY_FLOOR);
    let min_len = (min_segment_ms * 1e-3 * buf.sample_rate as f64).ceil() as usize;

    let mut segments = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &e) in energies.iter().enumerate() {
        let pos = i * VAD_WINDOW;
        match (e > threshold, start) {
            (true, None) => start = Some(pos),
            (false, Some(s)) => {
                segments.push(s..pos);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        segments.push(s..buf.len());
    }
    segments.retain(|r| r.len() >= min_len);
    Ok(segments)
}

/// Concatenates the voiced segments and cuts them into non-overlapping 2 s
/// clips. A trailing remainder of at least 1 s is zero-padded to 2 s; shorter
/// remainders are discarded.
pub fn segment_clips(buf: &AudioBuffer, segments: &[Range<usize>]) -> Vec<AudioBuffer> {
    let voiced: Vec<f64> = segments
        .iter()
        .flat_map(|r| {
            buf.samples[r.start.min(buf.len())..r.end.min(buf.len())]
                .iter()
                .copied()
        })
        .collect();
    let mut clips = Vec::new();
    for chunk in voiced.chunks(CLIP_LEN) {
        if chunk.len() == CLIP_LEN {
            clips.push(AudioBuffer::new(chunk.to_vec(), buf.sample_rate));
        } else if chunk.len() >= MIN_REMAINDER {
            let mut padded = chunk.to_vec();
            padded.resize(CLIP_LEN, 0.0);
            clips.push(AudioBuffer::new(padded, buf.sample_rate));
        }
    }
    clips
}

/// Symmetric Hamming window `0.54 - 0.46 cos(2πk/(n-1))`.
pub fn hamming_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(invalid(format!("hamming window needs n >= 2, got {n}")));
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|k| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * k as f64 / denom).cos())
        .collect())
}

/// A 160 x 200 matrix of Hamming-windowed speech units; column `j` is the unit
/// starting at sample `80 j` of its clip.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeechFrame {
    /// Row-major `rows x cols`.
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub source_id: String,
    pub clip_id: String,
}

impl SpeechFrame {
    pub fn new(
        data: Vec<f64>,
        rows: usize,
        cols: usize,
        source_id: impl Into<String>,
        clip_id: impl Into<String>,
    ) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DvError::Length {
                what: "speech frame",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self {
            data,
            rows,
            cols,
            source_id: source_id.into(),
            clip_id: clip_id.into(),
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: vec![0.0; rows * cols],
            rows,
            cols,
            source_id: String::new(),
            clip_id: String::new(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[f64]) {
        for (r, &v) in values.iter().enumerate().take(self.rows) {
            self.data[r * self.cols + c] = v;
        }
    }

    /// Reorders columns so that output column `i` is input column `perm[i]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for (i, &p) in perm.iter().enumerate() {
            out.set_column(i, &self.column(p));
        }
        out
    }
}

/// Frames one 2 s clip: the clip is zero-padded by one hop at the tail so that
/// 200 units of 160 samples fit at stride 80; each unit is Hamming-windowed.
pub fn frame_clip(clip: &AudioBuffer) -> Result<SpeechFrame> {
    clip.require_rate()?;
    if clip.len() != CLIP_LEN {
        return Err(DvError::Length {
            what: "clip",
            expected: CLIP_LEN,
            got: clip.len(),
        });
    }
    let window = hamming_window(UNIT_LEN)?;
    let mut padded = clip.samples.clone();
    padded.resize(CLIP_LEN + UNIT_STRIDE, 0.0);
    let mut frame = SpeechFrame::zeros(UNIT_LEN, UNITS_PER_FRAME);
    for j in 0..UNITS_PER_FRAME {
        let off = j * UNIT_STRIDE;
        for (r, w) in window.iter().enumerate() {
            frame.data[r * UNITS_PER_FRAME + j] = padded[off + r] * w;
        }
    }
    Ok(frame)
}

/// Full pipeline for one utterance: VAD, segmentation and framing.
pub fn frames_from_audio(buf: &AudioBuffer, source_id: &str, utt_id: &str) -> Result<Vec<SpeechFrame>> {
    let segments = detect_voice(buf, DEFAULT_ENERGY_FLOOR_DB, 100.0)?;
    segment_clips(buf, &segments)
        .iter()
        .enumerate()
        .map(|(i, clip)| {
            let mut f = frame_clip(clip)?;
            f.source_id = source_id.to_owned();
            f.clip_id = format!("{utt_id}#{i}");
            Ok(f)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    HarmonicBabble,
}

impl std::str::FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "white" => Ok(Self::White),
            "harmonic_babble" | "babble" => Ok(Self::HarmonicBabble),
            other => Err(format!("unknown noise kind `{other}` (expected white|harmonic_babble)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    pub noise_kind: NoiseKind,
    pub snr_db: f64,
}

/// Components of one noise mix, kept before peak normalisation.
#[derive(Clone, Debug)]
pub struct MixParts {
    pub mixed: AudioBuffer,
    /// Noise after SNR scaling, before peak normalisation.
    pub scaled_noise: Vec<f64>,
    pub noise_gain: f64,
    /// Factor applied to the sum to keep it within [-1, 1] (1 when unused).
    pub peak_gain: f64,
}

/// Amplitude factor that brings noise of power `p_noise` to `p_clean / 10^(snr/10)`.
pub fn noise_scale(p_clean: f64, p_noise: f64, snr_db: f64) -> f64 {
    (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt()
}

pub fn generate_noise(kind: NoiseKind, len: usize, sample_rate: u32, rng: &mut impl Rng) -> Vec<f64> {
    match kind {
        NoiseKind::White => (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        NoiseKind::HarmonicBabble => {
            // overlapping harmonic "talkers" with slow amplitude modulation
            let fs = sample_rate as f64;
            let mut out = vec![0.0; len];
            for _ in 0..6 {
                let f0 = rng.random_range(100.0..300.0);
                let rate = rng.random_range(2.0..6.0);
                let env_phase = rng.random_range(0.0..std::f64::consts::TAU);
                let phases: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
                for (n, o) in out.iter_mut().enumerate() {
                    let t = n as f64 / fs;
                    let env = 0.5 * (1.0 + (std::f64::consts::TAU * rate * t + env_phase).sin());
                    let mut s = 0.0;
                    for (h, ph) in phases.iter().enumerate() {
                        let f = f0 * (h + 1) as f64;
                        if f >= fs / 2.0 {
                            break;
                        }
                        s += (std::f64::consts::TAU * f * t + ph).sin() / (h + 1) as f64;
                    }
                    *o += env * s;
                }
            }
            out
        }
    }
}

pub fn mix_noise_parts(clean: &AudioBuffer, spec: &DegradationSpec, rng: &mut impl Rng) -> Result<MixParts> {
    if clean.is_empty() {
        return Err(DvError::EmptyAudio);
    }
    if !spec.snr_db.is_finite() {
        return Err(invalid(format!("snr_db must be finite, got {}", spec.snr_db)));
    }
    let p_clean = clean.power();
    if p_clean == 0.0 {
        return Err(DvError::SilentReference);
    }
    let noise = generate_noise(spec.noise_kind, clean.len(), clean.sample_rate, rng);
    let p_noise = mean_square(&noise);
    let noise_gain = noise_scale(p_clean, p_noise, spec.snr_db);
    let scaled_noise: Vec<f64> = noise.iter().map(|v| v * noise_gain).collect();
    let mut mixed: Vec<f64> = clean.samples.iter().zip(&scaled_noise).map(|(c, n)| c + n).collect();
    let peak = mixed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let peak_gain = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if peak_gain != 1.0 {
        for v in &mut mixed {
            *v *= peak_gain;
        }
    }
    Ok(MixParts {
        mixed: AudioBuffer::new(mixed, clean.sample_rate),
        scaled_noise,
        noise_gain,
        peak_gain,
    })
}

/// Adds generated noise at the requested SNR, then peak-normalises if needed.
pub fn mix_noise(clean: &AudioBuffer, spec: &DegradationSpec, seed: u64) -> Result<AudioBuffer> {
    let mut rng = ndcore::rng::substream(seed, "noise", &[]);
    mix_noise_parts(clean, spec, &mut rng).map(|p| p.mixed)
}
