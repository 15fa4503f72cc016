//! Deterministic source-filter speaker corpus.
//!
//! Each synthetic speaker is a jittered glottal impulse train at its own F0
//! driven through a cascade of three two-pole formant resonators. There is no
//! phonetic content: utterances of one speaker differ only in jitter and
//! pulse phase.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::corpus::{Manifest, ManifestEntry};
use crate::error::{invalid, DvError, Result};
use crate::wav;

pub const F0_RANGE: (f64, f64) = (120.0, 300.0);
pub const MIN_F0_GAP: f64 = 5.0;
pub const DEFAULT_JITTER_PCT: f64 = 1.0;
/// Keeps each resonance peak of the cascade close to its centre frequency.
pub const MIN_FORMANT_GAP: f64 = 350.0;
const MAX_ATTEMPTS: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Formant {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerProfile {
    pub f0_hz: f64,
    pub formants: [Formant; 3],
    pub jitter_pct: f64,
    pub seed: u64,
}

fn candidate(seed: u64, attempt: u64) -> SpeakerProfile {
    let mut rng = ndcore::rng::substream(seed, "speaker", &[attempt]);
    let f0_hz = rng.random_range(F0_RANGE.0..F0_RANGE.1);
    let f1 = rng.random_range(300.0..850.0);
    let f2 = rng.random_range((f1 + MIN_FORMANT_GAP).max(900.0)..2300.0);
    let f3 = rng.random_range((f2 + MIN_FORMANT_GAP).max(2300.0)..3500.0);
    let formants = [
        Formant {
            center_hz: f1,
            bandwidth_hz: rng.random_range(60.0..120.0),
        },
        Formant {
            center_hz: f2,
            bandwidth_hz: rng.random_range(80.0..160.0),
        },
        Formant {
            center_hz: f3,
            bandwidth_hz: rng.random_range(100.0..180.0),
        },
    ];
    SpeakerProfile {
        f0_hz,
        formants,
        jitter_pct: DEFAULT_JITTER_PCT,
        seed,
    }
}

/// Deterministic profile for one seed.
pub fn make_speaker(seed: u64) -> SpeakerProfile {
    candidate(seed, 0)
}

/// Profiles for a list of seeds. Each later speaker redraws from its own seed
/// stream until its F0 is at least 5 Hz away from every earlier speaker.
pub fn make_speakers(seeds: &[u64]) -> Result<Vec<SpeakerProfile>> {
    let mut out: Vec<SpeakerProfile> = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let profile = (0..MAX_ATTEMPTS)
            .map(|a| candidate(seed, a))
            .find(|p| out.iter().all(|q| (q.f0_hz - p.f0_hz).abs() >= MIN_F0_GAP))
            .ok_or_else(|| DvError::Insufficient(format!("no F0 slot left for speaker seed {seed}")))?;
        out.push(profile);
    }
    Ok(out)
}

fn resonate(x: &mut [f64], f: &Formant, fs: f64) {
    let r = (-std::f64::consts::PI * f.bandwidth_hz / fs).exp();
    let theta = std::f64::consts::TAU * f.center_hz / fs;
    let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y = *v + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Renders one utterance: jittered impulse train, formant cascade, 0.9 peak.
pub fn synth_utterance(profile: &SpeakerProfile, duration_s: f64, seed: u64) -> Result<AudioBuffer> {
    if duration_s.is_nan() || duration_s < 0.5 {
        return Err(invalid(format!(
            "utterance duration must be >= 0.5 s, got {duration_s}"
        )));
    }
    let fs = SAMPLE_RATE as f64;
    let n = (duration_s * fs).round() as usize;
    let mut rng = ndcore::rng::substream(seed, "utterance", &[profile.seed]);
    let period = fs / profile.f0_hz;
    let mut x = vec![0.0; n];
    let mut t = rng.random_range(0.0..period);
    while (t.round() as usize) < n {
        x[t.round() as usize] = 1.0;
        let dev: f64 = rng.sample(StandardNormal);
        t += period * (1.0 + profile.jitter_pct / 100.0 * dev.clamp(-3.0, 3.0));
    }
    for f in &profile.formants {
        resonate(&mut x, f, fs);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in &mut x {
            *v *= 0.9 / peak;
        }
    }
    Ok(AudioBuffer::new(x, SAMPLE_RATE))
}

pub fn speaker_id(i: usize) -> String {
    format!("spk{i:03}")
}

pub fn utterance_id(j: usize) -> String {
    format!("utt{j:03}")
}

#[derive(Clone, Debug)]
pub struct CorpusSpec {
    pub speakers: usize,
    pub utterances: usize,
    pub duration_s: f64,
    pub seed: u64,
}

/// Speaker profiles of a corpus, derived from its master seed.
pub fn corpus_speakers(spec: &CorpusSpec) -> Result<Vec<SpeakerProfile>> {
    let seeds: Vec<u64> = (0..spec.speakers)
        .map(|i| ndcore::rng::substream_seed(spec.seed, "speaker-seed", &[i as u64]))
        .collect();
    make_speakers(&seeds)
}

pub fn utterance_seed(master: u64, speaker: usize, utt: usize) -> u64 {
    ndcore::rng::substream_seed(master, "utterance-seed", &[speaker as u64, utt as u64])
}

/// Generates the corpus in memory as `(speaker_id, utterance_id, audio)`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<(String, String, AudioBuffer)>> {
    let profiles = corpus_speakers(spec)?;
    let jobs: Vec<(usize, usize)> = (0..spec.speakers)
        .flat_map(|i| (0..spec.utterances).map(move |j| (i, j)))
        .collect();
    ndcore::par::try_map_indexed(jobs.len(), |k| {
        let (i, j) = jobs[k];
        let audio = synth_utterance(&profiles[i], spec.duration_s, utterance_seed(spec.seed, i, j))?;
        Ok((speaker_id(i), utterance_id(j), audio))
    })
}

/// Writes `<speaker>/<utt>.wav` files plus `manifest.txt` under `dir`.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec) -> Result<Manifest> {
    let corpus = generate_corpus(spec)?;
    let mut manifest = Manifest::default();
    for (spk, utt, audio) in corpus {
        std::fs::create_dir_all(dir.join(&spk))?;
        let rel = format!("{spk}/{utt}.wav");
        wav::write_wav(dir.join(&rel), &audio)?;
        manifest.entries.push(ManifestEntry {
            path: rel.into(),
            speaker_id: spk,
            duration_s: audio.duration_s(),
        });
    }
    manifest.write(&dir.join("manifest.txt"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_deterministic_and_valid() {
        assert_eq!(make_speaker(17), make_speaker(17));
        for s in 0..200 {
            let p = make_speaker(s);
            assert!(p.f0_hz > 0.0 && p.f0_hz >= F0_RANGE.0 && p.f0_hz <= F0_RANGE.1);
            let c: Vec<f64> = p.formants.iter().map(|f| f.center_hz).collect();
            assert!(c[0] < c[1] && c[1] < c[2] && c[2] < 4000.0, "{c:?}");
        }
    }

    #[test]
    fn twenty_speakers_are_separated() {
        let seeds: Vec<u64> = (0..20).collect();
        let ps = make_speakers(&seeds).unwrap();
        for i in 0..20 {
            for j in i + 1..20 {
                assert!((ps[i].f0_hz - ps[j].f0_hz).abs() >= MIN_F0_GAP);
                assert_ne!(ps[i], ps[j]);
            }
        }
        assert_eq!(ps[0], make_speaker(0));
    }

    #[test]
    fn utterance_length_and_peak() {
        let p = make_speaker(3);
        let u = synth_utterance(&p, 2.0, 9).unwrap();
        assert_eq!(u.len(), 16000);
        assert!((u.peak() - 0.9).abs() < 1e-12);
        assert_eq!(u, synth_utterance(&p, 2.0, 9).unwrap());
        assert_ne!(u, synth_utterance(&p, 2.0, 10).unwrap());
        assert!(synth_utterance(&p, 0.4, 9).is_err());
    }
}
