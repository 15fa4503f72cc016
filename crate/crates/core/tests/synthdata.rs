#![allow(clippy::needless_range_loop)]

mod common;

use deepvox::ablation::estimate_f0;
use deepvox::audio::SAMPLE_RATE;
use deepvox::corpus::{load_utterances, Manifest};
use deepvox::synth::*;

/// Three two-pole resonators.
const LPC_ORDER: usize = 6;

/// Covariance-method LPC: least-squares `a` with `a[0] = 1` minimising the
/// prediction error over the whole signal. With a sparse pulse excitation the
/// error is nonzero only at pulse instants, so the fit recovers the all-pole
/// filter.
fn lpc(x: &[f64], order: usize) -> Vec<f64> {
    let phi = |i: usize, j: usize| -> f64 { (order..x.len()).map(|n| x[n - i] * x[n - j]).sum() };
    let mut m: Vec<Vec<f64>> = (1..=order)
        .map(|i| {
            let mut row: Vec<f64> = (1..=order).map(|j| phi(i, j)).collect();
            row.push(-phi(i, 0));
            row
        })
        .collect();
    // Gauss-Jordan with partial pivoting
    for c in 0..order {
        let piv = (c..order)
            .max_by(|&a, &b| m[a][c].abs().partial_cmp(&m[b][c].abs()).unwrap())
            .unwrap();
        m.swap(c, piv);
        for r in 0..order {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=order {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    let mut a = vec![1.0];
    a.extend((0..order).map(|r| m[r][order] / m[r][r]));
    a
}

/// Local maxima of the LPC envelope on a 1 Hz grid.
fn envelope_peaks(a: &[f64]) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let env: Vec<f64> = (0..4000)
        .map(|f| {
            let w = std::f64::consts::TAU * f as f64 / fs;
            let (mut re, mut im) = (0.0, 0.0);
            for (k, c) in a.iter().enumerate() {
                re += c * (w * k as f64).cos();
                im -= c * (w * k as f64).sin();
            }
            1.0 / (re * re + im * im)
        })
        .collect();
    (1..env.len() - 1)
        .filter(|&i| env[i] > env[i - 1] && env[i] >= env[i + 1])
        .map(|i| i as f64)
        .collect()
}

fn desk_spec(seed: u64) -> CorpusSpec {
    CorpusSpec {
        speakers: 20,
        utterances: 2,
        duration_s: 2.0,
        seed,
    }
}

#[test]
fn profiles_are_deterministic_and_well_formed() {
    assert_eq!(make_speaker(5), make_speaker(5));
    assert_ne!(make_speaker(5), make_speaker(6));
    let seeds: Vec<u64> = (0..20).collect();
    let p = make_speakers(&seeds).unwrap();
    for (i, a) in p.iter().enumerate() {
        assert!(a.f0_hz >= F0_RANGE.0 && a.f0_hz < F0_RANGE.1);
        assert!(a.formants.windows(2).all(|w| w[0].center_hz < w[1].center_hz));
        assert!(a
            .formants
            .windows(2)
            .all(|w| w[1].center_hz - w[0].center_hz >= MIN_FORMANT_GAP));
        assert!(a.formants[2].center_hz < 4000.0);
        for b in &p[i + 1..] {
            assert!((a.f0_hz - b.f0_hz).abs() >= MIN_F0_GAP);
        }
    }
}

#[test]
fn f0_is_recovered_within_two_percent() {
    let mut p = make_speaker(1);
    p.f0_hz = 200.0;
    let a = synth_utterance(&p, 2.0, 10).unwrap();
    let b = synth_utterance(&p, 2.0, 11).unwrap();
    assert_eq!(a.len(), 16_000);
    assert!((a.peak() - 0.9).abs() < 1e-12);
    assert_ne!(a, b);
    for buf in [&a, &b] {
        let f0 = estimate_f0(&buf.samples, SAMPLE_RATE, 80.0, 400.0).unwrap();
        assert!((f0 - 200.0).abs() / 200.0 < 0.02, "{f0}");
    }
    // every corpus speaker, two utterances each
    let spec = desk_spec(3);
    let profiles = corpus_speakers(&spec).unwrap();
    for (i, p) in profiles.iter().enumerate() {
        let u = synth_utterance(p, 2.0, utterance_seed(3, i, 0)).unwrap();
        let f0 = estimate_f0(&u.samples, SAMPLE_RATE, 80.0, 400.0).unwrap();
        assert!(
            (f0 - p.f0_hz).abs() / p.f0_hz < 0.02,
            "speaker {i}: {f0} vs {}",
            p.f0_hz
        );
    }
}

#[test]
fn spectrum_peaks_near_each_formant() {
    let profiles = corpus_speakers(&desk_spec(4)).unwrap();
    for (i, p) in profiles.iter().enumerate() {
        let u = synth_utterance(p, 2.0, utterance_seed(4, i, 0)).unwrap();
        let peaks = envelope_peaks(&lpc(&u.samples, LPC_ORDER));
        for f in &p.formants {
            let best = peaks
                .iter()
                .map(|q| (q - f.center_hz).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(
                best <= 50.0,
                "speaker {i} (f0 {:.0}): formant {:.0} nearest peak {best:.1} Hz away; peaks {peaks:?}",
                p.f0_hz,
                f.center_hz
            );
        }
    }
}

#[test]
fn short_durations_are_rejected() {
    assert!(synth_utterance(&make_speaker(0), 0.4, 0).is_err());
}

#[test]
fn corpus_is_reproducible_and_written_with_a_manifest() {
    let spec = CorpusSpec {
        speakers: 3,
        utterances: 2,
        duration_s: 3.0,
        seed: 8,
    };
    let a = generate_corpus(&spec).unwrap();
    assert_eq!(a, generate_corpus(&spec).unwrap());
    assert_ne!(
        a,
        generate_corpus(&CorpusSpec {
            seed: 9,
            ..spec.clone()
        })
        .unwrap()
    );

    let dir = tempfile::tempdir().unwrap();
    let m = write_corpus(dir.path(), &spec).unwrap();
    assert_eq!(m.entries.len(), 6);
    assert_eq!(m.speakers(), vec!["spk000", "spk001", "spk002"]);
    let reread = Manifest::read(&dir.path().join("manifest.txt")).unwrap();
    assert_eq!(reread, m);
    assert!(dir.path().join("spk001/utt000.wav").exists());
    let utts = load_utterances(&dir.path().join("manifest.txt")).unwrap();
    assert_eq!(utts.len(), 6);
    assert_eq!(utts[0].id, "spk000/utt000");
    // 3 s of voice: one full clip and a padded one-second remainder
    assert!(utts.iter().all(|u| u.frames.len() == 2));
}
