//! Batch construction and curriculum triplet mining.
//!
//! Difficulty `tau` is read as a quantile over the negatives of an anchor
//! sorted by ascending cosine similarity: `tau = 0` picks the least similar
//! (easiest) negative and `tau = 1` the most similar (hardest). The chosen
//! rank is `floor(tau * (M - 1) + 0.5)` for `M` candidates, so for an even
//! candidate count `tau = 0.5` lands on the upper median.

use rand::seq::{index, SliceRandom};

use crate::corpus::FrameSet;
use crate::error::{invalid, DvError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MiningConfig {
    pub subjects_per_batch: usize,
    pub samples_per_subject: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub ramp_epochs: usize,
    pub margin_alpha: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            subjects_per_batch: 25,
            samples_per_subject: 6,
            tau_start: 0.4,
            tau_end: 1.0,
            ramp_epochs: 800,
            margin_alpha: crate::objective::DEFAULT_MARGIN,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau_start && self.tau_start <= self.tau_end && self.tau_end <= 1.0) {
            return Err(invalid(format!(
                "need 0 <= tau_start <= tau_end <= 1, got {} and {}",
                self.tau_start, self.tau_end
            )));
        }
        if self.subjects_per_batch < 2 || self.samples_per_subject < 2 {
            return Err(invalid("batches need at least 2 subjects with 2 samples each"));
        }
        Ok(())
    }

    pub fn batch_frames(&self) -> usize {
        self.subjects_per_batch * self.samples_per_subject
    }
}

/// Linear ramp from `tau_start` at epoch 0 to `tau_end` at `ramp_epochs`.
pub fn tau_schedule(epoch: usize, cfg: &MiningConfig) -> f64 {
    if cfg.ramp_epochs == 0 || epoch >= cfg.ramp_epochs {
        return cfg.tau_end;
    }
    let frac = epoch as f64 / cfg.ramp_epochs as f64;
    cfg.tau_start + (cfg.tau_end - cfg.tau_start) * frac
}

/// Frame indices into a [`FrameSet`] with their subject labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Draws `subjects_per_batch` subjects and `samples_per_subject` distinct
/// frames of each, then shuffles the batch.
pub fn build_batch(set: &FrameSet, cfg: &MiningConfig, seed: u64) -> Result<Batch> {
    cfg.validate()?;
    let mut by_subject: Vec<Vec<usize>> = vec![Vec::new(); set.num_subjects()];
    for (i, &l) in set.labels.iter().enumerate() {
        by_subject[l].push(i);
    }
    let eligible: Vec<usize> = (0..by_subject.len())
        .filter(|&s| by_subject[s].len() >= cfg.samples_per_subject)
        .collect();
    if eligible.len() < cfg.subjects_per_batch {
        let deficient: Vec<String> = (0..by_subject.len())
            .filter(|&s| by_subject[s].len() < cfg.samples_per_subject)
            .map(|s| format!("{} ({} frames)", set.subjects[s], by_subject[s].len()))
            .collect();
        return Err(DvError::Insufficient(format!(
            "need {} subjects with >= {} frames, have {}; deficient: [{}]",
            cfg.subjects_per_batch,
            cfg.samples_per_subject,
            eligible.len(),
            deficient.join(", ")
        )));
    }
    let mut rng = ndcore::rng::substream(seed, "batch", &[]);
    let mut pairs = Vec::with_capacity(cfg.batch_frames());
    for si in index::sample(&mut rng, eligible.len(), cfg.subjects_per_batch) {
        let s = eligible[si];
        for fi in index::sample(&mut rng, by_subject[s].len(), cfg.samples_per_subject) {
            pairs.push((by_subject[s][fi], s));
        }
    }
    pairs.shuffle(&mut rng);
    Ok(Batch {
        indices: pairs.iter().map(|p| p.0).collect(),
        labels: pairs.iter().map(|p| p.1).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinedTriplet {
    pub anchor_idx: usize,
    pub positive_idx: usize,
    pub negative_idx: usize,
    /// Quantile rank actually selected, in `[0, 1]`.
    pub difficulty: f64,
    pub negative_similarity: f64,
    /// Whether `cos(a, p) >= cos(a, n) + margin` already holds.
    pub satisfies_margin: bool,
}

fn unit_rows(embeddings: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    embeddings
        .iter()
        .map(|e| {
            let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                Err(DvError::Nd(ndcore::NdError::DegenerateEmbedding))
            } else {
                Ok(e.iter().map(|v| v / n).collect())
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

/// Quantile rank used for `tau` among `m` sorted candidates.
pub fn quantile_rank(tau: f64, m: usize) -> usize {
    ((tau * (m - 1) as f64 + 0.5).floor() as usize).min(m - 1)
}

/// One triplet per ordered same-subject pair `(a, p)`.
pub fn mine_triplets(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    tau: f64,
    margin_alpha: f64,
) -> Result<Vec<MinedTriplet>> {
    if embeddings.len() != labels.len() {
        return Err(invalid(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(invalid(format!("tau must lie in [0, 1], got {tau}")));
    }
    let e = unit_rows(embeddings)?;
    let n = e.len();
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    for (&l, &c) in &counts {
        if c < 2 {
            log::warn!("subject {l} has {c} sample in batch; skipped as anchor");
        }
    }
    let mut out = Vec::new();
    for a in 0..n {
        if counts[&labels[a]] < 2 {
            continue;
        }
        let mut negs: Vec<(f64, usize)> = (0..n)
            .filter(|&j| labels[j] != labels[a])
            .map(|j| (dot(&e[a], &e[j]), j))
            .collect();
        if negs.is_empty() {
            continue;
        }
        negs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let m = negs.len();
        let q = quantile_rank(tau, m);
        let (sim_n, neg) = negs[q];
        let difficulty = if m > 1 { q as f64 / (m - 1) as f64 } else { 0.0 };
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let sim_p = dot(&e[a], &e[p]);
            out.push(MinedTriplet {
                anchor_idx: a,
                positive_idx: p,
                negative_idx: neg,
                difficulty,
                negative_similarity: sim_n,
                satisfies_margin: sim_p >= sim_n + margin_alpha,
            });
        }
    }
    Ok(out)
}

/// Mean anchor-negative similarity of a mined set (`NaN` when empty).
pub fn mean_negative_similarity(triplets: &[MinedTriplet]) -> f64 {
    if triplets.is_empty() {
        return f64::NAN;
    }
    triplets.iter().map(|t| t.negative_similarity).sum::<f64>() / triplets.len() as f64
}
