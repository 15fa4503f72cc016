//! Cosine triplet embedding loss.

use std::str::FromStr;

use ndcore::{Real, Tape, Var};

use crate::error::{invalid, Result};

pub const DEFAULT_MARGIN: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

impl FromStr for Reduction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            _ => Err(format!("unknown reduction `{s}` (expected mean or sum)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletLossConfig {
    pub margin_alpha: f64,
    pub hinge: bool,
    pub reduction: Reduction,
}

impl Default for TripletLossConfig {
    fn default() -> Self {
        Self {
            margin_alpha: DEFAULT_MARGIN,
            hinge: true,
            reduction: Reduction::Mean,
        }
    }
}

impl TripletLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.margin_alpha) {
            return Err(invalid(format!("margin must lie in [0, 2], got {}", self.margin_alpha)));
        }
        Ok(())
    }
}

/// `cos(a, n) - cos(a, p) + margin`, clamped at zero when hinged.
pub fn triplet_term(a: &[f64], p: &[f64], n: &[f64], cfg: &TripletLossConfig) -> Result<f64> {
    cfg.validate()?;
    let raw = ndcore::cosine(a, n)? - ndcore::cosine(a, p)? + cfg.margin_alpha;
    Ok(if cfg.hinge { raw.max(0.0) } else { raw })
}

/// Reduced loss over a batch of `(anchor, positive, negative)` embeddings.
pub fn cosine_triplet_loss(triplets: &[[&[f64]; 3]], cfg: &TripletLossConfig) -> Result<f64> {
    if triplets.is_empty() {
        return Err(invalid("triplet loss over an empty batch"));
    }
    let mut total = 0.0;
    for t in triplets {
        total += triplet_term(t[0], t[1], t[2], cfg)?;
    }
    Ok(match cfg.reduction {
        Reduction::Mean => total / triplets.len() as f64,
        Reduction::Sum => total,
    })
}

/// The same loss on a tape, over embedding nodes.
pub fn triplet_loss_tape<T: Real>(tape: &mut Tape<T>, triplets: &[[Var; 3]], cfg: &TripletLossConfig) -> Result<Var> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(invalid("triplet loss over an empty batch"));
    }
    let mut terms = Vec::with_capacity(triplets.len());
    for &[a, p, n] in triplets {
        let can = tape.cosine(a, n)?;
        let cap = tape.cosine(a, p)?;
        let d = tape.sub(can, cap)?;
        let mut t = tape.add_scalar(d, cfg.margin_alpha)?;
        if cfg.hinge {
            t = tape.relu(t)?;
        }
        terms.push(t);
    }
    let total = tape.add_n(&terms)?;
    Ok(match cfg.reduction {
        Reduction::Mean => tape.scale(total, 1.0 / triplets.len() as f64)?,
        Reduction::Sum => total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_bounds() {
        let cfg = TripletLossConfig {
            margin_alpha: 2.5,
            ..TripletLossConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!("max".parse::<Reduction>().is_err());
    }

    #[test]
    fn sum_and_mean() {
        let a = [1.0, 0.0];
        let n = [1.0, 0.0];
        let p = [0.0, 1.0];
        let mut cfg = TripletLossConfig::default();
        let t: [&[f64]; 3] = [&a, &p, &n];
        assert!((cosine_triplet_loss(&[t, t], &cfg).unwrap() - 1.2).abs() < 1e-15);
        cfg.reduction = Reduction::Sum;
        assert!((cosine_triplet_loss(&[t, t], &cfg).unwrap() - 2.4).abs() < 1e-15);
    }
}
