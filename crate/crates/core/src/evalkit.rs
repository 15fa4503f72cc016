//! Verification scoring and detection metrics.
//!
//! Every metric sweeps the same operating points: one per distinct score
//! (accept when `score >= threshold`) plus a final `+inf` threshold that
//! rejects everything.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndcore::{ParamStore, Real};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::corpus::Utterance;
use crate::error::{invalid, DvError, Result};
use crate::model::{self, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Genuine,
    Impostor,
}

impl FromStr for Label {
    type Err = DvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "genuine" | "target" | "1" => Ok(Self::Genuine),
            "impostor" | "nontarget" | "0" => Ok(Self::Impostor),
            _ => Err(DvError::Format(format!("unknown trial label `{s}`"))),
        }
    }
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Genuine => "genuine",
            Self::Impostor => "impostor",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub enroll_id: String,
    pub probe_id: String,
    pub label: Label,
    pub score: Option<f64>,
}

impl Trial {
    pub fn new(enroll_id: impl Into<String>, probe_id: impl Into<String>, label: Label) -> Self {
        Self {
            enroll_id: enroll_id.into(),
            probe_id: probe_id.into(),
            label,
            score: None,
        }
    }
}

/// Parses `enroll_id,probe_id,label[,score]` lines; a leading header is skipped.
pub fn parse_trials(text: &str) -> Result<Vec<Trial>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("enroll_id")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 && f.len() != 4 {
            return Err(DvError::Format(format!("trial line {}: expected 3 or 4 fields", i + 1)));
        }
        let score = match f.get(3) {
            Some(s) => {
                let v: f64 = s
                    .parse()
                    .map_err(|e| DvError::Format(format!("trial line {}: {e}", i + 1)))?;
                if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                    return Err(DvError::Format(format!(
                        "trial line {}: score {v} outside [-1, 1]",
                        i + 1
                    )));
                }
                Some(v)
            }
            None => None,
        };
        out.push(Trial {
            enroll_id: f[0].to_owned(),
            probe_id: f[1].to_owned(),
            label: f[2].parse()?,
            score,
        });
    }
    Ok(out)
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    parse_trials(&std::fs::read_to_string(path)?)
}

pub fn format_trials(trials: &[Trial]) -> String {
    let mut s = String::new();
    for t in trials {
        let _ = write!(s, "{},{},{}", t.enroll_id, t.probe_id, t.label.as_str());
        if let Some(v) = t.score {
            let _ = write!(s, ",{v:.9}");
        }
        s.push('\n');
    }
    s
}

/// Every unordered pair of utterances, labelled by speaker identity.
pub fn all_pairs(utts: &[Utterance]) -> Vec<Trial> {
    let mut out = Vec::new();
    for i in 0..utts.len() {
        for j in i + 1..utts.len() {
            let label = if utts[i].speaker_id == utts[j].speaker_id {
                Label::Genuine
            } else {
                Label::Impostor
            };
            out.push(Trial::new(&utts[i].id, &utts[j].id, label));
        }
    }
    out
}

/// Scores each trial by the cosine of the mean frame embeddings of its two utterances.
pub fn score_trials<T: Real>(
    params: &ParamStore<T>,
    cfg: &ModelConfig,
    trials: &[Trial],
    store: &[Utterance],
) -> Result<Vec<Trial>> {
    let by_id: HashMap<&str, &Utterance> = store.iter().map(|u| (u.id.as_str(), u)).collect();
    let needed: BTreeSet<&str> = trials
        .iter()
        .flat_map(|t| [t.enroll_id.as_str(), t.probe_id.as_str()])
        .collect();
    let missing: Vec<String> = needed
        .iter()
        .filter(|id| by_id.get(*id).is_none_or(|u| u.frames.is_empty()))
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(DvError::MissingUtterances(missing));
    }
    let ids: Vec<&str> = needed.into_iter().collect();
    let embs = ndcore::par::try_map_indexed(ids.len(), |i| {
        model::utterance_embedding(&by_id[ids[i]].frames, params, cfg)
    })?;
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    trials
        .iter()
        .map(|t| {
            let s = embs[index[t.enroll_id.as_str()]].cosine(&embs[index[t.probe_id.as_str()]])?;
            Ok(Trial {
                score: Some(s),
                ..t.clone()
            })
        })
        .collect()
}

/// Genuine and impostor score lists.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scores {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl Scores {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Self {
        Self { genuine, impostor }
    }

    pub fn from_trials(trials: &[Trial]) -> Result<Self> {
        let mut s = Self::default();
        for t in trials {
            let v = t
                .score
                .ok_or_else(|| invalid(format!("trial {},{} has no score", t.enroll_id, t.probe_id)))?;
            match t.label {
                Label::Genuine => s.genuine.push(v),
                Label::Impostor => s.impostor.push(v),
            }
        }
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.genuine.is_empty() || self.impostor.is_empty() {
            return Err(DvError::Insufficient(format!(
                "need both classes, got {} genuine and {} impostor trials",
                self.genuine.len(),
                self.impostor.len()
            )));
        }
        if self.genuine.iter().chain(&self.impostor).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite score"));
        }
        Ok(())
    }
}

/// One operating point of the sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

/// Operating points in ascending threshold order, ending at `+inf`.
pub fn operating_points(scores: &Scores) -> Result<Vec<OperatingPoint>> {
    scores.check()?;
    let mut all: Vec<(f64, bool)> = scores
        .genuine
        .iter()
        .map(|&s| (s, true))
        .chain(scores.impostor.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (ng, ni) = (scores.genuine.len(), scores.impostor.len());
    let mut points = Vec::new();
    let (mut gen_below, mut imp_below) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let thr = all[i].0;
        points.push(OperatingPoint {
            threshold: thr,
            fmr: (ni - imp_below) as f64 / ni as f64,
            fnmr: gen_below as f64 / ng as f64,
        });
        while i < all.len() && all[i].0 == thr {
            if all[i].1 {
                gen_below += 1;
            } else {
                imp_below += 1;
            }
            i += 1;
        }
    }
    points.push(OperatingPoint {
        threshold: f64::INFINITY,
        fmr: 0.0,
        fnmr: 1.0,
    });
    Ok(points)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eer {
    /// Equal error rate as a fraction in `[0, 1]`.
    pub rate: f64,
    pub threshold: f64,
}

impl Eer {
    pub fn pct(&self) -> f64 {
        100.0 * self.rate
    }
}

/// Crossing of FMR and FNMR over ascending operating points, linearly
/// interpolated between the two points that bracket it.
pub fn eer_from_points(points: &[OperatingPoint]) -> Result<Eer> {
    let k = points
        .iter()
        .position(|p| p.fnmr - p.fmr >= 0.0)
        .ok_or_else(|| invalid("operating points never cross"))?;
    let cur = points[k];
    let d1 = cur.fnmr - cur.fmr;
    if d1 == 0.0 || k == 0 {
        return Ok(Eer {
            rate: (cur.fmr + cur.fnmr) / 2.0,
            threshold: cur.threshold,
        });
    }
    let prev = points[k - 1];
    let d0 = prev.fnmr - prev.fmr;
    let t = -d0 / (d1 - d0);
    let rate = prev.fmr + t * (cur.fmr - prev.fmr);
    let threshold = if cur.threshold.is_finite() {
        prev.threshold + t * (cur.threshold - prev.threshold)
    } else {
        prev.threshold
    };
    Ok(Eer { rate, threshold })
}

pub fn compute_eer(scores: &Scores) -> Result<Eer> {
    eer_from_points(&operating_points(scores)?)
}

/// TMR at the lowest threshold whose FMR does not exceed `fmr_target`.
pub fn tmr_at_fmr(scores: &Scores, fmr_target: f64) -> Result<f64> {
    scores.check()?;
    let floor = 1.0 / scores.impostor.len() as f64;
    if !(fmr_target >= floor && fmr_target <= 1.0) {
        return Err(DvError::Insufficient(format!(
            "FMR target {fmr_target} infeasible with {} impostor trials (minimum {floor})",
            scores.impostor.len()
        )));
    }
    let points = operating_points(scores)?;
    let p = points
        .iter()
        .find(|p| p.fmr <= fmr_target)
        .expect("the +inf point has zero FMR");
    Ok(1.0 - p.fnmr)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dcf {
    pub raw: f64,
    pub normalized: f64,
}

pub fn min_dcf(scores: &Scores, p_tar: f64, c_miss: f64, c_fa: f64) -> Result<Dcf> {
    if !(p_tar > 0.0 && p_tar < 1.0) {
        return Err(invalid(format!("p_tar must lie in (0, 1), got {p_tar}")));
    }
    if !(c_miss > 0.0 && c_fa > 0.0) {
        return Err(invalid("detection costs must be positive"));
    }
    let raw = operating_points(scores)?
        .iter()
        .map(|p| c_miss * p.fnmr * p_tar + c_fa * p.fmr * (1.0 - p_tar))
        .fold(f64::INFINITY, f64::min);
    Ok(Dcf {
        raw,
        normalized: raw / (c_miss * p_tar).min(c_fa * (1.0 - p_tar)),
    })
}

/// Probabilities are clamped to `[PROBIT_CLAMP, 1 - PROBIT_CLAMP]` before the
/// normal-deviate transform so the endpoints stay finite.
pub const PROBIT_CLAMP: f64 = 1e-9;

pub fn probit(p: f64) -> f64 {
    let n = Normal::standard();
    n.inverse_cdf(p.clamp(PROBIT_CLAMP, 1.0 - PROBIT_CLAMP))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub p_fa: f64,
    pub p_miss: f64,
    pub probit_fa: f64,
    pub probit_miss: f64,
}

pub fn det_points(scores: &Scores) -> Result<Vec<DetPoint>> {
    Ok(operating_points(scores)?
        .into_iter()
        .map(|p| DetPoint {
            threshold: p.threshold,
            p_fa: p.fmr,
            p_miss: p.fnmr,
            probit_fa: probit(p.fmr),
            probit_miss: probit(p.fnmr),
        })
        .collect())
}

pub fn eer_from_det(points: &[DetPoint]) -> Result<Eer> {
    let ops: Vec<OperatingPoint> = points
        .iter()
        .map(|d| OperatingPoint {
            threshold: d.threshold,
            fmr: d.p_fa,
            fnmr: d.p_miss,
        })
        .collect();
    eer_from_points(&ops)
}

pub fn format_det_csv(points: &[DetPoint]) -> String {
    let mut s = String::from("p_fa,p_miss,probit_fa,probit_miss\n");
    for p in points {
        let _ = writeln!(
            s,
            "{:.9},{:.9},{:.6},{:.6}",
            p.p_fa, p.p_miss, p.probit_fa, p.probit_miss
        );
    }
    s
}

pub const FMR_TARGETS: [f64; 2] = [0.01, 0.1];
pub const DCF_PRIORS: [f64; 2] = [0.001, 0.01];

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub eer_pct: f64,
    pub eer_threshold: f64,
    /// `(fmr_target, tmr)`; `None` when the target is infeasible.
    pub tmr_at_fmr: Vec<(f64, Option<f64>)>,
    pub min_dcf: Vec<(f64, Dcf)>,
    pub genuine_trials: usize,
    pub impostor_trials: usize,
    pub det: Vec<DetPoint>,
}

impl MetricsReport {
    pub fn compute(scores: &Scores) -> Result<Self> {
        let eer = compute_eer(scores)?;
        let tmr = FMR_TARGETS
            .iter()
            .map(|&f| match tmr_at_fmr(scores, f) {
                Ok(v) => Ok((f, Some(v))),
                Err(DvError::Insufficient(_)) => Ok((f, None)),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        let dcf = DCF_PRIORS
            .iter()
            .map(|&p| Ok((p, min_dcf(scores, p, 1.0, 1.0)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            eer_pct: eer.pct(),
            eer_threshold: eer.threshold,
            tmr_at_fmr: tmr,
            min_dcf: dcf,
            genuine_trials: scores.genuine.len(),
            impostor_trials: scores.impostor.len(),
            det: det_points(scores)?,
        })
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "eer_pct={:.2}", self.eer_pct);
        let _ = writeln!(s, "eer_threshold={:.6}", self.eer_threshold);
        for (f, v) in &self.tmr_at_fmr {
            let key = format!("tmr_at_fmr_{}pct", f * 100.0);
            match v {
                Some(v) => writeln!(s, "{key}={:.4}", v * 100.0),
                None => writeln!(s, "{key}=nan"),
            }
            .ok();
        }
        for (p, d) in &self.min_dcf {
            let _ = writeln!(s, "min_dcf_{p}_raw={:.6}", d.raw);
            let _ = writeln!(s, "min_dcf_{p}_norm={:.6}", d.normalized);
        }
        let _ = writeln!(s, "genuine_trials={}", self.genuine_trials);
        let _ = writeln!(s, "impostor_trials={}", self.impostor_trials);
        s
    }
}

/// Reads the `key=value` report back into a map.
pub fn parse_report(text: &str) -> Result<HashMap<String, f64>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| DvError::Format(format!("report line without `=`: {l}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|e| DvError::Format(format!("report value for {k}: {e}")))?;
            Ok((k.trim().to_owned(), v))
        })
        .collect()
}
