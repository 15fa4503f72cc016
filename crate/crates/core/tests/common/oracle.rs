#![allow(clippy::needless_range_loop)]

//! Independent reference implementations used by several test targets.

use deepvox::deepvox_net::{weight_name, DeepVoxConfig};
use deepvox::evalkit::Scores;
use deepvox::ndcore::ParamStore;

/// Impulse pushed through a literal cascade of multi-channel dilated
/// correlations, read back as taps.
pub fn cascade_oracle(p: &ParamStore<f64>, cfg: &DeepVoxConfig) -> Vec<Vec<f64>> {
    let rf = cfg.receptive_field();
    let len = 2 * rf + 1;
    let pos = rf;
    let mut x = vec![vec![0.0; len]];
    x[0][pos] = 1.0;
    for (i, s) in cfg.layers.iter().enumerate() {
        let w = p.get(&weight_name(i)).unwrap();
        let out_len = x[0].len() - (s.kernel_size - 1) * s.dilation;
        let mut y = vec![vec![0.0; out_len]; s.out_channels];
        for o in 0..s.out_channels {
            for t in 0..out_len {
                let mut acc = 0.0;
                for c in 0..s.in_channels {
                    for k in 0..s.kernel_size {
                        acc += w.data()[(o * s.in_channels + c) * s.kernel_size + k] * x[c][t + k * s.dilation];
                    }
                }
                y[o][t] = acc;
            }
        }
        x = y;
    }
    // y[t] = sum_m h[m] δ[t + m - pos]  →  h[m] = y[pos - m]
    x.iter().map(|y| (0..rf).map(|m| y[pos - m]).collect()).collect()
}

/// Every distinct score plus +inf, each evaluated by counting.
pub fn points(s: &Scores) -> Vec<(f64, f64, f64)> {
    let mut thr: Vec<f64> = s.genuine.iter().chain(&s.impostor).copied().collect();
    thr.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thr.dedup();
    thr.push(f64::INFINITY);
    let (ng, ni) = (s.genuine.len() as f64, s.impostor.len() as f64);
    thr.into_iter()
        .map(|t| {
            let fa = s.impostor.iter().filter(|&&x| x >= t).count() as f64 / ni;
            let miss = s.genuine.iter().filter(|&&x| x < t).count() as f64 / ng;
            (t, fa, miss)
        })
        .collect()
}

pub fn eer(pts: &[(f64, f64, f64)]) -> f64 {
    for k in 0..pts.len() {
        let (_, fa, miss) = pts[k];
        let d1 = miss - fa;
        if d1 >= 0.0 {
            if d1 == 0.0 || k == 0 {
                return (fa + miss) / 2.0;
            }
            let (_, fa0, miss0) = pts[k - 1];
            let d0 = miss0 - fa0;
            let t = -d0 / (d1 - d0);
            return fa0 + t * (fa - fa0);
        }
    }
    unreachable!("the +inf point has miss 1 and fa 0")
}

pub fn tmr(pts: &[(f64, f64, f64)], target: f64) -> f64 {
    pts.iter()
        .filter(|p| p.1 <= target)
        .map(|p| 1.0 - p.2)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn dcf(pts: &[(f64, f64, f64)], p: f64) -> f64 {
    pts.iter()
        .map(|&(_, fa, miss)| miss * p + fa * (1.0 - p))
        .fold(f64::INFINITY, f64::min)
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

/// Candidate similarities for one anchor, sorted ascending.
pub fn sorted_candidates(e: &[Vec<f64>], labels: &[usize], a: usize) -> Vec<(f64, usize)> {
    let mut c: Vec<(f64, usize)> = (0..e.len())
        .filter(|&j| labels[j] != labels[a])
        .map(|j| (cos(&e[a], &e[j]), j))
        .collect();
    c.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
    c
}
