//! Central finite-difference check of reverse-mode gradients (64-bit).

use crate::error::{NdError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Coordinates whose gradients are both below this magnitude are compared in
/// absolute terms.
pub const REL_FLOOR: f64 = 1e-7;

/// Per-coordinate comparison of analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub analytic: Vec<Tensor<f64>>,
    pub numeric: Vec<Tensor<f64>>,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(NdError::invalid("grad_check", "op must be scalar-valued"));
    }
    Ok(v.item())
}

/// Compares the tape gradient of a scalar-valued `op` against central
/// differences with step `eps`, coordinate by coordinate.
pub fn grad_check_report<F>(op: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = op(&mut tape, &vars)?;
    let mut grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut max_rel_err: f64 = 0.0;
    for i in 0..inputs.len() {
        let mut num = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = eval(&op, &work)?;
            work[i].data_mut()[j] = orig - eps;
            let down = eval(&op, &work)?;
            work[i].data_mut()[j] = orig;
            let n = (up - down) / (2.0 * eps);
            num.data_mut()[j] = n;
            max_rel_err = max_rel_err.max(relative_error(analytic[i].data()[j], n));
        }
        numeric.push(num);
    }
    Ok(GradCheckReport {
        max_rel_err,
        analytic,
        numeric,
    })
}

/// Maximum relative error between reverse-mode and central-difference gradients.
pub fn grad_check<F>(op: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check_report(op, inputs, eps).map(|r| r.max_rel_err)
}
