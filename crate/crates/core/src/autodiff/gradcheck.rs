use alloc::vec::Vec;

use super::{Tape, Var};
use crate::{Error, Ops, Result, Tensor};

/// Outcome of a central-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// `max |analytic − numeric| / max(1, |numeric|)` over all entries.
    pub max_rel_error: f64,
    /// `(parameter index, flat entry)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

fn evaluate<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.check_finite = false;
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    tape.value(&root).item()
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `eps`.
///
/// `f` is evaluated twice on identical inputs first; differing results are
/// reported as an oracle error since finite differences would be meaningless.
pub fn gradcheck<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.check_finite = false;
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let base = tape.value(&root).item()?;
    let grads = tape.backward(root)?;

    if evaluate(&f, params)?.to_bits() != base.to_bits() {
        return Err(Error::Oracle("function under gradcheck is not deterministic"));
    }

    let mut report = GradcheckReport { max_rel_error: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0, entries: 0 };
    let mut probe: Vec<Tensor<f64>> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var)?.clone();
        for j in 0..params[pi].numel() {
            let orig = params[pi].data()[j];
            probe[pi].data_mut()[j] = orig + eps;
            let plus = evaluate(&f, &probe)?;
            probe[pi].data_mut()[j] = orig - eps;
            let minus = evaluate(&f, &probe)?;
            probe[pi].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            report.entries += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                report.worst = (pi, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
