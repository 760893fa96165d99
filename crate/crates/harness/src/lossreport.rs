//! Closed-form mixed second derivatives of the inner losses against central
//! differences of the analytic loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use ttt_core::inner::{inner_loss_grad, mixed_second_derivative, LossKind};
use ttt_core::Tensor;

/// Mismatch above which the report fails.
pub const LOSSREPORT_TOL: f64 = 1e-5;
const ROWS: usize = 6;
const DIM: usize = 4;
const STEP: f64 = 1e-5;

pub const LOSSREPORT_COLUMNS: [&str; 7] =
    ["loss", "closed_form", "analytic_min", "analytic_max", "numeric_min", "numeric_max", "max_abs_err"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRow {
    pub loss: String,
    pub closed_form: String,
    pub analytic_min: f64,
    pub analytic_max: f64,
    pub numeric_min: f64,
    pub numeric_max: f64,
    pub max_abs_err: f64,
}

fn closed_form(kind: LossKind, c: f64) -> String {
    match kind {
        LossKind::DotProduct | LossKind::Mse => format!("-1/(B*sqrt(d)) = {:.6}", -c),
        LossKind::Rmse => "-c/sqrt(S) + c^2*diff^2/S^1.5, S = c*sum(diff^2)".into(),
        LossKind::Mae => "0 off ties".into(),
        LossKind::SmoothL1 => format!("{:.6} inside |diff| < 1, 0 outside", -c),
    }
}

/// Random `(V̂, V)` whose differences stay clear of the MAE and SmoothL1
/// kinks at 0 and ±1, with some entries on each side of the band.
pub fn sample_pair(seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = Tensor::from_fn(&[ROWS, DIM], |_| rng.random_range(-1.0..1.0));
    let vhat = Tensor::from_fn(&[ROWS, DIM], |i| {
        let mag = if i % 2 == 0 { rng.random_range(0.1..0.9) } else { rng.random_range(1.1..2.0) };
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        v.data()[i] + sign * mag
    });
    (vhat, v)
}

pub fn loss_row(kind: LossKind, vhat: &Tensor<f64>, v: &Tensor<f64>) -> ttt_core::Result<LossRow> {
    let analytic = mixed_second_derivative(kind, vhat, v)?;
    let mut numeric = Vec::with_capacity(v.numel());
    let mut probe = v.clone();
    for j in 0..v.numel() {
        let orig = v.data()[j];
        probe.data_mut()[j] = orig + STEP;
        let plus = inner_loss_grad(kind, vhat, &probe)?.data()[j];
        probe.data_mut()[j] = orig - STEP;
        let minus = inner_loss_grad(kind, vhat, &probe)?.data()[j];
        probe.data_mut()[j] = orig;
        numeric.push((plus - minus) / (2.0 * STEP));
    }
    let a = analytic.data();
    let min = |xs: &[f64]| xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |xs: &[f64]| xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let c = 1.0 / (ROWS as f64 * (DIM as f64).sqrt());
    Ok(LossRow {
        loss: kind.name().into(),
        closed_form: closed_form(kind, c),
        analytic_min: min(a),
        analytic_max: max(a),
        numeric_min: min(&numeric),
        numeric_max: max(&numeric),
        max_abs_err: a.iter().zip(&numeric).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
    })
}

/// One row per loss at a random pair drawn from `seed`.
pub fn loss_report(seed: u64) -> ttt_core::Result<Vec<LossRow>> {
    let (vhat, v) = sample_pair(seed);
    LossKind::ALL.iter().map(|&k| loss_row(k, &vhat, &v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_rows_agree() {
        for row in loss_report(3).unwrap() {
            assert!(row.max_abs_err < 1e-6, "{row:?}");
        }
    }

    #[test]
    fn sample_straddles_the_band() {
        let (vh, v) = sample_pair(0);
        let d = vh.sub(&v).unwrap();
        assert!(d.data().iter().any(|x| x.abs() < 1.0) && d.data().iter().any(|x| x.abs() > 1.0));
        assert!(d.data().iter().all(|x| x.abs() > 0.1 && (x.abs() - 1.0).abs() > 0.05));
    }
}
