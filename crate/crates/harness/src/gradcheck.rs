//! Finite-difference check of outer gradients through the inner loop, over
//! every inner model, loss, learning-rate rule and partition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use ttt_core::attention::{ttt_attention, HeadLayout, TttConfig, TttParams};
use ttt_core::autodiff::{gradcheck, Tape, Var};
use ttt_core::inner::{InnerKind, InnerTrainConfig, LossKind, LrRule, Partition};
use ttt_core::{Grid, Op, Ops, Tensor};

use crate::ablate::{lr_label, partition_label};

pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_EPS: f64 = 1e-5;
const DIM: usize = 4;
const GRID: Grid = Grid { height: 3, width: 3 };

pub const GRADCHECK_COLUMNS: [&str; 8] =
    ["inner_model", "loss", "inner_lr", "partition", "max_rel_error", "wv_grad_norm", "pass", "error"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckCell {
    pub inner_model: String,
    pub loss: String,
    pub inner_lr: String,
    pub partition: String,
    pub max_rel_error: f64,
    /// Norm of the analytic gradient reaching `W_V`.
    pub wv_grad_norm: f64,
    pub pass: bool,
    pub error: String,
}

impl GradcheckCell {
    pub fn name(&self) -> String {
        format!("{}/{}/{}/{}", self.inner_model, self.loss, self.inner_lr, self.partition)
    }
}

/// Tape wrapper that flips the backward sign of `sub(·, v)` whenever `v` is
/// derived from `x·W_V`, leaving forward values unchanged.
struct SignFault<'t> {
    tape: &'t mut Tape<f64>,
    wv: Var,
    marked: Vec<Var>,
}

impl Ops<f64> for SignFault<'_> {
    type V = Var;

    fn constant(&mut self, t: Tensor<f64>) -> Var {
        self.tape.constant(t)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<f64> {
        self.tape.value(v)
    }

    fn apply(&mut self, op: Op, args: &[&Var]) -> ttt_core::Result<Var> {
        let mark = match op {
            Op::Matmul => *args[1] == self.wv,
            Op::SliceRows { .. } => self.marked.contains(args[0]),
            _ => false,
        };
        let flip = op == Op::Sub && self.marked.contains(args[1]);
        let out = self.tape.apply(op, args)?;
        if mark {
            self.marked.push(out);
        }
        if flip {
            // 2·stop(r) − r: same value, negated gradient.
            let frozen = self.tape.constant(self.tape.value(&out).clone());
            let twice = self.tape.scale(&frozen, 2.0)?;
            return self.tape.sub(&twice, &out);
        }
        Ok(out)
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn rebuild(p: &TttParams<Tensor<f64>>, vars: &[Var]) -> TttParams<Var> {
    let mut i = 0;
    p.map(|_| {
        i += 1;
        vars[i - 1]
    })
}

/// Gradient check of `sum(ttt(x) ⊙ R)` for one single-head configuration.
pub fn check_cell(
    kind: InnerKind,
    loss: LossKind,
    lr: LrRule,
    partition: Partition,
    inject_fault: bool,
) -> GradcheckCell {
    let cfg = TttConfig {
        inner: InnerTrainConfig { loss, epochs: 2, partition, lr },
        layout: HeadLayout::Uniform(kind),
        qk_l2_norm: false,
    };
    let mut cell = GradcheckCell {
        inner_model: kind.name(),
        loss: loss.name().into(),
        inner_lr: lr_label(lr),
        partition: partition_label(partition),
        max_rel_error: f64::NAN,
        wv_grad_norm: f64::NAN,
        pass: false,
        error: String::new(),
    };
    let result = (|| -> ttt_core::Result<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut p = TttParams::<Tensor<f64>>::init(DIM, 1, &cfg, &mut rng)?;
        if let Some(w) = &mut p.heads[0].w_eta {
            *w = random(w.shape(), &mut rng);
        }
        p.bo = random(p.bo.shape(), &mut rng);
        let n = GRID.height * GRID.width;
        let x = random(&[n, DIM], &mut rng);
        let r = random(&[n, DIM], &mut rng);
        let flat: Vec<Tensor<f64>> = {
            let mut v = Vec::new();
            p.map(|t| v.push(t.clone()));
            v
        };
        let root = |tape: &mut Tape<f64>, vars: &[Var]| -> ttt_core::Result<Var> {
            let tp = rebuild(&p, vars);
            let xv = tape.constant(x.clone());
            let rv = tape.constant(r.clone());
            let out = if inject_fault {
                let wv = tp.heads[0].proj.wv;
                let mut ops = SignFault { tape, wv, marked: Vec::new() };
                ttt_attention(&mut ops, &xv, &tp, &cfg, Some(GRID))?
            } else {
                ttt_attention(tape, &xv, &tp, &cfg, Some(GRID))?
            };
            let prod = tape.mul(&out, &rv)?;
            tape.sum_all(&prod)
        };
        let report = gradcheck(root, &flat, GRADCHECK_EPS)?;

        let mut tape = Tape::new();
        tape.check_finite = false;
        let vars: Vec<Var> = flat.iter().map(|t| tape.param(t.clone())).collect();
        let out = root(&mut tape, &vars)?;
        let wv = rebuild(&p, &vars).heads[0].proj.wv;
        let g = tape.backward(out)?;
        let norm = g.wrt(wv)?.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok((report.max_rel_error, norm))
    })();
    match result {
        Ok((err, norm)) => {
            cell.max_rel_error = err;
            cell.wv_grad_norm = norm;
            cell.pass = err < GRADCHECK_TOL;
        }
        Err(e) => cell.error = e.to_string(),
    }
    cell
}

/// The full matrix. With `fault = Some(loss)` the cells of that loss run
/// with the sign fault injected.
pub fn gradcheck_matrix(fault: Option<LossKind>) -> Vec<GradcheckCell> {
    let mut cells = Vec::new();
    for &kind in &InnerKind::ALL {
        for &loss in &LossKind::ALL {
            for lr in [LrRule::Fixed { eta: 1.0 }, LrRule::Dynamic { eta: 1.0 }] {
                for partition in [Partition::FullBatch, Partition::Sequential(3)] {
                    cells.push((kind, loss, lr, partition));
                }
            }
        }
    }
    cells.par_iter().map(|&(k, l, lr, p)| check_cell(k, l, lr, p, fault == Some(l))).collect()
}
