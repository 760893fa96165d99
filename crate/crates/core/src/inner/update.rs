use alloc::format;
use alloc::vec::Vec;

use super::model::{forward_cached, weight_grads, InnerModel};
use super::{loss_grad, partition_batches, LossKind, Partition};
use crate::{Error, Grid, Ops, Real, Result};

/// Inner learning-rate rule.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LrRule {
    /// Every token's loss contribution is scaled by `eta`.
    Fixed { eta: f64 },
    /// Token `i` is scaled by `eta·sigmoid(x_i·W_η)`; the gate logits are
    /// supplied by the caller.
    Dynamic { eta: f64 },
}

impl LrRule {
    pub fn eta(self) -> f64 {
        match self {
            LrRule::Fixed { eta } | LrRule::Dynamic { eta } => eta,
        }
    }

    pub fn is_dynamic(self) -> bool {
        matches!(self, LrRule::Dynamic { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InnerTrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub partition: Partition,
    pub lr: LrRule,
}

impl Default for InnerTrainConfig {
    fn default() -> Self {
        Self { loss: LossKind::DotProduct, epochs: 1, partition: Partition::FullBatch, lr: LrRule::Fixed { eta: 1.0 } }
    }
}

impl InnerTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("inner epochs must be >= 1".into()));
        }
        if !self.lr.eta().is_finite() {
            return Err(Error::Config(format!("inner learning rate {} is not finite", self.lr.eta())));
        }
        if let Partition::Sequential(0) = self.partition {
            return Err(Error::Config("sequential partition needs at least one part".into()));
        }
        Ok(())
    }

    /// Number of weight updates applied per sequence.
    pub fn steps(&self) -> usize {
        let parts = match self.partition {
            Partition::FullBatch => 1,
            Partition::Sequential(p) => p,
        };
        self.epochs * parts
    }
}

/// Runs the inner gradient steps on `(k, v)` and returns the adapted model.
///
/// `gate` holds the `[N×1]` dynamic-rate logits `x·W_η` and is required
/// exactly when `cfg.lr` is dynamic. Convolutional kinds see the whole grid
/// in every step: the forward runs over all of `k`, the loss is taken on the
/// current batch rows only, and `∂L/∂V̂` is zero outside them.
///
/// Any non-finite value produced during a step is reported as
/// [`Error::Divergence`] naming that step.
pub fn inner_update<T: Real, O: Ops<T>>(
    ops: &mut O,
    model: &InnerModel<O::V>,
    k: &O::V,
    v: &O::V,
    cfg: &InnerTrainConfig,
    gate: Option<&O::V>,
    grid: Option<Grid>,
) -> Result<InnerModel<O::V>> {
    cfg.validate()?;
    let (n, _) = ops.value(k).dims2("inner_update")?;
    let (nv, _) = ops.value(v).dims2("inner_update")?;
    if n != nv {
        return Err(crate::tensor::shape_err("inner_update", ops.value(k).shape(), ops.value(v).shape()));
    }
    let eta = cfg.lr.eta();
    let rates = match (cfg.lr, gate) {
        (LrRule::Fixed { .. }, None) => None,
        (LrRule::Dynamic { .. }, Some(g)) => {
            let s = ops.sigmoid(g)?;
            Some(ops.scale(&s, eta)?)
        }
        (LrRule::Fixed { .. }, Some(_)) => {
            return Err(Error::Config("gate logits given for a fixed inner learning rate".into()))
        }
        (LrRule::Dynamic { .. }, None) => {
            return Err(Error::Config("dynamic inner learning rate needs gate logits".into()))
        }
    };
    let ranges = partition_batches(n, cfg.partition)?;
    let conv = model.kind.conv_groups().is_some();

    let mut current = model.clone();
    for epoch in 0..cfg.epochs {
        for (batch, r) in ranges.iter().enumerate() {
            let whole = r.start == 0 && r.end == n;
            let step = |ops: &mut O, current: &InnerModel<O::V>| -> Result<InnerModel<O::V>> {
                let slice = |ops: &mut O, t: &O::V| -> Result<O::V> {
                    if whole {
                        Ok(t.clone())
                    } else {
                        ops.slice_rows(t, r.start, r.end)
                    }
                };
                let v_b = slice(ops, v)?;
                let (x, vhat, cache) = if conv {
                    let (full, cache) = forward_cached(ops, current, k, grid)?;
                    (k.clone(), slice(ops, &full)?, cache)
                } else {
                    let k_b = slice(ops, k)?;
                    let (vhat, cache) = forward_cached(ops, current, &k_b, grid)?;
                    (k_b, vhat, cache)
                };
                let d = loss_grad(ops, cfg.loss, &vhat, &v_b)?;
                let mut d = match &rates {
                    None => ops.scale(&d, eta)?,
                    Some(rates) => {
                        let rb = slice(ops, rates)?;
                        ops.mul_col(&d, &rb)?
                    }
                };
                if conv && !whole {
                    d = ops.pad_rows(&d, r.start, n)?;
                }
                let grads = weight_grads(ops, current, &x, &cache, &d, grid)?;
                let weights =
                    current.weights.iter().zip(&grads).map(|(w, g)| ops.sub(w, g)).collect::<Result<Vec<_>>>()?;
                if weights.iter().any(|w| !ops.value(w).all_finite()) {
                    return Err(Error::Divergence { epoch, batch });
                }
                Ok(InnerModel { kind: current.kind, dim: current.dim, weights })
            };
            current = step(ops, &current).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Divergence { epoch, batch },
                e => e,
            })?;
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner::InnerKind;
    use crate::tensor::{matmul, matmul_tn, Tensor};
    use crate::Eager;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn init(kind: InnerKind, d: usize, seed: u64) -> InnerModel<Tensor<f64>> {
        InnerModel::init(kind, d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn cfg(loss: LossKind, partition: Partition, eta: f64) -> InnerTrainConfig {
        InnerTrainConfig { loss, epochs: 1, partition, lr: LrRule::Fixed { eta } }
    }

    fn update(
        m: &InnerModel<Tensor<f64>>,
        k: &Tensor<f64>,
        v: &Tensor<f64>,
        c: &InnerTrainConfig,
    ) -> InnerModel<Tensor<f64>> {
        inner_update(&mut Eager::new(), m, k, v, c, None, Grid::square(k.shape()[0])).unwrap()
    }

    fn max_diff(a: &InnerModel<Tensor<f64>>, b: &InnerModel<Tensor<f64>>) -> f64 {
        a.weights.iter().zip(&b.weights).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max)
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn fc_mse_closed_form_example() {
        let m = InnerModel::<Tensor<f64>>::zeros(InnerKind::Fc, 2).unwrap();
        let k = Tensor::eye(2);
        let v = Tensor::from_rows(&[&[2.0, 0.0], &[0.0, 4.0]]).unwrap();
        let w = update(&m, &k, &v, &cfg(LossKind::Mse, Partition::FullBatch, 1.0));
        let s = 2.0 * 2f64.sqrt();
        let want = Tensor::from_rows(&[&[2.0 / s, 0.0], &[0.0, 4.0 / s]]).unwrap();
        assert!(w.weights[0].max_abs_diff(&want) < 1e-12);
        assert!((w.weights[0].at(0, 0) - 0.707_11).abs() < 1e-5);
        assert!((w.weights[0].at(1, 1) - 1.414_21).abs() < 1e-5);
    }

    #[test]
    fn fc_mse_one_step_closed_form() {
        let (k, v) = (random(&[7, 4], 1), random(&[7, 4], 2));
        let m = init(InnerKind::Fc, 4, 3);
        let eta = 0.7;
        let w = update(&m, &k, &v, &cfg(LossKind::Mse, Partition::FullBatch, eta));
        let w0 = &m.weights[0];
        let resid = matmul(&k, w0).unwrap().sub(&v).unwrap();
        let g = matmul_tn(&k, &resid).unwrap().scale(eta / (7.0 * 2.0));
        assert!(w.weights[0].max_abs_diff(&w0.sub(&g).unwrap()) < 1e-10);
    }

    #[test]
    fn zero_rate_keeps_weights() {
        let (k, v) = (random(&[9, 4], 4), random(&[9, 4], 5));
        for kind in InnerKind::ALL {
            let m = init(kind, 4, 6);
            let c = InnerTrainConfig { epochs: 2, ..cfg(LossKind::Mse, Partition::Sequential(3), 0.0) };
            assert_eq!(max_diff(&update(&m, &k, &v, &c), &m), 0.0, "{kind:?}");
        }
    }

    #[test]
    fn full_batch_is_permutation_invariant() {
        let (k, v) = (random(&[9, 4], 7), random(&[9, 4], 8));
        let perm = [4, 0, 7, 2, 8, 1, 3, 6, 5];
        let pk = Tensor::from_fn(&[9, 4], |i| k.data()[perm[i / 4] * 4 + i % 4]);
        let pv = Tensor::from_fn(&[9, 4], |i| v.data()[perm[i / 4] * 4 + i % 4]);
        for kind in InnerKind::ALL.into_iter().filter(|k| k.conv_groups().is_none()) {
            for loss in LossKind::ALL {
                let m = init(kind, 4, 9);
                let c = cfg(loss, Partition::FullBatch, 1.0);
                let diff = max_diff(&update(&m, &k, &v, &c), &update(&m, &pk, &pv, &c));
                assert!(diff < 1e-12, "{kind:?} {loss:?}: {diff}");
            }
        }
    }

    #[test]
    fn scaling_is_absorbed_into_rate() {
        let (k, v) = (random(&[6, 4], 10), random(&[6, 4], 11));
        let m = InnerModel::<Tensor<f64>>::zeros(InnerKind::Fc, 4).unwrap();
        let eta = 2.5;
        let a = update(&m, &k, &v, &cfg(LossKind::Mse, Partition::FullBatch, eta));
        let r = eta.sqrt();
        let b = update(&m, &k.scale(r), &v.scale(r), &cfg(LossKind::Mse, Partition::FullBatch, 1.0));
        assert!(max_diff(&a, &b) < 1e-10);
    }

    #[test]
    fn sequential_batches_are_causal() {
        let (k, v) = (random(&[9, 4], 12), random(&[9, 4], 13));
        let swap = |t: &Tensor<f64>, a: usize, b: usize| {
            Tensor::from_fn(&[9, 4], |i| {
                let row = match i / 4 {
                    r if r == a => b,
                    r if r == b => a,
                    r => r,
                };
                t.data()[row * 4 + i % 4]
            })
        };
        let m = init(InnerKind::Mlp { ratio: 1, layers: 2 }, 4, 14);
        let c = cfg(LossKind::Mse, Partition::Sequential(3), 1.0);
        let base = update(&m, &k, &v, &c);
        let within = update(&m, &swap(&k, 3, 5), &swap(&v, 3, 5), &c);
        assert!(max_diff(&base, &within) < 1e-12);
        let across = update(&m, &swap(&k, 2, 3), &swap(&v, 2, 3), &c);
        assert!(max_diff(&base, &across) > 1e-6);
    }

    #[test]
    fn zero_gate_halves_rate_exactly() {
        let (k, v) = (random(&[9, 4], 15), random(&[9, 4], 16));
        let gate = Tensor::<f64>::zeros(&[9, 1]);
        for kind in InnerKind::ALL {
            let m = init(kind, 4, 17);
            let dynamic = InnerTrainConfig {
                lr: LrRule::Dynamic { eta: 0.8 },
                ..cfg(LossKind::SmoothL1, Partition::Sequential(2), 0.0)
            };
            let grid = Grid::square(9);
            let a = inner_update(&mut Eager::new(), &m, &k, &v, &dynamic, Some(&gate), grid).unwrap();
            let b = update(&m, &k, &v, &cfg(LossKind::SmoothL1, Partition::Sequential(2), 0.4));
            assert_eq!(a, b, "{kind:?}");
        }
    }

    #[test]
    fn gate_must_match_rule() {
        let (k, v) = (random(&[4, 2], 18), random(&[4, 2], 19));
        let m = init(InnerKind::Fc, 2, 20);
        let c = InnerTrainConfig { lr: LrRule::Dynamic { eta: 1.0 }, ..Default::default() };
        assert!(matches!(inner_update(&mut Eager::new(), &m, &k, &v, &c, None, None), Err(Error::Config(_))));
        let gate = Tensor::zeros(&[4, 1]);
        let c = InnerTrainConfig::default();
        assert!(inner_update(&mut Eager::new(), &m, &k, &v, &c, Some(&gate), None).is_err());
    }

    #[test]
    fn divergence_names_the_step() {
        let k = Tensor::<f64>::full(&[4, 2], 1e200);
        let v = Tensor::<f64>::full(&[4, 2], -1e200);
        let m = init(InnerKind::Fc, 2, 21);
        let c = InnerTrainConfig { epochs: 3, ..cfg(LossKind::Mse, Partition::Sequential(2), 1.0) };
        let mut ops = Eager { check_finite: false, ..Eager::new() };
        let err = inner_update(&mut ops, &m, &k, &v, &c, None, None).unwrap_err();
        assert_eq!(err, Error::Divergence { epoch: 0, batch: 0 });
        let mut ops = Eager { check_finite: true, ..Eager::new() };
        let err = inner_update(&mut ops, &m, &k, &v, &c, None, None).unwrap_err();
        assert_eq!(err, Error::Divergence { epoch: 0, batch: 0 });
    }

    /// Each conv step sees the full grid while the loss covers only the
    /// batch rows.
    #[test]
    fn conv_mini_batch_matches_masked_oracle() {
        use crate::tensor::{conv3x3_tokens, conv3x3_weight_grad};
        let grid = Grid::new(3, 3);
        let (k, v) = (random(&[9, 2], 22), random(&[9, 2], 23));
        for kind in [InnerKind::DwConv3x3, InnerKind::Conv3x3] {
            let groups = kind.conv_groups().unwrap();
            let m = init(kind, 2, 24);
            let c = cfg(LossKind::Mse, Partition::Sequential(2), 0.9);
            let got = update(&m, &k, &v, &c);

            let mut w = m.weights[0].clone();
            for (start, end) in [(0, 5), (5, 9)] {
                let out = conv3x3_tokens(&k, grid, &w, groups).unwrap();
                let scale = 0.9 / ((end - start) as f64 * 2f64.sqrt());
                let d = Tensor::from_fn(&[9, 2], |i| {
                    let row = i / 2;
                    if (start..end).contains(&row) {
                        scale * (out.data()[i] - v.data()[i])
                    } else {
                        0.0
                    }
                });
                w = w.sub(&conv3x3_weight_grad(&k, &d, grid, groups).unwrap()).unwrap();
            }
            assert!(got.weights[0].max_abs_diff(&w) < 1e-12, "{kind:?}");
        }
    }
}
