//! Reconstruction losses between predictions `V̂` and targets `V`, both
//! `[B×d]`, all normalized by `1/(B·√d)`.

use crate::tensor::{self, Tensor};
use crate::{Eager, Ops, Real, Result};
use num_traits::Float;

/// Lower bound applied to the RMSE inner sum before the square root.
pub const RMSE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    /// `−(1/(B√d)) Σ V̂ᵢ·Vᵢ`
    DotProduct,
    /// `(1/(2B√d)) Σ ‖V̂ᵢ − Vᵢ‖²`
    Mse,
    /// `sqrt((1/(B√d)) Σ ‖V̂ᵢ − Vᵢ‖²)`
    Rmse,
    /// `(1/(B√d)) Σ ‖V̂ᵢ − Vᵢ‖₁`
    Mae,
    /// Huber with threshold 1, `(1/(B√d)) Σ ℓ(V̂ᵢⱼ − Vᵢⱼ)`
    SmoothL1,
}

impl LossKind {
    pub const ALL: [LossKind; 5] =
        [LossKind::DotProduct, LossKind::Mse, LossKind::Rmse, LossKind::Mae, LossKind::SmoothL1];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::DotProduct => "dot_product",
            LossKind::Mse => "mse",
            LossKind::Rmse => "rmse",
            LossKind::Mae => "mae",
            LossKind::SmoothL1 => "smooth_l1",
        }
    }
}

fn norm<T: Real>(vhat: &Tensor<T>, v: &Tensor<T>, op: &'static str) -> Result<f64> {
    let (b, d) = vhat.dims2(op)?;
    if v.shape() != vhat.shape() {
        return Err(crate::tensor::shape_err(op, vhat.shape(), v.shape()));
    }
    Ok(1.0 / (b as f64 * Float::sqrt(d as f64)))
}

fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// Scalar loss value, accumulated in `f64`.
pub fn inner_loss<T: Real>(kind: LossKind, vhat: &Tensor<T>, v: &Tensor<T>) -> Result<f64> {
    let c = norm(vhat, v, "inner_loss")?;
    let pairs = vhat.data().iter().zip(v.data()).map(|(a, b)| (a.f64(), b.f64()));
    Ok(match kind {
        LossKind::DotProduct => -c * pairs.map(|(a, b)| a * b).sum::<f64>(),
        LossKind::Mse => 0.5 * c * pairs.map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
        LossKind::Rmse => Float::sqrt(c * pairs.map(|(a, b)| (a - b) * (a - b)).sum::<f64>()),
        LossKind::Mae => c * pairs.map(|(a, b)| (a - b).abs()).sum::<f64>(),
        LossKind::SmoothL1 => c * pairs.map(|(a, b)| smooth_l1(a - b)).sum::<f64>(),
    })
}

/// `∂L/∂V̂` expressed with primitives so it can be recorded on a tape.
///
/// RMSE uses `max(S, RMSE_FLOOR)` so a perfect fit yields a zero gradient
/// instead of `0/0`.
pub fn loss_grad<T: Real, O: Ops<T>>(ops: &mut O, kind: LossKind, vhat: &O::V, v: &O::V) -> Result<O::V> {
    let c = norm(ops.value(vhat), ops.value(v), "inner_loss_grad")?;
    match kind {
        LossKind::DotProduct => ops.scale(v, -c),
        LossKind::Mse => {
            let diff = ops.sub(vhat, v)?;
            ops.scale(&diff, c)
        }
        LossKind::Rmse => {
            let diff = ops.sub(vhat, v)?;
            let sq = ops.mul(&diff, &diff)?;
            let total = ops.sum_all(&sq)?;
            let s = ops.scale(&total, c)?;
            let s = ops.max_scalar(&s, RMSE_FLOOR)?;
            let root = ops.sqrt(&s)?;
            let inv = ops.recip(&root)?;
            let g = ops.mul(&diff, &inv)?;
            ops.scale(&g, c)
        }
        LossKind::Mae => {
            let diff = ops.sub(vhat, v)?;
            let s = ops.sign(&diff)?;
            ops.scale(&s, c)
        }
        LossKind::SmoothL1 => {
            let diff = ops.sub(vhat, v)?;
            let clipped = ops.clamp(&diff, -1.0, 1.0)?;
            ops.scale(&clipped, c)
        }
    }
}

/// Eager `∂L/∂V̂`.
pub fn inner_loss_grad<T: Real>(kind: LossKind, vhat: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let mut ops = Eager { check_finite: false, ..Eager::default() };
    loss_grad(&mut ops, kind, vhat, v)
}

/// Entrywise closed form of `∂²L / ∂Vᵢⱼ ∂V̂ᵢⱼ`.
///
/// MAE is reported as zero everywhere (it is undefined only on the measure-zero
/// set `V̂ᵢⱼ = Vᵢⱼ`); SmoothL1 is `−1/(B√d)` strictly inside the unit band and
/// zero outside.
pub fn mixed_second_derivative<T: Real>(kind: LossKind, vhat: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let c = norm(vhat, v, "mixed_second_derivative")?;
    let diff = tensor::zip(vhat, v, "mixed_second_derivative", |a, b| a - b)?;
    Ok(match kind {
        LossKind::DotProduct | LossKind::Mse => Tensor::full(vhat.shape(), T::of(-c)),
        LossKind::Rmse => {
            let s = (c * diff.data().iter().map(|x| x.f64() * x.f64()).sum::<f64>()).max(RMSE_FLOOR);
            tensor::map(&diff, |x| {
                let x = x.f64();
                T::of(-c / Float::sqrt(s) + c * c * x * x / (s * Float::sqrt(s)))
            })
        }
        LossKind::Mae => Tensor::zeros(vhat.shape()),
        LossKind::SmoothL1 => tensor::map(&diff, |x| if x.abs() < T::one() { T::of(-c) } else { T::zero() }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn dot_product_value() {
        let vh = Tensor::<f64>::from_rows(&[&[1.0, 2.0, 0.0, 0.0]]).unwrap();
        let v = Tensor::<f64>::from_rows(&[&[3.0, 0.0, 0.0, 1.0]]).unwrap();
        assert!((inner_loss(LossKind::DotProduct, &vh, &v).unwrap() + 1.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_fit_and_smooth_l1_value() {
        let v = random(&[3, 4], 1);
        assert_eq!(inner_loss(LossKind::Mse, &v, &v).unwrap(), 0.0);
        let vh = Tensor::<f64>::full(&[1, 4], 0.5);
        let z = Tensor::<f64>::zeros(&[1, 4]);
        assert!((inner_loss(LossKind::SmoothL1, &vh, &z).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rmse_guard_at_perfect_fit() {
        let v = random(&[2, 4], 2);
        let g = inner_loss_grad(LossKind::Rmse, &v, &v).unwrap();
        assert_eq!(g, Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn gradient_closed_forms() {
        let (vh, v) = (random(&[3, 4], 3), random(&[3, 4], 4));
        let c = 1.0 / (3.0 * 2.0);
        let dot = inner_loss_grad(LossKind::DotProduct, &vh, &v).unwrap();
        assert!(dot.max_abs_diff(&v.scale(-c)) < 1e-15);
        let mae = inner_loss_grad(LossKind::Mae, &vh, &v).unwrap();
        for ((g, a), b) in mae.data().iter().zip(vh.data()).zip(v.data()) {
            assert_eq!(*g, if a > b { c } else { -c });
        }
    }

    /// Central differences of the scalar loss against the analytic gradient.
    #[test]
    fn gradients_match_finite_differences() {
        let (vh, v) = (random(&[3, 4], 5), random(&[3, 4], 6));
        let eps = 1e-6;
        for kind in LossKind::ALL {
            let g = inner_loss_grad(kind, &vh, &v).unwrap();
            for j in 0..vh.numel() {
                let mut p = vh.clone();
                p.data_mut()[j] += eps;
                let mut m = vh.clone();
                m.data_mut()[j] -= eps;
                let fd = (inner_loss(kind, &p, &v).unwrap() - inner_loss(kind, &m, &v).unwrap()) / (2.0 * eps);
                assert!((fd - g.data()[j]).abs() < 1e-8, "{kind:?} entry {j}: {fd} vs {}", g.data()[j]);
            }
        }
    }

    #[test]
    fn mixed_derivative_examples() {
        let (vh, v) = (random(&[2, 4], 7), random(&[2, 4], 8));
        let mse = mixed_second_derivative(LossKind::Mse, &vh, &v).unwrap();
        assert!(mse.data().iter().all(|&x| x == -0.25));
        let mae = mixed_second_derivative(LossKind::Mae, &vh, &v).unwrap();
        assert!(mae.data().iter().all(|&x| x == 0.0));

        let vh = Tensor::<f64>::from_rows(&[&[0.5, 2.0, -0.5, -2.0]]).unwrap();
        let z = Tensor::<f64>::zeros(&[1, 4]);
        let s = mixed_second_derivative(LossKind::SmoothL1, &vh, &z).unwrap();
        assert_eq!(s.data(), &[-0.5, 0.0, -0.5, 0.0]);
    }
}
