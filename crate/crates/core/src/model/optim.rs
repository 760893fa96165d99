use alloc::vec::Vec;

use crate::tensor::{shape_err, Tensor};
use crate::{Real, Result};
use num_traits::Float;

/// AdamW hyperparameters with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.05 }
    }
}

/// First and second moments, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> OptState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { v: m.clone(), m, step: 0 }
    }
}

/// Whether weight decay applies to a tensor of this shape: matrices and
/// kernels decay, row vectors (biases, norm gains) do not.
pub fn decays(shape: &[usize]) -> bool {
    shape.len() >= 2 && !(shape.len() == 2 && shape[0] == 1)
}

/// One AdamW update at learning rate `lr`, in place.
pub fn adamw_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptState<T>,
    hyper: &AdamW,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - Float::powi(hyper.beta1, t);
    let bc2 = 1.0 - Float::powi(hyper.beta2, t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(shape_err("adamw_step", p.shape(), g.shape()));
        }
        let wd = if decays(p.shape()) { hyper.weight_decay } else { 0.0 };
        let shrink = 1.0 - lr * wd;
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            let gi = gi.f64();
            let mn = hyper.beta1 * mi.f64() + (1.0 - hyper.beta1) * gi;
            let vn = hyper.beta2 * vi.f64() + (1.0 - hyper.beta2) * gi * gi;
            *mi = T::of(mn);
            *vi = T::of(vn);
            let update = (mn / bc1) / (Float::sqrt(vn / bc2) + hyper.eps);
            *pi = T::of(pi.f64() * shrink - lr * update);
        }
    }
    Ok(())
}

/// Linear warmup to `base_lr`, then cosine decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        0.5 * self.base_lr * (1.0 + Float::cos(core::f64::consts::PI * progress))
    }
}

#[cfg(test)]
mod tests {
    use alloc::vec;

    use super::*;

    fn hyper(wd: f64) -> AdamW {
        AdamW { weight_decay: wd, ..AdamW::default() }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![Tensor::<f64>::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]).unwrap()];
        let before = p.clone();
        let g = vec![Tensor::zeros(&[2, 2])];
        let mut s = OptState::new(&p);
        for _ in 0..3 {
            adamw_step(&mut p, &g, &mut s, &hyper(0.0), 1e-2).unwrap();
        }
        assert_eq!(p, before);
    }

    /// Three steps on one scalar against the recurrence written out by hand.
    #[test]
    fn scalar_recurrence() {
        let mut p = vec![Tensor::<f64>::from_rows(&[&[1.0], &[0.0]]).unwrap()];
        let mut s = OptState::new(&p);
        let h = hyper(0.1);
        let lr = 0.01;
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, g) in [0.5f64, -1.0, 2.0].into_iter().enumerate() {
            let grads = vec![Tensor::from_rows(&[&[g], &[0.0]]).unwrap()];
            adamw_step(&mut p, &grads, &mut s, &h, lr).unwrap();
            let t = (t + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            x = x - lr * 0.1 * x - lr * mhat / (vhat.sqrt() + 1e-8);
        }
        assert!((p[0].at(0, 0) - x).abs() < 1e-15);
    }

    #[test]
    fn decay_only_shrinks() {
        let mut p = vec![Tensor::<f64>::full(&[2, 2], 2.0), Tensor::full(&[1, 2], 2.0)];
        let g = vec![Tensor::zeros(&[2, 2]), Tensor::zeros(&[1, 2])];
        let mut s = OptState::new(&p);
        for _ in 0..4 {
            adamw_step(&mut p, &g, &mut s, &hyper(0.5), 0.1).unwrap();
        }
        assert!((p[0].at(0, 0) - 2.0 * 0.95f64.powi(4)).abs() < 1e-15);
        assert_eq!(p[1].at(0, 0), 2.0);
    }

    #[test]
    fn decay_mask() {
        assert!(decays(&[4, 4]) && decays(&[3, 3, 8]) && decays(&[8, 1]));
        assert!(!decays(&[1, 8]) && !decays(&[8]));
    }

    #[test]
    fn schedule_shape() {
        let s = CosineSchedule { base_lr: 1.0, warmup_steps: 4, total_steps: 14 };
        assert_eq!(s.lr(0), 0.25);
        assert_eq!(s.lr(3), 1.0);
        assert_eq!(s.lr(4), 1.0);
        assert!((s.lr(9) - 0.5).abs() < 1e-12);
        assert!(s.lr(14).abs() < 1e-12);
        assert!(s.lr(100).abs() < 1e-12);
    }
}
