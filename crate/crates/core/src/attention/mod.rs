//! Multi-head token mixers: the TTT layer and the softmax / linear attention
//! baselines it is checked against.
//!
//! All mixers share the projection convention `Q = xW_Q`, `K = xW_K`,
//! `V = xW_V` per head, followed by concatenation and `W_O`.

mod baseline;
mod ttt;

pub use baseline::{
    attention_mlp_oracle, linear_attention, linear_attention_quadratic, linear_core, softmax_attention, softmax_core,
    AttentionParams, FeatureMap, DENOMINATOR_FLOOR,
};
pub use ttt::{ttt_attention, ttt_heads, HeadLayout, TttConfig, TttHead, TttParams};

use alloc::vec::Vec;

use rand::Rng;

use crate::{Ops, Real, Result, Tensor};
use num_traits::Float;

/// Per-head `W_Q`, `W_K`, `W_V`, each `[C×d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<V> {
    pub wq: V,
    pub wk: V,
    pub wv: V,
}

impl<V> Projection<V> {
    pub fn map<U>(&self, mut f: impl FnMut(&V) -> U) -> Projection<U> {
        Projection { wq: f(&self.wq), wk: f(&self.wk), wv: f(&self.wv) }
    }
}

impl<T: Real> Projection<Tensor<T>> {
    pub fn init(c: usize, d: usize, rng: &mut impl Rng) -> Self {
        Projection { wq: uniform(&[c, d], c, rng), wk: uniform(&[c, d], c, rng), wv: uniform(&[c, d], c, rng) }
    }
}

/// Uniform `±1/√fan_in` samples.
pub(crate) fn uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = 1.0 / Float::sqrt(fan_in as f64);
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
}

/// `(xW_Q, xW_K, xW_V)` for one head.
pub fn project<T: Real, O: Ops<T>>(ops: &mut O, x: &O::V, p: &Projection<O::V>) -> Result<(O::V, O::V, O::V)> {
    Ok((ops.matmul(x, &p.wq)?, ops.matmul(x, &p.wk)?, ops.matmul(x, &p.wv)?))
}

/// Concatenates head outputs and applies `W_O` and `b_O`.
pub(crate) fn merge_heads<T: Real, O: Ops<T>>(ops: &mut O, heads: Vec<O::V>, wo: &O::V, bo: &O::V) -> Result<O::V> {
    let cat = if heads.len() == 1 {
        heads.into_iter().next().expect("one head")
    } else {
        let refs: Vec<&O::V> = heads.iter().collect();
        ops.concat_cols(&refs)?
    };
    ops.linear(&cat, wo, Some(bo))
}
