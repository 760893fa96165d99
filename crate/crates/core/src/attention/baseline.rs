use alloc::vec::Vec;

use rand::Rng;

use super::{merge_heads, project, uniform, Projection};
use crate::{Error, Ops, Real, Result, Tensor};

/// Smallest admissible linear-attention normalizer.
pub const DENOMINATOR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<V> {
    pub heads: Vec<Projection<V>>,
    /// `[C×C]`
    pub wo: V,
    /// `[1×C]`
    pub bo: V,
}

impl<V> AttentionParams<V> {
    pub fn map<U>(&self, mut f: impl FnMut(&V) -> U) -> AttentionParams<U> {
        AttentionParams { heads: self.heads.iter().map(|h| h.map(&mut f)).collect(), wo: f(&self.wo), bo: f(&self.bo) }
    }
}

impl<T: Real> AttentionParams<Tensor<T>> {
    pub fn init(c: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        let d = super::ttt::head_dim(c, heads)?;
        Ok(Self {
            heads: (0..heads).map(|_| Projection::init(c, d, rng)).collect(),
            wo: uniform(&[c, c], c, rng),
            bo: Tensor::zeros(&[1, c]),
        })
    }
}

/// `softmax(QKᵀ)V` without the `1/√d` factor.
pub fn softmax_core<T: Real, O: Ops<T>>(ops: &mut O, q: &O::V, k: &O::V, v: &O::V) -> Result<O::V> {
    let scores = ops.matmul_nt(q, k)?;
    let a = ops.softmax_rows(&scores)?;
    ops.matmul(&a, v)
}

/// The same map read as a two-layer network `σ(Q·W₁)·W₂` with `W₁ = Kᵀ` and
/// `W₂ = V`. Agrees with [`softmax_core`] bit for bit.
pub fn attention_mlp_oracle<T: Real, O: Ops<T>>(ops: &mut O, q: &O::V, k: &O::V, v: &O::V) -> Result<O::V> {
    let w1 = ops.transpose(k)?;
    let hidden = ops.matmul(q, &w1)?;
    let act = ops.softmax_rows(&hidden)?;
    ops.matmul(&act, v)
}

pub fn softmax_attention<T: Real, O: Ops<T>>(ops: &mut O, x: &O::V, p: &AttentionParams<O::V>) -> Result<O::V> {
    let outs = p
        .heads
        .iter()
        .map(|h| {
            let (q, k, v) = project(ops, x, h)?;
            softmax_core(ops, &q, &k, &v)
        })
        .collect::<Result<Vec<_>>>()?;
    merge_heads(ops, outs, &p.wo, &p.bo)
}

/// Nonnegative feature map `φ` for linear attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FeatureMap {
    /// `elu(x) + 1`
    #[default]
    Elu1,
    /// `φ(x) = x`; only valid on nonnegative inputs.
    Identity,
}

fn feature<T: Real, O: Ops<T>>(ops: &mut O, x: &O::V, phi: FeatureMap) -> Result<O::V> {
    match phi {
        FeatureMap::Elu1 => ops.elu1(x),
        FeatureMap::Identity => Ok(x.clone()),
    }
}

fn check_denominator<T: Real>(den: &Tensor<T>) -> Result<()> {
    let min = den.data().iter().map(|x| x.f64()).fold(f64::INFINITY, f64::min);
    if min < DENOMINATOR_FLOOR || !min.is_finite() {
        return Err(Error::Normalization { value: min });
    }
    Ok(())
}

/// `φ(Q)(φ(K)ᵀV) / (φ(Q)Σⱼφ(Kⱼ)ᵀ)` accumulated in `O(N·d²)`.
pub fn linear_core<T: Real, O: Ops<T>>(ops: &mut O, q: &O::V, k: &O::V, v: &O::V, phi: FeatureMap) -> Result<O::V> {
    let fq = feature(ops, q, phi)?;
    let fk = feature(ops, k, phi)?;
    let kv = ops.matmul_tn(&fk, v)?;
    let num = ops.matmul(&fq, &kv)?;
    let ksum = ops.col_sums(&fk)?;
    let den = ops.matmul_nt(&fq, &ksum)?;
    check_denominator(ops.value(&den))?;
    ops.div_col(&num, &den)
}

/// Reference form that materializes the `[N×N]` kernel matrix.
pub fn linear_attention_quadratic<T: Real, O: Ops<T>>(
    ops: &mut O,
    q: &O::V,
    k: &O::V,
    v: &O::V,
    phi: FeatureMap,
) -> Result<O::V> {
    let fq = feature(ops, q, phi)?;
    let fk = feature(ops, k, phi)?;
    let a = ops.matmul_nt(&fq, &fk)?;
    let den = ops.row_sums(&a)?;
    check_denominator(ops.value(&den))?;
    let num = ops.matmul(&a, v)?;
    ops.div_col(&num, &den)
}

pub fn linear_attention<T: Real, O: Ops<T>>(
    ops: &mut O,
    x: &O::V,
    p: &AttentionParams<O::V>,
    phi: FeatureMap,
) -> Result<O::V> {
    let outs = p
        .heads
        .iter()
        .map(|h| {
            let (q, k, v) = project(ops, x, h)?;
            linear_core(ops, &q, &k, &v, phi)
        })
        .collect::<Result<Vec<_>>>()?;
    merge_heads(ops, outs, &p.wo, &p.bo)
}
