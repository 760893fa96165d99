use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{merge_heads, project, uniform, Projection};
use crate::inner::{inner_forward, inner_update, InnerKind, InnerModel, InnerTrainConfig};
use crate::{Error, Grid, Ops, Real, Result, Tensor};

/// Assignment of inner-model architectures to heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum HeadLayout {
    /// Every head uses the same kind.
    Uniform(InnerKind),
    /// Head 0 is a depthwise 3×3 convolution, the rest are gated linear units.
    Vit3,
}

impl HeadLayout {
    pub fn kind(self, head: usize) -> InnerKind {
        match self {
            HeadLayout::Uniform(kind) => kind,
            HeadLayout::Vit3 if head == 0 => InnerKind::DwConv3x3,
            HeadLayout::Vit3 => InnerKind::GatedFc,
        }
    }

    pub fn kinds(self, heads: usize) -> impl Iterator<Item = InnerKind> {
        (0..heads).map(move |h| self.kind(h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TttConfig {
    pub inner: InnerTrainConfig,
    pub layout: HeadLayout,
    /// Row-normalize `Q` and `K` of every head before the inner loop.
    #[cfg_attr(feature = "serde", serde(default))]
    pub qk_l2_norm: bool,
}

impl Default for TttConfig {
    fn default() -> Self {
        Self { inner: InnerTrainConfig::default(), layout: HeadLayout::Vit3, qk_l2_norm: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TttHead<V> {
    pub proj: Projection<V>,
    /// Initial inner weights `W₀`.
    pub inner: InnerModel<V>,
    /// `[C×1]` dynamic-rate projection `W_η`, present iff the rate is dynamic.
    pub w_eta: Option<V>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TttParams<V> {
    pub heads: Vec<TttHead<V>>,
    /// `[C×C]`
    pub wo: V,
    /// `[1×C]`
    pub bo: V,
}

pub(crate) fn head_dim(c: usize, heads: usize) -> Result<usize> {
    if heads == 0 || !c.is_multiple_of(heads) {
        return Err(Error::Config(format!("embedding dim {c} is not divisible by {heads} heads")));
    }
    Ok(c / heads)
}

impl<V> TttParams<V> {
    /// Maps every tensor, passing a stable dotted name.
    pub fn map_named<'a, U>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a V) -> U) -> TttParams<U> {
        let heads = self
            .heads
            .iter()
            .enumerate()
            .map(|(h, head)| {
                let name = |s: &str| format!("{prefix}.head{h}.{s}");
                TttHead {
                    proj: Projection {
                        wq: f(&name("wq"), &head.proj.wq),
                        wk: f(&name("wk"), &head.proj.wk),
                        wv: f(&name("wv"), &head.proj.wv),
                    },
                    inner: InnerModel {
                        kind: head.inner.kind,
                        dim: head.inner.dim,
                        weights: head
                            .inner
                            .weights
                            .iter()
                            .enumerate()
                            .map(|(i, w)| f(&name(&format!("w0_{i}")), w))
                            .collect(),
                    },
                    w_eta: head.w_eta.as_ref().map(|w| f(&name("w_eta"), w)),
                }
            })
            .collect();
        TttParams { heads, wo: f(&format!("{prefix}.wo"), &self.wo), bo: f(&format!("{prefix}.bo"), &self.bo) }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&V) -> U) -> TttParams<U> {
        self.map_named("", &mut |_, v| f(v))
    }
}

impl<T: Real> TttParams<Tensor<T>> {
    pub fn init(c: usize, heads: usize, cfg: &TttConfig, rng: &mut impl Rng) -> Result<Self> {
        let d = head_dim(c, heads)?;
        let heads = cfg
            .layout
            .kinds(heads)
            .map(|kind| {
                Ok(TttHead {
                    proj: Projection::init(c, d, rng),
                    inner: InnerModel::init(kind, d, rng)?,
                    w_eta: cfg.inner.lr.is_dynamic().then(|| Tensor::zeros(&[c, 1])),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { heads, wo: uniform(&[c, c], c, rng), bo: Tensor::zeros(&[1, c]) })
    }
}

fn l2_rows<T: Real, O: Ops<T>>(ops: &mut O, x: &O::V) -> Result<O::V> {
    let sq = ops.mul(x, x)?;
    let s = ops.row_sums(&sq)?;
    let s = ops.max_scalar(&s, 1e-12)?;
    let norm = ops.sqrt(&s)?;
    ops.div_col(x, &norm)
}

/// Per-head outputs `F_{W*}(Q)`, each `[N×d]`.
pub fn ttt_heads<T: Real, O: Ops<T>>(
    ops: &mut O,
    x: &O::V,
    p: &TttParams<O::V>,
    cfg: &TttConfig,
    grid: Option<Grid>,
) -> Result<Vec<O::V>> {
    p.heads
        .iter()
        .map(|head| {
            let (mut q, mut k, v) = project(ops, x, &head.proj)?;
            if cfg.qk_l2_norm {
                q = l2_rows(ops, &q)?;
                k = l2_rows(ops, &k)?;
            }
            let gate = match &head.w_eta {
                Some(w) => Some(ops.matmul(x, w)?),
                None => None,
            };
            let adapted = inner_update(ops, &head.inner, &k, &v, &cfg.inner, gate.as_ref(), grid)?;
            inner_forward(ops, &adapted, &q, grid)
        })
        .collect()
}

/// TTT token mixer on `x: [N×C]`. `grid` is required when a head uses a
/// convolutional inner model.
pub fn ttt_attention<T: Real, O: Ops<T>>(
    ops: &mut O,
    x: &O::V,
    p: &TttParams<O::V>,
    cfg: &TttConfig,
    grid: Option<Grid>,
) -> Result<O::V> {
    let heads = ttt_heads(ops, x, p, cfg, grid)?;
    merge_heads(ops, heads, &p.wo, &p.bo)
}
