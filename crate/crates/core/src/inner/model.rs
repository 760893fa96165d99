use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::tensor::Tensor;
use crate::{Error, Grid, Groups, Ops, Real, Result};
use num_traits::Float;

/// Architecture of the inner model. Every kind maps `[B×d] → [B×d]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InnerKind {
    /// `XW`
    Fc,
    /// `l` linear layers with hidden width `ratio·d` and SiLU in between.
    Mlp { ratio: usize, layers: usize },
    /// `SiLU(XW)`
    SiluFc,
    /// `(SiLU(XW₁) ⊙ XW₂)W₃`, hidden width `d`.
    SwiGlu,
    /// `(XW_a) ⊙ SiLU(XW_b)`
    GatedFc,
    /// Dense 3×3 convolution over the token grid.
    Conv3x3,
    /// Depthwise 3×3 convolution over the token grid.
    DwConv3x3,
    /// `SiLU(XW₁)W₂ + X`
    MlpResidual,
    /// `SiLU(XW₁)(W₂ + I)`
    MlpW2PlusI,
    /// Two-layer MLP with `W₂` initialized to the identity.
    MlpW2InitI,
}

impl InnerKind {
    /// One representative of each architecture.
    pub const ALL: [InnerKind; 10] = [
        InnerKind::Fc,
        InnerKind::Mlp { ratio: 1, layers: 2 },
        InnerKind::SiluFc,
        InnerKind::SwiGlu,
        InnerKind::GatedFc,
        InnerKind::Conv3x3,
        InnerKind::DwConv3x3,
        InnerKind::MlpResidual,
        InnerKind::MlpW2PlusI,
        InnerKind::MlpW2InitI,
    ];

    pub fn name(self) -> String {
        match self {
            InnerKind::Fc => "fc".into(),
            InnerKind::Mlp { ratio, layers } => format!("mlp_r{ratio}_l{layers}"),
            InnerKind::SiluFc => "silu_fc".into(),
            InnerKind::SwiGlu => "swiglu".into(),
            InnerKind::GatedFc => "gated_fc".into(),
            InnerKind::Conv3x3 => "conv3x3".into(),
            InnerKind::DwConv3x3 => "dwconv3x3".into(),
            InnerKind::MlpResidual => "mlp_residual".into(),
            InnerKind::MlpW2PlusI => "mlp_w2_plus_i".into(),
            InnerKind::MlpW2InitI => "mlp_w2_init_i".into(),
        }
    }

    pub fn conv_groups(self) -> Option<Groups> {
        match self {
            InnerKind::Conv3x3 => Some(Groups::Full),
            InnerKind::DwConv3x3 => Some(Groups::Depthwise),
            _ => None,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            InnerKind::Mlp { ratio, layers } if ratio == 0 || layers == 0 => {
                Err(Error::Config(format!("mlp inner model needs ratio >= 1 and layers >= 1, got r{ratio} l{layers}")))
            }
            _ => Ok(()),
        }
    }

    /// Weight shapes in storage order for head dimension `d`.
    pub fn weight_shapes(self, d: usize) -> Vec<Vec<usize>> {
        match self {
            InnerKind::Fc | InnerKind::SiluFc => vec![vec![d, d]],
            InnerKind::Mlp { ratio, layers } => {
                let h = ratio * d;
                (0..layers)
                    .map(|i| {
                        let rows = if i == 0 { d } else { h };
                        let cols = if i + 1 == layers { d } else { h };
                        vec![rows, cols]
                    })
                    .collect()
            }
            InnerKind::SwiGlu => vec![vec![d, d]; 3],
            InnerKind::GatedFc => vec![vec![d, d]; 2],
            InnerKind::Conv3x3 => vec![Groups::Full.kernel_shape(d, d)],
            InnerKind::DwConv3x3 => vec![Groups::Depthwise.kernel_shape(d, d)],
            InnerKind::MlpResidual | InnerKind::MlpW2PlusI | InnerKind::MlpW2InitI => {
                vec![vec![d, d]; 2]
            }
        }
    }

    pub fn param_count(self, d: usize) -> usize {
        self.weight_shapes(d).iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Multiply-adds of one forward pass over `n` tokens.
    pub fn forward_macs(self, n: usize, d: usize) -> u64 {
        let n = n as u64;
        match self {
            InnerKind::Conv3x3 => 9 * n * (d * d) as u64,
            InnerKind::DwConv3x3 => 9 * n * d as u64,
            _ => n * self.param_count(d) as u64,
        }
    }
}

/// An inner model: its architecture plus one value per weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerModel<V> {
    pub kind: InnerKind,
    pub dim: usize,
    pub weights: Vec<V>,
}

impl<V> InnerModel<V> {
    pub fn map<U>(&self, f: impl FnMut(&V) -> U) -> InnerModel<U> {
        InnerModel { kind: self.kind, dim: self.dim, weights: self.weights.iter().map(f).collect() }
    }
}

impl<T: Real> InnerModel<Tensor<T>> {
    /// Uniform `±1/√fan_in` initialization; `MlpW2InitI` sets `W₂ = I`.
    pub fn init(kind: InnerKind, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        kind.validate()?;
        let weights = kind
            .weight_shapes(dim)
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                if kind == InnerKind::MlpW2InitI && i == 1 {
                    return Tensor::eye(dim);
                }
                let fan_in: usize = shape[..shape.len() - 1].iter().product();
                let fan_in = if kind == InnerKind::DwConv3x3 { 9 } else { fan_in };
                let bound = 1.0 / Float::sqrt(fan_in as f64);
                Tensor::from_fn(&shape, |_| T::of(rng.random_range(-bound..bound)))
            })
            .collect();
        Ok(Self { kind, dim, weights })
    }

    /// All-zero weights, e.g. for closed-form checks.
    pub fn zeros(kind: InnerKind, dim: usize) -> Result<Self> {
        kind.validate()?;
        let weights = kind.weight_shapes(dim).iter().map(|s| Tensor::zeros(s)).collect();
        Ok(Self { kind, dim, weights })
    }

    pub fn check_shapes(&self) -> Result<()> {
        self.kind.validate()?;
        let want = self.kind.weight_shapes(self.dim);
        if want.len() != self.weights.len() {
            return Err(Error::Config(format!(
                "{} expects {} weight tensors, got {}",
                self.kind.name(),
                want.len(),
                self.weights.len()
            )));
        }
        for (w, s) in self.weights.iter().zip(&want) {
            if w.shape() != s.as_slice() {
                return Err(crate::tensor::shape_err("inner_model", w.shape(), s));
            }
        }
        Ok(())
    }
}

fn need_grid(grid: Option<Grid>) -> Result<Grid> {
    grid.ok_or(Error::MissingGrid { op: "inner_forward" })
}

/// Forward pass returning the output and the activations `weight_grads`
/// needs.
pub(crate) fn forward_cached<T: Real, O: Ops<T>>(
    ops: &mut O,
    model: &InnerModel<O::V>,
    x: &O::V,
    grid: Option<Grid>,
) -> Result<(O::V, Vec<O::V>)> {
    let w = &model.weights;
    match model.kind {
        InnerKind::Fc => Ok((ops.matmul(x, &w[0])?, vec![])),
        InnerKind::SiluFc => {
            let z = ops.matmul(x, &w[0])?;
            Ok((ops.silu(&z)?, vec![z]))
        }
        InnerKind::Mlp { .. } | InnerKind::MlpW2InitI | InnerKind::MlpResidual => {
            let mut cache = Vec::with_capacity(2 * w.len());
            let mut h = x.clone();
            for wi in &w[..w.len() - 1] {
                let z = ops.matmul(&h, wi)?;
                h = ops.silu(&z)?;
                cache.push(z);
                cache.push(h.clone());
            }
            let mut out = ops.matmul(&h, &w[w.len() - 1])?;
            if model.kind == InnerKind::MlpResidual {
                out = ops.add(&out, x)?;
            }
            Ok((out, cache))
        }
        InnerKind::MlpW2PlusI => {
            let z = ops.matmul(x, &w[0])?;
            let h = ops.silu(&z)?;
            let hw = ops.matmul(&h, &w[1])?;
            let out = ops.add(&hw, &h)?;
            Ok((out, vec![z, h]))
        }
        InnerKind::SwiGlu => {
            let a = ops.matmul(x, &w[0])?;
            let b = ops.matmul(x, &w[1])?;
            let sa = ops.silu(&a)?;
            let h = ops.mul(&sa, &b)?;
            let out = ops.matmul(&h, &w[2])?;
            Ok((out, vec![a, b, sa, h]))
        }
        InnerKind::GatedFc => {
            let a = ops.matmul(x, &w[0])?;
            let b = ops.matmul(x, &w[1])?;
            let sb = ops.silu(&b)?;
            let out = ops.mul(&a, &sb)?;
            Ok((out, vec![a, b, sb]))
        }
        InnerKind::Conv3x3 | InnerKind::DwConv3x3 => {
            let groups = model.kind.conv_groups().expect("conv kind");
            let out = ops.conv3x3(x, &w[0], need_grid(grid)?, groups)?;
            Ok((out, vec![]))
        }
    }
}

/// `F_W(X)` for `X: [B×d]`; convolutional kinds read the rows as a grid.
pub fn inner_forward<T: Real, O: Ops<T>>(
    ops: &mut O,
    model: &InnerModel<O::V>,
    x: &O::V,
    grid: Option<Grid>,
) -> Result<O::V> {
    Ok(forward_cached(ops, model, x, grid)?.0)
}

/// Analytic `∂L/∂W` for each weight given the input `x`, the cached
/// activations of `forward_cached` and `d = ∂L/∂F_W(x)`. Each expression is
/// linear in `d`.
pub fn weight_grads<T: Real, O: Ops<T>>(
    ops: &mut O,
    model: &InnerModel<O::V>,
    x: &O::V,
    cache: &[O::V],
    d: &O::V,
    grid: Option<Grid>,
) -> Result<Vec<O::V>> {
    let w = &model.weights;
    match model.kind {
        InnerKind::Fc => Ok(vec![ops.matmul_tn(x, d)?]),
        InnerKind::SiluFc => {
            let sp = ops.silu_prime(&cache[0])?;
            let dz = ops.mul(d, &sp)?;
            Ok(vec![ops.matmul_tn(x, &dz)?])
        }
        InnerKind::Mlp { .. } | InnerKind::MlpW2InitI | InnerKind::MlpResidual => {
            let l = w.len();
            let mut grads = vec![None; l];
            let mut dz = d.clone();
            for i in (0..l).rev() {
                let input = if i == 0 { x } else { &cache[2 * i - 1] };
                grads[i] = Some(ops.matmul_tn(input, &dz)?);
                if i > 0 {
                    let dh = ops.matmul_nt(&dz, &w[i])?;
                    let sp = ops.silu_prime(&cache[2 * i - 2])?;
                    dz = ops.mul(&dh, &sp)?;
                }
            }
            Ok(grads.into_iter().map(|g| g.expect("every layer visited")).collect())
        }
        InnerKind::MlpW2PlusI => {
            let (z, h) = (&cache[0], &cache[1]);
            let g2 = ops.matmul_tn(h, d)?;
            let dhw = ops.matmul_nt(d, &w[1])?;
            let dh = ops.add(&dhw, d)?;
            let sp = ops.silu_prime(z)?;
            let dz = ops.mul(&dh, &sp)?;
            Ok(vec![ops.matmul_tn(x, &dz)?, g2])
        }
        InnerKind::SwiGlu => {
            let (a, b, sa, h) = (&cache[0], &cache[1], &cache[2], &cache[3]);
            let g3 = ops.matmul_tn(h, d)?;
            let dh = ops.matmul_nt(d, &w[2])?;
            let sp = ops.silu_prime(a)?;
            let dhb = ops.mul(&dh, b)?;
            let da = ops.mul(&dhb, &sp)?;
            let db = ops.mul(&dh, sa)?;
            Ok(vec![ops.matmul_tn(x, &da)?, ops.matmul_tn(x, &db)?, g3])
        }
        InnerKind::GatedFc => {
            let (a, b, sb) = (&cache[0], &cache[1], &cache[2]);
            let da = ops.mul(d, sb)?;
            let sp = ops.silu_prime(b)?;
            let dsa = ops.mul(d, a)?;
            let db = ops.mul(&dsa, &sp)?;
            Ok(vec![ops.matmul_tn(x, &da)?, ops.matmul_tn(x, &db)?])
        }
        InnerKind::Conv3x3 | InnerKind::DwConv3x3 => {
            let groups = model.kind.conv_groups().expect("conv kind");
            Ok(vec![ops.conv3x3_weight_grad(x, d, need_grid(grid)?, groups)?])
        }
    }
}
