//! The closed set of primitives and the [`Ops`] abstraction over how they
//! are executed.
//!
//! Layer code is written once against [`Ops`]; [`Eager`] evaluates directly
//! and drops intermediates, [`Tape`](crate::autodiff::Tape) additionally
//! records every node for a reverse pass.

use alloc::vec::Vec;

use crate::tensor::{self, Grid, Groups, Tensor};
use crate::{Error, Real, Result};

/// A primitive operation. Non-tensor arguments (constants, ranges, layouts)
/// are carried in the variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Matmul,
    /// `A · Bᵀ`
    MatmulNt,
    /// `Aᵀ · B`
    MatmulTn,
    Transpose,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar(f64),
    Silu,
    /// Derivative of SiLU, needed when inner gradients are written out.
    SiluPrime,
    Sigmoid,
    Sign,
    Abs,
    Sqrt,
    Recip,
    Exp,
    /// `elu(x) + 1`
    Elu1,
    Clamp {
        lo: f64,
        hi: f64,
    },
    MaxScalar(f64),
    SoftmaxRows,
    LayerNorm {
        eps: f64,
    },
    /// `A[m×n] + r[1×n]`
    AddRow,
    /// `A[m×n] ⊙ r[1×n]`
    MulRow,
    /// `A[m×n] ⊙ c[m×1]`
    MulCol,
    /// `A[m×n] / c[m×1]`
    DivCol,
    SumAll,
    RowSums,
    ColSums,
    SliceRows {
        start: usize,
        end: usize,
    },
    PadRows {
        start: usize,
        total: usize,
    },
    SliceCols {
        start: usize,
        end: usize,
    },
    ConcatCols,
    ConcatRows,
    Reshape(Vec<usize>),
    Conv {
        grid: Grid,
        groups: Groups,
    },
    ConvWeightGrad {
        grid: Grid,
        groups: Groups,
    },
    /// Mean negative log-likelihood of `labels` under row-softmax of logits.
    CrossEntropy(Vec<usize>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Matmul => "matmul",
            Op::MatmulNt => "matmul_nt",
            Op::MatmulTn => "matmul_tn",
            Op::Transpose => "transpose",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Silu => "silu",
            Op::SiluPrime => "silu_prime",
            Op::Sigmoid => "sigmoid",
            Op::Sign => "sign",
            Op::Abs => "abs",
            Op::Sqrt => "sqrt",
            Op::Recip => "recip",
            Op::Exp => "exp",
            Op::Elu1 => "elu1",
            Op::Clamp { .. } => "clamp",
            Op::MaxScalar(_) => "max_scalar",
            Op::SoftmaxRows => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::AddRow => "add_row",
            Op::MulRow => "mul_row",
            Op::MulCol => "mul_col",
            Op::DivCol => "div_col",
            Op::SumAll => "sum_all",
            Op::RowSums => "row_sums",
            Op::ColSums => "col_sums",
            Op::SliceRows { .. } => "slice_rows",
            Op::PadRows { .. } => "pad_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols => "concat_cols",
            Op::ConcatRows => "concat_rows",
            Op::Reshape(_) => "reshape",
            Op::Conv { .. } => "conv3x3",
            Op::ConvWeightGrad { .. } => "conv3x3_weight_grad",
            Op::CrossEntropy(_) => "cross_entropy",
        }
    }

    /// Number of tensor arguments, or `None` for variadic ops.
    fn arity(&self) -> Option<usize> {
        match self {
            Op::ConcatCols | Op::ConcatRows => None,
            Op::Matmul
            | Op::MatmulNt
            | Op::MatmulTn
            | Op::Add
            | Op::Sub
            | Op::Mul
            | Op::Div
            | Op::AddRow
            | Op::MulRow
            | Op::MulCol
            | Op::DivCol
            | Op::Conv { .. }
            | Op::ConvWeightGrad { .. } => Some(2),
            _ => Some(1),
        }
    }

    /// Multiply-adds performed by the forward evaluation.
    pub fn macs<T: Real>(&self, args: &[&Tensor<T>]) -> u64 {
        let s = |i: usize| args[i].shape();
        match self {
            Op::Matmul => (s(0)[0] * s(0)[1] * s(1)[1]) as u64,
            Op::MatmulNt => (s(0)[0] * s(0)[1] * s(1)[0]) as u64,
            Op::MatmulTn => (s(0)[0] * s(0)[1] * s(1)[1]) as u64,
            Op::Conv { groups, .. } => {
                let (n, c) = (s(0)[0], s(0)[1]);
                match groups {
                    Groups::Depthwise => (9 * n * c) as u64,
                    Groups::Full => (9 * n * c * s(1)[3]) as u64,
                }
            }
            Op::ConvWeightGrad { groups, .. } => {
                let (n, c) = (s(0)[0], s(0)[1]);
                match groups {
                    Groups::Depthwise => (9 * n * c) as u64,
                    Groups::Full => (9 * n * c * s(1)[1]) as u64,
                }
            }
            _ => 0,
        }
    }
}

/// Forward evaluation of `op`.
pub fn eval<T: Real>(op: &Op, args: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if let Some(n) = op.arity() {
        if args.len() != n {
            return Err(Error::Contract("wrong number of arguments for primitive"));
        }
    }
    let a = args.first().copied().ok_or(Error::Contract("primitive without arguments"))?;
    let b = || args[1];
    let c = |v: f64| T::of(v);
    Ok(match op {
        Op::Matmul => tensor::matmul(a, b())?,
        Op::MatmulNt => tensor::matmul_nt(a, b())?,
        Op::MatmulTn => tensor::matmul_tn(a, b())?,
        Op::Transpose => tensor::transpose(a)?,
        Op::Add => tensor::zip(a, b(), "add", |x, y| x + y)?,
        Op::Sub => tensor::zip(a, b(), "sub", |x, y| x - y)?,
        Op::Mul => tensor::zip(a, b(), "mul", |x, y| x * y)?,
        Op::Div => tensor::zip(a, b(), "div", |x, y| x / y)?,
        Op::Scale(k) => tensor::map(a, |x| x * c(*k)),
        Op::AddScalar(k) => tensor::map(a, |x| x + c(*k)),
        Op::Silu => tensor::map(a, T::silu),
        Op::SiluPrime => tensor::map(a, T::silu_prime),
        Op::Sigmoid => tensor::map(a, T::sigmoid),
        Op::Sign => tensor::map(a, T::sign),
        Op::Abs => tensor::map(a, T::abs),
        Op::Sqrt => tensor::map(a, T::sqrt),
        Op::Recip => tensor::map(a, T::recip),
        Op::Exp => tensor::map(a, T::exp),
        Op::Elu1 => tensor::map(a, |x| if x > T::zero() { x + T::one() } else { x.exp() }),
        Op::Clamp { lo, hi } => tensor::map(a, |x| x.max(c(*lo)).min(c(*hi))),
        Op::MaxScalar(k) => tensor::map(a, |x| x.max(c(*k))),
        Op::SoftmaxRows => tensor::softmax_rows(a)?,
        Op::LayerNorm { eps } => tensor::layer_norm_rows(a, *eps)?,
        Op::AddRow => tensor::zip_rows(a, b(), "add_row", |x, y| x + y)?,
        Op::MulRow => tensor::zip_rows(a, b(), "mul_row", |x, y| x * y)?,
        Op::MulCol => tensor::zip_cols(a, b(), "mul_col", |x, y| x * y)?,
        Op::DivCol => tensor::zip_cols(a, b(), "div_col", |x, y| x / y)?,
        Op::SumAll => tensor::sum_all(a),
        Op::RowSums => tensor::row_sums(a)?,
        Op::ColSums => tensor::col_sums(a)?,
        Op::SliceRows { start, end } => tensor::slice_rows(a, *start, *end)?,
        Op::PadRows { start, total } => tensor::pad_rows(a, *start, *total)?,
        Op::SliceCols { start, end } => tensor::slice_cols(a, *start, *end)?,
        Op::ConcatCols => tensor::concat_cols(args)?,
        Op::ConcatRows => tensor::concat_rows(args)?,
        Op::Reshape(shape) => a.reshape(shape)?,
        Op::Conv { grid, groups } => tensor::conv3x3_tokens(a, *grid, b(), *groups)?,
        Op::ConvWeightGrad { grid, groups } => tensor::conv3x3_weight_grad(a, b(), *grid, *groups)?,
        Op::CrossEntropy(labels) => cross_entropy(a, labels)?,
    })
}

fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (b, k) = logits.dims2("cross_entropy")?;
    if labels.len() != b || labels.iter().any(|&l| l >= k) {
        return Err(Error::Contract("cross_entropy labels must match rows and be < classes"));
    }
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        total = total + lse - row[label];
    }
    Ok(Tensor::scalar(total / T::of(b as f64)))
}

/// Execution strategy for primitives. `V` is a handle to a value: the tensor
/// itself for [`Eager`], a node id for a tape.
pub trait Ops<T: Real> {
    type V: Clone;

    /// Introduces a value that receives no gradient.
    fn constant(&mut self, t: Tensor<T>) -> Self::V;

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T>;

    fn apply(&mut self, op: Op, args: &[&Self::V]) -> Result<Self::V>;

    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::Matmul, &[a, b])
    }
    fn matmul_nt(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::MatmulNt, &[a, b])
    }
    fn matmul_tn(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::MatmulTn, &[a, b])
    }
    fn transpose(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::Transpose, &[a])
    }
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::Add, &[a, b])
    }
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::Sub, &[a, b])
    }
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::Mul, &[a, b])
    }
    fn div(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::Div, &[a, b])
    }
    fn scale(&mut self, a: &Self::V, k: f64) -> Result<Self::V> {
        self.apply(Op::Scale(k), &[a])
    }
    fn add_scalar(&mut self, a: &Self::V, k: f64) -> Result<Self::V> {
        self.apply(Op::AddScalar(k), &[a])
    }
    fn silu(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::Silu, &[a])
    }
    fn silu_prime(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::SiluPrime, &[a])
    }
    fn sigmoid(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::Sigmoid, &[a])
    }
    fn sign(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::Sign, &[a])
    }
    fn abs(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::Abs, &[a])
    }
    fn sqrt(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::Sqrt, &[a])
    }
    fn recip(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::Recip, &[a])
    }
    fn exp(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::Exp, &[a])
    }
    fn elu1(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::Elu1, &[a])
    }
    fn clamp(&mut self, a: &Self::V, lo: f64, hi: f64) -> Result<Self::V> {
        self.apply(Op::Clamp { lo, hi }, &[a])
    }
    fn max_scalar(&mut self, a: &Self::V, k: f64) -> Result<Self::V> {
        self.apply(Op::MaxScalar(k), &[a])
    }
    fn softmax_rows(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::SoftmaxRows, &[a])
    }
    fn layer_norm(&mut self, a: &Self::V, eps: f64) -> Result<Self::V> {
        self.apply(Op::LayerNorm { eps }, &[a])
    }
    fn add_row(&mut self, a: &Self::V, r: &Self::V) -> Result<Self::V> {
        self.apply(Op::AddRow, &[a, r])
    }
    fn mul_row(&mut self, a: &Self::V, r: &Self::V) -> Result<Self::V> {
        self.apply(Op::MulRow, &[a, r])
    }
    fn mul_col(&mut self, a: &Self::V, c: &Self::V) -> Result<Self::V> {
        self.apply(Op::MulCol, &[a, c])
    }
    fn div_col(&mut self, a: &Self::V, c: &Self::V) -> Result<Self::V> {
        self.apply(Op::DivCol, &[a, c])
    }
    fn sum_all(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::SumAll, &[a])
    }
    fn row_sums(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::RowSums, &[a])
    }
    fn col_sums(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::ColSums, &[a])
    }
    fn slice_rows(&mut self, a: &Self::V, start: usize, end: usize) -> Result<Self::V> {
        self.apply(Op::SliceRows { start, end }, &[a])
    }
    fn pad_rows(&mut self, a: &Self::V, start: usize, total: usize) -> Result<Self::V> {
        self.apply(Op::PadRows { start, total }, &[a])
    }
    fn slice_cols(&mut self, a: &Self::V, start: usize, end: usize) -> Result<Self::V> {
        self.apply(Op::SliceCols { start, end }, &[a])
    }
    fn concat_cols(&mut self, parts: &[&Self::V]) -> Result<Self::V> {
        self.apply(Op::ConcatCols, parts)
    }
    fn concat_rows(&mut self, parts: &[&Self::V]) -> Result<Self::V> {
        self.apply(Op::ConcatRows, parts)
    }
    fn reshape(&mut self, a: &Self::V, shape: &[usize]) -> Result<Self::V> {
        self.apply(Op::Reshape(shape.to_vec()), &[a])
    }
    fn conv3x3(&mut self, x: &Self::V, w: &Self::V, grid: Grid, groups: Groups) -> Result<Self::V> {
        self.apply(Op::Conv { grid, groups }, &[x, w])
    }
    fn conv3x3_weight_grad(&mut self, x: &Self::V, d: &Self::V, grid: Grid, groups: Groups) -> Result<Self::V> {
        self.apply(Op::ConvWeightGrad { grid, groups }, &[x, d])
    }
    fn cross_entropy(&mut self, logits: &Self::V, labels: &[usize]) -> Result<Self::V> {
        self.apply(Op::CrossEntropy(labels.to_vec()), &[logits])
    }

    /// `x·W + b` for row-token input.
    fn linear(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>) -> Result<Self::V> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(&y, b),
            None => Ok(y),
        }
    }
}

/// Counters collected while evaluating primitives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpStats {
    pub macs: u64,
    /// Largest element count of any produced value.
    pub max_numel: usize,
    pub ops: u64,
}

impl OpStats {
    pub(crate) fn record<T: Real>(&mut self, op: &Op, args: &[&Tensor<T>], out: &Tensor<T>) {
        self.macs += op.macs(args);
        self.max_numel = self.max_numel.max(out.numel());
        self.ops += 1;
    }
}

/// Direct evaluation; intermediates are freed as soon as they go out of scope.
#[derive(Debug, Clone)]
pub struct Eager {
    pub check_finite: bool,
    pub stats: OpStats,
}

impl Default for Eager {
    fn default() -> Self {
        Self { check_finite: cfg!(debug_assertions), stats: OpStats::default() }
    }
}

impl Eager {
    pub fn new() -> Self {
        Self::default()
    }
}

pub(crate) fn check_finite<T: Real>(op: &Op, out: &Tensor<T>) -> Result<()> {
    if out.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op: op.name() })
    }
}

impl<T: Real> Ops<T> for Eager {
    type V = Tensor<T>;

    fn constant(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }

    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }

    fn apply(&mut self, op: Op, args: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let out = eval(&op, args)?;
        self.stats.record(&op, args, &out);
        if self.check_finite {
            check_finite(&op, &out)?;
        }
        Ok(out)
    }
}

/// Convenience for tests and callers that only hold tensors.
pub fn eager<T: Real>(op: Op, args: &[&Tensor<T>]) -> Result<Tensor<T>> {
    eval(&op, args)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn elementwise_examples() {
        let z = Tensor::<f64>::scalar(0.0);
        let one = Tensor::<f64>::scalar(1.0);
        assert_eq!(eager(Op::Silu, &[&z]).unwrap().item().unwrap(), 0.0);
        let s1 = eager(Op::Silu, &[&one]).unwrap().item().unwrap();
        assert!((s1 - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((s1 - 0.73106).abs() < 1e-5);
        assert_eq!(eager(Op::Sigmoid, &[&z]).unwrap().item().unwrap(), 0.5);
        assert_eq!(eager(Op::Sign, &[&z]).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Tensor::<f64>::zeros(&[2, 4]);
        let l = eager(Op::CrossEntropy(vec![1, 3]), &[&logits]).unwrap();
        assert!((l.item().unwrap() - 4.0f64.ln()).abs() < 1e-15);
        assert!(eager(Op::CrossEntropy(vec![4, 0]), &[&logits]).is_err());
    }

    #[test]
    fn eager_flags_non_finite() {
        let mut e = Eager { check_finite: true, ..Eager::default() };
        let x = Tensor::<f64>::scalar(0.0);
        let err = e.recip(&x).unwrap_err();
        assert_eq!(err, Error::NonFinite { op: "recip" });
        e.check_finite = false;
        assert!(e.recip(&x).unwrap().item().unwrap().is_infinite());
    }

    #[test]
    fn counts_macs() {
        let mut e = Eager::new();
        let a = Tensor::<f64>::zeros(&[3, 4]);
        let b = Tensor::<f64>::zeros(&[4, 5]);
        e.matmul(&a, &b).unwrap();
        assert_eq!(e.stats.macs, 60);
        assert_eq!(e.stats.max_numel, 15);
    }

    #[test]
    fn arity_is_checked() {
        let a = Tensor::<f64>::zeros(&[2, 2]);
        assert!(eval(&Op::Matmul, &[&a]).is_err());
    }
}
