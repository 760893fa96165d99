//! Vector-Jacobian products for every [`Op`].

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{self, Tensor};
use crate::{Op, Real, Result};

/// Sums a full-shape gradient down to a broadcast scalar argument.
fn reduce_to<T: Real>(grad: Tensor<T>, arg: &Tensor<T>) -> Result<Tensor<T>> {
    if grad.shape() == arg.shape() {
        Ok(grad)
    } else {
        Tensor::new(arg.shape().to_vec(), vec![grad.sum()])
    }
}

/// Broadcasts a `[m×1]` column to `[m×n]`.
fn spread_cols<T: Real>(col: &Tensor<T>, n: usize) -> Tensor<T> {
    let m = col.numel();
    Tensor::from_fn(&[m, n], |i| col.data()[i / n])
}

/// Broadcasts a `[1×n]` row to `[m×n]`.
fn spread_rows<T: Real>(row: &Tensor<T>, m: usize) -> Tensor<T> {
    let n = row.numel();
    Tensor::from_fn(&[m, n], |i| row.data()[i % n])
}

fn pointwise<T: Real>(g: &Tensor<T>, x: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    tensor::zip(g, x, "vjp", f)
}

/// Gradients with respect to each argument, `None` where not needed or
/// identically zero.
pub(super) fn vjp<T: Real>(
    op: &Op,
    args: &[&Tensor<T>],
    out: &Tensor<T>,
    g: &Tensor<T>,
    need: &[bool],
) -> Result<Vec<Option<Tensor<T>>>> {
    let want = |i: usize| need.get(i).copied().unwrap_or(false);
    let one = |t: Result<Tensor<T>>| -> Result<Vec<Option<Tensor<T>>>> { Ok(vec![Some(t?)]) };
    let a = args[0];

    match op {
        Op::Matmul => {
            let b = args[1];
            Ok(vec![
                want(0).then(|| tensor::matmul_nt(g, b)).transpose()?,
                want(1).then(|| tensor::matmul_tn(a, g)).transpose()?,
            ])
        }
        Op::MatmulNt => {
            let b = args[1];
            Ok(vec![
                want(0).then(|| tensor::matmul(g, b)).transpose()?,
                want(1).then(|| tensor::matmul_tn(g, a)).transpose()?,
            ])
        }
        Op::MatmulTn => {
            let b = args[1];
            Ok(vec![
                want(0).then(|| tensor::matmul_nt(b, g)).transpose()?,
                want(1).then(|| tensor::matmul(a, g)).transpose()?,
            ])
        }
        Op::Transpose => one(tensor::transpose(g)),
        Op::Add | Op::Sub | Op::Mul | Op::Div => {
            let b = args[1];
            let ga = if want(0) {
                let full = match op {
                    Op::Add | Op::Sub => tensor::zip(g, out, "vjp", |gv, _| gv)?,
                    Op::Mul => pointwise(g, b, |gv, bv| gv * bv)?,
                    _ => pointwise(g, b, |gv, bv| gv / bv)?,
                };
                Some(reduce_to(full, a)?)
            } else {
                None
            };
            let gb = if want(1) {
                let full = match op {
                    Op::Add => tensor::zip(g, out, "vjp", |gv, _| gv)?,
                    Op::Sub => tensor::zip(g, out, "vjp", |gv, _| -gv)?,
                    Op::Mul => pointwise(g, a, |gv, av| gv * av)?,
                    _ => {
                        // d(a/b)/db = -(a/b)/b = -out/b
                        let q = pointwise(g, out, |gv, o| gv * o)?;
                        pointwise(&q, b, |v, bv| -v / bv)?
                    }
                };
                Some(reduce_to(full, b)?)
            } else {
                None
            };
            Ok(vec![ga, gb])
        }
        Op::Scale(k) => {
            let k = T::of(*k);
            one(Ok(tensor::map(g, |v| v * k)))
        }
        Op::AddScalar(_) | Op::Reshape(_) => one(g.reshape(a.shape())),
        Op::Silu => one(pointwise(g, a, |gv, x| gv * x.silu_prime())),
        Op::SiluPrime => one(pointwise(g, a, |gv, x| gv * x.silu_second())),
        Op::Sigmoid => one(pointwise(g, out, |gv, y| gv * y * (T::one() - y))),
        Op::Sign => Ok(vec![None]),
        Op::Abs => one(pointwise(g, a, |gv, x| gv * x.sign())),
        Op::Sqrt => one(pointwise(g, out, |gv, y| gv / (y + y))),
        Op::Recip => one(pointwise(g, out, |gv, y| -gv * y * y)),
        Op::Exp => one(pointwise(g, out, |gv, y| gv * y)),
        Op::Elu1 => {
            let d = tensor::zip(a, out, "vjp", |x, y| if x > T::zero() { T::one() } else { y })?;
            one(pointwise(g, &d, |gv, dv| gv * dv))
        }
        Op::Clamp { lo, hi } => {
            let (lo, hi) = (T::of(*lo), T::of(*hi));
            one(pointwise(g, a, |gv, x| if x > lo && x < hi { gv } else { T::zero() }))
        }
        Op::MaxScalar(k) => {
            let k = T::of(*k);
            one(pointwise(g, a, |gv, x| if x > k { gv } else { T::zero() }))
        }
        Op::SoftmaxRows => {
            let (_, n) = out.dims2("softmax_rows")?;
            let gy = pointwise(g, out, |gv, y| gv * y)?;
            let s = tensor::row_sums(&gy)?;
            let centered = tensor::zip(g, &spread_cols(&s, n), "vjp", |gv, sv| gv - sv)?;
            one(pointwise(&centered, out, |v, y| v * y))
        }
        Op::LayerNorm { eps } => {
            let (_, n) = a.dims2("layer_norm")?;
            let inv_n = T::one() / T::of(n as f64);
            let eps = T::of(*eps);
            let mut dx = Vec::with_capacity(a.numel());
            for ((xr, yr), gr) in a.data().chunks_exact(n).zip(out.data().chunks_exact(n)).zip(g.data().chunks_exact(n))
            {
                let mean = xr.iter().copied().sum::<T>() * inv_n;
                let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
                let inv_std = T::one() / (var + eps).sqrt();
                let g_mean = gr.iter().copied().sum::<T>() * inv_n;
                let gy_mean = gr.iter().zip(yr).map(|(&gv, &y)| gv * y).sum::<T>() * inv_n;
                dx.extend(gr.iter().zip(yr).map(|(&gv, &y)| inv_std * (gv - g_mean - y * gy_mean)));
            }
            one(Tensor::new(a.shape().to_vec(), dx))
        }
        Op::AddRow => Ok(vec![want(0).then(|| g.clone()), want(1).then(|| tensor::col_sums(g)).transpose()?]),
        Op::MulRow => {
            let r = args[1];
            Ok(vec![
                want(0).then(|| tensor::zip_rows(g, r, "vjp", |gv, rv| gv * rv)).transpose()?,
                want(1).then(|| tensor::col_sums(&pointwise(g, a, |gv, av| gv * av)?)).transpose()?,
            ])
        }
        Op::MulCol => {
            let c = args[1];
            Ok(vec![
                want(0).then(|| tensor::zip_cols(g, c, "vjp", |gv, cv| gv * cv)).transpose()?,
                want(1).then(|| tensor::row_sums(&pointwise(g, a, |gv, av| gv * av)?)).transpose()?,
            ])
        }
        Op::DivCol => {
            let c = args[1];
            let gc = if want(1) {
                let s = tensor::row_sums(&pointwise(g, out, |gv, o| gv * o)?)?;
                Some(tensor::zip(&s, c, "vjp", |sv, cv| -sv / cv)?)
            } else {
                None
            };
            Ok(vec![want(0).then(|| tensor::zip_cols(g, c, "vjp", |gv, cv| gv / cv)).transpose()?, gc])
        }
        Op::SumAll => {
            let gv = g.data()[0];
            one(Ok(Tensor::full(a.shape(), gv)))
        }
        Op::RowSums => {
            let (_, n) = a.dims2("row_sums")?;
            one(Ok(spread_cols(g, n)))
        }
        Op::ColSums => {
            let (m, _) = a.dims2("col_sums")?;
            one(Ok(spread_rows(g, m)))
        }
        Op::SliceRows { start, .. } => one(tensor::pad_rows(g, *start, a.shape()[0])),
        Op::PadRows { start, .. } => one(tensor::slice_rows(g, *start, *start + a.shape()[0])),
        Op::SliceCols { start, end } => {
            let (m, n) = a.dims2("slice_cols")?;
            let w = end - start;
            let gd = g.data();
            one(Ok(Tensor::from_fn(&[m, n], |i| {
                let (r, c) = (i / n, i % n);
                if c >= *start && c < *end {
                    gd[r * w + c - start]
                } else {
                    T::zero()
                }
            })))
        }
        Op::ConcatCols => {
            let mut offset = 0;
            let mut res = Vec::with_capacity(args.len());
            for (i, part) in args.iter().enumerate() {
                let w = part.shape()[1];
                res.push(want(i).then(|| tensor::slice_cols(g, offset, offset + w)).transpose()?);
                offset += w;
            }
            Ok(res)
        }
        Op::ConcatRows => {
            let mut offset = 0;
            let mut res = Vec::with_capacity(args.len());
            for (i, part) in args.iter().enumerate() {
                let h = part.shape()[0];
                res.push(want(i).then(|| tensor::slice_rows(g, offset, offset + h)).transpose()?);
                offset += h;
            }
            Ok(res)
        }
        Op::Conv { grid, groups } => {
            let w = args[1];
            Ok(vec![
                want(0).then(|| tensor::conv3x3_input_grad(g, w, *grid, *groups)).transpose()?,
                want(1).then(|| tensor::conv3x3_weight_grad(a, g, *grid, *groups)).transpose()?,
            ])
        }
        Op::ConvWeightGrad { grid, groups } => {
            // out = wgrad(X, D); ⟨U, out⟩ = T(X, U, D)
            let d = args[1];
            Ok(vec![
                want(0).then(|| tensor::conv3x3_input_grad(d, g, *grid, *groups)).transpose()?,
                want(1).then(|| tensor::conv3x3_tokens(a, *grid, g, *groups)).transpose()?,
            ])
        }
        Op::CrossEntropy(labels) => {
            let (b, k) = a.dims2("cross_entropy")?;
            let scale = g.data()[0] / T::of(b as f64);
            let mut p = tensor::softmax_rows(a)?;
            let pd = p.data_mut();
            for (i, &l) in labels.iter().enumerate() {
                pd[i * k + l] = pd[i * k + l] - T::one();
            }
            for v in pd.iter_mut() {
                *v = *v * scale;
            }
            one(Ok(p))
        }
    }
}
