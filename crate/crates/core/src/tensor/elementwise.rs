use alloc::vec;
use alloc::vec::Vec;

use super::{shape_err, Tensor};
use crate::{Error, Real, Result};

pub fn map<T: Real>(a: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&v| f(v)).collect())
}

/// Pointwise binary op. Shapes must match, or one side must hold a single
/// element that is broadcast.
pub fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(a.shape().to_vec(), data))
    } else if b.numel() == 1 {
        let y = b.data()[0];
        Ok(map(a, |x| f(x, y)))
    } else if a.numel() == 1 {
        let x = a.data()[0];
        Ok(map(b, |y| f(x, y)))
    } else {
        Err(shape_err(op, a.shape(), b.shape()))
    }
}

/// `f(A[i,j], r[j])` for a `[1×n]` row vector `r`.
pub fn zip_rows<T: Real>(a: &Tensor<T>, r: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let (_, n) = a.dims2(op)?;
    if r.shape() != [1, n] {
        return Err(shape_err(op, a.shape(), r.shape()));
    }
    let rd = r.data();
    let data = a.data().chunks_exact(n).flat_map(|row| row.iter().zip(rd).map(|(&x, &y)| f(x, y))).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

/// `f(A[i,j], c[i])` for an `[m×1]` column vector `c`.
pub fn zip_cols<T: Real>(a: &Tensor<T>, c: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let (m, n) = a.dims2(op)?;
    if c.shape() != [m, 1] {
        return Err(shape_err(op, a.shape(), c.shape()));
    }
    let data = a
        .data()
        .chunks_exact(n)
        .zip(c.data())
        .flat_map(|(row, &y)| row.iter().map(move |&x| (x, y)))
        .map(|(x, y)| f(x, y))
        .collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = a.dims2("softmax_rows")?;
    let mut out = a.data().to_vec();
    for row in out.chunks_exact_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(Tensor::from_parts(a.shape().to_vec(), out))
}

/// Per-row standardization `(x − mean) / sqrt(var + eps)` without affine terms.
pub fn layer_norm_rows<T: Real>(a: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let (_, n) = a.dims2("layer_norm")?;
    let inv_n = T::one() / T::of(n as f64);
    let eps = T::of(eps);
    let mut out = a.data().to_vec();
    for row in out.chunks_exact_mut(n) {
        let mean = row.iter().copied().sum::<T>() * inv_n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let inv_std = T::one() / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv_std;
        }
    }
    Ok(Tensor::from_parts(a.shape().to_vec(), out))
}

pub fn sum_all<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(a.sum())
}

/// `[m×n] → [m×1]`.
pub fn row_sums<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = a.dims2("row_sums")?;
    let data = a.data().chunks_exact(n).map(|r| r.iter().copied().sum()).collect();
    Ok(Tensor::from_parts(vec![m, 1], data))
}

/// `[m×n] → [1×n]`, accumulating rows in order.
pub fn col_sums<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = a.dims2("col_sums")?;
    let mut out = vec![T::zero(); n];
    for row in a.data().chunks_exact(n) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    Ok(Tensor::from_parts(vec![1, n], out))
}

pub fn slice_rows<T: Real>(a: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
    let (m, n) = a.dims2("slice_rows")?;
    if start >= end || end > m {
        return Err(Error::InvalidShape { shape: vec![start, end], reason: "row range out of bounds or empty" });
    }
    Ok(Tensor::from_parts(vec![end - start, n], a.data()[start * n..end * n].to_vec()))
}

/// Embeds `a` at row `start` of a zero `[total×n]` matrix.
pub fn pad_rows<T: Real>(a: &Tensor<T>, start: usize, total: usize) -> Result<Tensor<T>> {
    let (m, n) = a.dims2("pad_rows")?;
    if start + m > total {
        return Err(shape_err("pad_rows", a.shape(), &[total, n]));
    }
    let mut out = vec![T::zero(); total * n];
    out[start * n..(start + m) * n].copy_from_slice(a.data());
    Ok(Tensor::from_parts(vec![total, n], out))
}

pub fn slice_cols<T: Real>(a: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
    let (m, n) = a.dims2("slice_cols")?;
    if start >= end || end > n {
        return Err(Error::InvalidShape { shape: vec![start, end], reason: "column range out of bounds or empty" });
    }
    let data = a.data().chunks_exact(n).flat_map(|row| row[start..end].iter().copied()).collect();
    Ok(Tensor::from_parts(vec![m, end - start], data))
}

pub fn concat_cols<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or(Error::Contract("concat of zero tensors"))?;
    let (m, _) = first.dims2("concat_cols")?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (pm, pn) = p.dims2("concat_cols")?;
        if pm != m {
            return Err(shape_err("concat_cols", first.shape(), p.shape()));
        }
        widths.push(pn);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(m * total);
    for i in 0..m {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
        }
    }
    Ok(Tensor::from_parts(vec![m, total], out))
}

pub fn concat_rows<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or(Error::Contract("concat of zero tensors"))?;
    let (_, n) = first.dims2("concat_rows")?;
    let mut rows = 0;
    let mut out = Vec::new();
    for p in parts {
        let (pm, pn) = p.dims2("concat_rows")?;
        if pn != n {
            return Err(shape_err("concat_rows", first.shape(), p.shape()));
        }
        rows += pm;
        out.extend_from_slice(p.data());
    }
    Ok(Tensor::from_parts(vec![rows, n], out))
}
