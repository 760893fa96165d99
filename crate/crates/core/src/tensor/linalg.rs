use alloc::vec;

use super::{shape_err, Tensor};
use crate::{Real, Result};

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// `A[m×k] · B[k×n]`. Accumulates over `k` in ascending order.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(shape_err("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for (i, row) in out.chunks_exact_mut(n).enumerate() {
        for p in 0..k {
            let alpha = ad[i * k + p];
            axpy(alpha, &bd[p * n..(p + 1) * n], row);
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `A[m×k] · B[n×k]ᵀ`, materializing `Bᵀ` first.
pub fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = a.dims2("matmul_nt")?;
    let (_, k2) = b.dims2("matmul_nt")?;
    if k != k2 {
        return Err(shape_err("matmul_nt", a.shape(), b.shape()));
    }
    matmul(a, &transpose(b)?)
}

/// `A[k×m]ᵀ · B[k×n]`, accumulating over the shared row index in order.
pub fn matmul_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = a.dims2("matmul_tn")?;
    let (k2, n) = b.dims2("matmul_tn")?;
    if k != k2 {
        return Err(shape_err("matmul_tn", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for (i, row) in out.chunks_exact_mut(n).enumerate() {
            axpy(ad[p * m + i], brow, row);
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn transpose<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = a.dims2("transpose")?;
    let ad = a.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}
