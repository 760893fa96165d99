//! 3×3 convolutions over a token grid with zero padding and no bias.
//!
//! Tokens are stored as `[N×c]` rows in raster order of an `height×width`
//! grid. Kernels are `[3, 3, c]` (depthwise) or `[3, 3, c_in, c_out]` (full).
//! The three kernels below are the partial derivatives of the trilinear form
//! `Σ_p Σ_o X[p+o]·W[o]·D[p]`, which is what makes their backward rules close
//! over the same set.

use alloc::vec;

use super::{shape_err, Tensor};
use crate::{Error, Real, Result};

/// Spatial layout of a token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    /// Square grid for `tokens`, if it is a perfect square.
    pub fn square(tokens: usize) -> Option<Self> {
        let side = (0..=tokens).find(|s| s * s >= tokens)?;
        (side * side == tokens).then_some(Self::new(side, side))
    }

    /// Near-square grid `2^⌊log2 N / 2⌋ × N / that` for power-of-two `N`.
    pub fn for_tokens(tokens: usize) -> Option<Self> {
        if let Some(g) = Self::square(tokens) {
            return Some(g);
        }
        let mut h = 1;
        while (h * 2) * (h * 2) <= tokens {
            h *= 2;
        }
        tokens.is_multiple_of(h).then_some(Self::new(h, tokens / h))
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn check(&self, tokens: usize) -> Result<()> {
        if self.tokens() == tokens {
            Ok(())
        } else {
            Err(Error::Grid { tokens, height: self.height, width: self.width })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Groups {
    /// Dense `c_in → c_out` convolution.
    Full,
    /// One kernel per channel.
    Depthwise,
}

impl Groups {
    pub fn kernel_shape(self, c_in: usize, c_out: usize) -> alloc::vec::Vec<usize> {
        match self {
            Groups::Full => vec![3, 3, c_in, c_out],
            Groups::Depthwise => vec![3, 3, c_in],
        }
    }
}

/// Output channel count implied by a kernel for `c_in` input channels.
fn out_channels<T: Real>(w: &Tensor<T>, c_in: usize, groups: Groups, op: &'static str) -> Result<usize> {
    match (groups, w.shape()) {
        (Groups::Depthwise, [3, 3, c]) if *c == c_in => Ok(c_in),
        (Groups::Full, [3, 3, ci, co]) if *ci == c_in => Ok(*co),
        _ => Err(shape_err(op, w.shape(), &groups.kernel_shape(c_in, c_in))),
    }
}

/// Visits every (output token, kernel tap, input token) triple whose input
/// token lies inside the grid.
#[inline]
fn for_each_tap(grid: Grid, mut f: impl FnMut(usize, usize, usize)) {
    let (h, w) = (grid.height as isize, grid.width as isize);
    for ky in 0..3isize {
        for kx in 0..3isize {
            let tap = (ky * 3 + kx) as usize;
            let (dy, dx) = (ky - 1, kx - 1);
            for y in 0.max(-dy)..h.min(h - dy) {
                for x in 0.max(-dx)..w.min(w - dx) {
                    let p = (y * w + x) as usize;
                    let q = ((y + dy) * w + (x + dx)) as usize;
                    f(p, tap, q);
                }
            }
        }
    }
}

/// `Y[p] = Σ_o X[p+o] · W[o]` on `[N×c]` tokens.
pub fn conv3x3_tokens<T: Real>(x: &Tensor<T>, grid: Grid, w: &Tensor<T>, groups: Groups) -> Result<Tensor<T>> {
    let (n, c) = x.dims2("conv3x3")?;
    grid.check(n)?;
    let co = out_channels(w, c, groups, "conv3x3")?;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![T::zero(); n * co];
    match groups {
        Groups::Depthwise => for_each_tap(grid, |p, tap, q| {
            let k = &wd[tap * c..(tap + 1) * c];
            let src = &xd[q * c..(q + 1) * c];
            for ((o, &s), &kv) in out[p * c..(p + 1) * c].iter_mut().zip(src).zip(k) {
                *o = *o + s * kv;
            }
        }),
        Groups::Full => for_each_tap(grid, |p, tap, q| {
            let dst = &mut out[p * co..(p + 1) * co];
            for ci in 0..c {
                let s = xd[q * c + ci];
                let k = &wd[(tap * c + ci) * co..(tap * c + ci + 1) * co];
                for (o, &kv) in dst.iter_mut().zip(k) {
                    *o = *o + s * kv;
                }
            }
        }),
    }
    Ok(Tensor::from_parts(vec![n, co], out))
}

/// `∂⟨D, conv(X, W)⟩/∂W`: `G[o] = Σ_p X[p+o] ⊗ D[p]`.
pub fn conv3x3_weight_grad<T: Real>(x: &Tensor<T>, d: &Tensor<T>, grid: Grid, groups: Groups) -> Result<Tensor<T>> {
    let (n, c) = x.dims2("conv3x3_weight_grad")?;
    let (n2, co) = d.dims2("conv3x3_weight_grad")?;
    grid.check(n)?;
    if n2 != n || (groups == Groups::Depthwise && co != c) {
        return Err(shape_err("conv3x3_weight_grad", x.shape(), d.shape()));
    }
    let (xd, dd) = (x.data(), d.data());
    let shape = groups.kernel_shape(c, co);
    let mut out = vec![T::zero(); shape.iter().product()];
    match groups {
        Groups::Depthwise => for_each_tap(grid, |p, tap, q| {
            let src = &xd[q * c..(q + 1) * c];
            let g = &dd[p * c..(p + 1) * c];
            for ((o, &s), &gv) in out[tap * c..(tap + 1) * c].iter_mut().zip(src).zip(g) {
                *o = *o + s * gv;
            }
        }),
        Groups::Full => for_each_tap(grid, |p, tap, q| {
            let g = &dd[p * co..(p + 1) * co];
            for ci in 0..c {
                let s = xd[q * c + ci];
                let dst = &mut out[(tap * c + ci) * co..(tap * c + ci + 1) * co];
                for (o, &gv) in dst.iter_mut().zip(g) {
                    *o = *o + s * gv;
                }
            }
        }),
    }
    Ok(Tensor::from_parts(shape, out))
}

/// `∂⟨D, conv(X, W)⟩/∂X`: scatters `D[p]·W[o]ᵀ` back onto `X[p+o]`.
pub fn conv3x3_input_grad<T: Real>(d: &Tensor<T>, w: &Tensor<T>, grid: Grid, groups: Groups) -> Result<Tensor<T>> {
    let (n, co) = d.dims2("conv3x3_input_grad")?;
    grid.check(n)?;
    let c = match (groups, w.shape()) {
        (Groups::Depthwise, [3, 3, c]) if *c == co => co,
        (Groups::Full, [3, 3, ci, o]) if *o == co => *ci,
        _ => return Err(shape_err("conv3x3_input_grad", w.shape(), d.shape())),
    };
    let (dd, wd) = (d.data(), w.data());
    let mut out = vec![T::zero(); n * c];
    match groups {
        Groups::Depthwise => for_each_tap(grid, |p, tap, q| {
            let k = &wd[tap * c..(tap + 1) * c];
            let g = &dd[p * c..(p + 1) * c];
            for ((o, &gv), &kv) in out[q * c..(q + 1) * c].iter_mut().zip(g).zip(k) {
                *o = *o + gv * kv;
            }
        }),
        Groups::Full => for_each_tap(grid, |p, tap, q| {
            let g = &dd[p * co..(p + 1) * co];
            for ci in 0..c {
                let k = &wd[(tap * c + ci) * co..(tap * c + ci + 1) * co];
                let acc: T = g.iter().zip(k).map(|(&a, &b)| a * b).sum();
                out[q * c + ci] = out[q * c + ci] + acc;
            }
        }),
    }
    Ok(Tensor::from_parts(vec![n, c], out))
}

/// Convolution of an `[H×W×c]` feature map; same-size output.
pub fn conv3x3<T: Real>(x: &Tensor<T>, w: &Tensor<T>, groups: Groups) -> Result<Tensor<T>> {
    let (h, wd, c) = match x.shape() {
        [h, w, c] => (*h, *w, *c),
        other => {
            return Err(Error::InvalidShape { shape: other.to_vec(), reason: "conv3x3 expects an H×W×C feature map" })
        }
    };
    let tokens = x.reshape(&[h * wd, c])?;
    let y = conv3x3_tokens(&tokens, Grid::new(h, wd), w, groups)?;
    let co = y.shape()[1];
    y.into_shape(&[h, wd, co])
}
