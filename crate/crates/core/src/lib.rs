//! Test-time-training (TTT) attention for vision sequence models.
//!
//! A TTT layer compresses the key/value pairs of a sequence into the weights
//! of a small inner model by running explicit gradient steps on a
//! reconstruction loss, then reads the adapted model out with the queries.
//! Every step of that inner loop is expressed with the primitives in
//! [`ops::Op`], so the same code runs eagerly on [`Tensor`]s or recorded on an
//! [`autodiff::Tape`] where one reverse pass yields outer-loop gradients that
//! flow through the inner updates.
//!
//! The crate is `no_std` (it needs `alloc`); IO, file formats, data loading
//! and the command line live in the companion `ttt-harness` crate.

#![no_std]

extern crate alloc;

pub mod attention;
pub mod autodiff;
mod error;
pub mod inner;
pub mod model;
pub mod ops;
mod real;
pub mod tensor;

pub use error::{Error, Result};
pub use ops::{Eager, Op, Ops};
pub use real::{DType, Real};
pub use tensor::{Grid, Groups, Tensor};
