//! Host-side companion to `ttt-core`: tensor and checkpoint files, CIFAR-10
//! and synthetic datasets, the training loop, and the ablation, benchmark,
//! gradient-check and loss-report commands behind the `ttt` binary.

pub mod ablate;
pub mod alloc_counter;
pub mod bench;
pub mod checkpoint;
pub mod cmd;
pub mod config;
pub mod container;
pub mod data;
mod error;
pub mod gradcheck;
pub mod lossreport;
pub mod train;

pub use error::{HarnessError, IoContext, Result};
