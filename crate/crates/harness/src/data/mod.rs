//! Datasets: CIFAR-10 binary batches, the synthetic associative-recall task,
//! container-format storage and image augmentation.

mod augment;
mod cifar;
mod store;
mod synth;

pub use augment::{augment, crop_shift, flip_horizontal, Augment};
pub use cifar::{
    load_cifar10, load_cifar10_dir, parse_cifar10, write_cifar10, CIFAR_CLASSES, CIFAR_RECORD, CIFAR_SIDE,
};
pub use store::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use synth::{synth_recall_task, SynthConfig};

use serde::{Deserialize, Serialize};
use ttt_core::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// Labelled samples. Images are `[32×32×3]` in `[0,1]`; token tasks store
/// `[len×dim]` sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The first `n` samples.
    pub fn truncate(mut self, n: usize) -> Self {
        self.samples.truncate(n);
        self.labels.truncate(n);
        self
    }
}

/// Training and validation sets described by `cfg`. Synthetic sets are drawn
/// from streams derived from `seed`.
pub fn load_data(cfg: &crate::config::DataConfig, seed: u64) -> crate::Result<(Dataset, Dataset)> {
    use crate::config::DataConfig;
    use crate::train::derive_seed;
    match cfg {
        DataConfig::Synthetic { task, train, val } => Ok((
            synth_recall_task(derive_seed(seed, 10, 0), *train, task, Split::Train),
            synth_recall_task(derive_seed(seed, 11, 0), *val, task, Split::Val),
        )),
        DataConfig::Cifar10 { dir, train, val } => {
            let mut tr = load_cifar10_dir(dir, Split::Train)?;
            let mut va = load_cifar10_dir(dir, Split::Val)?;
            if let Some(n) = train {
                tr = tr.truncate(*n);
            }
            if let Some(n) = val {
                va = va.truncate(*n);
            }
            Ok((tr, va))
        }
    }
}
