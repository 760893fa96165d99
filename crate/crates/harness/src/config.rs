use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use ttt_core::attention::{HeadLayout, TttConfig};
use ttt_core::inner::{InnerTrainConfig, LossKind, LrRule, Partition};
use ttt_core::model::{InputSpec, ModelConfig, Readout};

use crate::data::{Augment, SynthConfig};

/// Outer-loop optimisation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    /// Image augmentation; ignored for token inputs.
    pub augment: Option<Augment>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.05,
            warmup_epochs: 2,
            augment: Some(Augment::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DataConfig {
    Synthetic { task: SynthConfig, train: usize, val: usize },
    Cifar10 { dir: PathBuf, train: Option<usize>, val: Option<usize> },
}

/// Everything needed to reproduce a training run, together with the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Associative recall on 8-token sequences with a one-block model.
    pub fn synthetic() -> Self {
        let task = SynthConfig::default();
        Self {
            model: ModelConfig {
                input: InputSpec::Tokens { len: task.len, dim: task.token_dim() },
                embed_dim: 32,
                heads: 2,
                depth: 1,
                mlp_ratio: 4,
                num_classes: task.classes,
                ttt: TttConfig {
                    inner: InnerTrainConfig {
                        loss: LossKind::DotProduct,
                        epochs: 1,
                        partition: Partition::FullBatch,
                        lr: LrRule::Fixed { eta: 1.0 },
                    },
                    layout: HeadLayout::Vit3,
                    qk_l2_norm: false,
                },
                readout: Readout::Last,
            },
            train: TrainConfig {
                epochs: 6,
                batch_size: 32,
                lr: 3e-3,
                warmup_epochs: 1,
                augment: None,
                ..TrainConfig::default()
            },
            data: DataConfig::Synthetic { task, train: 2000, val: 500 },
            seed: 0,
        }
    }

    /// The CIFAR-10 micro model on a 5,000-image training subset.
    pub fn cifar(dir: PathBuf) -> Self {
        Self {
            model: ModelConfig::vit3_micro(),
            train: TrainConfig::default(),
            data: DataConfig::Cifar10 { dir, train: Some(5000), val: Some(1000) },
            seed: 0,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        self.model.validate()?;
        if self.train.batch_size == 0 {
            return Err(crate::HarnessError::Config("batch_size must be positive".into()));
        }
        if let DataConfig::Synthetic { task, .. } = &self.data {
            if task.len < 2 || task.keys < task.pairs() || task.classes == 0 {
                return Err(crate::HarnessError::Config(format!("synthetic task {task:?} cannot plant distinct keys")));
            }
        }
        let sample = self.model.input;
        match (&self.data, sample) {
            (DataConfig::Synthetic { task, .. }, InputSpec::Tokens { len, dim })
                if task.len == len && task.token_dim() == dim && task.classes == self.model.num_classes => {}
            (DataConfig::Cifar10 { .. }, InputSpec::Image { size: 32, channels: 3, .. })
                if self.model.num_classes == 10 => {}
            _ => {
                return Err(crate::HarnessError::Config(format!(
                    "model input {sample:?} with {} classes does not match the data source",
                    self.model.num_classes
                )))
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_roundtrip() {
        for cfg in [RunConfig::synthetic(), RunConfig::cifar("/tmp/cifar".into())] {
            cfg.validate().unwrap();
            let json = serde_json::to_string(&cfg).unwrap();
            assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
        }
    }

    #[test]
    fn mismatched_data_is_rejected() {
        let mut cfg = RunConfig::synthetic();
        cfg.model.num_classes = 10;
        assert!(cfg.validate().is_err());
    }
}
