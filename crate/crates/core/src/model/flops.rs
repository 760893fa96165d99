//! Analytic multiply-add counts. The inner loop follows the usual training
//! convention: one backward pass costs two forward passes.

use alloc::vec::Vec;

use super::ModelConfig;
use crate::attention::TttConfig;
use crate::inner::Partition;

/// Cost of one token mixer over a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixerFlops {
    /// `Q`, `K`, `V`, output and (if any) dynamic-rate projections.
    pub projections: u64,
    /// Token interaction: the inner loop for TTT, `QKᵀ` and `AV` for softmax.
    pub core: u64,
    /// One forward pass of the inner models over all tokens (zero for softmax).
    pub inner_forward: u64,
}

impl MixerFlops {
    pub fn total(&self) -> u64 {
        self.projections + self.core
    }

    /// Inner-loop cost in units of one inner forward pass.
    pub fn inner_ratio(&self) -> f64 {
        self.core as f64 / self.inner_forward as f64
    }
}

/// Multi-head softmax attention on `n` tokens of width `c`.
pub fn attention_flops(n: usize, c: usize, _heads: usize) -> MixerFlops {
    let (n, c) = (n as u64, c as u64);
    MixerFlops { projections: 4 * n * c * c, core: 2 * n * n * c, inner_forward: 0 }
}

/// TTT layer on `n` tokens of width `c`: per epoch and per step one forward
/// and one backward over the keys, plus one forward over the queries.
/// Convolutional heads run over the full grid in every mini-batch step.
pub fn ttt_layer_flops(n: usize, c: usize, heads: usize, cfg: &TttConfig) -> MixerFlops {
    let d = c / heads;
    let (n64, c64) = (n as u64, c as u64);
    let parts = match cfg.inner.partition {
        Partition::FullBatch => 1,
        Partition::Sequential(p) => p as u64,
    };
    let epochs = cfg.inner.epochs as u64;
    let mut core = 0;
    let mut inner_forward = 0;
    for kind in cfg.layout.kinds(heads) {
        let f = kind.forward_macs(n, d);
        let per_epoch = if kind.conv_groups().is_some() { parts * f } else { f };
        inner_forward += f;
        core += 3 * epochs * per_epoch + f;
    }
    let gate = if cfg.inner.lr.is_dynamic() { heads as u64 * n64 * c64 } else { 0 };
    MixerFlops { projections: 4 * n64 * c64 * c64 + gate, core, inner_forward }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerFlops {
    pub cpe: u64,
    pub mixer: MixerFlops,
    pub mlp: u64,
}

impl LayerFlops {
    pub fn total(&self) -> u64 {
        self.cpe + self.mixer.total() + self.mlp
    }
}

/// Per-sample forward cost of a model.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlopsReport {
    pub embed: u64,
    pub blocks: Vec<LayerFlops>,
    pub head: u64,
    pub total: u64,
}

pub fn flops_estimate(cfg: &ModelConfig) -> FlopsReport {
    let n = cfg.input.tokens();
    let c = cfg.embed_dim;
    let (n64, c64) = (n as u64, c as u64);
    let embed = n64 * cfg.input.token_dim() as u64 * c64;
    let block = LayerFlops {
        cpe: 9 * n64 * c64,
        mixer: ttt_layer_flops(n, c, cfg.heads, &cfg.ttt),
        mlp: 2 * n64 * c64 * (cfg.mlp_ratio * c) as u64,
    };
    let blocks = alloc::vec![block; cfg.depth];
    let head = c64 * cfg.num_classes as u64;
    let total = embed + head + blocks.iter().map(LayerFlops::total).sum::<u64>();
    FlopsReport { embed, blocks, head, total }
}
