//! Ablation grids: one short training run per cell of a cross-product over
//! inner-loop settings, collected into a single table.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ttt_core::attention::HeadLayout;
use ttt_core::inner::{InnerKind, LossKind, LrRule, Partition};
use ttt_core::model::flops_estimate;

use crate::config::RunConfig;
use crate::data::load_data;
use crate::train::train;
use crate::{IoContext, Result};

/// Cross-product of inner-loop settings applied on top of `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateSpec {
    pub base: RunConfig,
    pub losses: Vec<LossKind>,
    pub lrs: Vec<LrRule>,
    pub epochs: Vec<usize>,
    pub partitions: Vec<Partition>,
    pub layouts: Vec<HeadLayout>,
    pub seeds: Vec<u64>,
}

/// Settings of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub loss: LossKind,
    pub lr: LrRule,
    pub epochs: usize,
    pub partition: Partition,
    pub layout: HeadLayout,
    pub seed: u64,
}

impl Cell {
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut run = base.clone();
        let inner = &mut run.model.ttt.inner;
        inner.loss = self.loss;
        inner.lr = self.lr;
        inner.epochs = self.epochs;
        inner.partition = self.partition;
        run.model.ttt.layout = self.layout;
        run.seed = self.seed;
        run
    }

    /// Row label without the seed, shared by all seeds of a configuration.
    pub fn label(&self) -> String {
        format!(
            "{}/{}/e{}/{}/{}",
            self.loss.name(),
            lr_label(self.lr),
            self.epochs,
            partition_label(self.partition),
            layout_label(self.layout)
        )
    }
}

pub fn lr_label(lr: LrRule) -> String {
    match lr {
        LrRule::Fixed { eta } => format!("{eta}"),
        LrRule::Dynamic { eta } => format!("dynamic({eta})"),
    }
}

pub fn partition_label(p: Partition) -> String {
    match p {
        Partition::FullBatch => "full".into(),
        Partition::Sequential(k) => format!("seq{k}"),
    }
}

pub fn layout_label(l: HeadLayout) -> String {
    match l {
        HeadLayout::Uniform(kind) => kind.name(),
        HeadLayout::Vit3 => "vit3".into(),
    }
}

impl AblateSpec {
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &loss in &self.losses {
            for &lr in &self.lrs {
                for &epochs in &self.epochs {
                    for &partition in &self.partitions {
                        for &layout in &self.layouts {
                            for &seed in &self.seeds {
                                out.push(Cell { loss, lr, epochs, partition, layout, seed });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn single(base: RunConfig) -> Self {
        let inner = base.model.ttt.inner;
        Self {
            losses: vec![inner.loss],
            lrs: vec![inner.lr],
            epochs: vec![inner.epochs],
            partitions: vec![inner.partition],
            layouts: vec![base.model.ttt.layout],
            seeds: vec![0, 1, 2],
            base,
        }
    }

    /// Inner loss functions.
    pub fn losses() -> Self {
        Self { losses: LossKind::ALL.to_vec(), ..Self::single(RunConfig::synthetic()) }
    }

    /// Inner epochs against mini-batch partitioning.
    pub fn schedule() -> Self {
        Self {
            epochs: vec![1, 2, 4],
            partitions: vec![Partition::FullBatch, Partition::Sequential(2), Partition::Sequential(4)],
            ..Self::single(RunConfig::synthetic())
        }
    }

    /// Inner learning rates, including the token-wise dynamic rule. The base
    /// uses several sequential inner steps so large rates can blow up.
    pub fn learning_rates() -> Self {
        let mut base = RunConfig::synthetic();
        base.model.ttt.inner.loss = LossKind::Mse;
        base.model.ttt.inner.epochs = 4;
        base.model.ttt.inner.partition = Partition::Sequential(2);
        let lrs = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0].map(|eta| LrRule::Fixed { eta });
        Self { lrs: lrs.into_iter().chain([LrRule::Dynamic { eta: 1.0 }]).collect(), ..Self::single(base) }
    }

    /// Inner model architectures.
    pub fn inner_models() -> Self {
        let mut layouts: Vec<HeadLayout> = InnerKind::ALL.iter().map(|&k| HeadLayout::Uniform(k)).collect();
        layouts.push(HeadLayout::Vit3);
        Self { layouts, ..Self::single(RunConfig::synthetic()) }
    }

    /// Named presets `losses`, `schedule`, `lr`, `inner`.
    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "losses" => Self::losses(),
            "schedule" => Self::schedule(),
            "lr" => Self::learning_rates(),
            "inner" => Self::inner_models(),
            _ => return None,
        })
    }
}

pub const ABLATE_COLUMNS: [&str; 13] = [
    "config",
    "loss",
    "inner_lr",
    "inner_epochs",
    "partition",
    "inner_model",
    "seed",
    "params",
    "flops",
    "throughput_tok_s",
    "metric",
    "mark",
    "note",
];

/// One table row. `metric` is the best validation accuracy reached, before
/// divergence if the run diverged; `mark` is `*` for diverged cells and `!`
/// for cells that failed outright.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblateRow {
    pub config: String,
    pub loss: String,
    pub inner_lr: String,
    pub inner_epochs: usize,
    pub partition: String,
    pub inner_model: String,
    pub seed: u64,
    pub params: usize,
    pub flops: u64,
    pub throughput_tok_s: f64,
    pub metric: f64,
    pub mark: String,
    pub note: String,
}

impl AblateRow {
    pub fn diverged(&self) -> bool {
        self.mark == "*"
    }

    pub fn failed(&self) -> bool {
        self.mark == "!"
    }
}

/// Trains one cell. Errors are folded into the row.
pub fn run_cell(base: &RunConfig, cell: &Cell) -> AblateRow {
    let run = cell.apply(base);
    let mut row = AblateRow {
        config: cell.label(),
        loss: cell.loss.name().into(),
        inner_lr: lr_label(cell.lr),
        inner_epochs: cell.epochs,
        partition: partition_label(cell.partition),
        inner_model: layout_label(cell.layout),
        seed: cell.seed,
        params: 0,
        flops: 0,
        throughput_tok_s: 0.0,
        metric: 0.0,
        mark: String::new(),
        note: String::new(),
    };
    let result = (|| -> Result<()> {
        run.validate()?;
        row.flops = flops_estimate(&run.model).total;
        let (train_set, val_set) = load_data(&run.data, run.seed)?;
        let start = Instant::now();
        let outcome = train(&run, &train_set, &val_set, |_| Ok(()))?;
        let wall = start.elapsed().as_secs_f64();
        row.params = outcome.params.param_count();
        let steps = outcome.records.len() * train_set.len();
        row.throughput_tok_s = (steps * run.model.input.tokens()) as f64 / wall.max(1e-9);
        row.metric = outcome.best_val_acc();
        if let Some(d) = outcome.diverged {
            row.mark = "*".into();
            row.note = format!("epoch {} step {}: {}", d.epoch, d.step, d.cause);
        }
        Ok(())
    })();
    if let Err(e) = result {
        row.mark = "!".into();
        row.note = e.to_string();
    }
    row
}

/// Runs every cell on the current rayon pool and returns rows in grid order.
pub fn run_ablation(spec: &AblateSpec) -> Vec<AblateRow> {
    spec.cells().par_iter().map(|c| run_cell(&spec.base, c)).collect()
}

pub fn write_ablation_csv(path: &Path, rows: &[AblateRow]) -> Result<()> {
    let file = std::fs::File::create(path).at(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(ABLATE_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().at(path)?;
    Ok(())
}

/// Mean metric per configuration label, in first-seen order.
pub fn mean_by_config(rows: &[AblateRow]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(c, ..)| *c == r.config) {
            Some((_, sum, n)) => {
                *sum += r.metric;
                *n += 1;
            }
            None => out.push((r.config.clone(), r.metric, 1)),
        }
    }
    out.into_iter().map(|(c, s, n)| (c, s / n as f64)).collect()
}

/// Prints an aligned summary of `rows` to `w`.
pub fn print_summary(w: &mut impl Write, rows: &[AblateRow]) -> std::io::Result<()> {
    writeln!(w, "{:<44} {:>5} {:>9} {:>12} {:>7}", "config", "seed", "params", "flops", "metric")?;
    for r in rows {
        writeln!(w, "{:<44} {:>5} {:>9} {:>12} {:>6.3}{}", r.config, r.seed, r.params, r.flops, r.metric, r.mark)?;
    }
    Ok(())
}
