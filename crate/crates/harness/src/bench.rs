//! Wall-time and memory scaling of a single TTT layer against softmax
//! attention as the sequence grows.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ttt_core::attention::{softmax_attention, ttt_attention, AttentionParams, TttConfig, TttParams};
use ttt_core::model::{attention_flops, ttt_layer_flops};
use ttt_core::{Eager, Grid, Tensor};

use crate::alloc_counter;
use crate::{HarnessError, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchLayer {
    Ttt,
    Softmax,
}

impl BenchLayer {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ttt => "ttt",
            Self::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub seq_lens: Vec<usize>,
    pub dim: usize,
    pub heads: usize,
    pub warmup: usize,
    pub reps: usize,
    pub layers: Vec<BenchLayer>,
    pub ttt: TttConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seq_lens: vec![256, 512, 1024, 2048, 4096, 8192],
            dim: 64,
            heads: 4,
            warmup: 3,
            reps: 9,
            layers: vec![BenchLayer::Ttt, BenchLayer::Softmax],
            ttt: TttConfig::default(),
            seed: 0,
        }
    }
}

pub const BENCH_COLUMNS: [&str; 7] = ["layer", "n", "mean_ms", "p50_ms", "peak_bytes", "flops", "max_tensor_elems"];

/// Timing of one layer at one sequence length. `peak_bytes` is the largest
/// heap growth during a measured rep (0 when the counting allocator is not
/// installed); `max_tensor_elems` is the largest intermediate produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub layer: String,
    pub n: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub peak_bytes: usize,
    pub flops: u64,
    pub max_tensor_elems: usize,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

enum Layer {
    Ttt(TttParams<Tensor<f32>>, TttConfig, Grid),
    Softmax(AttentionParams<Tensor<f32>>),
}

impl Layer {
    fn run(&self, x: &Tensor<f32>) -> Result<(Tensor<f32>, usize)> {
        let mut ops = Eager { check_finite: false, ..Eager::new() };
        let out = match self {
            Self::Ttt(p, cfg, grid) => ttt_attention(&mut ops, x, p, cfg, Some(*grid))?,
            Self::Softmax(p) => softmax_attention(&mut ops, x, p)?,
        };
        Ok((out, ops.stats.max_numel))
    }
}

pub fn bench_layer(cfg: &BenchConfig, layer: BenchLayer, n: usize) -> Result<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (c, h) = (cfg.dim, cfg.heads);
    let (l, flops) = match layer {
        BenchLayer::Ttt => {
            let grid = Grid::for_tokens(n).ok_or_else(|| HarnessError::Config(format!("no token grid for N = {n}")))?;
            let p = TttParams::init(c, h, &cfg.ttt, &mut rng)?;
            (Layer::Ttt(p, cfg.ttt, grid), ttt_layer_flops(n, c, h, &cfg.ttt).total())
        }
        BenchLayer::Softmax => {
            (Layer::Softmax(AttentionParams::init(c, h, &mut rng)?), attention_flops(n, c, h).total())
        }
    };
    let x = Tensor::from_fn(&[n, c], |_| rng.random_range(-1.0f32..1.0));
    for _ in 0..cfg.warmup {
        std::hint::black_box(l.run(&x)?);
    }
    let mut times = Vec::with_capacity(cfg.reps);
    let mut peak = 0;
    let mut max_elems = 0;
    for _ in 0..cfg.reps.max(1) {
        let base = alloc_counter::reset_peak();
        let start = Instant::now();
        let (out, elems) = l.run(&x)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        peak = peak.max(alloc_counter::peak_bytes().saturating_sub(base));
        max_elems = max_elems.max(elems);
        drop(std::hint::black_box(out));
    }
    Ok(BenchRow {
        layer: layer.name().into(),
        n,
        mean_ms: times.iter().sum::<f64>() / times.len() as f64,
        p50_ms: median(&times),
        peak_bytes: peak,
        flops,
        max_tensor_elems: max_elems,
    })
}

/// Rows ordered by layer, then sequence length. `progress` sees each row as
/// it is measured.
pub fn run_bench(cfg: &BenchConfig, mut progress: impl FnMut(&BenchRow)) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &layer in &cfg.layers {
        for &n in &cfg.seq_lens {
            let row = bench_layer(cfg, layer, n)?;
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Wall-time slope per layer.
pub fn slopes(rows: &[BenchRow]) -> Vec<(String, f64)> {
    let mut layers: Vec<String> = rows.iter().map(|r| r.layer.clone()).collect();
    layers.dedup();
    layers
        .into_iter()
        .map(|l| {
            let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.layer == l).map(|r| (r.n as f64, r.p50_ms)).collect();
            (l, loglog_slope(&pts))
        })
        .collect()
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let file = std::fs::File::create(path).at(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(BENCH_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().at(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_slope() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(1.5))).collect();
        assert!((loglog_slope(&pts) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn small_bench_reports_estimates() {
        let cfg =
            BenchConfig { seq_lens: vec![16, 32], warmup: 0, reps: 1, dim: 16, heads: 2, ..BenchConfig::default() };
        let rows = run_bench(&cfg, |_| {}).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].flops, ttt_layer_flops(16, 16, 2, &cfg.ttt).total());
        assert_eq!(rows[3].flops, attention_flops(32, 16, 2).total());
        assert!(rows[3].max_tensor_elems >= 32 * 32);
        assert_eq!(slopes(&rows).len(), 2);
    }
}
