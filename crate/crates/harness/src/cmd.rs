//! The `ttt` subcommands as library functions. Each writes its CSV output and
//! a `manifest.json` into the output directory.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use ttt_core::inner::LossKind;

use crate::ablate::{print_summary, run_ablation, write_ablation_csv, AblateRow, AblateSpec};
use crate::bench::{run_bench, slopes, write_bench_csv, BenchConfig, BenchRow};
use crate::checkpoint::save_checkpoint;
use crate::config::RunConfig;
use crate::data::load_data;
use crate::gradcheck::{gradcheck_matrix, GradcheckCell, GRADCHECK_COLUMNS};
use crate::lossreport::{loss_report, LossRow, LOSSREPORT_COLUMNS, LOSSREPORT_TOL};
use crate::train::{train, TrainOutcome};
use crate::{IoContext, Result};

pub const TRAIN_COLUMNS: [&str; 4] = ["epoch", "train_loss", "val_acc", "wall_s"];

/// Host description stored with every run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fingerprint {
    pub os: &'static str,
    pub arch: &'static str,
    pub logical_cpus: usize,
    pub cpu_model: Option<String>,
    pub threads: usize,
    pub version: &'static str,
    pub debug_build: bool,
}

impl Fingerprint {
    pub fn current() -> Self {
        let cpu_model = fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        });
        Self {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cpu_model,
            threads: rayon::current_num_threads(),
            version: env!("CARGO_PKG_VERSION"),
            debug_build: cfg!(debug_assertions),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub command: &'a str,
    pub config: &'a C,
    pub seed: Option<u64>,
    pub started_unix_s: u64,
    pub wall_s: f64,
    pub status: &'a str,
    pub outputs: Vec<String>,
    pub host: Fingerprint,
}

struct Run {
    dir: PathBuf,
    started: Instant,
    started_unix_s: u64,
}

impl Run {
    fn start(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).at(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            started_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        })
    }

    fn finish<C: Serialize>(
        &self,
        command: &str,
        config: &C,
        seed: Option<u64>,
        status: &str,
        outputs: &[&str],
    ) -> Result<()> {
        let manifest = Manifest {
            command,
            config,
            seed,
            started_unix_s: self.started_unix_s,
            wall_s: self.started.elapsed().as_secs_f64(),
            status,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            host: Fingerprint::current(),
        };
        let path = self.dir.join("manifest.json");
        let file = File::create(&path).at(&path)?;
        serde_json::to_writer_pretty(file, &manifest)?;
        Ok(())
    }
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<File>> {
    let file = File::create(path).at(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header)?;
    w.flush().at(path)?;
    Ok(w)
}

fn write_rows<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv_writer(path, header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().at(path)?;
    Ok(())
}

/// Trains `run` and writes `train.csv` (flushed after every epoch), the
/// final parameters under `checkpoint/`, and the manifest. A diverged run
/// keeps the epochs finished before divergence.
pub fn cmd_train(run: &RunConfig, out: &Path, mut log: impl Write) -> Result<TrainOutcome> {
    run.validate()?;
    let r = Run::start(out)?;
    let csv_path = out.join("train.csv");
    let mut w = csv_writer(&csv_path, &TRAIN_COLUMNS)?;
    let (train_set, val_set) = load_data(&run.data, run.seed)?;
    let outcome = train(run, &train_set, &val_set, |rec| {
        w.serialize(rec)?;
        w.flush().at(&csv_path)?;
        let _ = writeln!(
            log,
            "epoch {:>3}  loss {:.4}  val_acc {:.4}  {:.1}s",
            rec.epoch, rec.train_loss, rec.val_acc, rec.wall_s
        );
        Ok(())
    })?;
    save_checkpoint(&out.join("checkpoint"), &outcome.params)?;
    let status = match &outcome.diverged {
        Some(d) => {
            let _ = writeln!(log, "diverged at epoch {} step {}: {}", d.epoch, d.step, d.cause);
            "diverged"
        }
        None => "ok",
    };
    r.finish("train", run, Some(run.seed), status, &["train.csv", "checkpoint/params.bin", "checkpoint/params.json"])?;
    Ok(outcome)
}

/// Runs the grid and writes `ablate.csv`.
pub fn cmd_ablate(spec: &AblateSpec, out: &Path, mut log: impl Write) -> Result<Vec<AblateRow>> {
    let r = Run::start(out)?;
    let rows = run_ablation(spec);
    write_ablation_csv(&out.join("ablate.csv"), &rows)?;
    let _ = print_summary(&mut log, &rows);
    let status = if rows.iter().any(AblateRow::failed) { "cells_failed" } else { "ok" };
    r.finish("ablate", spec, None, status, &["ablate.csv"])?;
    Ok(rows)
}

/// Measures every layer and sequence length and writes `bench.csv`.
pub fn cmd_bench(cfg: &BenchConfig, out: &Path, mut log: impl Write) -> Result<Vec<BenchRow>> {
    let r = Run::start(out)?;
    let rows = run_bench(cfg, |row| {
        let _ = writeln!(
            log,
            "{:<8} N={:<6} p50 {:>10.3} ms  mean {:>10.3} ms  peak {:>12} B  flops {}",
            row.layer, row.n, row.p50_ms, row.mean_ms, row.peak_bytes, row.flops
        );
    })?;
    write_bench_csv(&out.join("bench.csv"), &rows)?;
    if cfg.seq_lens.len() > 1 {
        for (layer, slope) in slopes(&rows) {
            let _ = writeln!(log, "{layer}: log-log slope {slope:.3}");
        }
    }
    r.finish("bench", cfg, Some(cfg.seed), "ok", &["bench.csv"])?;
    Ok(rows)
}

/// Runs the gradient-check matrix and writes `gradcheck.csv`.
pub fn cmd_gradcheck(fault: Option<LossKind>, out: &Path, mut log: impl Write) -> Result<Vec<GradcheckCell>> {
    let r = Run::start(out)?;
    let cells = gradcheck_matrix(fault);
    write_rows(&out.join("gradcheck.csv"), &GRADCHECK_COLUMNS, &cells)?;
    for c in &cells {
        let info =
            if c.loss == LossKind::Mae.name() { format!("  |dW_V| {:.1e}", c.wv_grad_norm) } else { String::new() };
        let _ =
            writeln!(log, "{:<4} {:<36} {:.2e}{info}", if c.pass { "ok" } else { "FAIL" }, c.name(), c.max_rel_error);
    }
    let failed: Vec<String> = cells.iter().filter(|c| !c.pass).map(|c| c.name()).collect();
    let _ = writeln!(log, "{} of {} cells pass", cells.len() - failed.len(), cells.len());
    for name in &failed {
        let _ = writeln!(log, "failed: {name}");
    }
    let config = serde_json::json!({ "inject_sign_bug": fault });
    r.finish("gradcheck", &config, None, if failed.is_empty() { "ok" } else { "failed" }, &["gradcheck.csv"])?;
    Ok(cells)
}

/// Writes `lossreport.csv`; rows whose mismatch exceeds [`LOSSREPORT_TOL`]
/// set the returned flag to false.
pub fn cmd_lossreport(seed: u64, out: &Path, mut log: impl Write) -> Result<(Vec<LossRow>, bool)> {
    let r = Run::start(out)?;
    let rows = loss_report(seed)?;
    write_rows(&out.join("lossreport.csv"), &LOSSREPORT_COLUMNS, &rows)?;
    for row in &rows {
        let _ = writeln!(
            log,
            "{:<12} analytic [{:+.6}, {:+.6}]  numeric [{:+.6}, {:+.6}]  err {:.1e}  {}",
            row.loss,
            row.analytic_min,
            row.analytic_max,
            row.numeric_min,
            row.numeric_max,
            row.max_abs_err,
            row.closed_form
        );
    }
    let ok = rows.iter().all(|r| r.max_abs_err <= LOSSREPORT_TOL);
    r.finish("lossreport", &serde_json::json!({}), Some(seed), if ok { "ok" } else { "failed" }, &["lossreport.csv"])?;
    Ok((rows, ok))
}
