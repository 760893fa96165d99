use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use ttt_core::inner::LossKind;
use ttt_harness::ablate::AblateSpec;
use ttt_harness::alloc_counter::CountingAlloc;
use ttt_harness::bench::BenchConfig;
use ttt_harness::cmd::{cmd_ablate, cmd_bench, cmd_gradcheck, cmd_lossreport, cmd_train};
use ttt_harness::config::RunConfig;
use ttt_harness::{HarnessError, IoContext, Result};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser)]
#[command(name = "ttt", version, about = "Train, ablate and benchmark test-time-training attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed overriding the configuration's (ablate: run only this seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: runs/<subcommand>].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Synthetic,
    Cifar,
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    Losses,
    Schedule,
    Lr,
    Inner,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    DotProduct,
    Mse,
    Rmse,
    Mae,
    SmoothL1,
}

impl From<Loss> for LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::DotProduct => LossKind::DotProduct,
            Loss::Mse => LossKind::Mse,
            Loss::Rmse => LossKind::Rmse,
            Loss::Mae => LossKind::Mae,
            Loss::SmoothL1 => LossKind::SmoothL1,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write per-epoch metrics and a checkpoint.
    Train {
        /// Built-in configuration used when --config is absent.
        #[arg(long, value_enum, default_value = "synthetic")]
        preset: Preset,
        /// CIFAR-10 binary directory for the cifar preset.
        #[arg(long, default_value = "data/cifar-10-batches-bin")]
        cifar_dir: PathBuf,
        /// Override the number of outer epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run an ablation grid, one short training run per cell.
    Ablate {
        /// Built-in grid used when --config is absent.
        #[arg(long, value_enum, default_value = "losses")]
        grid: Grid,
    },
    /// Time a TTT layer against softmax attention over sequence lengths.
    Bench {
        /// Comma-separated sequence lengths.
        #[arg(long, value_delimiter = ',')]
        seq_lens: Option<Vec<usize>>,
        /// Measured repetitions per length.
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Finite-difference check of every inner model, loss, rate rule and partition.
    Gradcheck {
        /// Flip the sign of the value-path gradient in this loss.
        #[arg(long, value_enum)]
        inject_sign_bug: Option<Loss>,
    },
    /// Mixed second derivatives of the inner losses against finite differences.
    Lossreport,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).at(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    let name = match &cli.command {
        Command::Train { .. } => "train",
        Command::Ablate { .. } => "ablate",
        Command::Bench { .. } => "bench",
        Command::Gradcheck { .. } => "gradcheck",
        Command::Lossreport => "lossreport",
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(name));
    let stdout = io::stdout();
    match cli.command {
        Command::Train { preset, cifar_dir, epochs } => {
            let mut run = match &cli.config {
                Some(p) => read_json(p)?,
                None => match preset {
                    Preset::Synthetic => RunConfig::synthetic(),
                    Preset::Cifar => RunConfig::cifar(cifar_dir),
                },
            };
            if let Some(s) = cli.seed {
                run.seed = s;
            }
            if let Some(e) = epochs {
                run.train.epochs = e;
            }
            Ok(cmd_train(&run, &out, stdout.lock())?.diverged.is_none())
        }
        Command::Ablate { grid } => {
            let mut spec = match &cli.config {
                Some(p) => read_json(p)?,
                None => AblateSpec::preset(match grid {
                    Grid::Losses => "losses",
                    Grid::Schedule => "schedule",
                    Grid::Lr => "lr",
                    Grid::Inner => "inner",
                })
                .expect("known preset"),
            };
            if let Some(s) = cli.seed {
                spec.seeds = vec![s];
            }
            let rows = cmd_ablate(&spec, &out, stdout.lock())?;
            Ok(!rows.iter().any(|r| r.failed()))
        }
        Command::Bench { seq_lens, reps } => {
            let mut cfg: BenchConfig = match &cli.config {
                Some(p) => read_json(p)?,
                None => BenchConfig::default(),
            };
            if let Some(s) = seq_lens {
                cfg.seq_lens = s;
            }
            if let Some(r) = reps {
                cfg.reps = r;
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            cmd_bench(&cfg, &out, stdout.lock())?;
            Ok(true)
        }
        Command::Gradcheck { inject_sign_bug } => {
            let cells = cmd_gradcheck(inject_sign_bug.map(LossKind::from), &out, stdout.lock())?;
            Ok(cells.iter().all(|c| c.pass))
        }
        Command::Lossreport => Ok(cmd_lossreport(cli.seed.unwrap_or(0), &out, stdout.lock())?.1),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
