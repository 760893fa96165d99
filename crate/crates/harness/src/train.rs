//! Outer-loop training with per-sample tapes evaluated in parallel and
//! reduced in sample order, so results do not depend on the thread count.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use ttt_core::autodiff::Tape;
use ttt_core::model::{
    adamw_step, forward_logits, AdamW, CosineSchedule, InputSpec, ModelConfig, ModelParams, OptState,
};
use ttt_core::{Eager, Ops, Tensor};

use crate::config::RunConfig;
use crate::data::{augment, Dataset};
use crate::error::Result;

/// Per-channel statistics of the CIFAR-10 training set.
pub const CIFAR_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub wall_s: f64,
}

/// Where and why training stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct Diverged {
    pub epoch: usize,
    pub step: usize,
    pub cause: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams<Tensor<f32>>,
    pub records: Vec<EpochRecord>,
    pub diverged: Option<Diverged>,
}

impl TrainOutcome {
    pub fn best_val_acc(&self) -> f64 {
        self.records.iter().map(|r| r.val_acc).fold(0.0, f64::max)
    }
}

/// Deterministic 64-bit mixing of a seed with stream coordinates.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Model input for one stored sample: optional augmentation, then channel
/// normalisation for images.
pub fn prepare(sample: &Tensor<f32>, cfg: &ModelConfig, aug: Option<(&crate::data::Augment, u64)>) -> Tensor<f32> {
    match cfg.input {
        InputSpec::Image { channels: 3, .. } => {
            let img = match aug {
                Some((a, seed)) => augment(sample, a, seed),
                None => sample.clone(),
            };
            Tensor::from_fn(img.shape(), |i| (img.data()[i] - CIFAR_MEAN[i % 3]) / CIFAR_STD[i % 3])
        }
        _ => sample.clone(),
    }
}

/// Cross-entropy and parameter gradients for one sample.
pub fn sample_gradient(
    params: &ModelParams<Tensor<f32>>,
    cfg: &ModelConfig,
    x: &Tensor<f32>,
    label: usize,
) -> ttt_core::Result<(f64, Vec<Tensor<f32>>)> {
    let mut tape = Tape::<f32>::new();
    tape.check_finite = false;
    let tp = params.map(|t| tape.param(t.clone()));
    let logits = forward_logits(&mut tape, &tp, cfg, x)?;
    let loss = tape.cross_entropy(&logits, &[label])?;
    let value = tape.value(&loss).item()? as f64;
    let grads = tape.backward(loss)?;
    let flat = tp.flatten().into_iter().map(|v| grads.wrt(*v).cloned()).collect::<ttt_core::Result<_>>()?;
    Ok((value, flat))
}

pub fn predict(params: &ModelParams<Tensor<f32>>, cfg: &ModelConfig, x: &Tensor<f32>) -> ttt_core::Result<usize> {
    let mut ops = Eager { check_finite: false, ..Eager::new() };
    let logits = forward_logits(&mut ops, params, cfg, x)?;
    let mut best = 0;
    for (i, v) in logits.data().iter().enumerate() {
        if *v > logits.data()[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn accuracy(params: &ModelParams<Tensor<f32>>, cfg: &ModelConfig, data: &Dataset) -> ttt_core::Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let hits = data
        .samples
        .par_iter()
        .zip(&data.labels)
        .map(|(s, &l)| predict(params, cfg, &prepare(s, cfg, None)).map(|p| usize::from(p == l)))
        .collect::<ttt_core::Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
}

fn b_last(train_set: &Dataset, tc: &crate::config::TrainConfig) -> usize {
    train_set.len().div_ceil(tc.batch_size)
}

fn divergence(e: &ttt_core::Error) -> bool {
    matches!(e, ttt_core::Error::Divergence { .. } | ttt_core::Error::NonFinite { .. })
}

/// Trains from a seeded initialisation. `on_epoch` sees every finished epoch
/// as it completes. Inner-loop divergence or a non-finite loss ends training
/// and is reported in [`TrainOutcome::diverged`]; other errors propagate.
pub fn train(
    run: &RunConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    run.validate()?;
    let cfg = &run.model;
    let tc = &run.train;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut params = ModelParams::<Tensor<f32>>::init(cfg, &mut rng)?;
    let mut flat: Vec<Tensor<f32>> = params.flatten().into_iter().cloned().collect();
    let mut state = OptState::new(&flat);
    let hyper = AdamW { weight_decay: tc.weight_decay, ..AdamW::default() };
    let steps_per_epoch = train_set.len().div_ceil(tc.batch_size) as u64;
    let schedule = CosineSchedule {
        base_lr: tc.lr,
        warmup_steps: tc.warmup_epochs as u64 * steps_per_epoch,
        total_steps: tc.epochs as u64 * steps_per_epoch,
    };
    let augment_cfg = match cfg.input {
        InputSpec::Image { .. } => tc.augment,
        InputSpec::Tokens { .. } => None,
    };

    let start = Instant::now();
    let mut records = Vec::new();
    let mut step = 0u64;
    for epoch in 1..=tc.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(run.seed, 1, epoch as u64)));
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(tc.batch_size).enumerate() {
            let results: Vec<ttt_core::Result<(f64, Vec<Tensor<f32>>)>> = batch
                .par_iter()
                .map(|&i| {
                    let seed = derive_seed(run.seed, 2, (epoch * train_set.len() + i) as u64);
                    let x = prepare(&train_set.samples[i], cfg, augment_cfg.as_ref().map(|a| (a, seed)));
                    sample_gradient(&params, cfg, &x, train_set.labels[i])
                })
                .collect();
            let mut total: Option<Vec<Tensor<f32>>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = match r {
                    Ok(v) => v,
                    Err(e) if divergence(&e) => {
                        return Ok(TrainOutcome {
                            params,
                            records,
                            diverged: Some(Diverged { epoch, step: b, cause: e.to_string() }),
                        })
                    }
                    Err(e) => return Err(e.into()),
                };
                batch_loss += loss;
                match &mut total {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f32;
            let grads: Vec<Tensor<f32>> = total.expect("non-empty batch").iter().map(|g| g.scale(scale)).collect();
            if !batch_loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Ok(TrainOutcome {
                    params,
                    records,
                    diverged: Some(Diverged { epoch, step: b, cause: "non-finite loss or gradient".into() }),
                });
            }
            loss_sum += batch_loss;
            adamw_step(&mut flat, &grads, &mut state, &hyper, schedule.lr(step))?;
            params = params.with_values(&flat)?;
            step += 1;
        }
        let val_acc = match accuracy(&params, cfg, val_set) {
            Ok(a) => a,
            Err(e) if divergence(&e) => {
                let cause = e.to_string();
                return Ok(TrainOutcome {
                    params,
                    records,
                    diverged: Some(Diverged { epoch, step: b_last(train_set, tc), cause }),
                });
            }
            Err(e) => return Err(e.into()),
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len().max(1) as f64,
            val_acc,
            wall_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record)?;
        records.push(record);
    }
    Ok(TrainOutcome { params, records, diverged: None })
}
