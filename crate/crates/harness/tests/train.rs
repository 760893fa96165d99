use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ttt_core::model::ModelParams;
use ttt_core::Tensor;
use ttt_harness::checkpoint::load_checkpoint;
use ttt_harness::cmd::{cmd_train, TRAIN_COLUMNS};
use ttt_harness::config::{DataConfig, RunConfig};

fn small(train: usize, epochs: usize) -> RunConfig {
    let mut run = RunConfig::synthetic();
    run.train.epochs = epochs;
    if let DataConfig::Synthetic { train: t, val, .. } = &mut run.data {
        *t = train;
        *val = 64;
    }
    run
}

fn rows(dir: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(dir.join("train.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), TRAIN_COLUMNS.as_slice());
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn loss_trace_is_deterministic() {
    let run = small(96, 2);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_train(&run, a.path(), std::io::sink()).unwrap();
    cmd_train(&run, b.path(), std::io::sink()).unwrap();
    let (ra, rb) = (rows(a.path()), rows(b.path()));
    assert_eq!(ra.len(), 2);
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!(x[..3], y[..3]);
    }
    assert_eq!(
        std::fs::read(a.path().join("checkpoint/params.bin")).unwrap(),
        std::fs::read(b.path().join("checkpoint/params.bin")).unwrap()
    );
}

#[test]
fn zero_epochs_keeps_the_initialisation() {
    let run = small(16, 0);
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_train(&run, dir.path(), std::io::sink()).unwrap();
    assert!(out.records.is_empty() && out.diverged.is_none());
    assert!(rows(dir.path()).is_empty());
    let init = ModelParams::<Tensor<f32>>::init(&run.model, &mut ChaCha8Rng::seed_from_u64(run.seed)).unwrap();
    assert_eq!(load_checkpoint(dir.path().join("checkpoint").as_path(), &init).unwrap(), init);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["status"], "ok");
    assert_eq!(serde_json::from_value::<RunConfig>(manifest["config"].clone()).unwrap(), run);
}

#[test]
fn synthetic_training_reduces_loss() {
    let run = small(512, 5);
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_train(&run, dir.path(), std::io::sink()).unwrap();
    assert!(out.diverged.is_none());
    let first = out.records.first().unwrap().train_loss;
    let last = out.records.last().unwrap().train_loss;
    assert!(last < first, "{:?}", out.records);
}

#[test]
fn divergence_keeps_finished_epochs() {
    let mut run = small(64, 3);
    let inner = &mut run.model.ttt.inner;
    inner.loss = ttt_core::inner::LossKind::Mse;
    inner.epochs = 4;
    inner.partition = ttt_core::inner::Partition::Sequential(2);
    inner.lr = ttt_core::inner::LrRule::Fixed { eta: 10.0 };
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_train(&run, dir.path(), std::io::sink()).unwrap();
    let d = out.diverged.expect("diverges");
    assert_eq!(rows(dir.path()).len(), d.epoch - 1);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"diverged\""));
}
