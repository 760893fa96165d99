//! Associative recall: a sequence of `(key, value)` tokens followed by a
//! query key; the label is the value paired with that key.
//!
//! Each token is `[one-hot key | one-hot value]`. The query token carries the
//! key of one planted pair and an all-zero value half. Keys within a sample
//! are distinct.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ttt_core::Tensor;

use super::{Dataset, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Tokens per sample, including the query.
    pub len: usize,
    /// Size of the key alphabet.
    pub keys: usize,
    /// Number of value classes.
    pub classes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { len: 8, keys: 16, classes: 8 }
    }
}

impl SynthConfig {
    pub fn token_dim(&self) -> usize {
        self.keys + self.classes
    }

    pub fn pairs(&self) -> usize {
        self.len - 1
    }
}

/// `n` samples, deterministic in `seed`.
pub fn synth_recall_task(seed: u64, n: usize, cfg: &SynthConfig, split: Split) -> Dataset {
    assert!(cfg.len >= 2 && cfg.keys >= cfg.pairs(), "key alphabet too small for {} pairs", cfg.pairs());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = cfg.token_dim();
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let keys = index::sample(&mut rng, cfg.keys, cfg.pairs());
        let mut data = vec![0.0f32; cfg.len * dim];
        let mut values = Vec::with_capacity(cfg.pairs());
        for (t, key) in keys.iter().enumerate() {
            let value = rng.random_range(0..cfg.classes);
            data[t * dim + key] = 1.0;
            data[t * dim + cfg.keys + value] = 1.0;
            values.push(value);
        }
        let pick = rng.random_range(0..cfg.pairs());
        data[cfg.pairs() * dim + keys.index(pick)] = 1.0;
        samples.push(Tensor::new(vec![cfg.len, dim], data).expect("shape matches"));
        labels.push(values[pick]);
    }
    Dataset { samples, labels, classes: cfg.classes, split }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(row: &[f32]) -> Option<usize> {
        let hot: Vec<usize> = row.iter().enumerate().filter(|(_, &x)| x == 1.0).map(|(i, _)| i).collect();
        let zeros = row.iter().filter(|&&x| x == 0.0).count();
        (hot.len() == 1 && zeros + 1 == row.len()).then(|| hot[0])
    }

    #[test]
    fn deterministic_and_empty() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_recall_task(4, 20, &cfg, Split::Train), synth_recall_task(4, 20, &cfg, Split::Train));
        assert_ne!(synth_recall_task(4, 20, &cfg, Split::Train), synth_recall_task(5, 20, &cfg, Split::Train));
        assert!(synth_recall_task(4, 0, &cfg, Split::Train).is_empty());
    }

    /// Rebuilds the key/value table of every sample and checks the label.
    #[test]
    fn construction() {
        let cfg = SynthConfig::default();
        let ds = synth_recall_task(9, 200, &cfg, Split::Val);
        let dim = cfg.token_dim();
        for (s, &label) in ds.samples.iter().zip(&ds.labels) {
            let rows: Vec<&[f32]> = s.data().chunks(dim).collect();
            let mut table = std::collections::HashMap::new();
            for row in &rows[..cfg.pairs()] {
                let k = one_hot(&row[..cfg.keys]).unwrap();
                let v = one_hot(&row[cfg.keys..]).unwrap();
                assert!(table.insert(k, v).is_none(), "key collision");
            }
            assert_eq!(table.len(), cfg.pairs());
            let query = rows[cfg.pairs()];
            assert!(query[cfg.keys..].iter().all(|&x| x == 0.0));
            let qk = one_hot(&query[..cfg.keys]).unwrap();
            assert_eq!(table[&qk], label);
        }
    }
}
