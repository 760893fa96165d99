use std::fs;
use std::path::Path;

use ttt_core::Tensor;

use super::{Dataset, Split};
use crate::error::{HarnessError, IoContext, Result};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CLASSES: usize = 10;
/// One label byte followed by three 32×32 channel planes.
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Decodes records into HWC images scaled to `[0,1]`.
pub fn parse_cifar10(bytes: &[u8], split: Split) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(HarnessError::format(
            "cifar-10 batch",
            format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut samples = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(HarnessError::format("cifar-10 batch", format!("record {i} has label {label}")));
        }
        let px = &rec[1..];
        let data = (0..plane * 3).map(|j| px[(j % 3) * plane + j / 3] as f32 / 255.0).collect();
        samples.push(Tensor::new(vec![CIFAR_SIDE, CIFAR_SIDE, 3], data)?);
        labels.push(label);
    }
    Ok(Dataset { samples, labels, classes: CIFAR_CLASSES, split })
}

/// Inverse of [`parse_cifar10`].
pub fn write_cifar10(ds: &Dataset) -> Result<Vec<u8>> {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD);
    for (img, &label) in ds.samples.iter().zip(&ds.labels) {
        if img.shape() != [CIFAR_SIDE, CIFAR_SIDE, 3] || label >= CIFAR_CLASSES {
            return Err(HarnessError::format("cifar-10 sample", format!("shape {:?} label {label}", img.shape())));
        }
        out.push(label as u8);
        for c in 0..3 {
            out.extend((0..plane).map(|p| (img.data()[p * 3 + c] * 255.0).round() as u8));
        }
    }
    Ok(out)
}

pub fn load_cifar10(path: &Path, split: Split) -> Result<Dataset> {
    parse_cifar10(&fs::read(path).at(path)?, split)
}

/// Reads `data_batch_{1..5}.bin` (train) or `test_batch.bin` (val) from `dir`.
pub fn load_cifar10_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let files: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Val => vec!["test_batch.bin".into()],
    };
    let mut all = Dataset { samples: Vec::new(), labels: Vec::new(), classes: CIFAR_CLASSES, split };
    for f in files {
        let ds = load_cifar10(&dir.join(f), split)?;
        all.samples.extend(ds.samples);
        all.labels.extend(ds.labels);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_record() {
        let mut rec = vec![255u8; CIFAR_RECORD];
        rec[0] = 3;
        let ds = parse_cifar10(&rec, Split::Train).unwrap();
        assert_eq!(ds.labels, vec![3]);
        assert!(ds.samples[0].data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn planes_become_channels() {
        let mut rec = vec![0u8; CIFAR_RECORD];
        rec[1 + 1024 + 5] = 51; // green plane, pixel (0, 5)
        let ds = parse_cifar10(&rec, Split::Train).unwrap();
        assert_eq!(ds.samples[0].data()[5 * 3 + 1], 0.2);
    }

    #[test]
    fn format_errors() {
        assert!(parse_cifar10(&[0u8; 100], Split::Val).is_err());
        let mut rec = vec![0u8; CIFAR_RECORD];
        rec[0] = 10;
        assert!(parse_cifar10(&rec, Split::Val).is_err());
        assert!(parse_cifar10(&[], Split::Val).unwrap().is_empty());
    }
}
