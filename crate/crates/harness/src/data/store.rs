//! Datasets in the tensor container format: a `[3]` f64 header holding
//! `(count, classes, split)`, then, for non-empty sets, the stacked samples
//! `[count × sample shape]` (f32) and the labels `[count]` (f64).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ttt_core::Tensor;

use super::{Dataset, Split};
use crate::container::{read_tensor, write_tensor};
use crate::error::{HarnessError, IoContext, Result};

pub fn write_dataset(w: &mut impl Write, ds: &Dataset) -> Result<()> {
    let split = match ds.split {
        Split::Train => 0.0,
        Split::Val => 1.0,
    };
    write_tensor(w, &Tensor::new(vec![3], vec![ds.len() as f64, ds.classes as f64, split])?)?;
    let Some(first) = ds.samples.first() else { return Ok(()) };
    if ds.samples.iter().any(|s| s.shape() != first.shape()) {
        return Err(HarnessError::format("dataset", "samples differ in shape"));
    }
    let mut shape = vec![ds.len()];
    shape.extend_from_slice(first.shape());
    let data: Vec<f32> = ds.samples.iter().flat_map(|s| s.data().iter().copied()).collect();
    write_tensor(w, &Tensor::new(shape, data)?)?;
    write_tensor(w, &Tensor::new(vec![ds.len()], ds.labels.iter().map(|&l| l as f64).collect())?)
}

pub fn read_dataset(r: &mut impl std::io::Read) -> Result<Dataset> {
    let head = read_tensor::<f64>(r)?;
    let &[count, classes, split] = head.data() else {
        return Err(HarnessError::format("dataset", format!("header has shape {:?}", head.shape())));
    };
    let split = match split {
        0.0 => Split::Train,
        1.0 => Split::Val,
        other => return Err(HarnessError::format("dataset", format!("unknown split code {other}"))),
    };
    let (count, classes) = (count as usize, classes as usize);
    let mut ds = Dataset { samples: Vec::new(), labels: Vec::new(), classes, split };
    if count == 0 {
        return Ok(ds);
    }
    let stacked = read_tensor::<f32>(r)?;
    let labels = read_tensor::<f64>(r)?;
    if stacked.shape()[0] != count || labels.shape() != [count] {
        return Err(HarnessError::format("dataset", format!("expected {count} samples and labels")));
    }
    let sample_shape = &stacked.shape()[1..];
    let size: usize = sample_shape.iter().product();
    for (chunk, &l) in stacked.data().chunks_exact(size).zip(labels.data()) {
        if l < 0.0 || l.fract() != 0.0 || l as usize >= classes {
            return Err(HarnessError::format("dataset", format!("label {l} outside 0..{classes}")));
        }
        ds.samples.push(Tensor::new(sample_shape.to_vec(), chunk.to_vec())?);
        ds.labels.push(l as usize);
    }
    Ok(ds)
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).at(path)?);
    write_dataset(&mut w, ds)?;
    w.flush().at(path)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(&mut BufReader::new(File::open(path).at(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_recall_task, SynthConfig};

    #[test]
    fn synthetic_roundtrip() {
        let ds = synth_recall_task(3, 5, &SynthConfig::default(), Split::Val);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        assert_eq!(read_dataset(&mut buf.as_slice()).unwrap(), ds);

        let empty = synth_recall_task(3, 0, &SynthConfig::default(), Split::Train);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &empty).unwrap();
        assert_eq!(read_dataset(&mut buf.as_slice()).unwrap(), empty);
    }

    #[test]
    fn bad_labels_are_rejected() {
        let mut ds = synth_recall_task(0, 2, &SynthConfig::default(), Split::Train);
        ds.labels[1] = ds.classes;
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        assert!(read_dataset(&mut buf.as_slice()).is_err());
    }
}
