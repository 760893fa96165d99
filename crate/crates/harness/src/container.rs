//! Flat binary tensor container:
//!
//! ```text
//! b"TTT1" | dtype: u8 | rank: u8 | extents: rank × u32 LE | values: LE floats
//! ```
//!
//! Dtype codes are `0` for f32 and `1` for f64.

use std::io::{Read, Write};

use ttt_core::{DType, Real, Tensor};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"TTT1";

/// Bytes taken by `t` once encoded.
pub fn encoded_len<T: Real>(t: &Tensor<T>) -> usize {
    4 + 2 + 4 * t.rank() + t.numel() * T::DTYPE.size_of()
}

pub fn write_tensor<T: Real>(w: &mut impl Write, t: &Tensor<T>) -> Result<()> {
    let rank = u8::try_from(t.rank()).map_err(|_| HarnessError::format("tensor", "rank above 255"))?;
    let mut buf = Vec::with_capacity(encoded_len(t));
    buf.extend_from_slice(MAGIC);
    buf.push(T::DTYPE.code());
    buf.push(rank);
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| HarnessError::format("tensor", format!("extent {e} exceeds u32")))?;
        buf.extend_from_slice(&e.to_le_bytes());
    }
    match T::DTYPE {
        DType::F32 => t.data().iter().for_each(|x| buf.extend_from_slice(&(x.f64() as f32).to_le_bytes())),
        DType::F64 => t.data().iter().for_each(|x| buf.extend_from_slice(&x.f64().to_le_bytes())),
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads one tensor; the stored dtype must be `T`'s.
pub fn read_tensor<T: Real>(r: &mut impl Read) -> Result<Tensor<T>> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(HarnessError::format("tensor", format!("bad magic {:?}", &head[..4])));
    }
    let dtype = DType::from_code(head[4])
        .ok_or_else(|| HarnessError::format("tensor", format!("unknown dtype code {}", head[4])))?;
    if dtype != T::DTYPE {
        return Err(HarnessError::format("tensor", format!("stored {dtype:?}, expected {:?}", T::DTYPE)));
    }
    let rank = head[5] as usize;
    let mut extents = vec![0u8; 4 * rank];
    r.read_exact(&mut extents)?;
    let shape: Vec<usize> =
        extents.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize).collect();
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| HarnessError::format("tensor", "element count overflows"))?;
    let mut raw = vec![0u8; numel * dtype.size_of()];
    r.read_exact(&mut raw)?;
    let data: Vec<T> = match dtype {
        DType::F32 => {
            raw.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)).collect()
        }
        DType::F64 => raw.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect(),
    };
    Ok(Tensor::new(shape, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let t = Tensor::<f32>::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"TTT1");
        assert_eq!(buf[4], 0);
        assert_eq!(buf[5], 2);
        assert_eq!(&buf[6..10], &2u32.to_le_bytes());
        assert_eq!(&buf[14..18], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), encoded_len(&t));
        assert_eq!(read_tensor::<f32>(&mut buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert!(read_tensor::<f32>(&mut buf.as_slice()).is_err());
        assert!(read_tensor::<f64>(&mut &buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(read_tensor::<f64>(&mut buf.as_slice()).is_err());
    }
}
