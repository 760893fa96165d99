use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::{Error, Result};

/// How the `N` key/value pairs are split into inner mini-batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Partition {
    /// One update per epoch over all tokens.
    FullBatch,
    /// `parts` contiguous chunks in token order, one update each.
    Sequential(usize),
}

/// Contiguous token ranges in order. When `parts` does not divide `n` the
/// leading ranges take one extra token each.
#[allow(clippy::single_range_in_vec_init)]
pub fn partition_batches(n: usize, partition: Partition) -> Result<Vec<Range<usize>>> {
    match partition {
        Partition::FullBatch if n > 0 => Ok(vec![0..n]),
        Partition::Sequential(parts) if parts >= 1 && parts <= n => {
            let (base, extra) = (n / parts, n % parts);
            let mut start = 0;
            Ok((0..parts)
                .map(|i| {
                    let len = base + usize::from(i < extra);
                    let r = start..start + len;
                    start += len;
                    r
                })
                .collect())
        }
        Partition::FullBatch => Err(Error::Partition { parts: 1, tokens: n }),
        Partition::Sequential(parts) => Err(Error::Partition { parts, tokens: n }),
    }
}
