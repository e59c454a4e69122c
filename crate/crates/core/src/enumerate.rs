//! Exhaustive enumeration of fixed-length token sequences.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default ceiling on enumerated items.
pub const DEFAULT_BUDGET: u128 = 1_000_000;

/// Number of sequences of length `len` over `vocab` symbols, or a budget
/// error when it exceeds `budget`.
pub fn count_checked(vocab: usize, len: usize, budget: u128) -> Result<usize> {
    let mut total: u128 = 1;
    for _ in 0..len {
        total = total.saturating_mul(vocab as u128);
        if total > budget {
            return Err(Error::Budget {
                requested: total,
                budget,
            });
        }
    }
    Ok(total as usize)
}

/// Decodes a lexicographic index into its sequence (most significant first).
pub fn decode_index(mut index: usize, vocab: usize, len: usize) -> Vec<usize> {
    let mut seq = vec![0; len];
    for slot in seq.iter_mut().rev() {
        *slot = index % vocab;
        index /= vocab;
    }
    seq
}

/// Evaluates `f` on every sequence of length `len` in lexicographic order.
/// Work is split across the rayon pool but the output order is fixed.
pub fn map_sequences<T, F>(vocab: usize, len: usize, budget: u128, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&[usize]) -> T + Sync,
{
    let total = count_checked(vocab, len, budget)?;
    Ok((0..total)
        .into_par_iter()
        .map(|i| f(&decode_index(i, vocab, len)))
        .collect())
}

/// All sequences of every length in `0..=max_len`, shortest first.
pub fn all_prefixes(vocab: usize, max_len: usize, budget: u128) -> Result<Vec<Vec<usize>>> {
    let mut total: u128 = 0;
    for len in 0..=max_len {
        total += count_checked(vocab, len, budget)? as u128;
        if total > budget {
            return Err(Error::Budget {
                requested: total,
                budget,
            });
        }
    }
    let mut out = Vec::with_capacity(total as usize);
    for len in 0..=max_len {
        let n = count_checked(vocab, len, budget)?;
        out.extend((0..n).map(|i| decode_index(i, vocab, len)));
    }
    Ok(out)
}
