use std::hash::Hash;

use super::bleu::{check_lengths, clipped_matches};
use crate::error::{Error, Result};

/// Corpus ROUGE-N recall: clipped n-gram matches over reference n-grams.
/// Returns 0 when the references contain no n-grams of that order.
pub fn rouge_n<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>], n: usize) -> Result<f64> {
    check_lengths(hyps.len(), refs.len())?;
    if n == 0 {
        return Err(Error::invalid("ROUGE order must be at least 1"));
    }
    let (mut matched, mut total) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let (m, _, t) = clipped_matches(h, r, n);
        matched += m;
        total += t;
    }
    Ok(if total == 0 {
        0.0
    } else {
        matched as f64 / total as f64
    })
}
