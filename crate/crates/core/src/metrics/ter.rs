use super::bleu::check_lengths;
use crate::error::{Error, Result};

/// Word-level Levenshtein distance with unit costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Moves `s[start..start + len]` so that it begins at index `dest` of the
/// result.
pub fn apply_shift<T: Clone>(s: &[T], start: usize, len: usize, dest: usize) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(s.len());
    out.extend_from_slice(&s[..start]);
    out.extend_from_slice(&s[start + len..]);
    out.splice(dest..dest, s[start..start + len].iter().cloned());
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TerEdits {
    pub shifts: usize,
    /// Insertions, deletions and substitutions after shifting.
    pub edits: usize,
}

impl TerEdits {
    pub fn total(&self) -> usize {
        self.shifts + self.edits
    }
}

const MAX_SHIFT_ROUNDS: usize = 50;

/// Greedy shift search. Each round tries every block move of the current
/// hypothesis and keeps the one with the smallest remaining edit distance
/// (earliest start, then shortest block, then leftmost destination on
/// ties). A round is applied only if it lowers the edit distance; since a
/// shift costs one edit, the running total never increases.
pub fn ter_edits<T: PartialEq + Clone>(hyp: &[T], reference: &[T]) -> TerEdits {
    let mut cur = hyp.to_vec();
    let mut cost = levenshtein(&cur, reference);
    let mut shifts = 0;
    for _ in 0..MAX_SHIFT_ROUNDS {
        if cost == 0 {
            break;
        }
        let n = cur.len();
        let mut best: Option<(usize, usize, usize, usize)> = None;
        for start in 0..n {
            for len in 1..=n - start {
                for dest in 0..=n - len {
                    if dest == start {
                        continue;
                    }
                    let d = levenshtein(&apply_shift(&cur, start, len, dest), reference);
                    if best.is_none_or(|b| d < b.0) {
                        best = Some((d, start, len, dest));
                    }
                }
            }
        }
        match best {
            Some((d, start, len, dest)) if d < cost => {
                cur = apply_shift(&cur, start, len, dest);
                cost = d;
                shifts += 1;
            }
            _ => break,
        }
    }
    TerEdits {
        shifts,
        edits: cost,
    }
}

/// Sentence TER: edits divided by reference length.
pub fn ter<T: PartialEq + Clone>(hyp: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("TER is undefined for an empty reference"));
    }
    Ok(ter_edits(hyp, reference).total() as f64 / reference.len() as f64)
}

/// Corpus TER: total edits over total reference length.
pub fn corpus_ter<T: PartialEq + Clone>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    check_lengths(hyps.len(), refs.len())?;
    let mut edits = 0;
    let mut ref_len = 0;
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        if r.is_empty() {
            return Err(Error::invalid(format!("reference {i} is empty")));
        }
        edits += ter_edits(h, r).total();
        ref_len += r.len();
    }
    if ref_len == 0 {
        return Err(Error::invalid("empty corpus"));
    }
    Ok(edits as f64 / ref_len as f64)
}
