//! A reduced METEOR: exact matching, then a crude suffix-stripping stage,
//! no synonym tables. Scores are comparable only with other runs of this
//! implementation.

use super::bleu::check_lengths;
use crate::error::Result;

const SUFFIXES: [&str; 4] = ["ing", "ed", "es", "s"];

/// Strips one common English suffix when a stem of at least three letters
/// remains.
pub fn crude_stem(word: &str) -> &str {
    for suffix in SUFFIXES {
        if let Some(stem) = word.strip_suffix(suffix) {
            if stem.chars().count() >= 3 {
                return stem;
            }
        }
    }
    word
}

/// Greedy one-to-one alignment: for every hypothesis word in order, the
/// first unused reference word that matches under `eq`.
fn align_stage(
    hyp: &[&str],
    reference: &[&str],
    eq: impl Fn(&str, &str) -> bool,
    used_h: &mut [bool],
    used_r: &mut [bool],
    out: &mut Vec<(usize, usize)>,
) {
    for (i, h) in hyp.iter().enumerate() {
        if used_h[i] {
            continue;
        }
        if let Some(j) = (0..reference.len()).find(|&j| !used_r[j] && eq(h, reference[j])) {
            used_h[i] = true;
            used_r[j] = true;
            out.push((i, j));
        }
    }
}

/// Number of chunks: maximal runs of alignments adjacent in both the
/// hypothesis and the reference.
fn count_chunks(mut alignment: Vec<(usize, usize)>) -> usize {
    alignment.sort_unstable();
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(i, j) in &alignment {
        match prev {
            Some((pi, pj)) if i == pi + 1 && j == pj + 1 => {}
            _ => chunks += 1,
        }
        prev = Some((i, j));
    }
    chunks
}

pub fn meteor_sentence(hyp: &[&str], reference: &[&str]) -> f64 {
    let mut used_h = vec![false; hyp.len()];
    let mut used_r = vec![false; reference.len()];
    let mut alignment = Vec::new();
    align_stage(
        hyp,
        reference,
        |a, b| a == b,
        &mut used_h,
        &mut used_r,
        &mut alignment,
    );
    align_stage(
        hyp,
        reference,
        |a, b| crude_stem(a) == crude_stem(b),
        &mut used_h,
        &mut used_r,
        &mut alignment,
    );
    let m = alignment.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let chunks = count_chunks(alignment) as f64;
    let penalty = 0.5 * (chunks / m as f64).powi(3);
    fmean * (1.0 - penalty)
}

/// Mean sentence-level score.
pub fn meteor<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64> {
    check_lengths(hyps.len(), refs.len())?;
    if hyps.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| {
            let h: Vec<&str> = h.iter().map(AsRef::as_ref).collect();
            let r: Vec<&str> = r.iter().map(AsRef::as_ref).collect();
            meteor_sentence(&h, &r)
        })
        .sum();
    Ok(total / hyps.len() as f64)
}
