use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Smoothing {
    /// Classic definition: any zero precision zeroes the score.
    #[default]
    None,
    /// Add one to numerator and denominator for orders above 1.
    AddOne,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuScores {
    /// Modified precision per order, index 0 is unigrams.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    /// `scores[k-1]` is BLEU-k.
    pub scores: Vec<f64>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuScores {
    pub fn bleu(&self, k: usize) -> f64 {
        self.scores[k - 1]
    }
}

pub(crate) fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and the hypothesis / reference n-gram totals.
pub(crate) fn clipped_matches<T: Eq + Hash>(
    hyp: &[T],
    reference: &[T],
    n: usize,
) -> (usize, usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (
        matched,
        hyp.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    )
}

pub(crate) fn check_lengths(hyps: usize, refs: usize) -> Result<()> {
    if hyps != refs {
        return Err(Error::invalid(format!(
            "{hyps} hypotheses vs {refs} references"
        )));
    }
    Ok(())
}

/// Corpus BLEU against a single reference per hypothesis.
pub fn bleu<T: Eq + Hash>(
    hyps: &[Vec<T>],
    refs: &[Vec<T>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<BleuScores> {
    check_lengths(hyps.len(), refs.len())?;
    if max_n == 0 {
        return Err(Error::invalid("max_n must be at least 1"));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    for (h, r) in hyps.iter().zip(refs) {
        for n in 1..=max_n {
            let (m, t, _) = clipped_matches(h, r, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    let precisions: Vec<f64> = (0..max_n)
        .map(|i| match smoothing {
            Smoothing::AddOne if i > 0 => (matched[i] + 1) as f64 / (total[i] + 1) as f64,
            _ if total[i] == 0 => 0.0,
            _ => matched[i] as f64 / total[i] as f64,
        })
        .collect();

    let hyp_len: usize = hyps.iter().map(Vec::len).sum();
    let ref_len: usize = refs.iter().map(Vec::len).sum();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };

    let mut scores = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for (k, &p) in precisions.iter().enumerate() {
        if p == 0.0 {
            zero = true;
        } else {
            log_sum += p.ln();
        }
        scores.push(if zero || brevity_penalty == 0.0 {
            0.0
        } else {
            brevity_penalty * (log_sum / (k + 1) as f64).exp()
        });
    }
    Ok(BleuScores {
        precisions,
        brevity_penalty,
        scores,
        hyp_len,
        ref_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_is_one() {
        let c = vec![
            toks("how do i learn to cook well"),
            toks("why is the sky blue today"),
        ];
        let b = bleu(&c, &c, 4, Smoothing::None).unwrap();
        assert_eq!(b.scores, vec![1.0; 4]);
    }

    #[test]
    fn clipped_unigram_precision() {
        let b = bleu(
            &[toks("the the the")],
            &[toks("the cat")],
            1,
            Smoothing::None,
        )
        .unwrap();
        assert_eq!(b.precisions[0], 1.0 / 3.0);
        assert_eq!(b.brevity_penalty, 1.0);
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        let b = bleu(&[vec![]], &[toks("a b")], 4, Smoothing::None).unwrap();
        assert!(b.scores.iter().all(|&s| s == 0.0));
        assert!(b.precisions.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn brevity_penalty_applies() {
        let b = bleu(&[toks("a b")], &[toks("a b c d")], 1, Smoothing::None).unwrap();
        assert!((b.brevity_penalty - (-1.0f64).exp()).abs() < 1e-15);
        assert!((b.bleu(1) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn smoothing_rescues_missing_higher_orders() {
        let h = [toks("a x b y")];
        let r = [toks("a b c d")];
        assert_eq!(bleu(&h, &r, 2, Smoothing::None).unwrap().bleu(2), 0.0);
        assert!(bleu(&h, &r, 2, Smoothing::AddOne).unwrap().bleu(2) > 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(bleu(&[toks("a")], &[], 1, Smoothing::None).is_err());
    }

    /// BLEU-k is not monotone in k in general: a length-1 sentence adds an
    /// unmatched unigram but no bigrams, so p2 can exceed p1.
    #[test]
    fn bleu_k_can_increase_when_precisions_do() {
        let h = [toks("x"), toks("a b c")];
        let r = [toks("y"), toks("a b c")];
        let b = bleu(&h, &r, 2, Smoothing::None).unwrap();
        assert_eq!(b.precisions, vec![0.75, 1.0]);
        assert!(b.bleu(2) > b.bleu(1));
    }

    proptest! {
        #[test]
        fn bleu_k_nonincreasing_when_precisions_are(
            pairs in proptest::collection::vec(
                (proptest::collection::vec(0u8..4, 0..8), proptest::collection::vec(0u8..4, 1..8)), 1..6)
        ) {
            let (h, r): (Vec<Vec<u8>>, Vec<Vec<u8>>) = pairs.into_iter().unzip();
            let b = bleu(&h, &r, 4, Smoothing::None).unwrap();
            for s in &b.scores {
                prop_assert!((0.0..=1.0).contains(s));
            }
            let monotone_p = b.precisions.windows(2).all(|w| w[1] <= w[0]);
            if monotone_p {
                for w in b.scores.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-15);
                }
            }
        }

        #[test]
        fn order_invariant(
            pairs in proptest::collection::vec(
                (proptest::collection::vec(0u8..4, 0..8), proptest::collection::vec(0u8..4, 1..8)), 1..6)
        ) {
            let (h, r): (Vec<Vec<u8>>, Vec<Vec<u8>>) = pairs.iter().cloned().unzip();
            let (hr, rr): (Vec<Vec<u8>>, Vec<Vec<u8>>) = pairs.into_iter().rev().unzip();
            prop_assert_eq!(bleu(&h, &r, 4, Smoothing::None).unwrap(), bleu(&hr, &rr, 4, Smoothing::None).unwrap());
        }
    }
}
