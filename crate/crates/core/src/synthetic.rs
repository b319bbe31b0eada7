//! Seeded synthetic data for tests, benchmarks and the ablation runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::text::{RawPair, NUM_SENTIMENT_CLASSES};

/// Five blobs: class `k` sits at `separation · e_k` plus noise
/// uniform in `[-noise, noise]` on every coordinate. Linearly separable
/// whenever `separation > 2 · noise`. Rows cycle through the classes.
pub fn sentiment_blobs(
    per_class: usize,
    dim: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<(Tensor, Vec<usize>)> {
    if dim < NUM_SENTIMENT_CLASSES || per_class == 0 {
        return Err(Error::invalid(format!(
            "need dim >= {NUM_SENTIMENT_CLASSES} and at least one point per class"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(per_class * NUM_SENTIMENT_CLASSES);
    let mut labels = Vec::with_capacity(rows.capacity());
    for _ in 0..per_class {
        for k in 0..NUM_SENTIMENT_CLASSES {
            let mut row: Vec<f64> = (0..dim)
                .map(|_| {
                    if noise > 0.0 {
                        rng.gen_range(-noise..=noise)
                    } else {
                        0.0
                    }
                })
                .collect();
            row[k] += separation;
            rows.push(row);
            labels.push(k);
        }
    }
    Ok((Tensor::from_rows(&rows)?, labels))
}

const FRAMES: [(&str, &str); 8] = [
    ("how do i {v} {n}", "what is the best way to {v} {n}"),
    (
        "how can i {v} {n} quickly",
        "what is the fastest way to {v} {n}",
    ),
    ("why is {n} so {a}", "what makes {n} {a}"),
    ("is it {a} to {v} {n}", "should i {v} {n} if it is {a}"),
    ("where can i {v} {n}", "what is a good place to {v} {n}"),
    ("what is the {a} {n}", "which {n} is {a}"),
    (
        "can you {v} {n} at home",
        "is it possible to {v} {n} at home",
    ),
    ("when should i {v} {n}", "what is the right time to {v} {n}"),
];

const VERBS: [&str; 8] = [
    "learn", "cook", "clean", "fix", "buy", "paint", "sell", "build",
];
const NOUNS: [&str; 10] = [
    "rice",
    "a bike",
    "python",
    "the house",
    "a car",
    "bread",
    "guitar",
    "a laptop",
    "the garden",
    "chess",
];
const ADJECTIVES: [&str; 6] = ["hard", "cheap", "popular", "safe", "expensive", "easy"];

fn fill(frame: &str, v: &str, n: &str, a: &str) -> Vec<String> {
    frame
        .replace("{v}", v)
        .replace("{n}", n)
        .replace("{a}", a)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// `n` distinct question pairs built from paraphrase frames with shared slot
/// fillers. The mapping from source to target is deterministic, so the task
/// is learnable from a few hundred pairs.
pub fn paraphrase_corpus(n: usize, seed: u64) -> Result<Vec<RawPair>> {
    let mut combos: Vec<(usize, usize, usize, usize)> = Vec::new();
    for (f, &(src, tgt)) in FRAMES.iter().enumerate() {
        for v in 0..VERBS.len() {
            for no in 0..NOUNS.len() {
                for a in 0..ADJECTIVES.len() {
                    let uses_v = src.contains("{v}") || tgt.contains("{v}");
                    let uses_a = src.contains("{a}") || tgt.contains("{a}");
                    if (!uses_v && v > 0) || (!uses_a && a > 0) {
                        continue;
                    }
                    combos.push((f, v, no, a));
                }
            }
        }
    }
    if n > combos.len() {
        return Err(Error::invalid(format!(
            "at most {} distinct pairs available",
            combos.len()
        )));
    }
    combos.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(combos[..n]
        .iter()
        .enumerate()
        .map(|(i, &(f, v, no, a))| RawPair {
            source: fill(FRAMES[f].0, VERBS[v], NOUNS[no], ADJECTIVES[a]),
            target: fill(FRAMES[f].1, VERBS[v], NOUNS[no], ADJECTIVES[a]),
            line: i + 1,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_separable_by_identity_rows() {
        let (x, y) = sentiment_blobs(20, 8, 2.0, 0.9, 3).unwrap();
        for (r, &label) in y.iter().enumerate() {
            let row = x.row(r);
            let best = (0..NUM_SENTIMENT_CLASSES)
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(best, label);
        }
    }

    #[test]
    fn corpus_is_seeded_and_distinct() {
        let a = paraphrase_corpus(200, 1).unwrap();
        assert_eq!(a, paraphrase_corpus(200, 1).unwrap());
        assert_ne!(a, paraphrase_corpus(200, 2).unwrap());
        let mut sources: Vec<_> = a.iter().map(|p| p.source.join(" ")).collect();
        sources.sort();
        sources.dedup();
        assert_eq!(sources.len(), 200);
        assert!(a.iter().all(|p| p.source != p.target));
    }
}
