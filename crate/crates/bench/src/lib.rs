//! Seeded inputs shared by the benchmarks.

use pairdisc_core::synthetic::paraphrase_corpus;
use pairdisc_core::text::{ParaphrasePair, RawPair};
use pairdisc_core::{Tensor, TrainConfig, Trainer, Variant, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(&[rows, cols], data).expect("shape matches data")
}

pub fn random_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// A trainer over the synthetic corpus plus its encoded training pairs.
pub fn synthetic_trainer(
    variant: Variant,
    embed_dim: usize,
    hidden_dim: usize,
    pairs: usize,
) -> (Trainer, Vec<ParaphrasePair>) {
    let raw = paraphrase_corpus(pairs, 1).expect("corpus");
    let vocab = Vocabulary::from_training_pairs(&raw, 1, usize::MAX).expect("vocabulary");
    let encoded = raw
        .iter()
        .map(|p| vocab.encode_pair(p).expect("in-vocabulary"))
        .collect();
    let mut cfg = TrainConfig::for_variant(variant);
    cfg.embed_dim = embed_dim;
    cfg.hidden_dim = hidden_dim;
    cfg.batch_size = pairs;
    (Trainer::new(cfg, vocab).expect("valid config"), encoded)
}

/// Hypothesis/reference pairs where the hypothesis is the reference with
/// its two halves swapped and one word replaced, so TER has shifts to find.
pub fn shifted_sentences(n: usize, seed: u64) -> Vec<(Vec<String>, Vec<String>)> {
    let corpus: Vec<RawPair> = paraphrase_corpus(n, seed).expect("corpus");
    corpus
        .into_iter()
        .map(|p| {
            let r = p.target;
            let mid = r.len() / 2;
            let mut h: Vec<String> = r[mid..].iter().chain(&r[..mid]).cloned().collect();
            if let Some(w) = h.first_mut() {
                *w = "zzz".to_string();
            }
            (h, r)
        })
        .collect()
}
