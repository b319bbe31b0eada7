//! Conditional LSTM language model over target tokens.
//!
//! The sentence embedding enters once, as the input of an initial step from
//! the zero state; then each ground-truth token (starting with START) is fed
//! and the next token is predicted:
//!
//! ```text
//! h_0     = LSTM(proj · f)
//! h_{t+1} = LSTM(W_d[q_t], h_t)        t = 0..T   (q_0 = START)
//! p_{t+1} = softmax(W_v h_{t+1} + b)   targets q_1..q_T, STOP
//! ```
//!
//! The local loss averages `-log p_t[q_t]` over all `T + 1` predictions.

use rand::Rng;

use crate::encoder::SentenceEmbedding;
use crate::error::{Error, Result};
use crate::lstm::{Lstm, LstmStep};
use crate::params::{Gradients, ParamId, ParameterStore};
use crate::tensor::linalg::{argmax, axpy, dot, matvec, matvec_t_acc, outer_acc, softmax};
use crate::text::{TokenSequence, START, STOP};

/// Floor applied inside the log of the local loss.
pub const LOG_FLOOR: f64 = 1e-12;

/// Per-step probability rows over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftSequence {
    rows: Vec<Vec<f64>>,
}

impl SoftSequence {
    /// Validates that every row has `vocab` entries in `[0, 1]` summing to 1
    /// within the encoder's tolerance.
    pub fn new(rows: Vec<Vec<f64>>, vocab: usize) -> Result<Self> {
        for (t, r) in rows.iter().enumerate() {
            if r.len() != vocab {
                return Err(Error::shape(format!(
                    "row {t} has {} entries, expected {vocab}",
                    r.len()
                )));
            }
            if r.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid(format!(
                    "row {t} has entries outside [0, 1]"
                )));
            }
            let total: f64 = r.iter().sum();
            if (total - 1.0).abs() > crate::encoder::SOFT_ROW_TOLERANCE {
                return Err(Error::invalid(format!("row {t} sums to {total}")));
            }
        }
        Ok(SoftSequence { rows })
    }

    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        SoftSequence { rows }
    }

    pub fn one_hot(seq: &TokenSequence, vocab: usize) -> Self {
        let rows = seq
            .ids()
            .iter()
            .map(|&id| {
                let mut r = vec![0.0; vocab];
                r[id] = 1.0;
                r
            })
            .collect();
        SoftSequence { rows }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderCache {
    f: Vec<f64>,
    /// Initial step plus one step per fed token.
    steps: Vec<LstmStep>,
    fed: Vec<usize>,
    targets: Vec<usize>,
    probs: Vec<Vec<f64>>,
    floored: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    pub loss: f64,
    /// Predictions whose target probability hit [`LOG_FLOOR`].
    pub floor_hits: usize,
    pub cache: DecoderCache,
}

impl DecodeOutput {
    /// All `T + 1` prediction rows, the last being the STOP step.
    pub fn probabilities(&self) -> &[Vec<f64>] {
        &self.cache.probs
    }

    /// The rows aligned with the `T` target words (STOP step excluded); this
    /// is what the discriminator re-encodes.
    pub fn soft_sequence(&self) -> SoftSequence {
        let t = self.cache.targets.len() - 1;
        SoftSequence::from_rows_unchecked(self.cache.probs[..t].to_vec())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    embed: ParamId,
    proj: Option<ParamId>,
    lstm: Lstm,
    out_w: ParamId,
    out_b: ParamId,
    vocab: usize,
    embed_dim: usize,
}

impl Decoder {
    /// Registers `dec.embed [V×e]`, `dec.proj [e×d]` (only when `e ≠ d`),
    /// `dec.lstm.*`, `dec.out.W [V×d]` and `dec.out.b [V]`.
    pub fn register<R: Rng>(
        store: &mut ParameterStore,
        vocab: usize,
        embed_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let embed = store.insert_uniform("dec.embed", &[vocab, embed_dim], rng)?;
        let proj = if embed_dim != hidden {
            Some(store.insert_uniform("dec.proj", &[embed_dim, hidden], rng)?)
        } else {
            None
        };
        let lstm = Lstm::register(store, "dec.lstm", embed_dim, hidden, rng)?;
        let out_w = store.insert_uniform("dec.out.W", &[vocab, hidden], rng)?;
        let out_b = store.insert_uniform("dec.out.b", &[vocab], rng)?;
        Ok(Decoder {
            embed,
            proj,
            lstm,
            out_w,
            out_b,
            vocab,
            embed_dim,
        })
    }

    pub fn bind(store: &ParameterStore) -> Result<Self> {
        let embed = store.require("dec.embed")?;
        let shape = store.value(embed).shape();
        let (vocab, embed_dim) = (shape[0], shape[1]);
        Ok(Decoder {
            embed,
            proj: store.id("dec.proj"),
            lstm: Lstm::bind(store, "dec.lstm")?,
            out_w: store.require("dec.out.W")?,
            out_b: store.require("dec.out.b")?,
            vocab,
            embed_dim,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embed];
        ids.extend(self.proj);
        ids.extend(self.lstm.param_ids());
        ids.extend([self.out_w, self.out_b]);
        ids
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn output_bias(&self) -> ParamId {
        self.out_b
    }

    pub fn output_weights(&self) -> ParamId {
        self.out_w
    }

    fn check_embedding(&self, f: &SentenceEmbedding) -> Result<()> {
        if f.dim() != self.lstm.hidden {
            return Err(Error::shape(format!(
                "embedding has dimension {}, decoder expects {}",
                f.dim(),
                self.lstm.hidden
            )));
        }
        Ok(())
    }

    fn initial_input(&self, store: &ParameterStore, f: &[f64]) -> Vec<f64> {
        match self.proj {
            Some(p) => {
                let mut x = vec![0.0; self.embed_dim];
                matvec(store.value(p).data(), f, &mut x);
                x
            }
            None => f.to_vec(),
        }
    }

    fn logits(&self, store: &ParameterStore, h: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.vocab];
        matvec(store.value(self.out_w).data(), h, &mut z);
        for (zv, &b) in z.iter_mut().zip(store.value(self.out_b).data()) {
            *zv += b;
        }
        z
    }

    /// Teacher-forced pass over `target`; returns the local loss and the
    /// cache for [`Decoder::backward`].
    pub fn decode_teacher_forced(
        &self,
        store: &ParameterStore,
        f: &SentenceEmbedding,
        target: &TokenSequence,
    ) -> Result<DecodeOutput> {
        self.check_embedding(f)?;
        if let Some(&bad) = target.ids().iter().find(|&&id| id >= self.vocab) {
            return Err(Error::invalid(format!("target id {bad} out of range")));
        }
        let fed: Vec<usize> = std::iter::once(START)
            .chain(target.ids().iter().copied())
            .collect();
        let targets: Vec<usize> = target
            .ids()
            .iter()
            .copied()
            .chain(std::iter::once(STOP))
            .collect();

        let (h0, c0) = self.lstm.zero_state();
        let first = self
            .lstm
            .step(store, &self.initial_input(store, f.values()), &h0, &c0);
        let table = store.value(self.embed);
        let mut steps = Vec::with_capacity(fed.len() + 1);
        steps.push(first);
        let mut probs = Vec::with_capacity(fed.len());
        let mut floored = Vec::with_capacity(fed.len());
        let mut loss = 0.0;
        for (&q, &target_id) in fed.iter().zip(&targets) {
            let prev = steps.last().expect("initial step");
            let s = self.lstm.step(store, table.row(q), &prev.h, &prev.c);
            let p = softmax(&self.logits(store, &s.h));
            let pt = p[target_id];
            floored.push(pt < LOG_FLOOR);
            loss -= pt.max(LOG_FLOOR).ln();
            probs.push(p);
            steps.push(s);
        }
        loss /= targets.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("local loss".into()));
        }
        let floor_hits = floored.iter().filter(|&&b| b).count();
        Ok(DecodeOutput {
            loss,
            floor_hits,
            cache: DecoderCache {
                f: f.values().to_vec(),
                steps,
                fed,
                targets,
                probs,
                floored,
            },
        })
    }

    /// Greedy decoding: the argmax word (ties to the lowest id) is fed back
    /// until STOP or `t_max` words. START/STOP are not included.
    pub fn generate_greedy(
        &self,
        store: &ParameterStore,
        f: &SentenceEmbedding,
        t_max: usize,
    ) -> Result<Vec<usize>> {
        self.check_embedding(f)?;
        if t_max == 0 {
            return Err(Error::invalid("t_max must be at least 1"));
        }
        let (h0, c0) = self.lstm.zero_state();
        let mut state = self
            .lstm
            .step(store, &self.initial_input(store, f.values()), &h0, &c0);
        let table = store.value(self.embed);
        let mut out = Vec::new();
        let mut q = START;
        while out.len() < t_max {
            state = self.lstm.step(store, table.row(q), &state.h, &state.c);
            q = argmax(&self.logits(store, &state.h));
            if q == STOP {
                break;
            }
            out.push(q);
        }
        Ok(out)
    }

    /// Backward through the teacher-forced pass.
    ///
    /// `local_scale` multiplies `∂L_local/∂θ`; `d_soft`, when present, is
    /// `∂L/∂p` for the rows returned by [`DecodeOutput::soft_sequence`].
    /// Returns `∂L/∂f` for the source encoder.
    pub fn backward(
        &self,
        store: &ParameterStore,
        grads: &mut Gradients,
        cache: &DecoderCache,
        local_scale: f64,
        d_soft: Option<&[Vec<f64>]>,
    ) -> Result<Vec<f64>> {
        let n_pred = cache.targets.len();
        if cache.steps.len() != n_pred + 1 || cache.probs.len() != n_pred {
            return Err(Error::invalid("decoder cache is inconsistent"));
        }
        if let Some(ds) = d_soft {
            if ds.len() != n_pred - 1 || ds.iter().any(|r| r.len() != self.vocab) {
                return Err(Error::shape(
                    "soft-sequence gradient does not match the cached pass",
                ));
            }
        }
        let hidden = self.lstm.hidden;
        let mut dh_out = vec![vec![0.0; hidden]; cache.steps.len()];
        let w_out = store.value(self.out_w).data();
        let per_step = local_scale / n_pred as f64;
        for t in 0..n_pred {
            let p = &cache.probs[t];
            let mut dz = vec![0.0; self.vocab];
            if per_step != 0.0 && !cache.floored[t] {
                for (v, dzv) in dz.iter_mut().enumerate() {
                    *dzv = per_step * p[v];
                }
                dz[cache.targets[t]] -= per_step;
            }
            if let Some(ds) = d_soft.and_then(|ds| ds.get(t)) {
                // softmax Jacobian: dz = p ⊙ (g − p·g)
                let pg = dot(p, ds);
                for v in 0..self.vocab {
                    dz[v] += p[v] * (ds[v] - pg);
                }
            }
            if dz.iter().all(|&v| v == 0.0) {
                continue;
            }
            let h = &cache.steps[t + 1].h;
            outer_acc(&dz, h, grads.data_mut(self.out_w));
            axpy(1.0, &dz, grads.data_mut(self.out_b));
            matvec_t_acc(w_out, &dz, &mut dh_out[t + 1]);
        }
        let dxs = self.lstm.backward(store, grads, &cache.steps, &dh_out);
        for (&q, dx) in cache.fed.iter().zip(&dxs[1..]) {
            axpy(1.0, dx, grads.row_mut(self.embed, q));
        }
        let dx0 = &dxs[0];
        Ok(match self.proj {
            Some(p) => {
                outer_acc(dx0, &cache.f, grads.data_mut(p));
                let mut df = vec![0.0; hidden];
                matvec_t_acc(store.value(p).data(), dx0, &mut df);
                df
            }
            None => dx0.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, sample_coordinates, LossProbe};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const V: usize = 7;

    fn decoder(e: usize, d: usize) -> (ParameterStore, Decoder) {
        let mut store = ParameterStore::new();
        let dec =
            Decoder::register(&mut store, V, e, d, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        for id in dec.param_ids() {
            let mut v = store.value(id).clone();
            v.data_mut().iter_mut().for_each(|x| *x *= 6.0);
            store.set_value(id, v).unwrap();
        }
        (store, dec)
    }

    fn emb(d: usize) -> SentenceEmbedding {
        SentenceEmbedding::new((0..d).map(|k| (k as f64 * 1.3).cos() * 0.8).collect()).unwrap()
    }

    fn target(ids: &[usize]) -> TokenSequence {
        TokenSequence::new(ids.to_vec(), V).unwrap()
    }

    #[test]
    fn projection_only_when_dims_differ() {
        let (s1, _) = decoder(3, 5);
        assert!(s1.id("dec.proj").is_some());
        let (s2, _) = decoder(5, 5);
        assert!(s2.id("dec.proj").is_none());
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let (mut store, dec) = decoder(3, 4);
        store.set_value(dec.out_w, Tensor::zeros(&[V, 4])).unwrap();
        store.set_value(dec.out_b, Tensor::zeros(&[V])).unwrap();
        let out = dec
            .decode_teacher_forced(&store, &emb(4), &target(&[3, 4, 5]))
            .unwrap();
        assert!((out.loss - (V as f64).ln()).abs() < 1e-12);
        assert_eq!(out.probabilities().len(), 4);
        assert_eq!(out.soft_sequence().len(), 3);
    }

    #[test]
    fn near_perfect_prediction_has_near_zero_loss() {
        let (mut store, dec) = decoder(3, 4);
        // make the correct token dominate through the bias; target is constant
        store.set_value(dec.out_w, Tensor::zeros(&[V, 4])).unwrap();
        let mut b = vec![0.0; V];
        b[STOP] = 30.0;
        store
            .set_value(dec.out_b, Tensor::from_vec(&[V], b).unwrap())
            .unwrap();
        let out = dec
            .decode_teacher_forced(&store, &emb(4), &target(&[STOP, STOP]))
            .unwrap();
        assert!(out.loss < 1e-11, "{}", out.loss);
    }

    #[test]
    fn rows_are_distributions_and_loss_nonnegative() {
        let (store, dec) = decoder(4, 4);
        let out = dec
            .decode_teacher_forced(&store, &emb(4), &target(&[3, 6, 2, 5]))
            .unwrap();
        assert!(out.loss >= 0.0);
        for r in out.probabilities() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn greedy_stops_on_stop() {
        let (mut store, dec) = decoder(3, 4);
        store.set_value(dec.out_w, Tensor::zeros(&[V, 4])).unwrap();
        let mut b = vec![0.0; V];
        b[STOP] = 5.0;
        store
            .set_value(dec.out_b, Tensor::from_vec(&[V], b).unwrap())
            .unwrap();
        assert!(dec.generate_greedy(&store, &emb(4), 10).unwrap().is_empty());

        let mut b = vec![0.0; V];
        b[4] = 5.0;
        store
            .set_value(dec.out_b, Tensor::from_vec(&[V], b).unwrap())
            .unwrap();
        assert_eq!(
            dec.generate_greedy(&store, &emb(4), 3).unwrap(),
            vec![4, 4, 4]
        );
        assert!(dec.generate_greedy(&store, &emb(4), 0).is_err());
    }

    #[test]
    fn greedy_ties_go_to_lowest_id_and_is_deterministic() {
        let (mut store, dec) = decoder(3, 4);
        store.set_value(dec.out_w, Tensor::zeros(&[V, 4])).unwrap();
        let mut b = vec![0.0; V];
        b[5] = 2.0;
        b[3] = 2.0;
        store
            .set_value(dec.out_b, Tensor::from_vec(&[V], b).unwrap())
            .unwrap();
        assert_eq!(dec.generate_greedy(&store, &emb(4), 2).unwrap(), vec![3, 3]);

        let (store, dec) = decoder(4, 4);
        let a = dec.generate_greedy(&store, &emb(4), 8).unwrap();
        assert_eq!(a, dec.generate_greedy(&store, &emb(4), 8).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (store, dec) = decoder(3, 4);
        assert!(dec
            .decode_teacher_forced(&store, &emb(5), &target(&[3]))
            .is_err());
    }

    fn check(e: usize, d: usize, local_scale: f64, with_soft: bool) {
        let (mut store, dec) = decoder(e, d);
        let f = emb(d);
        let tgt = target(&[3, 6, 2]);
        // a fixed linear functional of the soft rows stands in for the discriminator
        let weights: Vec<Vec<f64>> = (0..3)
            .map(|t| {
                (0..V)
                    .map(|v| ((t + 1) * (v + 2)) as f64 * 0.17 - 0.5)
                    .collect()
            })
            .collect();
        let objective = |st: &ParameterStore| -> f64 {
            let out = dec.decode_teacher_forced(st, &f, &tgt).unwrap();
            let mut l = local_scale * out.loss;
            if with_soft {
                for (row, w) in out.soft_sequence().rows().iter().zip(&weights) {
                    l += dot(row, w);
                }
            }
            l
        };
        let out = dec.decode_teacher_forced(&store, &f, &tgt).unwrap();
        let mut g = store.new_gradients();
        let df = dec
            .backward(
                &store,
                &mut g,
                &out.cache,
                local_scale,
                with_soft.then_some(weights.as_slice()),
            )
            .unwrap();
        store.accumulate(&g).unwrap();
        let coords = sample_coordinates(&store, 100, &mut ChaCha8Rng::seed_from_u64(3));
        let report = finite_diff_check(
            &mut store,
            |st| Ok(LossProbe::smooth(objective(st))),
            1e-5,
            &coords,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        if local_scale == 0.0 && with_soft {
            assert!(g.norm() > 0.0);
        }

        // gradient w.r.t. the embedding itself
        let h = 1e-6;
        for k in 0..d {
            let mut plus = f.values().to_vec();
            plus[k] += h;
            let mut minus = f.values().to_vec();
            minus[k] -= h;
            let eval = |v: Vec<f64>| {
                let fe = SentenceEmbedding::new(v).unwrap();
                let out = dec.decode_teacher_forced(&store, &fe, &tgt).unwrap();
                let mut l = local_scale * out.loss;
                if with_soft {
                    for (row, w) in out.soft_sequence().rows().iter().zip(&weights) {
                        l += dot(row, w);
                    }
                }
                l
            };
            let numeric = (eval(plus) - eval(minus)) / (2.0 * h);
            let rel = (numeric - df[k]).abs() / (numeric.abs() + df[k].abs()).max(1e-8);
            assert!(rel < 1e-5, "k={k} rel={rel}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check(3, 5, 1.0, false);
        check(5, 5, 1.0, true);
        check(3, 5, 0.0, true);
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let (store, dec) = decoder(3, 5);
        let out = dec
            .decode_teacher_forced(&store, &emb(5), &target(&[3, 4]))
            .unwrap();
        let mut g = store.new_gradients();
        let df = dec.backward(&store, &mut g, &out.cache, 0.0, None).unwrap();
        assert!(g.is_zero());
        assert!(df.iter().all(|&v| v == 0.0));
    }
}
