//! Sentence encoder: word-embedding front end (with an optional temporal
//! convolution) feeding a single-layer LSTM whose final hidden state is the
//! sentence embedding.
//!
//! The same parameterization embeds source sentences, predicted soft
//! sequences, and ground-truth targets. Which parameters it reads is decided
//! only by the name prefix it was bound with (`enc` or `disc`).

use rand::Rng;

use crate::decoder::SoftSequence;
use crate::error::{Error, Result};
use crate::lstm::{Lstm, LstmStep};
use crate::params::{Gradients, ParamId, ParameterStore};
use crate::tensor::linalg::axpy;
use crate::tensor::linalg::dot;
use crate::tensor::Tensor;
use crate::text::TokenSequence;

/// Tolerance on `Σ p = 1` for soft input rows.
pub const SOFT_ROW_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEmbedding(Vec<f64>);

impl SentenceEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sentence embedding".into()));
        }
        Ok(SentenceEmbedding(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum EncoderInput<'a> {
    Tokens(&'a TokenSequence),
    /// Probability rows over the vocabulary; each row embeds as `pᵀ W_e`.
    Soft(&'a SoftSequence),
}

#[derive(Clone, Debug, PartialEq)]
enum CachedInput {
    Tokens(Vec<usize>),
    Soft(Vec<Vec<f64>>),
}

/// Forward state needed by [`Encoder::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderCache {
    input: CachedInput,
    /// Embedding rows before the convolution.
    looked_up: Vec<Vec<f64>>,
    steps: Vec<LstmStep>,
}

impl EncoderCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Hidden state after every input position.
    pub fn hidden_states(&self) -> impl Iterator<Item = &[f64]> {
        self.steps.iter().map(|s| s.h.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Conv {
    kernel: ParamId,
    width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    prefix: String,
    embed: ParamId,
    conv: Option<Conv>,
    lstm: Lstm,
    vocab: usize,
    embed_dim: usize,
}

impl Encoder {
    /// Registers `{prefix}.embed [V×e]`, optionally `{prefix}.conv [w×e×e]`,
    /// and `{prefix}.lstm.{Wx,Wh,b}`.
    pub fn register<R: Rng>(
        store: &mut ParameterStore,
        prefix: &str,
        vocab: usize,
        embed_dim: usize,
        hidden: usize,
        conv_width: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let embed = store.insert_uniform(&format!("{prefix}.embed"), &[vocab, embed_dim], rng)?;
        let conv = match conv_width {
            None => None,
            Some(0) => return Err(Error::Config("convolution width must be positive".into())),
            Some(width) => Some(Conv {
                kernel: store.insert_uniform(
                    &format!("{prefix}.conv"),
                    &[width, embed_dim, embed_dim],
                    rng,
                )?,
                width,
            }),
        };
        let lstm = Lstm::register(store, &format!("{prefix}.lstm"), embed_dim, hidden, rng)?;
        Ok(Encoder {
            prefix: prefix.to_string(),
            embed,
            conv,
            lstm,
            vocab,
            embed_dim,
        })
    }

    pub fn bind(store: &ParameterStore, prefix: &str) -> Result<Self> {
        let embed = store.require(&format!("{prefix}.embed"))?;
        let shape = store.value(embed).shape();
        let (vocab, embed_dim) = (shape[0], shape[1]);
        let conv = store.id(&format!("{prefix}.conv")).map(|kernel| Conv {
            kernel,
            width: store.value(kernel).shape()[0],
        });
        let lstm = Lstm::bind(store, &format!("{prefix}.lstm"))?;
        Ok(Encoder {
            prefix: prefix.to_string(),
            embed,
            conv,
            lstm,
            vocab,
            embed_dim,
        })
    }

    /// Registers a copy of `self` under `prefix` with identical values.
    pub fn duplicate(&self, store: &mut ParameterStore, prefix: &str) -> Result<Self> {
        for id in self.param_ids() {
            let name = store.name(id).replacen(&self.prefix, prefix, 1);
            let value = store.value(id).clone();
            store.insert(&name, value)?;
        }
        Encoder::bind(store, prefix)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embed];
        ids.extend(self.conv.as_ref().map(|c| c.kernel));
        ids.extend(self.lstm.param_ids());
        ids
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden
    }

    fn lookup(&self, store: &ParameterStore, input: EncoderInput<'_>) -> Result<Vec<Vec<f64>>> {
        let table = store.value(self.embed);
        match input {
            EncoderInput::Tokens(seq) => seq
                .ids()
                .iter()
                .map(|&id| {
                    if id >= self.vocab {
                        Err(Error::invalid(format!(
                            "token id {id} out of range for vocabulary of {}",
                            self.vocab
                        )))
                    } else {
                        Ok(table.row(id).to_vec())
                    }
                })
                .collect(),
            EncoderInput::Soft(soft) => {
                if soft.is_empty() {
                    return Err(Error::invalid("cannot encode an empty sequence"));
                }
                soft.rows()
                    .iter()
                    .enumerate()
                    .map(|(t, p)| {
                        if p.len() != self.vocab {
                            return Err(Error::shape(format!(
                                "soft row {t} has {} entries, vocabulary has {}",
                                p.len(),
                                self.vocab
                            )));
                        }
                        let total: f64 = p.iter().sum();
                        if (total - 1.0).abs() > SOFT_ROW_TOLERANCE {
                            return Err(Error::invalid(format!(
                                "soft row {t} sums to {total}, not 1"
                            )));
                        }
                        let mut row = vec![0.0; self.embed_dim];
                        for (v, &pv) in p.iter().enumerate() {
                            if pv != 0.0 {
                                axpy(pv, table.row(v), &mut row);
                            }
                        }
                        Ok(row)
                    })
                    .collect()
            }
        }
    }

    fn convolve(&self, store: &ParameterStore, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let Some(conv) = &self.conv else {
            return rows.to_vec();
        };
        let e = self.embed_dim;
        let kernel = store.value(conv.kernel).data();
        let pad = (conv.width - 1) / 2;
        let len = rows.len();
        (0..len)
            .map(|t| {
                let mut out = vec![0.0; e];
                for k in 0..conv.width {
                    let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < len) else {
                        continue;
                    };
                    let x = &rows[src];
                    for (o, out_o) in out.iter_mut().enumerate() {
                        let base = (k * e + o) * e;
                        *out_o += dot(&kernel[base..base + e], x);
                    }
                }
                out
            })
            .collect()
    }

    /// Embedded rows `[L×e]`: lookup (or probability-weighted lookup for
    /// soft input) followed by the convolution when enabled.
    pub fn embed_tokens(&self, store: &ParameterStore, input: EncoderInput<'_>) -> Result<Tensor> {
        let rows = self.lookup(store, input)?;
        Tensor::from_rows(&self.convolve(store, &rows))
    }

    /// Runs the LSTM from the zero state and returns the final hidden state.
    pub fn encode(
        &self,
        store: &ParameterStore,
        input: EncoderInput<'_>,
    ) -> Result<(SentenceEmbedding, EncoderCache)> {
        let looked_up = self.lookup(store, input)?;
        if looked_up.is_empty() {
            return Err(Error::invalid("cannot encode an empty sequence"));
        }
        let rows = self.convolve(store, &looked_up);
        let steps = self.lstm.run(store, &rows);
        let last = steps.last().expect("non-empty").h.clone();
        let cached = match input {
            EncoderInput::Tokens(seq) => CachedInput::Tokens(seq.ids().to_vec()),
            EncoderInput::Soft(soft) => CachedInput::Soft(soft.rows().to_vec()),
        };
        Ok((
            SentenceEmbedding::new(last)?,
            EncoderCache {
                input: cached,
                looked_up,
                steps,
            },
        ))
    }

    /// Accumulates `∂L/∂θ` for upstream gradient `df = ∂L/∂f`. For soft input
    /// also returns `∂L/∂p` for every row.
    pub fn backward(
        &self,
        store: &ParameterStore,
        grads: &mut Gradients,
        cache: &EncoderCache,
        df: &[f64],
    ) -> Result<Option<Vec<Vec<f64>>>> {
        if df.len() != self.hidden() {
            return Err(Error::shape(format!(
                "upstream gradient has {} entries, hidden size is {}",
                df.len(),
                self.hidden()
            )));
        }
        if cache.steps.is_empty()
            || cache.steps[0].x.len() != self.embed_dim
            || cache.looked_up.len() != cache.steps.len()
        {
            return Err(Error::invalid("encoder cache does not match this encoder"));
        }
        let len = cache.steps.len();
        let mut dh_out = vec![vec![0.0; self.hidden()]; len];
        dh_out[len - 1].copy_from_slice(df);
        let d_rows = self.lstm.backward(store, grads, &cache.steps, &dh_out);
        let d_looked = self.conv_backward(store, grads, &cache.looked_up, d_rows);

        let table = store.value(self.embed);
        match &cache.input {
            CachedInput::Tokens(ids) => {
                for (&id, d) in ids.iter().zip(&d_looked) {
                    let g = grads.row_mut(self.embed, id);
                    axpy(1.0, d, g);
                }
                Ok(None)
            }
            CachedInput::Soft(rows) => {
                let mut dp = Vec::with_capacity(rows.len());
                for (p, d) in rows.iter().zip(&d_looked) {
                    let mut dp_row = vec![0.0; self.vocab];
                    for (v, &pv) in p.iter().enumerate() {
                        dp_row[v] = dot(table.row(v), d);
                        if pv != 0.0 {
                            axpy(pv, d, grads.row_mut(self.embed, v));
                        }
                    }
                    dp.push(dp_row);
                }
                Ok(Some(dp))
            }
        }
    }

    fn conv_backward(
        &self,
        store: &ParameterStore,
        grads: &mut Gradients,
        inputs: &[Vec<f64>],
        d_out: Vec<Vec<f64>>,
    ) -> Vec<Vec<f64>> {
        let Some(conv) = &self.conv else {
            return d_out;
        };
        let e = self.embed_dim;
        let pad = (conv.width - 1) / 2;
        let len = inputs.len();
        let kernel = store.value(conv.kernel).data();
        let mut d_in = vec![vec![0.0; e]; len];
        for (t, g) in d_out.iter().enumerate() {
            for k in 0..conv.width {
                let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < len) else {
                    continue;
                };
                for (o, &go) in g.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    let base = (k * e + o) * e;
                    axpy(
                        go,
                        &inputs[src],
                        &mut grads.data_mut(conv.kernel)[base..base + e],
                    );
                    axpy(go, &kernel[base..base + e], &mut d_in[src]);
                }
            }
        }
        d_in
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, sample_coordinates, LossProbe};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const V: usize = 9;

    fn encoder(conv: Option<usize>) -> (ParameterStore, Encoder) {
        let mut store = ParameterStore::new();
        let enc = Encoder::register(
            &mut store,
            "enc",
            V,
            4,
            5,
            conv,
            &mut ChaCha8Rng::seed_from_u64(21),
        )
        .unwrap();
        // scale up so gradients are not vanishingly small
        for id in enc.param_ids() {
            let mut v = store.value(id).clone();
            v.data_mut().iter_mut().for_each(|x| *x *= 3.0);
            store.set_value(id, v).unwrap();
        }
        (store, enc)
    }

    fn seq(ids: &[usize]) -> TokenSequence {
        TokenSequence::new(ids.to_vec(), V).unwrap()
    }

    fn sq_norm_loss(store: &ParameterStore, enc: &Encoder, input: EncoderInput<'_>) -> f64 {
        let (f, _) = enc.encode(store, input).unwrap();
        f.values().iter().map(|v| v * v).sum()
    }

    #[test]
    fn parameter_names_are_stable() {
        let (store, _) = encoder(Some(3));
        let names: Vec<&str> = store.names().collect();
        assert_eq!(
            names,
            [
                "enc.embed",
                "enc.conv",
                "enc.lstm.Wx",
                "enc.lstm.Wh",
                "enc.lstm.b"
            ]
        );
    }

    #[test]
    fn soft_one_hot_equals_hard_lookup() {
        let (store, enc) = encoder(None);
        let s = seq(&[3, 7, 4]);
        let soft = SoftSequence::one_hot(&s, V);
        let hard = enc.embed_tokens(&store, EncoderInput::Tokens(&s)).unwrap();
        assert_eq!(
            enc.embed_tokens(&store, EncoderInput::Soft(&soft)).unwrap(),
            hard
        );
        let (fh, _) = enc.encode(&store, EncoderInput::Tokens(&s)).unwrap();
        let (fs, _) = enc.encode(&store, EncoderInput::Soft(&soft)).unwrap();
        assert_eq!(fh, fs);
    }

    #[test]
    fn uniform_soft_row_is_column_mean() {
        let (store, enc) = encoder(None);
        let soft = SoftSequence::new(vec![vec![1.0 / V as f64; V]], V).unwrap();
        let row = enc.embed_tokens(&store, EncoderInput::Soft(&soft)).unwrap();
        let table = store.get("enc.embed").unwrap();
        for c in 0..4 {
            let mean: f64 = (0..V).map(|r| table.row(r)[c]).sum::<f64>() / V as f64;
            assert!((row.data()[c] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn width_one_identity_conv_is_a_noop() {
        let (mut store, enc) = encoder(Some(1));
        let kernel = store.id("enc.conv").unwrap();
        let mut ident = Tensor::zeros(&[1, 4, 4]);
        for i in 0..4 {
            ident.data_mut()[i * 4 + i] = 1.0;
        }
        store.set_value(kernel, ident).unwrap();
        let s = seq(&[1, 2, 8]);
        let rows = enc.embed_tokens(&store, EncoderInput::Tokens(&s)).unwrap();
        let table = store.get("enc.embed").unwrap();
        for (t, &id) in s.ids().iter().enumerate() {
            assert_eq!(rows.row(t), table.row(id));
        }
    }

    #[test]
    fn zero_parameters_give_zero_embedding() {
        let (mut store, enc) = encoder(None);
        for id in enc.param_ids() {
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Tensor::zeros(&shape)).unwrap();
        }
        let (f, _) = enc
            .encode(&store, EncoderInput::Tokens(&seq(&[4, 5])))
            .unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prefix_sharing_changes_embedding() {
        let (store, enc) = encoder(None);
        let (a, _) = enc
            .encode(&store, EncoderInput::Tokens(&seq(&[5])))
            .unwrap();
        let (b, _) = enc
            .encode(&store, EncoderInput::Tokens(&seq(&[5, 6])))
            .unwrap();
        assert_ne!(a, b);
        let (a2, _) = enc
            .encode(&store, EncoderInput::Tokens(&seq(&[5])))
            .unwrap();
        assert_eq!(a, a2);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let (store, enc) = encoder(None);
        let not_normalized = SoftSequence::from_rows_unchecked(vec![vec![0.5; V]]);
        assert!(enc
            .encode(&store, EncoderInput::Soft(&not_normalized))
            .is_err());
        let empty = SoftSequence::from_rows_unchecked(vec![]);
        assert!(enc.encode(&store, EncoderInput::Soft(&empty)).is_err());
        let (_, cache) = enc
            .encode(&store, EncoderInput::Tokens(&seq(&[1])))
            .unwrap();
        let mut g = store.new_gradients();
        assert!(enc.backward(&store, &mut g, &cache, &[0.0; 3]).is_err());
    }

    fn check_gradients(conv: Option<usize>, soft: bool) {
        let (mut store, enc) = encoder(conv);
        let s = seq(&[3, 1, 7, 7]);
        let soft_seq = SoftSequence::new(
            (0..4)
                .map(|t| {
                    let logits: Vec<f64> =
                        (0..V).map(|v| ((t * V + v) as f64 * 0.37).sin()).collect();
                    crate::tensor::linalg::softmax(&logits)
                })
                .collect(),
            V,
        )
        .unwrap();
        let input = if soft {
            EncoderInput::Soft(&soft_seq)
        } else {
            EncoderInput::Tokens(&s)
        };
        let (f, cache) = enc.encode(&store, input).unwrap();
        let df: Vec<f64> = f.values().iter().map(|v| 2.0 * v).collect();
        let mut g = store.new_gradients();
        enc.backward(&store, &mut g, &cache, &df).unwrap();
        store.accumulate(&g).unwrap();
        let coords = sample_coordinates(&store, 80, &mut ChaCha8Rng::seed_from_u64(2));
        let report = finite_diff_check(
            &mut store,
            |st| Ok(LossProbe::smooth(sq_norm_loss(st, &enc, input))),
            1e-5,
            &coords,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(None, false);
        check_gradients(Some(3), false);
        check_gradients(None, true);
        check_gradients(Some(3), true);
    }

    #[test]
    fn soft_input_gradient_matches_finite_differences() {
        let (store, enc) = encoder(Some(3));
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|t| {
                crate::tensor::linalg::softmax(
                    &(0..V)
                        .map(|v| (v * (t + 2)) as f64 * 0.1)
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        let soft = SoftSequence::new(rows.clone(), V).unwrap();
        let (f, cache) = enc.encode(&store, EncoderInput::Soft(&soft)).unwrap();
        let df: Vec<f64> = f.values().iter().map(|v| 2.0 * v).collect();
        let mut g = store.new_gradients();
        let dp = enc.backward(&store, &mut g, &cache, &df).unwrap().unwrap();
        // perturb p directly (off the simplex) through the linear embedding map
        let h = 1e-6;
        for t in 0..3 {
            for v in [0, 4, 8] {
                let eval = |delta: f64| {
                    let mut r = rows.clone();
                    r[t][v] += delta;
                    r[t][(v + 1) % V] -= delta;
                    let s = SoftSequence::new(r, V).unwrap();
                    sq_norm_loss(&store, &enc, EncoderInput::Soft(&s))
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = dp[t][v] - dp[t][(v + 1) % V];
                let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-8);
                assert!(rel < 1e-5, "t={t} v={v} rel={rel}");
            }
        }
    }

    #[test]
    fn backward_is_linear_and_zero_preserving() {
        let (store, enc) = encoder(Some(3));
        let (_, cache) = enc
            .encode(&store, EncoderInput::Tokens(&seq(&[2, 6, 4])))
            .unwrap();
        let mut zero = store.new_gradients();
        enc.backward(&store, &mut zero, &cache, &[0.0; 5]).unwrap();
        assert!(zero.is_zero());

        let g1 = [0.3, -0.2, 0.5, 0.0, 1.0];
        let g2 = [-1.0, 0.4, 0.1, 0.7, -0.3];
        let sum: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
        let mut a = store.new_gradients();
        enc.backward(&store, &mut a, &cache, &g1).unwrap();
        enc.backward(&store, &mut a, &cache, &g2).unwrap();
        let mut b = store.new_gradients();
        enc.backward(&store, &mut b, &cache, &sum).unwrap();
        for id in store.ids() {
            for (x, y) in a.get(id).data().iter().zip(b.get(id).data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicate_copies_values_under_new_names() {
        let (mut store, enc) = encoder(Some(3));
        let disc = enc.duplicate(&mut store, "disc").unwrap();
        assert_eq!(store.get("disc.lstm.Wh"), store.get("enc.lstm.Wh"));
        let s = seq(&[1, 2]);
        let (a, _) = enc.encode(&store, EncoderInput::Tokens(&s)).unwrap();
        let (b, _) = disc.encode(&store, EncoderInput::Tokens(&s)).unwrap();
        assert_eq!(a, b);
        assert!(disc
            .param_ids()
            .iter()
            .all(|&id| store.name(id).starts_with("disc.")));
    }
}
