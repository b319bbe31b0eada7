//! Five-class logistic regression over frozen sentence embeddings.

use crate::checkpoint::Checkpoint;
use crate::config::KeyValues;
use crate::encoder::{Encoder, EncoderInput};
use crate::error::{Error, Result};
use crate::optim::{rmsprop_step, RmsPropConfig};
use crate::params::{ParamId, ParameterStore};
use crate::tensor::linalg::{argmax, dot, softmax};
use crate::tensor::Tensor;
use crate::text::{batches, Vocabulary, NUM_SENTIMENT_CLASSES};

pub const WEIGHT_NAME: &str = "probe.W";
pub const BIAS_NAME: &str = "probe.b";

/// Encodes every phrase with the frozen encoder; one row per phrase.
pub fn embed_phrases<S: AsRef<str>>(
    encoder: &Encoder,
    store: &ParameterStore,
    vocab: &Vocabulary,
    phrases: &[Vec<S>],
) -> Result<Tensor> {
    if phrases.is_empty() {
        return Err(Error::Data("no phrases to embed".into()));
    }
    if vocab.len() != encoder.vocab() {
        return Err(Error::Data(format!(
            "vocabulary has {} entries but the encoder expects {}",
            vocab.len(),
            encoder.vocab()
        )));
    }
    let mut rows = Vec::with_capacity(phrases.len());
    for (i, words) in phrases.iter().enumerate() {
        if words.is_empty() {
            return Err(Error::Data(format!("phrase {i} has no tokens")));
        }
        let seq = vocab.encode(words)?;
        rows.push(
            encoder
                .encode(store, EncoderInput::Tokens(&seq))?
                .0
                .into_values(),
        );
    }
    Tensor::from_rows(&rows)
}

/// `W [5×d]` and `b [5]`, held in their own parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRegParams {
    store: ParameterStore,
    w: ParamId,
    b: ParamId,
}

impl LogRegParams {
    /// All-zero parameters: every input gets the uniform distribution.
    pub fn zeros(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut store = ParameterStore::new();
        let w = store.insert(WEIGHT_NAME, Tensor::zeros(&[NUM_SENTIMENT_CLASSES, dim]))?;
        let b = store.insert(BIAS_NAME, Tensor::zeros(&[NUM_SENTIMENT_CLASSES]))?;
        Ok(LogRegParams { store, w, b })
    }

    pub fn from_tensors(w: Tensor, b: Tensor) -> Result<Self> {
        if w.rank() != 2
            || w.rows() != NUM_SENTIMENT_CLASSES
            || b.shape() != [NUM_SENTIMENT_CLASSES]
        {
            return Err(Error::shape(format!(
                "probe needs W [5×d] and b [5], got {:?} and {:?}",
                w.shape(),
                b.shape()
            )));
        }
        let mut store = ParameterStore::new();
        let w = store.insert(WEIGHT_NAME, w)?;
        let b = store.insert(BIAS_NAME, b)?;
        Ok(LogRegParams { store, w, b })
    }

    pub fn dim(&self) -> usize {
        self.weights().cols()
    }

    pub fn weights(&self) -> &Tensor {
        self.store.value(self.w)
    }

    pub fn bias(&self) -> &Tensor {
        self.store.value(self.b)
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let w = self.weights();
        (0..NUM_SENTIMENT_CLASSES)
            .map(|k| dot(w.row(k), x) + self.bias().data()[k])
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.dim() {
            return Err(Error::shape(format!(
                "embeddings {:?} do not match probe dimension {}",
                x.shape(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = KeyValues::new();
        meta.set("kind", "sentiment-probe");
        meta.set("classes", NUM_SENTIMENT_CLASSES);
        Checkpoint {
            meta,
            vocab: Vocabulary::from_words(Vec::new()).expect("empty vocabulary"),
            store: self.store.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.get("kind") != Some("sentiment-probe") {
            return Err(Error::Checkpoint("not a sentiment probe checkpoint".into()));
        }
        let w = ck
            .store
            .get(WEIGHT_NAME)
            .ok_or_else(|| Error::Checkpoint(format!("missing {WEIGHT_NAME}")))?;
        let b = ck
            .store
            .get(BIAS_NAME)
            .ok_or_else(|| Error::Checkpoint(format!("missing {BIAS_NAME}")))?;
        Self::from_tensors(w.clone(), b.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub rmsprop: RmsPropConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            rmsprop: RmsPropConfig::sentiment_default(),
            batch_size: 200,
            epochs: 50,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeTraining {
    pub params: LogRegParams,
    /// Mean training cross-entropy after each epoch.
    pub epoch_losses: Vec<f64>,
    pub warnings: Vec<String>,
}

fn check_labels(x: &Tensor, labels: &[usize]) -> Result<()> {
    if x.rank() != 2 || x.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{:?} embeddings vs {} labels",
            x.shape(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= NUM_SENTIMENT_CLASSES) {
        return Err(Error::Data(format!(
            "label {bad} outside 0..{NUM_SENTIMENT_CLASSES}"
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy over the rows in `idx`, with its gradient
/// accumulated into the probe store's gradient buffers when `grad` is set.
fn cross_entropy_rows(
    params: &mut LogRegParams,
    x: &Tensor,
    labels: &[usize],
    idx: &[usize],
    grad: bool,
) -> f64 {
    let scale = 1.0 / idx.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; NUM_SENTIMENT_CLASSES * params.dim()];
    let mut gb = vec![0.0; NUM_SENTIMENT_CLASSES];
    let d = params.dim();
    for &i in idx {
        let row = x.row(i);
        let p = softmax(&params.logits(row));
        loss -= p[labels[i]].max(1e-300).ln();
        if grad {
            for k in 0..NUM_SENTIMENT_CLASSES {
                let target = if k == labels[i] { 1.0 } else { 0.0 };
                let dz = scale * (p[k] - target);
                gb[k] += dz;
                for (g, &xv) in gw[k * d..(k + 1) * d].iter_mut().zip(row) {
                    *g += dz * xv;
                }
            }
        }
    }
    if grad {
        let mut g = params.store.new_gradients();
        g.data_mut(params.w).copy_from_slice(&gw);
        g.data_mut(params.b).copy_from_slice(&gb);
        params.store.zero_grads();
        params.store.accumulate(&g).expect("shapes match");
    }
    loss * scale
}

pub fn cross_entropy(params: &LogRegParams, x: &Tensor, labels: &[usize]) -> Result<f64> {
    params.check_input(x)?;
    check_labels(x, labels)?;
    let idx: Vec<usize> = (0..labels.len()).collect();
    let mut p = params.clone();
    Ok(cross_entropy_rows(&mut p, x, labels, &idx, false))
}

/// Minimizes mean cross-entropy with minibatch RMSProp from zero weights.
pub fn train_logreg(x: &Tensor, labels: &[usize], cfg: &ProbeConfig) -> Result<ProbeTraining> {
    check_labels(x, labels)?;
    cfg.rmsprop.validate()?;
    let mut params = LogRegParams::zeros(x.cols())?;
    let mut warnings = Vec::new();
    let mut seen = [false; NUM_SENTIMENT_CLASSES];
    labels.iter().for_each(|&l| seen[l] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        warnings.push(
            "training data contains a single class; the probe will predict it everywhere"
                .to_string(),
        );
    }
    let all: Vec<usize> = (0..labels.len()).collect();
    let mut lr = cfg.rmsprop;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        for idx in batches(labels.len(), cfg.batch_size, cfg.seed, epoch as u64, false)? {
            cross_entropy_rows(&mut params, x, labels, &idx, true);
            rmsprop_step(&mut params.store, &lr)?;
        }
        lr = crate::optim::epoch_decay(lr);
        epoch_losses.push(cross_entropy_rows(&mut params, x, labels, &all, false));
    }
    Ok(ProbeTraining {
        params,
        epoch_losses,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub labels: Vec<usize>,
    pub distributions: Vec<Vec<f64>>,
}

/// Argmax class per row, ties to the lowest class id.
pub fn predict(params: &LogRegParams, x: &Tensor) -> Result<Predictions> {
    params.check_input(x)?;
    let mut labels = Vec::with_capacity(x.rows());
    let mut distributions = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let p = softmax(&params.logits(x.row(r)));
        labels.push(argmax(&p));
        distributions.push(p);
    }
    Ok(Predictions {
        labels,
        distributions,
    })
}

/// Fraction of mismatched labels.
pub fn error_rate(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    if predicted.len() != gold.len() || gold.is_empty() {
        return Err(Error::shape(format!(
            "{} predictions vs {} labels",
            predicted.len(),
            gold.len()
        )));
    }
    let wrong = predicted.iter().zip(gold).filter(|(p, g)| p != g).count();
    Ok(wrong as f64 / gold.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, sample_coordinates, LossProbe};
    use crate::synthetic::sentiment_blobs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_are_uniform() {
        let (x, y) = sentiment_blobs(4, 6, 3.0, 0.5, 1).unwrap();
        let p = LogRegParams::zeros(6).unwrap();
        let pred = predict(&p, &x).unwrap();
        assert!(pred.labels.iter().all(|&l| l == 0));
        for d in &pred.distributions {
            assert!(d.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        }
        assert!((cross_entropy(&p, &x, &y).unwrap() - 5f64.ln()).abs() < 1e-12);
        let t = train_logreg(
            &x,
            &y,
            &ProbeConfig {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(t.params, p);
    }

    #[test]
    fn biased_class_wins_everywhere() {
        let (x, _) = sentiment_blobs(3, 5, 2.0, 0.5, 2).unwrap();
        let p = LogRegParams::from_tensors(
            Tensor::zeros(&[5, 5]),
            Tensor::from_vec(&[5], vec![0.0, 0.0, 0.0, 50.0, 0.0]).unwrap(),
        )
        .unwrap();
        assert!(predict(&p, &x).unwrap().labels.iter().all(|&l| l == 3));
    }

    #[test]
    fn distributions_sum_to_one_and_shift_invariant() {
        let (x, _) = sentiment_blobs(5, 6, 2.0, 1.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParameterStore::new();
        let w = store.insert_uniform("w", &[5, 6], &mut rng).unwrap();
        let b = store.insert_uniform("b", &[5], &mut rng).unwrap();
        let p = LogRegParams::from_tensors(store.value(w).clone(), store.value(b).clone()).unwrap();
        let shifted_b: Vec<f64> = store.value(b).data().iter().map(|v| v + 7.5).collect();
        let q = LogRegParams::from_tensors(
            store.value(w).clone(),
            Tensor::from_vec(&[5], shifted_b).unwrap(),
        )
        .unwrap();
        let a = predict(&p, &x).unwrap();
        assert_eq!(a.labels, predict(&q, &x).unwrap().labels);
        for d in &a.distributions {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let (x, y) = sentiment_blobs(4, 5, 1.0, 1.0, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut s = ParameterStore::new();
        let w = s.insert_uniform("w", &[5, 5], &mut rng).unwrap();
        let b = s.insert_uniform("b", &[5], &mut rng).unwrap();
        let mut params =
            LogRegParams::from_tensors(s.value(w).clone(), s.value(b).clone()).unwrap();
        let all: Vec<usize> = (0..y.len()).collect();
        cross_entropy_rows(&mut params, &x, &y, &all, true);
        let coords = sample_coordinates(&params.store, 30, &mut rng);
        let mut store = params.store.clone();
        let report = finite_diff_check(
            &mut store,
            |st| {
                let p = LogRegParams::from_tensors(
                    st.get(WEIGHT_NAME).unwrap().clone(),
                    st.get(BIAS_NAME).unwrap().clone(),
                )?;
                Ok(LossProbe::smooth(cross_entropy(&p, &x, &y)?))
            },
            1e-5,
            &coords,
        )
        .unwrap();
        assert!(report.passes(1e-6), "{report:?}");
    }

    #[test]
    fn single_class_trains_with_warning() {
        let (x, _) = sentiment_blobs(2, 5, 2.0, 0.5, 7).unwrap();
        let y = vec![2; x.rows()];
        let t = train_logreg(
            &x,
            &y,
            &ProbeConfig {
                epochs: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(t.warnings.len(), 1);
        assert!(predict(&t.params, &x)
            .unwrap()
            .labels
            .iter()
            .all(|&l| l == 2));
    }

    #[test]
    fn error_rate_is_one_minus_accuracy() {
        assert_eq!(error_rate(&[0, 1, 2, 3], &[0, 1, 4, 4]).unwrap(), 0.5);
        assert!(error_rate(&[0], &[]).is_err());
        let (x, _) = sentiment_blobs(1, 5, 1.0, 0.1, 8).unwrap();
        assert!(check_labels(&x, &[0, 1, 2, 3, 5]).is_err());
    }

    #[test]
    fn probe_checkpoint_roundtrip() {
        let (x, y) = sentiment_blobs(10, 5, 3.0, 0.5, 9).unwrap();
        let t = train_logreg(
            &x,
            &y,
            &ProbeConfig {
                epochs: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let ck = t.params.to_checkpoint();
        let back = Checkpoint::read_from(&mut ck.to_bytes().unwrap().as_slice()).unwrap();
        assert_eq!(
            LogRegParams::from_checkpoint(&back).unwrap().weights(),
            t.params.weights()
        );
    }
}
