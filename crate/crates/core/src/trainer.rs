//! Joint training of the encoder, decoder and pairwise discriminator.
//!
//! The batch objective is `local_weight · mean_i L_local(i) + global_weight ·
//! L_global(batch)`, where the global term is the hinge sum over the whole
//! batch. Epoch figures average the per-batch values.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::KeyValues;
use crate::decoder::DecodeOutput;
use crate::discriminator::{global_loss, GlobalLoss, GlobalLossConfig, GradientForm, PairCaches};
use crate::encoder::{EncoderCache, EncoderInput};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_check, sample_coordinates, GradCheckReport, LossProbe};
use crate::metrics::{corpus_report, MetricReport, Smoothing, DEFAULT_ROUGE_ORDER};
use crate::model::{DiscriminatorMode, Model, ModelDims};
use crate::optim::{epoch_decay, rmsprop_step, RmsPropConfig};
use crate::params::{Gradients, ParameterStore};
use crate::text::{batches, ParaphrasePair, RawPair, TokenSequence, Vocabulary, MAX_SEQ_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Encoder-decoder with the local loss only.
    EdLocal,
    /// Global loss only, discriminator shares the source encoder.
    EddGlobal,
    /// Both losses, discriminator owns a separate encoder copy.
    EddLg,
    /// Both losses, discriminator shares the source encoder.
    EddLgShared,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::EdLocal,
        Variant::EddGlobal,
        Variant::EddLg,
        Variant::EddLgShared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::EdLocal => "ED-L",
            Variant::EddGlobal => "EDD-G",
            Variant::EddLg => "EDD-LG",
            Variant::EddLgShared => "EDD-LG-shared",
        }
    }

    /// `(local_weight, global_weight)`.
    pub fn default_weights(self) -> (f64, f64) {
        match self {
            Variant::EdLocal => (1.0, 0.0),
            Variant::EddGlobal => (0.0, 1.0),
            Variant::EddLg | Variant::EddLgShared => (1.0, 1.0),
        }
    }

    pub fn discriminator_mode(self) -> DiscriminatorMode {
        match self {
            Variant::EdLocal => DiscriminatorMode::None,
            Variant::EddGlobal | Variant::EddLgShared => DiscriminatorMode::Shared,
            Variant::EddLg => DiscriminatorMode::Separate,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?}; expected one of ED-L, EDD-G, EDD-LG, EDD-LG-shared"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub local_weight: f64,
    pub global_weight: f64,
    pub rmsprop: RmsPropConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub t_max: usize,
    pub conv_width: Option<usize>,
    pub min_count: usize,
    /// Non-reserved vocabulary cap; `None` keeps every word.
    pub max_vocab: Option<usize>,
    /// Gradient-norm clip threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub global: GlobalLossConfig,
    pub val_size: usize,
    pub test_size: usize,
    /// Write `epoch-NNNN.ckpt` every this many epochs; 0 keeps only the
    /// initial and final checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_variant(Variant::EddLgShared)
    }
}

const CONFIG_KEYS: [&str; 23] = [
    "variant",
    "local_weight",
    "global_weight",
    "learning_rate",
    "rms_alpha",
    "rms_epsilon",
    "decay_factor",
    "batch_size",
    "epochs",
    "seed",
    "embed_dim",
    "hidden_dim",
    "t_max",
    "conv_width",
    "min_count",
    "max_vocab",
    "clip_norm",
    "margin",
    "cosine",
    "gradient_form",
    "val_size",
    "test_size",
    "checkpoint_every",
];

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        let (local_weight, global_weight) = variant.default_weights();
        TrainConfig {
            variant,
            local_weight,
            global_weight,
            rmsprop: RmsPropConfig::paraphrase_default(),
            batch_size: 150,
            epochs: 10,
            seed: 1,
            embed_dim: 64,
            hidden_dim: 128,
            t_max: MAX_SEQ_LEN,
            conv_width: None,
            min_count: 1,
            max_vocab: None,
            clip_norm: Some(5.0),
            global: GlobalLossConfig::default(),
            val_size: 0,
            test_size: 0,
            checkpoint_every: 1,
        }
    }

    pub fn uses_global(&self) -> bool {
        self.global_weight != 0.0
    }

    pub fn dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            vocab,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            conv_width: self.conv_width,
            t_max: self.t_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rmsprop.validate()?;
        let weights_ok = [self.local_weight, self.global_weight]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0);
        if !weights_ok {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if self.variant == Variant::EdLocal && self.uses_global() {
            return Err(Error::Config(
                "ED-L has no discriminator; global_weight must be 0".into(),
            ));
        }
        if self.batch_size == 0 || (self.uses_global() && self.batch_size < 2) {
            return Err(Error::Config(format!(
                "batch_size {} is too small{}",
                self.batch_size,
                if self.uses_global() {
                    " for the global loss (need at least 2)"
                } else {
                    ""
                }
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!(
                    "clip_norm must be positive, got {c}"
                )));
            }
        }
        if !self.global.margin.is_finite() {
            return Err(Error::Config("margin must be finite".into()));
        }
        if self.embed_dim == 0
            || self.hidden_dim == 0
            || self.t_max == 0
            || self.conv_width == Some(0)
        {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Parses a config. Weights default to the variant's; unknown keys are
    /// rejected.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        if let Some(key) = kv.keys().find(|k| !CONFIG_KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        let variant: Variant = kv.parse_opt("variant")?.unwrap_or(Variant::EddLgShared);
        let mut c = TrainConfig::for_variant(variant);
        macro_rules! read {
            ($field:expr, $key:literal) => {
                if let Some(v) = kv.parse_opt($key)? {
                    $field = v;
                }
            };
        }
        read!(c.local_weight, "local_weight");
        read!(c.global_weight, "global_weight");
        read!(c.rmsprop.learning_rate, "learning_rate");
        read!(c.rmsprop.alpha, "rms_alpha");
        read!(c.rmsprop.epsilon, "rms_epsilon");
        read!(c.rmsprop.decay_factor, "decay_factor");
        read!(c.batch_size, "batch_size");
        read!(c.epochs, "epochs");
        read!(c.seed, "seed");
        read!(c.embed_dim, "embed_dim");
        read!(c.hidden_dim, "hidden_dim");
        read!(c.t_max, "t_max");
        read!(c.min_count, "min_count");
        read!(c.global.margin, "margin");
        read!(c.global.cosine, "cosine");
        read!(c.val_size, "val_size");
        read!(c.test_size, "test_size");
        read!(c.checkpoint_every, "checkpoint_every");
        if let Some(w) = kv.parse_opt::<usize>("conv_width")? {
            c.conv_width = (w > 0).then_some(w);
        }
        if let Some(m) = kv.parse_opt::<usize>("max_vocab")? {
            c.max_vocab = (m > 0).then_some(m);
        }
        if let Some(v) = kv.parse_opt::<f64>("clip_norm")? {
            c.clip_norm = (v != 0.0).then_some(v);
        }
        if let Some(form) = kv.get("gradient_form") {
            c.global.form = match form {
                "gated" => GradientForm::Gated,
                "ungated" => GradientForm::Ungated,
                other => {
                    return Err(Error::Config(format!(
                        "gradient_form {other:?}: expected gated or ungated"
                    )))
                }
            };
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("variant", self.variant);
        kv.set("local_weight", self.local_weight);
        kv.set("global_weight", self.global_weight);
        kv.set("learning_rate", self.rmsprop.learning_rate);
        kv.set("rms_alpha", self.rmsprop.alpha);
        kv.set("rms_epsilon", self.rmsprop.epsilon);
        kv.set("decay_factor", self.rmsprop.decay_factor);
        kv.set("batch_size", self.batch_size);
        kv.set("epochs", self.epochs);
        kv.set("seed", self.seed);
        kv.set("embed_dim", self.embed_dim);
        kv.set("hidden_dim", self.hidden_dim);
        kv.set("t_max", self.t_max);
        kv.set("conv_width", self.conv_width.unwrap_or(0));
        kv.set("min_count", self.min_count);
        kv.set("max_vocab", self.max_vocab.unwrap_or(0));
        kv.set("clip_norm", self.clip_norm.unwrap_or(0.0));
        kv.set("margin", self.global.margin);
        kv.set("cosine", self.global.cosine);
        kv.set(
            "gradient_form",
            match self.global.form {
                GradientForm::Gated => "gated",
                GradientForm::Ungated => "ungated",
            },
        );
        kv.set("val_size", self.val_size);
        kv.set("test_size", self.test_size);
        kv.set("checkpoint_every", self.checkpoint_every);
        kv
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchLossReport {
    /// Mean local loss over the batch.
    pub local: f64,
    /// Hinge sum over the batch; 0 when the global loss is off.
    pub global: f64,
    pub total: f64,
    /// Gradient norm before clipping (0 for forward-only evaluations).
    pub grad_norm: f64,
    pub clipped: bool,
    pub active_margins: usize,
    /// Smallest `|margin|` among hinge terms; infinite without a global loss.
    pub min_abs_margin: f64,
    pub log_floor_hits: usize,
}

/// Loss weights and hinge settings for one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub local: f64,
    pub global: f64,
    pub hinge: GlobalLossConfig,
}

impl LossWeights {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        LossWeights {
            local: cfg.local_weight,
            global: cfg.global_weight,
            hinge: cfg.global,
        }
    }
}

struct Forward {
    enc: Vec<EncoderCache>,
    dec: Vec<DecodeOutput>,
    pairs: Option<(PairCaches, GlobalLoss)>,
    report: BatchLossReport,
}

fn forward(
    model: &Model,
    store: &ParameterStore,
    weights: &LossWeights,
    batch: &[&ParaphrasePair],
) -> Result<Forward> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut enc = Vec::with_capacity(batch.len());
    let mut dec = Vec::with_capacity(batch.len());
    let mut local = 0.0;
    let mut floor_hits = 0;
    for pair in batch {
        let (f, cache) = model
            .encoder
            .encode(store, EncoderInput::Tokens(&pair.source))?;
        let out = model
            .decoder
            .decode_teacher_forced(store, &f, &pair.target)?;
        local += out.loss;
        floor_hits += out.floor_hits;
        enc.push(cache);
        dec.push(out);
    }
    local /= batch.len() as f64;

    let pairs = if weights.global != 0.0 {
        let disc = model.discriminator.as_ref().ok_or_else(|| {
            Error::Config("global loss requested but the model has no discriminator".into())
        })?;
        let soft: Vec<_> = dec.iter().map(DecodeOutput::soft_sequence).collect();
        let targets: Vec<TokenSequence> = batch.iter().map(|p| p.target.clone()).collect();
        let (emb, caches) = disc.embed_pair_batch(store, &soft, &targets)?;
        let gl = global_loss(&emb, &weights.hinge)?;
        Some((caches, gl))
    } else {
        None
    };
    let (global, active_margins, min_abs_margin) = match &pairs {
        Some((_, gl)) => (gl.value, gl.active_terms, gl.min_abs_margin),
        None => (0.0, 0, f64::INFINITY),
    };
    let total = weights.local * local + weights.global * global;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "batch loss (local {local}, global {global})"
        )));
    }
    Ok(Forward {
        enc,
        dec,
        pairs,
        report: BatchLossReport {
            local,
            global,
            total,
            grad_norm: 0.0,
            clipped: false,
            active_margins,
            min_abs_margin,
            log_floor_hits: floor_hits,
        },
    })
}

/// Forward pass only.
pub fn batch_objective(
    model: &Model,
    store: &ParameterStore,
    weights: &LossWeights,
    batch: &[&ParaphrasePair],
) -> Result<BatchLossReport> {
    Ok(forward(model, store, weights, batch)?.report)
}

/// Forward and backward pass; accumulates `∂L_total/∂θ` into `grads`.
pub fn batch_gradients(
    model: &Model,
    store: &ParameterStore,
    weights: &LossWeights,
    batch: &[&ParaphrasePair],
    grads: &mut Gradients,
) -> Result<BatchLossReport> {
    let fw = forward(model, store, weights, batch)?;
    let d_soft = match (&fw.pairs, &model.discriminator) {
        (Some((caches, gl)), Some(disc)) => {
            Some(disc.backward(store, grads, caches, gl, weights.global)?)
        }
        _ => None,
    };
    let local_scale = weights.local / batch.len() as f64;
    for (i, (enc_cache, out)) in fw.enc.iter().zip(&fw.dec).enumerate() {
        let ds = d_soft.as_ref().map(|d| d[i].as_slice());
        let df = model
            .decoder
            .backward(store, grads, &out.cache, local_scale, ds)?;
        model.encoder.backward(store, grads, enc_cache, &df)?;
    }
    grads.ensure_finite(store)?;
    Ok(fw.report)
}

/// Per-epoch figures: training values are means over batches.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_local: f64,
    pub train_global: f64,
    pub train_total: f64,
    pub val_total: Option<f64>,
    pub batches: usize,
    pub clipped_batches: usize,
    pub mean_grad_norm: f64,
}

pub const METRICS_HEADER: &str = "epoch\tlr\ttrain_local\ttrain_global\ttrain_total\tval_total";

impl EpochLog {
    pub fn tsv_row(&self) -> String {
        let val = self
            .val_total
            .map_or_else(|| "NA".to_string(), |v| v.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch,
            self.learning_rate,
            self.train_local,
            self.train_global,
            self.train_total,
            val
        )
    }
}

pub const INITIAL_CHECKPOINT: &str = "epoch-0000.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const METRICS_FILE: &str = "metrics.tsv";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}.ckpt")
}

const STATE_LR: &str = "state.learning_rate";
const STATE_EPOCHS: &str = "state.epochs_done";

#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub store: ParameterStore,
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    rmsprop: RmsPropConfig,
    epochs_done: usize,
    last_good: Option<PathBuf>,
}

impl Trainer {
    pub fn new(config: TrainConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let (model, store) = Model::new(
            config.dims(vocab.len()),
            config.variant.discriminator_mode(),
            config.seed,
        )?;
        Ok(Trainer {
            model,
            store,
            rmsprop: config.rmsprop,
            config,
            vocab,
            epochs_done: 0,
            last_good: None,
        })
    }

    /// Restores the full training state, including the decayed learning
    /// rate and RMSProp accumulators.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let mut meta = ck.meta;
        let lr: f64 = meta.require(STATE_LR)?;
        let epochs_done: usize = meta.require(STATE_EPOCHS)?;
        meta.remove(STATE_LR);
        meta.remove(STATE_EPOCHS);
        let config = TrainConfig::from_key_values(&meta)?;
        let model = Model::bind(
            config.dims(ck.vocab.len()),
            config.variant.discriminator_mode(),
            &ck.store,
        )?;
        let mut rmsprop = config.rmsprop;
        rmsprop.learning_rate = lr;
        Ok(Trainer {
            model,
            store: ck.store,
            config,
            vocab: ck.vocab,
            rmsprop,
            epochs_done,
            last_good: None,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut meta = self.config.to_key_values();
        meta.set(STATE_LR, self.rmsprop.learning_rate);
        meta.set(STATE_EPOCHS, self.epochs_done);
        Checkpoint {
            meta,
            vocab: self.vocab.clone(),
            store: self.store.clone(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.rmsprop.learning_rate
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights::from_config(&self.config)
    }

    pub fn objective(&self, batch: &[&ParaphrasePair]) -> Result<BatchLossReport> {
        batch_objective(&self.model, &self.store, &self.weights(), batch)
    }

    /// Forward, backward, clip and one RMSProp update.
    pub fn train_step(&mut self, batch: &[&ParaphrasePair]) -> Result<BatchLossReport> {
        let mut grads = self.store.new_gradients();
        let mut report =
            batch_gradients(&self.model, &self.store, &self.weights(), batch, &mut grads)?;
        self.store.zero_grads();
        self.store.accumulate(&grads)?;
        let norm = self.store.grad_norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient norm".into()));
        }
        report.grad_norm = norm;
        if let Some(clip) = self.config.clip_norm {
            if norm > clip {
                self.store.scale_grads(clip / norm);
                report.clipped = true;
            }
        }
        rmsprop_step(&mut self.store, &self.rmsprop)?;
        Ok(report)
    }

    fn diverged(&self, epoch: usize, batch: usize, err: Error) -> Error {
        if !err.is_numeric() {
            return err;
        }
        Error::Diverged {
            epoch,
            batch,
            reason: err.to_string(),
            last_good: self
                .last_good
                .as_ref()
                .map_or_else(|| "none written".to_string(), |p| p.display().to_string()),
        }
    }

    /// One pass over `train` in the shuffled order for the next epoch, then
    /// the learning-rate decay. Validation loss is computed after the
    /// epoch's updates.
    pub fn run_epoch(
        &mut self,
        train: &[ParaphrasePair],
        val: &[ParaphrasePair],
    ) -> Result<EpochLog> {
        let epoch = self.epochs_done + 1;
        let order = batches(
            train.len(),
            self.config.batch_size,
            self.config.seed,
            epoch as u64,
            self.config.uses_global(),
        )?;
        if order.is_empty() {
            return Err(Error::Config(format!(
                "{} training pairs do not fill one batch of {}",
                train.len(),
                self.config.batch_size
            )));
        }
        let lr = self.rmsprop.learning_rate;
        let (mut local, mut global, mut total, mut norm) = (0.0, 0.0, 0.0, 0.0);
        let mut clipped = 0;
        for (b, idx) in order.iter().enumerate() {
            let batch: Vec<&ParaphrasePair> = idx.iter().map(|&i| &train[i]).collect();
            let r = self
                .train_step(&batch)
                .map_err(|e| self.diverged(epoch, b, e))?;
            local += r.local;
            global += r.global;
            total += r.total;
            norm += r.grad_norm;
            clipped += usize::from(r.clipped);
        }
        let n = order.len() as f64;
        self.rmsprop = epoch_decay(self.rmsprop);
        self.epochs_done = epoch;
        let val_total = self
            .validation_loss(val)
            .map_err(|e| self.diverged(epoch, order.len(), e))?;
        Ok(EpochLog {
            epoch,
            learning_rate: lr,
            train_local: local / n,
            train_global: global / n,
            train_total: total / n,
            val_total,
            batches: order.len(),
            clipped_batches: clipped,
            mean_grad_norm: norm / n,
        })
    }

    /// Mean batch objective over `data` in file order, using consecutive
    /// chunks of `batch_size`. With the global loss on, a final chunk of one
    /// example is merged into its predecessor.
    pub fn validation_loss(&self, data: &[ParaphrasePair]) -> Result<Option<f64>> {
        if data.is_empty() {
            return Ok(None);
        }
        let mut chunks: Vec<Vec<&ParaphrasePair>> = data
            .chunks(self.config.batch_size)
            .map(|c| c.iter().collect())
            .collect();
        if self.config.uses_global() && chunks.last().is_some_and(|c| c.len() < 2) {
            if chunks.len() == 1 {
                return Ok(None);
            }
            let tail = chunks.pop().expect("non-empty");
            chunks.last_mut().expect("at least one chunk").extend(tail);
        }
        let mut sum = 0.0;
        for c in &chunks {
            sum += self.objective(c)?.total;
        }
        Ok(Some(sum / chunks.len() as f64))
    }

    fn save_to(&mut self, path: PathBuf) -> Result<()> {
        self.checkpoint().save(&path)?;
        self.last_good = Some(path);
        Ok(())
    }

    /// Trains until `config.epochs` epochs are done. With an output
    /// directory, writes the initial checkpoint, periodic checkpoints, the
    /// final checkpoint and `metrics.tsv`.
    pub fn fit(
        &mut self,
        train: &[ParaphrasePair],
        val: &[ParaphrasePair],
        out: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>> {
        let mut metrics = match out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                if self.epochs_done == 0 {
                    self.save_to(dir.join(INITIAL_CHECKPOINT))?;
                }
                let path = dir.join(METRICS_FILE);
                let fresh = self.epochs_done == 0 || !path.exists();
                let file = File::options()
                    .create(true)
                    .append(!fresh)
                    .write(true)
                    .truncate(fresh)
                    .open(&path)?;
                let mut w = BufWriter::new(file);
                if fresh {
                    writeln!(w, "{METRICS_HEADER}")?;
                }
                Some(w)
            }
            None => None,
        };
        let mut logs = Vec::new();
        while self.epochs_done < self.config.epochs {
            let log = self.run_epoch(train, val)?;
            if let Some(w) = metrics.as_mut() {
                writeln!(w, "{}", log.tsv_row())?;
                w.flush()?;
            }
            if let Some(dir) = out {
                let every = self.config.checkpoint_every;
                if every > 0 && log.epoch % every == 0 {
                    self.save_to(dir.join(epoch_checkpoint_name(log.epoch)))?;
                }
            }
            on_epoch(&log);
            logs.push(log);
        }
        if let Some(dir) = out {
            self.save_to(dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(logs)
    }
}

/// Greedy paraphrase of a tokenized sentence.
pub fn paraphrase(
    model: &Model,
    store: &ParameterStore,
    vocab: &Vocabulary,
    words: &[String],
) -> Result<Vec<String>> {
    let seq = vocab.encode(words)?;
    let ids = model.generate(store, &seq)?;
    Ok(vocab.decode(&ids).into_iter().map(str::to_string).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub hypotheses: Vec<Vec<String>>,
}

/// Generates a paraphrase for every source and scores it against the raw
/// reference words.
pub fn evaluate(
    model: &Model,
    store: &ParameterStore,
    vocab: &Vocabulary,
    pairs: &[RawPair],
    smoothing: Smoothing,
) -> Result<Evaluation> {
    if vocab.len() != model.dims.vocab {
        return Err(Error::Data(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            model.dims.vocab
        )));
    }
    if pairs.is_empty() {
        return Err(Error::Data("no pairs to evaluate".into()));
    }
    let mut hypotheses = Vec::with_capacity(pairs.len());
    for p in pairs {
        hypotheses.push(paraphrase(model, store, vocab, &p.source)?);
    }
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.target.clone()).collect();
    let report = corpus_report(&hypotheses, &refs, DEFAULT_ROUGE_ORDER, smoothing)?;
    Ok(Evaluation { report, hypotheses })
}

/// Random token sequences of length `1..=max_len` over the non-reserved ids.
pub fn random_pairs(
    vocab: usize,
    n: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<ParaphrasePair>> {
    let first = crate::text::RESERVED.len();
    if vocab <= first || max_len == 0 {
        return Err(Error::invalid(
            "need at least one real word and max_len >= 1",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq = |rng: &mut ChaCha8Rng| {
        let len = rng.gen_range(1..=max_len);
        TokenSequence::new(
            (0..len).map(|_| rng.gen_range(first..vocab)).collect(),
            vocab,
        )
    };
    (0..n)
        .map(|_| {
            Ok(ParaphrasePair {
                source: seq(&mut rng)?,
                target: seq(&mut rng)?,
            })
        })
        .collect()
}

/// Settings for [`check_model_gradients`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckSpec {
    pub dims: ModelDims,
    pub variant: Variant,
    pub batch: usize,
    pub max_len: usize,
    pub coordinates: usize,
    pub h: f64,
    pub seed: u64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        GradCheckSpec {
            dims: ModelDims {
                vocab: 20,
                embed_dim: 8,
                hidden_dim: 8,
                conv_width: None,
                t_max: 5,
            },
            variant: Variant::EddLgShared,
            batch: 3,
            max_len: 5,
            coordinates: 200,
            h: 1e-5,
            seed: 7,
        }
    }
}

/// Central-difference check of the full training objective on a random
/// batch. Coordinates whose perturbation comes within `10h` of a hinge kink
/// are excluded.
pub fn check_model_gradients(spec: &GradCheckSpec) -> Result<GradCheckReport> {
    let (model, mut store) = Model::new(spec.dims, spec.variant.discriminator_mode(), spec.seed)?;
    let pairs = random_pairs(
        spec.dims.vocab,
        spec.batch,
        spec.max_len,
        spec.seed ^ 0x9e37_79b9,
    )?;
    let batch: Vec<&ParaphrasePair> = pairs.iter().collect();
    let mut cfg = TrainConfig::for_variant(spec.variant);
    cfg.batch_size = spec.batch;
    cfg.validate()?;
    let weights = LossWeights::from_config(&cfg);
    let mut grads = store.new_gradients();
    batch_gradients(&model, &store, &weights, &batch, &mut grads)?;
    store.zero_grads();
    store.accumulate(&grads)?;
    let coords = sample_coordinates(
        &store,
        spec.coordinates,
        &mut ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1)),
    );
    finite_diff_check(
        &mut store,
        |s| {
            let r = batch_objective(&model, s, &weights, &batch)?;
            Ok(LossProbe {
                loss: r.total,
                kink_distance: r.min_abs_margin,
            })
        },
        spec.h,
        &coords,
    )
}
