//! Run directories: data preparation, the manifest and resumable training.
//!
//! A run directory holds everything needed to repeat a training run bit for
//! bit: the manifest (config snapshot, seed, SHA-256 of every input file),
//! the materialized split indices and the checkpoint series.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::text::{
    load_pairs, random_split, read_indices, select, write_indices, ParaphrasePair, RawPair, Split,
    Vocabulary,
};
use crate::trainer::{epoch_checkpoint_name, EpochLog, TrainConfig, Trainer, FINAL_CHECKPOINT};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TRAIN_INDEX_FILE: &str = "train.idx";
pub const VAL_INDEX_FILE: &str = "val.idx";
pub const TEST_INDEX_FILE: &str = "test.idx";

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

const CONFIG_PREFIX: &str = "config.";

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub seed: u64,
    pub data: Vec<DataDigest>,
    pub code_version: String,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: Option<u64>,
}

impl RunManifest {
    pub fn new(config: TrainConfig, data_files: &[&Path]) -> Result<Self> {
        let data = data_files
            .iter()
            .map(|p| {
                Ok(DataDigest {
                    path: p.to_path_buf(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RunManifest {
            seed: config.seed,
            config,
            data,
            code_version: CODE_VERSION.to_string(),
            started: unix_seconds(),
            finished: None,
        })
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        for (k, v) in self.config.to_key_values().iter() {
            kv.set(&format!("{CONFIG_PREFIX}{k}"), v);
        }
        kv.set("seed", self.seed);
        kv.set("code_version", &self.code_version);
        kv.set("started", self.started);
        if let Some(t) = self.finished {
            kv.set("finished", t);
        }
        kv.set("data.count", self.data.len());
        for (i, d) in self.data.iter().enumerate() {
            kv.set(&format!("data.{i}.path"), d.path.display());
            kv.set(&format!("data.{i}.sha256"), &d.sha256);
        }
        kv
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut config_kv = KeyValues::new();
        for (k, v) in kv.iter() {
            if let Some(key) = k.strip_prefix(CONFIG_PREFIX) {
                config_kv.set(key, v);
            }
        }
        let config = TrainConfig::from_key_values(&config_kv)?;
        let count: usize = kv.require("data.count")?;
        let data = (0..count)
            .map(|i| {
                Ok(DataDigest {
                    path: PathBuf::from(kv.require::<String>(&format!("data.{i}.path"))?),
                    sha256: kv.require(&format!("data.{i}.sha256"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RunManifest {
            config,
            seed: kv.require("seed")?,
            data,
            code_version: kv.require("code_version")?,
            started: kv.require("started")?,
            finished: kv.parse_opt("finished")?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), self.to_key_values().to_text())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::from_key_values(&KeyValues::parse(&text)?)
    }

    /// Fails unless every recorded input still hashes to its digest.
    pub fn verify_data(&self) -> Result<()> {
        for d in &self.data {
            let now = sha256_file(&d.path)?;
            if now != d.sha256 {
                return Err(Error::Data(format!(
                    "{} changed since the run started (sha256 {} , expected {})",
                    d.path.display(),
                    now,
                    d.sha256
                )));
            }
        }
        Ok(())
    }
}

/// Keeps at most `t_max` words of each side.
pub fn truncate_pairs(pairs: &[RawPair], t_max: usize) -> Vec<RawPair> {
    pairs
        .iter()
        .map(|p| RawPair {
            source: p.source.iter().take(t_max).cloned().collect(),
            target: p.target.iter().take(t_max).cloned().collect(),
            line: p.line,
        })
        .collect()
}

/// Splits, builds the vocabulary from the training part only and encodes.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub split: Split,
    pub vocab: Vocabulary,
    pub train: Vec<ParaphrasePair>,
    pub val: Vec<ParaphrasePair>,
    pub test: Vec<RawPair>,
}

pub fn prepare_with_split(
    config: &TrainConfig,
    pairs: &[RawPair],
    split: Split,
) -> Result<PreparedData> {
    let pairs = truncate_pairs(pairs, config.t_max);
    let train_raw = select(&pairs, &split.train)?;
    if train_raw.is_empty() {
        return Err(Error::Data("the training split is empty".into()));
    }
    let vocab = Vocabulary::from_training_pairs(
        &train_raw,
        config.min_count,
        config.max_vocab.unwrap_or(usize::MAX),
    )?;
    let encode = |raw: &[RawPair]| -> Result<Vec<ParaphrasePair>> {
        raw.iter().map(|p| vocab.encode_pair(p)).collect()
    };
    let train = encode(&train_raw)?;
    let val = encode(&select(&pairs, &split.val)?)?;
    let test = select(&pairs, &split.test)?;
    Ok(PreparedData {
        split,
        vocab,
        train,
        val,
        test,
    })
}

pub fn prepare(config: &TrainConfig, pairs: &[RawPair]) -> Result<PreparedData> {
    let split = random_split(pairs.len(), config.val_size, config.test_size, config.seed)?;
    prepare_with_split(config, pairs, split)
}

fn read_split(dir: &Path) -> Result<Split> {
    Ok(Split {
        train: read_indices(&dir.join(TRAIN_INDEX_FILE))?,
        val: read_indices(&dir.join(VAL_INDEX_FILE))?,
        test: read_indices(&dir.join(TEST_INDEX_FILE))?,
    })
}

fn write_split(dir: &Path, split: &Split) -> Result<()> {
    write_indices(&dir.join(TRAIN_INDEX_FILE), &split.train)?;
    write_indices(&dir.join(VAL_INDEX_FILE), &split.val)?;
    write_indices(&dir.join(TEST_INDEX_FILE), &split.test)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub logs: Vec<EpochLog>,
    pub final_checkpoint: PathBuf,
    pub vocab_size: usize,
    pub train_pairs: usize,
}

/// Fresh run: writes the manifest and split files, then trains.
pub fn train_run(
    config: TrainConfig,
    data: &Path,
    out: &Path,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<RunSummary> {
    config.validate()?;
    let pairs = load_pairs(data)?;
    if pairs.is_empty() {
        return Err(Error::Data(format!(
            "{} contains no duplicate-flagged pairs",
            data.display()
        )));
    }
    fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new(config.clone(), &[data])?;
    manifest.save(out)?;
    let prepared = prepare(&config, &pairs)?;
    write_split(out, &prepared.split)?;
    let mut trainer = Trainer::new(config, prepared.vocab.clone())?;
    finish(&mut trainer, &prepared, &mut manifest, out, on_epoch)
}

/// Continues the run in `out` from its newest checkpoint, after checking
/// that the data files still match the manifest.
pub fn resume_run(out: &Path, on_epoch: impl FnMut(&EpochLog)) -> Result<RunSummary> {
    let mut manifest = RunManifest::load(out)?;
    manifest.verify_data()?;
    let data = manifest
        .data
        .first()
        .ok_or_else(|| Error::Data("manifest lists no data file".into()))?
        .path
        .clone();
    let pairs = load_pairs(&data)?;
    let prepared = prepare_with_split(&manifest.config, &pairs, read_split(out)?)?;
    let ckpt = latest_checkpoint(out)?
        .ok_or_else(|| Error::Data(format!("no checkpoint in {}", out.display())))?;
    let mut trainer = Trainer::from_checkpoint(Checkpoint::load(&ckpt)?)?;
    if trainer.vocab != prepared.vocab {
        return Err(Error::Data(
            "checkpoint vocabulary does not match the rebuilt training split".into(),
        ));
    }
    trainer.config.epochs = manifest.config.epochs;
    finish(&mut trainer, &prepared, &mut manifest, out, on_epoch)
}

fn finish(
    trainer: &mut Trainer,
    prepared: &PreparedData,
    manifest: &mut RunManifest,
    out: &Path,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<RunSummary> {
    let logs = trainer.fit(&prepared.train, &prepared.val, Some(out), on_epoch)?;
    manifest.finished = Some(unix_seconds());
    manifest.save(out)?;
    Ok(RunSummary {
        manifest: manifest.clone(),
        logs,
        final_checkpoint: out.join(FINAL_CHECKPOINT),
        vocab_size: prepared.vocab.len(),
        train_pairs: prepared.train.len(),
    })
}

/// The highest-numbered `epoch-NNNN.ckpt` in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(epoch) = name
            .strip_prefix("epoch-")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        if epoch_checkpoint_name(epoch) == name && best.as_ref().is_none_or(|(e, _)| epoch > *e) {
            best = Some((epoch, path));
        }
    }
    Ok(best.map(|(_, p)| p))
}
