//! Tokenization, vocabulary, dataset loading and deterministic batching.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const START: usize = 0;
pub const STOP: usize = 1;
pub const UNK: usize = 2;
pub const RESERVED: [&str; 3] = ["<s>", "</s>", "<unk>"];

/// Sequences longer than this are truncated on encode.
pub const MAX_SEQ_LEN: usize = 30;

/// Lowercases, splits on whitespace, and emits every non-alphanumeric,
/// non-space character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps words seen at least `min_count` times, ordered by descending
    /// count then ascending word, truncated to `max_size` non-reserved entries.
    pub fn build<S: AsRef<str>>(
        corpus: &[Vec<S>],
        min_count: usize,
        max_size: usize,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid(
                "cannot build a vocabulary from an empty corpus",
            ));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in corpus {
            for w in sentence {
                *counts.entry(w.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(w, c)| c >= min_count && !RESERVED.contains(&w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size);
        Self::from_words(ranked.into_iter().map(|(w, _)| w.to_string()))
    }

    /// Vocabulary from the training split only. Validation and test text
    /// never reach this constructor.
    pub fn from_training_pairs(
        train: &[RawPair],
        min_count: usize,
        max_size: usize,
    ) -> Result<Self> {
        let corpus: Vec<&Vec<String>> = train.iter().flat_map(|p| [&p.source, &p.target]).collect();
        let owned: Vec<Vec<&str>> = corpus
            .iter()
            .map(|s| s.iter().map(String::as_str).collect())
            .collect();
        Self::build(&owned, min_count, max_size)
    }

    /// Rebuilds a vocabulary from its non-reserved words in id order.
    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Result<Self> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(words);
        let mut ids = HashMap::with_capacity(all.len());
        for (i, w) in all.iter().enumerate() {
            if ids.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Vocabulary { words: all, ids })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Non-reserved words in id order.
    pub fn words(&self) -> &[String] {
        &self.words[RESERVED.len()..]
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.contains_key(word)
    }

    /// Maps words to ids (OOV → UNK), truncating to [`MAX_SEQ_LEN`].
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Result<TokenSequence> {
        let ids = words
            .iter()
            .take(MAX_SEQ_LEN)
            .map(|w| self.id(w.as_ref()))
            .collect();
        TokenSequence::new(ids, self.len())
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.word(i)).collect()
    }

    pub fn encode_pair(&self, pair: &RawPair) -> Result<ParaphrasePair> {
        Ok(ParaphrasePair {
            source: self.encode(&pair.source)?,
            target: self.encode(&pair.target)?,
        })
    }
}

/// Word ids of one sentence, without START/STOP.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    pub fn new(ids: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid("token sequence must be non-empty"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} out of range for vocabulary of {vocab_size}"
            )));
        }
        Ok(TokenSequence(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A tokenized row of the paraphrase file, before vocabulary lookup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
    /// 1-based line number in the source file.
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParaphrasePair {
    pub source: TokenSequence,
    pub target: TokenSequence,
}

pub const NUM_SENTIMENT_CLASSES: usize = 5;
pub const SENTIMENT_LABELS: [&str; NUM_SENTIMENT_CLASSES] = [
    "very negative",
    "negative",
    "neutral",
    "positive",
    "very positive",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledPhrase {
    pub id: String,
    pub words: Vec<String>,
    pub label: usize,
}

fn is_numeric(field: &str) -> bool {
    !field.is_empty() && field.trim().chars().all(|c| c.is_ascii_digit())
}

/// Reads `question1<TAB>question2<TAB>is_duplicate` rows, keeping only
/// duplicate-flag 1 pairs in file order. A first row whose flag field is
/// non-numeric is treated as a header.
pub fn load_pairs(path: &Path) -> Result<Vec<RawPair>> {
    let file = File::open(path)?;
    parse_pairs(BufReader::new(file), path)
}

pub fn parse_pairs<R: BufRead>(reader: R, path: &Path) -> Result<Vec<RawPair>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(err(
                line_no,
                format!("expected 3 tab-separated columns (question1, question2, is_duplicate), found {}", fields.len()),
            ));
        }
        if fields.len() > 3 {
            return Err(err(
                line_no,
                format!("expected 3 columns, found {}", fields.len()),
            ));
        }
        let flag = fields[2].trim();
        if !is_numeric(flag) {
            if line_no == 1 {
                continue;
            }
            return Err(err(
                line_no,
                format!("duplicate flag {flag:?} is not 0 or 1"),
            ));
        }
        match flag {
            "0" => continue,
            "1" => {}
            other => {
                return Err(err(
                    line_no,
                    format!("duplicate flag {other:?} is not 0 or 1"),
                ))
            }
        }
        let source = tokenize(fields[0]);
        let target = tokenize(fields[1]);
        if source.is_empty() || target.is_empty() {
            return Err(err(line_no, "empty question in a duplicate pair".into()));
        }
        pairs.push(RawPair {
            source,
            target,
            line: line_no,
        });
    }
    Ok(pairs)
}

/// Reads `phrase_id<TAB>phrase<TAB>label` rows with labels 0..=4. A
/// non-numeric first-row label is a header.
pub fn load_phrases(path: &Path) -> Result<Vec<LabeledPhrase>> {
    let file = File::open(path)?;
    parse_phrases(BufReader::new(file), path)
}

pub fn parse_phrases<R: BufRead>(reader: R, path: &Path) -> Result<Vec<LabeledPhrase>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(
                line_no,
                format!("expected 3 columns, found {}", fields.len()),
            ));
        }
        let label_field = fields[2].trim();
        if !is_numeric(label_field) {
            if line_no == 1 {
                continue;
            }
            return Err(err(
                line_no,
                format!("label {label_field:?} is not an integer"),
            ));
        }
        let label: usize = label_field
            .parse()
            .map_err(|e| err(line_no, format!("label: {e}")))?;
        if label >= NUM_SENTIMENT_CLASSES {
            return Err(err(line_no, format!("label {label} outside 0..=4")));
        }
        let words = tokenize(fields[1]);
        if words.is_empty() {
            return Err(err(line_no, "empty phrase".into()));
        }
        out.push(LabeledPhrase {
            id: fields[0].trim().to_string(),
            words,
            label,
        });
    }
    Ok(out)
}

/// Splits `0..n` into shuffled batches for one epoch.
///
/// The shuffle depends only on `(seed, epoch)`. When `global_loss` is on the
/// batch must hold at least two examples and a short final batch is dropped.
pub fn batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    global_loss: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if global_loss && batch_size < 2 {
        return Err(Error::Config(
            "batch size must be at least 2 when the global loss is enabled".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order
        .chunks(batch_size)
        .filter(|c| !global_loss || c.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Deterministic train/validation/test index split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn random_split(n: usize, val: usize, test: usize, seed: u64) -> Result<Split> {
    if val + test >= n {
        return Err(Error::Data(format!(
            "cannot hold out {val} + {test} of {n} examples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_idx = order[..test].to_vec();
    let val_idx = order[test..test + val].to_vec();
    let mut train_idx = order[test + val..].to_vec();
    train_idx.sort_unstable();
    let (mut val_idx, mut test_idx) = (val_idx, test_idx);
    val_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(Split {
        train: train_idx,
        val: val_idx,
        test: test_idx,
    })
}

pub fn read_indices(path: &Path) -> Result<Vec<usize>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        out.push(trimmed.parse().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("index {trimmed:?}: {e}"),
        })?);
    }
    Ok(out)
}

pub fn write_indices(path: &Path, indices: &[usize]) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    for i in indices {
        writeln!(f, "{i}")?;
    }
    f.flush()?;
    Ok(())
}

/// Selects items by index, failing on out-of-range indices.
pub fn select<T: Clone>(items: &[T], indices: &[usize]) -> Result<Vec<T>> {
    indices
        .iter()
        .map(|&i| {
            items.get(i).cloned().ok_or_else(|| {
                Error::Data(format!(
                    "split index {i} out of range ({} rows)",
                    items.len()
                ))
            })
        })
        .collect()
}
