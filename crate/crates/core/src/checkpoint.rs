//! Versioned binary checkpoint container. All integers and floats are
//! little-endian:
//!
//! ```text
//! magic    8 bytes  "PAIRDISC"
//! version  u32      1
//! meta     u32 byte length, UTF-8 `key = value` lines
//! vocab    u32 word count, then per word: u32 length, UTF-8 bytes
//! params   u32 count, then per parameter:
//!            u32 name length, name bytes, u32 rank, rank × u64 dims,
//!            values (f64 × product(dims)), rms state (f64 × product(dims))
//! ```
//!
//! Vocabulary words exclude the three reserved tokens, which are implied.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;
use crate::text::Vocabulary;

pub const MAGIC: &[u8; 8] = b"PAIRDISC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: KeyValues,
    pub vocab: Vocabulary,
    pub store: ParameterStore,
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    write_u32(w, bytes.len())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

// Guards allocations against corrupt length fields.
const MAX_STRING: usize = 1 << 20;
const MAX_ELEMENTS: usize = 1 << 31;

fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let len = read_u32(r)?;
    if len > MAX_STRING {
        return Err(Error::Checkpoint(format!(
            "{what} length {len} is implausible"
        )));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_bytes(w, self.meta.to_text().as_bytes())?;
        write_u32(w, self.vocab.words().len())?;
        for word in self.vocab.words() {
            write_bytes(w, word.as_bytes())?;
        }
        write_u32(w, self.store.len())?;
        for id in self.store.ids() {
            write_bytes(w, self.store.name(id).as_bytes())?;
            let value = self.store.value(id);
            write_u32(w, value.rank())?;
            for &d in value.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            write_f64s(w, value.data())?;
            write_f64s(w, self.store.rms(id).data())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = read_u32(r)? as u32;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let meta = KeyValues::parse(&read_string(r, "metadata")?)?;
        let n_words = read_u32(r)?;
        let words = (0..n_words)
            .map(|_| read_string(r, "vocabulary word"))
            .collect::<Result<Vec<_>>>()?;
        let vocab = Vocabulary::from_words(words)?;
        let n_params = read_u32(r)?;
        let mut store = ParameterStore::new();
        for _ in 0..n_params {
            let name = read_string(r, "parameter name")?;
            let rank = read_u32(r)?;
            if rank == 0 || rank > 8 {
                return Err(Error::Checkpoint(format!(
                    "{name}: implausible rank {rank}"
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(r)? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n > 0 && n <= MAX_ELEMENTS)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: bad shape {shape:?}")))?;
            let value = Tensor::from_vec(&shape, read_f64s(r, len)?)?;
            let rms = Tensor::from_vec(&shape, read_f64s(r, len)?)?;
            store.insert_with_state(&name, value, rms)?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        Ok(Checkpoint { meta, vocab, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r).map_err(|e| match e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                Error::Checkpoint(format!("{}: truncated file", path.display()))
            }
            other => other,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }
}
