//! The three-part model: source encoder, decoder, and the discriminator's
//! encoder (the source encoder itself, a separate copy, or absent).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::Decoder;
use crate::discriminator::PairDiscriminator;
use crate::encoder::{Encoder, EncoderInput, SentenceEmbedding};
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::text::TokenSequence;

pub const ENCODER_PREFIX: &str = "enc";
pub const SEPARATE_DISCRIMINATOR_PREFIX: &str = "disc";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Width of the optional temporal convolution after the embedding lookup.
    pub conv_width: Option<usize>,
    /// Generation length cap.
    pub t_max: usize,
}

impl ModelDims {
    pub fn with_vocab(vocab: usize) -> Self {
        ModelDims {
            vocab,
            embed_dim: 64,
            hidden_dim: 128,
            conv_width: None,
            t_max: crate::text::MAX_SEQ_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab <= crate::text::RESERVED.len() {
            return Err(Error::Config(format!(
                "vocabulary of {} has no real words",
                self.vocab
            )));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.t_max == 0 {
            return Err(Error::Config(format!(
                "dimensions must be positive: {self:?}"
            )));
        }
        if self.conv_width == Some(0) {
            return Err(Error::Config("convolution width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscriminatorMode {
    None,
    /// Discriminator reads the `enc.*` parameters.
    Shared,
    /// Discriminator owns `disc.*` parameters initialized as a copy of `enc.*`.
    Separate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub dims: ModelDims,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub discriminator: Option<PairDiscriminator>,
}

impl Model {
    /// Builds a freshly initialized model. Encoder parameters are drawn
    /// first and decoder parameters second, so every mode starts from the
    /// same `enc.*`/`dec.*` values for a given seed.
    pub fn new(
        dims: ModelDims,
        mode: DiscriminatorMode,
        seed: u64,
    ) -> Result<(Model, ParameterStore)> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let encoder = Encoder::register(
            &mut store,
            ENCODER_PREFIX,
            dims.vocab,
            dims.embed_dim,
            dims.hidden_dim,
            dims.conv_width,
            &mut rng,
        )?;
        let decoder = Decoder::register(
            &mut store,
            dims.vocab,
            dims.embed_dim,
            dims.hidden_dim,
            &mut rng,
        )?;
        let discriminator = match mode {
            DiscriminatorMode::None => None,
            DiscriminatorMode::Shared => Some(PairDiscriminator::new(encoder.clone())),
            DiscriminatorMode::Separate => Some(PairDiscriminator::new(
                encoder.duplicate(&mut store, SEPARATE_DISCRIMINATOR_PREFIX)?,
            )),
        };
        Ok((
            Model {
                dims,
                encoder,
                decoder,
                discriminator,
            },
            store,
        ))
    }

    /// Re-attaches a model to a loaded store.
    pub fn bind(dims: ModelDims, mode: DiscriminatorMode, store: &ParameterStore) -> Result<Model> {
        let encoder = Encoder::bind(store, ENCODER_PREFIX)?;
        let decoder = Decoder::bind(store)?;
        if encoder.vocab() != dims.vocab
            || decoder.vocab() != dims.vocab
            || encoder.hidden() != dims.hidden_dim
        {
            return Err(Error::Checkpoint(format!(
                "parameters do not match dimensions {dims:?}"
            )));
        }
        let discriminator = match mode {
            DiscriminatorMode::None => None,
            DiscriminatorMode::Shared => Some(PairDiscriminator::new(encoder.clone())),
            DiscriminatorMode::Separate => Some(PairDiscriminator::new(Encoder::bind(
                store,
                SEPARATE_DISCRIMINATOR_PREFIX,
            )?)),
        };
        Ok(Model {
            dims,
            encoder,
            decoder,
            discriminator,
        })
    }

    pub fn mode(&self) -> DiscriminatorMode {
        match &self.discriminator {
            None => DiscriminatorMode::None,
            Some(d) if d.encoder() == &self.encoder => DiscriminatorMode::Shared,
            Some(_) => DiscriminatorMode::Separate,
        }
    }

    pub fn embed(&self, store: &ParameterStore, seq: &TokenSequence) -> Result<SentenceEmbedding> {
        Ok(self.encoder.encode(store, EncoderInput::Tokens(seq))?.0)
    }

    /// Encodes `source` and greedily decodes a paraphrase.
    pub fn generate(&self, store: &ParameterStore, source: &TokenSequence) -> Result<Vec<usize>> {
        let f = self.embed(store, source)?;
        self.decoder.generate_greedy(store, &f, self.dims.t_max)
    }
}
