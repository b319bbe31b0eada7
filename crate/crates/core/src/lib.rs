//! Paraphrase generation with an LSTM encoder-decoder and a pairwise
//! discriminator that re-encodes generated and reference sentences with the
//! source encoder's own weights.
//!
//! Everything is computed in `f64` with hand-derived gradients. The
//! [`trainer`] module ties the pieces together; [`metrics`] and
//! [`sentiment`] evaluate the results.

pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod discriminator;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod run;
pub mod sentiment;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::KeyValues;
pub use decoder::{Decoder, SoftSequence};
pub use discriminator::{
    global_loss, BatchEmbeddings, GlobalLoss, GlobalLossConfig, GradientForm, PairDiscriminator,
};
pub use encoder::{Encoder, EncoderInput, SentenceEmbedding};
pub use error::{Error, Result};
pub use gradcheck::{finite_diff_check, GradCheckReport, LossProbe};
pub use metrics::MetricReport;
pub use model::{DiscriminatorMode, Model, ModelDims};
pub use optim::{decay_factor, epoch_decay, rmsprop_step, RmsPropConfig};
pub use params::{Gradients, ParamId, ParameterStore};
pub use run::{RunManifest, RunSummary};
pub use tensor::Tensor;
pub use text::{ParaphrasePair, RawPair, TokenSequence, Vocabulary};
pub use trainer::{BatchLossReport, EpochLog, TrainConfig, Trainer, Variant};
