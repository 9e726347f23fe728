//! Desk-scale attention encoder-decoder with bottleneck adapters.
//!
//! The encoder maps a feature matrix to hidden states; the decoder is an
//! audio-conditional autoregressive model over the token vocabulary. Both
//! are built from pre-norm transformer blocks. Adapters are two-layer
//! bottleneck feed-forward nets with ReLU and a residual connection, inserted
//! after the self-attention and feed-forward sublayers of every block and
//! initialized near identity (zero up-projection), so insertion does not
//! change the function computed.
//!
//! All math is generic over `f32`/`f64`: training runs in 32-bit, gradient
//! checking in 64-bit.

pub mod gradcheck;
pub mod layers;
pub mod net;
pub mod store;
pub mod toytask;
pub mod train;

pub use gradcheck::{gradient_check, randomize_class, GradCheckReport};
pub use net::{
    decode_step, encode, forward_loss, greedy_decode, teacher_forced_accuracy,
    teacher_forced_loss, FeatureMatrix, GreedyOutcome, HiddenMatrix, ModelConfig, ToyModel,
};
pub use store::{frozen_digest, full_digest, AdapterConfig, ParamClass, Scalar, TrainableMask};
pub use toytask::{dataset_accuracy, featurize, toy_dataset, ToyDataset, ToyExample, ToyTaskConfig};
pub use train::{train_step, AdamW, Example, LinearDecaySchedule, TrainError};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("token id {0} out of vocabulary range")]
    InvalidToken(u32),
    #[error("label id {0} out of vocabulary range")]
    LabelOutOfVocab(u32),
}
