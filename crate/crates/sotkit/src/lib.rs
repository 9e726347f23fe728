//! Multi-talker speech-recognition tooling: a serialized-output label codec
//! with per-segment timestamp tokens, utterance-group segmentation,
//! overlap-controlled meeting simulation, permutation-invariant scoring with
//! local DER, and a desk-scale attention encoder-decoder with bottleneck
//! adapters and freeze masks.
//!
//! The narrative guide lives in `book/`; its code snippets compile as
//! doc-tests through the [`guide`] module.

pub mod codec;
pub mod manifest;
pub mod model;
pub mod score;
pub mod segment;
pub mod simulate;
pub mod types;
pub mod vocab;

mod guide;
