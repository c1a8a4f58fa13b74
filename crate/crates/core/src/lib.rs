//! Web request anomaly detection.
//!
//! Raw HTTP/1.x requests are reduced to a canonical string, encoded over a
//! character vocabulary and scored by a sequence-to-sequence LSTM
//! autoencoder trained on benign traffic only. Requests whose reconstruction
//! loss exceeds a calibrated threshold are flagged and handed to a
//! seven-class LSTM attack classifier.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`neural`]: matrices, activations, LSTM cell with BPTT, dropout, Adam.
//! - [`codec`]: HTTP parsing, canonicalization, vocabulary and encoding.
//! - [`detector`]: the autoencoder, threshold fitting and anomaly verdicts.
//! - [`classifier`]: the attack-class LSTM.
//! - [`pca`]: linear PCA baseline and a linear autoencoder for comparison.
//! - [`eval`]: confusion counts, rates, ROC and AUC.
//! - [`engine`]: bundles, corpus files, streaming service, synthetic data, CLI.

pub mod classifier;
pub mod codec;
pub mod detector;
pub mod engine;
pub mod error;
pub mod eval;
pub mod neural;
pub mod pca;
mod training;

pub use classifier::{AttackClass, ClassifierModel, LabeledExample};
pub use codec::{CanonicalRequest, EncodedSequence, ParsedRequest, Vocabulary};
pub use detector::{Decision, DetectorConfig, DetectorModel, ThresholdModel};
pub use error::{Error, FormatError, Result};
pub use neural::Matrix;
