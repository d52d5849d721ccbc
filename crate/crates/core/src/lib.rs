//! Dictionary-only named entity recognition with synonym generalization.
//!
//! A span scorer is trained from dictionary surfaces (positives) and
//! filtered corpus spans (negatives), regularized by a triplet synonym
//! distance term and a noise perturbation term. Inference enumerates token
//! spans, thresholds their scores and resolves nested terms greedily.
//! The [`bound`] module evaluates the synonym generalization error bound
//! together with plug-in estimators for its inputs.

pub mod bound;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod io;
pub mod negatives;
pub mod scorer;
pub mod synthetic;
pub mod training;

pub use config::RunConfig;
pub use data::{Corpus, DocSpans, Dictionary, Document, SpanAnnotation, TokenizedText};
pub use encoder::{CharNGramEncoder, Embedding, FrozenEncoder};
pub use error::{Error, Result};
pub use scorer::{MlpHead, ScorerModel};
