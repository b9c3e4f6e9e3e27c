//! Zero-shot text classification from next-token rows over appended placeholder tokens.
//!
//! A prompt is tokenized, `m` placeholder tokens are appended, and a single
//! forward pass of a causal language model yields class-token probabilities
//! for the next position and each of the `m` positions after it. An
//! [`AggregationPolicy`] turns those per-position scores into one decision.

pub mod aggregation;
pub mod backend;
pub mod baselines;
pub mod cli;
pub mod engine;
pub mod error;
pub mod harness;
pub mod types;

pub use aggregation::{classify, AggregationPolicy, CalibrationCache, Decision};
pub use backend::{LanguageModel, PrefixDistributionMatrix};
pub use engine::{CalibrationVariant, CalibrationVector, PositionClassMatrix};
pub use error::{Error, Result};
pub use types::{LabelSpec, PromptTemplate, Sample, TokenId, Vocab};
