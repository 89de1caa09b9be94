//! Cognitive distortion detection from counseling text, built as a
//! multiple-instance learning pipeline: an LLM decomposes each utterance
//! into emotion/logic/behavior summaries and mines candidate distortion
//! instances with salience scores; a gated-attention network then classifies
//! the resulting instance bags.

pub mod bag;
pub mod embed;
pub mod gateway;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prompt;
pub mod schema;
