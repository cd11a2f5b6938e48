//! Evaluation toolkit for cultural adaptation of dialog corpora.
//!
//! Generates adaptations through pluggable completion backends, measures the
//! extent and quality of adaptation with edit-level and dialog-level metrics,
//! classifies translation strategies, and validates judge scores against
//! human ratings with rank correlation.

pub mod corpus;
pub mod judge;
pub mod metrics;
pub mod stats;
pub mod textmatch;
