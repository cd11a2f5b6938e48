//! Pipeline orchestration, configuration, run manifests, and report
//! emission for the adaptation evaluation toolkit.

pub mod config;
pub mod correlate;
pub mod manifest;
pub mod pipeline;
pub mod report;
