//! Prompt templating, completion-backend abstraction, response caching, and
//! strict parsers for the judge's replies.
//!
//! The judge model is configurable; every completion is cached under a hash
//! of the full request so paper-scale runs are resumable and mock runs are
//! byte-reproducible.

mod adapt;
mod backend;
mod cache;
mod parsers;
mod prompts;

pub use adapt::{generate_adaptation, split_completion_into_utterances, CultureConfig};
pub use backend::{
    client_for_endpoint, CompletionBackend, CompletionClient, CompletionRequest, Decoding,
    EchoClient, HttpClient, MockClient, ReplayClient, RetryPolicy, ScriptedJudgeClient, Session,
    WireFormat,
};
pub use cache::{CacheKey, ResponseCache};
pub use parsers::{
    format_edit_line, format_edit_list, parse_dialog_scores, parse_edit_list, parse_edit_scores,
    parse_strategy, EditList,
};
pub use prompts::{render, render_prompt, TemplateId};

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("template placeholder '{0}' is unbound")]
    UnboundPlaceholder(String),
    #[error("binding '{0}' does not name a template placeholder")]
    UnknownBinding(String),
    #[error("unparseable {what}: {detail}")]
    Unparseable { what: &'static str, detail: String },
    #[error("missing key '{0}'")]
    MissingKey(String),
    #[error("value {value} for '{key}' is out of range")]
    OutOfRange { key: String, value: i64 },
    #[error("missing aspect '{0}'")]
    MissingAspect(String),
    #[error("aspect '{aspect}' has a non-integer score")]
    NonIntegerScore { aspect: String },
    #[error("invalid backend: {0}")]
    InvalidBackend(String),
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("cache entry {path} is corrupt: {message}")]
    CacheCorrupt { path: String, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One lexical modification between an original and adapted utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    /// Empty for insertions.
    pub source: String,
    /// Empty for deletions.
    pub target: String,
    pub kind: EditKind,
    pub utterance_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Modify,
    Insert,
    Delete,
}

impl Edit {
    pub fn modify(source: impl Into<String>, target: impl Into<String>, index: usize) -> Self {
        Self { source: source.into(), target: target.into(), kind: EditKind::Modify, utterance_index: index }
    }

    pub fn insert(target: impl Into<String>, index: usize) -> Self {
        Self { source: String::new(), target: target.into(), kind: EditKind::Insert, utterance_index: index }
    }

    pub fn delete(source: impl Into<String>, index: usize) -> Self {
        Self { source: source.into(), target: String::new(), kind: EditKind::Delete, utterance_index: index }
    }

    /// An edit whose source and target normalize to the same text changes
    /// nothing worth scoring.
    pub fn is_noop(&self) -> bool {
        self.kind == EditKind::Modify
            && crate::textmatch::normalize(&self.source) == crate::textmatch::normalize(&self.target)
    }
}

/// The judge's three-aspect rating of one edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditScores {
    /// 0 or 1.
    pub correctness: u8,
    /// 0, 1, or 2.
    pub localisation: u8,
    /// 0 or 1.
    pub offensiveness: u8,
}

/// Davies' translation strategies. The classifier only ever yields the five
/// middle variants: `Preservation` is assigned by alignment when a CSI was
/// left unedited, and `Creation` when a non-CSI edit introduced a
/// target-culture item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Preservation,
    Addition,
    Omission,
    Localisation,
    Globalisation,
    Transformation,
    Creation,
}

impl Strategy {
    /// The five strategies the classifier prompt can select between.
    pub const CLASSIFIABLE: [Strategy; 5] = [
        Strategy::Addition,
        Strategy::Omission,
        Strategy::Localisation,
        Strategy::Globalisation,
        Strategy::Transformation,
    ];
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Self::Preservation => "Preservation",
            Self::Addition => "Addition",
            Self::Omission => "Omission",
            Self::Localisation => "Localisation",
            Self::Globalisation => "Globalisation",
            Self::Transformation => "Transformation",
            Self::Creation => "Creation",
        };
        write!(f, "{name}")
    }
}

/// Per-aspect free-text explanations accompanying dialog-level scores.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanations {
    pub naturalness: String,
    pub localisation: String,
    pub offensiveness: String,
    pub stereotypical: String,
    pub content_preservation: String,
}

/// The five 1-5 aspect ratings of one adapted dialog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogScores {
    pub naturalness: u8,
    pub localisation: u8,
    pub offensiveness: u8,
    pub stereotypical: u8,
    pub content_preservation: u8,
    pub explanations: Explanations,
}

impl DialogScores {
    pub fn aspect(&self, name: &str) -> Option<u8> {
        match name {
            "naturalness" => Some(self.naturalness),
            "localisation" => Some(self.localisation),
            "offensiveness" => Some(self.offensiveness),
            "stereotypical" => Some(self.stereotypical),
            "content_preservation" => Some(self.content_preservation),
            _ => None,
        }
    }
}

/// Aspect names in report order.
pub const DIALOG_ASPECTS: [&str; 5] = [
    "naturalness",
    "localisation",
    "offensiveness",
    "stereotypical",
    "content_preservation",
];

/// Thread-safe tallies of what a run did, surfaced in the manifest.
#[derive(Debug, Default)]
pub struct RunCounters {
    pub requests: AtomicU64,
    pub cache_hits: AtomicU64,
    pub retries: AtomicU64,
    pub requeries: AtomicU64,
    pub null_scores: AtomicU64,
}

impl RunCounters {
    pub fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            requests: self.requests.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            requeries: self.requeries.load(Ordering::Relaxed),
            null_scores: self.null_scores.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub requests: u64,
    pub cache_hits: u64,
    pub retries: u64,
    pub requeries: u64,
    pub null_scores: u64,
}
