//! Adaptation generation: render the adapt prompt, complete it, and split
//! the completion back into utterances.

use serde::{Deserialize, Serialize};

use super::backend::Session;
use super::prompts::{render, TemplateId};
use super::JudgeError;
use crate::corpus::{AdaptationRecord, Dialog, Utterance, TRANSCRIPT_NOTE_SPEAKER};

/// Target-culture settings for a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CultureConfig {
    pub id: String,
    /// Surfaces characteristic of the target culture; an edit whose source
    /// matches no CSI but whose target matches one of these is a Creation
    /// candidate.
    #[serde(default)]
    pub target_patterns: Vec<String>,
}

impl CultureConfig {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), target_patterns: Vec::new() }
    }
}

const MAX_SPEAKER_CHARS: usize = 40;
const MAX_SPEAKER_WORDS: usize = 4;

/// Does the text left of a colon look like a speaker name rather than prose?
fn plausible_speaker(candidate: &str) -> bool {
    let candidate = candidate.trim();
    !candidate.is_empty()
        && candidate.len() <= MAX_SPEAKER_CHARS
        && candidate.split_whitespace().count() <= MAX_SPEAKER_WORDS
        && !candidate.contains(['!', '?', ','])
}

fn parse_utterance_line(line: &str) -> Option<Utterance> {
    let (speaker, text) = line.split_once(':')?;
    let speaker = speaker.trim();
    let text = text.trim();
    if !plausible_speaker(speaker) {
        return None;
    }
    if text.is_empty() && speaker != TRANSCRIPT_NOTE_SPEAKER {
        // headers like "Adapted Version:" look like empty utterances
        return None;
    }
    Some(Utterance::new(speaker, text))
}

/// Splits a completion into `speaker: text` utterances. Lines before the
/// first utterance line (e.g. an "Adapted Version:" header) are discarded,
/// and non-conforming interior lines are skipped; the caller keeps the raw
/// completion alongside. Zero utterance lines is a valid, empty result.
pub fn split_completion_into_utterances(completion: &str) -> Vec<Utterance> {
    completion.lines().filter_map(parse_utterance_line).collect()
}

/// Renders the adaptation prompt for `dialog`, completes it, and wraps the
/// result. A completion without a single speaker line yields an empty
/// adaptation record, not a failure.
pub fn generate_adaptation(
    session: &Session<'_>,
    dialog: &Dialog,
    culture: &CultureConfig,
) -> Result<AdaptationRecord, JudgeError> {
    let prompt = render(TemplateId::Adapt, &[("dialog", &dialog.as_prompt_block())])?;
    let raw = session.complete(&prompt, 1)?;
    Ok(AdaptationRecord {
        dialog_id: dialog.id.clone(),
        model_id: session.backend.model_id.clone(),
        culture_id: culture.id.clone(),
        utterances: split_completion_into_utterances(&raw),
        raw_completion: raw,
    })
}
