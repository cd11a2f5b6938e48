//! Data model, serialization, and structural validation for original
//! dialogs, CSI annotations, and adapted dialogs.
//!
//! All record files are UTF-8 JSON lines, one record per line; the exact
//! field names are documented in SCHEMA.md at the repository root. Types are
//! immutable after construction and operations are pure.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textmatch::normalize;

/// Reserved speaker for stage directions such as
/// `TRANSCRIPT NOTE: (they hug)`. Notes are adapted like utterances but are
/// not counted as speakers.
pub const TRANSCRIPT_NOTE_SPEAKER: &str = "TRANSCRIPT NOTE";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: u64, message: String },
    #[error("line {line}: duplicate dialog id '{id}'")]
    DuplicateDialogId { id: String, line: u64 },
    #[error("line {line}: dialog '{id}' has {count} utterances, expected 1..=15")]
    InvalidUtteranceCount { id: String, count: usize, line: u64 },
    #[error("line {line}: invalid speaker: {reason}")]
    InvalidSpeaker { line: u64, reason: String },
    #[error("line {line}: dialog '{id}' has an empty utterance text outside a transcript note")]
    EmptyUtteranceText { id: String, line: u64 },
    #[error("line {line}: annotation surface is empty")]
    EmptySurface { line: u64 },
    #[error("line {line}: unknown CSI category '{label}'")]
    UnknownCategory { label: String, line: u64 },
    #[error("line {line}: foreignness {value} is outside 1..=3")]
    InvalidForeignness { value: i64, line: u64 },
    #[error("line {line}: duplicate annotation ({dialog_id}, '{surface}', {occurrence_index})")]
    DuplicateAnnotation {
        dialog_id: String,
        surface: String,
        occurrence_index: u32,
        line: u64,
    },
    #[error("line {line}: record references unknown dialog id '{id}'")]
    UnknownDialogId { id: String, line: u64 },
    #[error("annotation references dialog id '{id}' absent from the loaded corpus")]
    DanglingDialogId { id: String },
}

/// One speaker-attributed line of a dialog. Serialized prompt form is
/// exactly `speaker: text` on one line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Self { speaker: speaker.into(), text: text.into() }
    }

    pub fn is_transcript_note(&self) -> bool {
        self.speaker == TRANSCRIPT_NOTE_SPEAKER
    }
}

impl std::fmt::Display for Utterance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.speaker, self.text)
    }
}

/// An ordered sequence of utterances, the unit of adaptation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialog {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Dialog {
    /// All utterance texts joined with newlines; the haystack used when
    /// checking whether an annotated surface occurs in the dialog.
    pub fn full_text(&self) -> String {
        let texts: Vec<&str> = self.utterances.iter().map(|u| u.text.as_str()).collect();
        texts.join("\n")
    }

    /// The `speaker: text` block sent to prompts.
    pub fn as_prompt_block(&self) -> String {
        let lines: Vec<String> = self.utterances.iter().map(|u| u.to_string()).collect();
        lines.join("\n")
    }
}

/// Newmark's five CSI categories plus the four introduced for adaptation.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum CsiCategory {
    Ecology,
    MaterialCulture,
    SocialCulture,
    InstitutionsOrganisationsIdeas,
    GesturesAndHabits,
    SlangOrFigureOfSpeech,
    OffensiveContent,
    SociallySensitiveOrTaboo,
    Humour,
}

impl CsiCategory {
    pub const ALL: [CsiCategory; 9] = [
        CsiCategory::Ecology,
        CsiCategory::MaterialCulture,
        CsiCategory::SocialCulture,
        CsiCategory::InstitutionsOrganisationsIdeas,
        CsiCategory::GesturesAndHabits,
        CsiCategory::SlangOrFigureOfSpeech,
        CsiCategory::OffensiveContent,
        CsiCategory::SociallySensitiveOrTaboo,
        CsiCategory::Humour,
    ];

    /// Accepts the canonical identifier or the human-readable label,
    /// case-insensitively.
    pub fn parse_label(label: &str) -> Option<CsiCategory> {
        let key: String = label
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "ecology" => Some(Self::Ecology),
            "materialculture" => Some(Self::MaterialCulture),
            "socialculture" => Some(Self::SocialCulture),
            "institutionsorganisationsideas"
            | "institutionsorganizationsideas"
            | "institutionsorganisationsandideas"
            | "institutionsorganizationsandideas" => Some(Self::InstitutionsOrganisationsIdeas),
            "gesturesandhabits" => Some(Self::GesturesAndHabits),
            "slangorfigureofspeech" => Some(Self::SlangOrFigureOfSpeech),
            "offensivecontent" => Some(Self::OffensiveContent),
            "sociallysensitiveortaboo" | "sociallysensitiveandtabootopics"
            | "sociallysensitiveortabootopics" => Some(Self::SociallySensitiveOrTaboo),
            "humour" | "humor" => Some(Self::Humour),
            _ => None,
        }
    }

    /// Canonical identifier used in record files.
    pub fn identifier(&self) -> &'static str {
        match self {
            Self::Ecology => "Ecology",
            Self::MaterialCulture => "MaterialCulture",
            Self::SocialCulture => "SocialCulture",
            Self::InstitutionsOrganisationsIdeas => "InstitutionsOrganisationsIdeas",
            Self::GesturesAndHabits => "GesturesAndHabits",
            Self::SlangOrFigureOfSpeech => "SlangOrFigureOfSpeech",
            Self::OffensiveContent => "OffensiveContent",
            Self::SociallySensitiveOrTaboo => "SociallySensitiveOrTaboo",
            Self::Humour => "Humour",
        }
    }
}

impl std::fmt::Display for CsiCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let label = match self {
            Self::Ecology => "Ecology",
            Self::MaterialCulture => "Material Culture",
            Self::SocialCulture => "Social Culture",
            Self::InstitutionsOrganisationsIdeas => "Institutions, Organisations and Ideas",
            Self::GesturesAndHabits => "Gestures and Habits",
            Self::SlangOrFigureOfSpeech => "Slang or Figure of Speech",
            Self::OffensiveContent => "Offensive Content",
            Self::SociallySensitiveOrTaboo => "Socially Sensitive or Taboo",
            Self::Humour => "Humour",
        };
        write!(f, "{label}")
    }
}

/// One occurrence of a culture-specific item in a dialog.
///
/// Annotation is occurrence-level: `occurrence_index` is the 0-based ordinal
/// distinguishing repeated identical surfaces within one dialog. Items at
/// foreignness level 1 are kept but excluded from analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsiAnnotation {
    pub dialog_id: String,
    pub surface: String,
    pub category: CsiCategory,
    pub foreignness: u8,
    pub occurrence_index: u32,
}

impl CsiAnnotation {
    /// Foreignness level 1 items are assimilated in the target culture and
    /// omitted from all metric denominators.
    pub fn included_in_analysis(&self) -> bool {
        self.foreignness >= 2
    }

    pub fn key(&self) -> (String, String, u32) {
        (self.dialog_id.clone(), self.surface.clone(), self.occurrence_index)
    }
}

/// One model's adaptation of one dialog, with the raw completion preserved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationRecord {
    pub dialog_id: String,
    pub model_id: String,
    pub culture_id: String,
    pub utterances: Vec<Utterance>,
    pub raw_completion: String,
}

impl AdaptationRecord {
    pub fn is_empty_adaptation(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn full_text(&self) -> String {
        let texts: Vec<&str> = self.utterances.iter().map(|u| u.text.as_str()).collect();
        texts.join("\n")
    }

    pub fn as_prompt_block(&self) -> String {
        let lines: Vec<String> = self.utterances.iter().map(|u| u.to_string()).collect();
        lines.join("\n")
    }
}

/// Outcome of checking an adaptation against the structural constraints the
/// adaptation prompt states (same utterance count, same speakers).
/// Violations are flags, not rejections: model outputs that break them are
/// still scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureReport {
    pub dialog_id: String,
    pub utterance_count_match: bool,
    /// `(index, original_speaker, adapted_speaker)` for every index-aligned
    /// mismatch up to the shorter utterance count.
    pub speaker_mismatches: Vec<(usize, String, String)>,
    pub empty_adaptation: bool,
}

/// How utterances are counted against the 1..=15 ingestion bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceCountMode {
    /// Transcript notes count like any utterance.
    #[default]
    All,
    /// Transcript notes are ignored by the bound.
    ExcludeTranscriptNotes,
}

/// Ingestion options for [`parse_dialog_corpus`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Accept dialogs outside the 1..=15 utterance bound and empty utterance
    /// texts instead of rejecting them.
    pub permissive: bool,
    pub count_mode: UtteranceCountMode,
}

/// Parses a line-delimited dialog file. Order is preserved; ids must be
/// unique; every utterance is validated. Errors name the offending line.
pub fn parse_dialog_corpus(
    reader: impl BufRead,
    options: &LoadOptions,
) -> Result<Vec<Dialog>, CorpusError> {
    let mut dialogs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let dialog: Dialog = serde_json::from_str(&line).map_err(|e| {
            CorpusError::MalformedLine { line: line_no, message: e.to_string() }
        })?;
        if !seen.insert(dialog.id.clone()) {
            return Err(CorpusError::DuplicateDialogId { id: dialog.id, line: line_no });
        }
        validate_dialog(&dialog, options, line_no)?;
        dialogs.push(dialog);
    }
    Ok(dialogs)
}

fn validate_dialog(
    dialog: &Dialog,
    options: &LoadOptions,
    line: u64,
) -> Result<(), CorpusError> {
    for u in &dialog.utterances {
        if u.speaker.trim().is_empty() {
            return Err(CorpusError::InvalidSpeaker {
                line,
                reason: format!("empty speaker in dialog '{}'", dialog.id),
            });
        }
        if u.speaker.contains('\n') || u.speaker.contains('\r') {
            return Err(CorpusError::InvalidSpeaker {
                line,
                reason: format!("speaker contains a line break in dialog '{}'", dialog.id),
            });
        }
        if !options.permissive && u.text.is_empty() && !u.is_transcript_note() {
            return Err(CorpusError::EmptyUtteranceText { id: dialog.id.clone(), line });
        }
    }
    let count = match options.count_mode {
        UtteranceCountMode::All => dialog.utterances.len(),
        UtteranceCountMode::ExcludeTranscriptNotes => dialog
            .utterances
            .iter()
            .filter(|u| !u.is_transcript_note())
            .count(),
    };
    if !options.permissive && !(1..=15).contains(&count) {
        return Err(CorpusError::InvalidUtteranceCount { id: dialog.id.clone(), count, line });
    }
    Ok(())
}

/// Canonical single-line serialization of any record type. `parse` of a line
/// produced here re-serializes byte-identically.
pub fn to_record_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("record types serialize infallibly")
}

#[derive(Deserialize)]
struct RawAnnotation {
    dialog_id: String,
    surface: String,
    category: String,
    foreignness: i64,
    occurrence_index: u32,
}

/// Why an annotation was kept but flagged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationWarningKind {
    /// The surface does not occur in the referenced dialog's text.
    SurfaceNotFound,
    /// The surface occurs, but fewer times than `occurrence_index` requires.
    OccurrenceIndexBeyondMatches { occurrences_found: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationWarning {
    pub line: u64,
    pub dialog_id: String,
    pub surface: String,
    pub occurrence_index: u32,
    pub kind: AnnotationWarningKind,
}

/// Annotations plus the warnings raised while checking them. Flagged
/// annotations stay in `annotations`.
#[derive(Debug, Clone, Default)]
pub struct AnnotationSet {
    pub annotations: Vec<CsiAnnotation>,
    pub warnings: Vec<AnnotationWarning>,
}

/// Parses a line-delimited annotation file and checks every invariant
/// against the given dialogs. Unknown categories, out-of-range foreignness,
/// duplicate keys, and dangling dialog ids are errors; a surface that cannot
/// be located in its dialog is a warning and the annotation is kept.
pub fn parse_csi_annotations(
    reader: impl BufRead,
    dialogs: &[Dialog],
) -> Result<AnnotationSet, CorpusError> {
    let text_by_id: HashMap<&str, String> = dialogs
        .iter()
        .map(|d| (d.id.as_str(), normalize(&d.full_text())))
        .collect();

    let mut set = AnnotationSet::default();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawAnnotation = serde_json::from_str(&line).map_err(|e| {
            CorpusError::MalformedLine { line: line_no, message: e.to_string() }
        })?;
        if raw.surface.trim().is_empty() {
            return Err(CorpusError::EmptySurface { line: line_no });
        }
        let category = CsiCategory::parse_label(&raw.category).ok_or_else(|| {
            CorpusError::UnknownCategory { label: raw.category.clone(), line: line_no }
        })?;
        if !(1..=3).contains(&raw.foreignness) {
            return Err(CorpusError::InvalidForeignness { value: raw.foreignness, line: line_no });
        }
        let dialog_text = text_by_id.get(raw.dialog_id.as_str()).ok_or_else(|| {
            CorpusError::UnknownDialogId { id: raw.dialog_id.clone(), line: line_no }
        })?;
        if !seen.insert((raw.dialog_id.clone(), raw.surface.clone(), raw.occurrence_index)) {
            return Err(CorpusError::DuplicateAnnotation {
                dialog_id: raw.dialog_id,
                surface: raw.surface,
                occurrence_index: raw.occurrence_index,
                line: line_no,
            });
        }

        let needle = normalize(&raw.surface);
        let occurrences = if needle.is_empty() {
            0
        } else {
            dialog_text.matches(&needle).count() as u32
        };
        if occurrences == 0 {
            set.warnings.push(AnnotationWarning {
                line: line_no,
                dialog_id: raw.dialog_id.clone(),
                surface: raw.surface.clone(),
                occurrence_index: raw.occurrence_index,
                kind: AnnotationWarningKind::SurfaceNotFound,
            });
        } else if raw.occurrence_index >= occurrences {
            set.warnings.push(AnnotationWarning {
                line: line_no,
                dialog_id: raw.dialog_id.clone(),
                surface: raw.surface.clone(),
                occurrence_index: raw.occurrence_index,
                kind: AnnotationWarningKind::OccurrenceIndexBeyondMatches {
                    occurrences_found: occurrences,
                },
            });
        }
        set.annotations.push(CsiAnnotation {
            dialog_id: raw.dialog_id,
            surface: raw.surface,
            category,
            foreignness: raw.foreignness as u8,
            occurrence_index: raw.occurrence_index,
        });
    }
    Ok(set)
}

/// Parses a line-delimited adaptation file. Adaptations are accepted as-is:
/// structural violations are reported by
/// [`validate_adaptation_structure`], never rejected here.
pub fn parse_adaptations(reader: impl BufRead) -> Result<Vec<AdaptationRecord>, CorpusError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AdaptationRecord = serde_json::from_str(&line).map_err(|e| {
            CorpusError::MalformedLine { line: line_no, message: e.to_string() }
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Compares an adaptation against its original dialog. Speaker comparison is
/// case-insensitive after trimming; mismatches are listed for every
/// index-aligned pair up to the shorter count. Always yields a report.
pub fn validate_adaptation_structure(
    original: &Dialog,
    adapted: &AdaptationRecord,
) -> StructureReport {
    let mut mismatches = Vec::new();
    for (i, (o, a)) in original.utterances.iter().zip(adapted.utterances.iter()).enumerate() {
        let o_name = o.speaker.trim();
        let a_name = a.speaker.trim();
        if o_name.to_lowercase() != a_name.to_lowercase() {
            mismatches.push((i, o.speaker.clone(), a.speaker.clone()));
        }
    }
    StructureReport {
        dialog_id: original.id.clone(),
        utterance_count_match: original.utterances.len() == adapted.utterances.len(),
        speaker_mismatches: mismatches,
        empty_adaptation: adapted.utterances.is_empty(),
    }
}

/// Corpus-level counts: dialogs, utterances, distinct speakers, and CSI
/// occurrences broken down by category and foreignness level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_dialogs: u64,
    pub n_utterances: u64,
    /// Distinct speaker names; the reserved transcript-note speaker is not a
    /// speaker.
    pub n_speakers: u64,
    pub n_csi_occurrences: u64,
    pub per_category: BTreeMap<CsiCategory, u64>,
    pub per_foreignness: BTreeMap<u8, u64>,
}

/// Counts dialogs, utterances, speakers, and annotation occurrences.
/// All foreignness levels are counted here, including level 1; metric
/// denominators apply their own filtering.
pub fn corpus_stats(
    dialogs: &[Dialog],
    annotations: &[CsiAnnotation],
) -> Result<CorpusStats, CorpusError> {
    let ids: HashSet<&str> = dialogs.iter().map(|d| d.id.as_str()).collect();
    let mut speakers = HashSet::new();
    let mut n_utterances = 0u64;
    for d in dialogs {
        n_utterances += d.utterances.len() as u64;
        for u in &d.utterances {
            if !u.is_transcript_note() {
                speakers.insert(u.speaker.as_str());
            }
        }
    }
    let mut per_category = BTreeMap::new();
    let mut per_foreignness = BTreeMap::new();
    for a in annotations {
        if !ids.contains(a.dialog_id.as_str()) {
            return Err(CorpusError::DanglingDialogId { id: a.dialog_id.clone() });
        }
        *per_category.entry(a.category).or_insert(0) += 1;
        *per_foreignness.entry(a.foreignness).or_insert(0) += 1;
    }
    Ok(CorpusStats {
        n_dialogs: dialogs.len() as u64,
        n_utterances,
        n_speakers: speakers.len() as u64,
        n_csi_occurrences: annotations.len() as u64,
        per_category,
        per_foreignness,
    })
}

/// Deterministic sample of dialog ids for building a human-rating batch.
/// The published study sampled "at random" without recording a seed; this
/// sampler takes one explicitly. Results are returned in corpus order.
pub fn sample_dialog_ids(dialogs: &[Dialog], n: usize, seed: u64) -> Vec<String> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let take = n.min(dialogs.len());
    let mut picked = rand::seq::index::sample(&mut rng, dialogs.len(), take).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| dialogs[i].id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn dialog_line(id: &str, utterances: &[(&str, &str)]) -> String {
        let d = Dialog {
            id: id.to_string(),
            utterances: utterances
                .iter()
                .map(|(s, t)| Utterance::new(*s, *t))
                .collect(),
        };
        to_record_line(&d)
    }

    #[test]
    fn parses_single_record() {
        let line = dialog_line("d1", &[("Ross", "Hi."), ("Monica", "Hey!")]);
        let dialogs =
            parse_dialog_corpus(Cursor::new(line), &LoadOptions::default()).unwrap();
        assert_eq!(dialogs.len(), 1);
        assert_eq!(dialogs[0].utterances.len(), 2);
        assert_eq!(dialogs[0].utterances[0].to_string(), "Ross: Hi.");
    }

    #[test]
    fn rejects_sixteen_utterances_unless_permissive() {
        let utterances: Vec<(&str, &str)> = (0..16).map(|_| ("Ross", "hi")).collect();
        let line = dialog_line("d1", &utterances);
        let err = parse_dialog_corpus(Cursor::new(line.clone()), &LoadOptions::default())
            .unwrap_err();
        assert!(matches!(err, CorpusError::InvalidUtteranceCount { count: 16, .. }));
        let ok = parse_dialog_corpus(
            Cursor::new(line),
            &LoadOptions { permissive: true, ..Default::default() },
        )
        .unwrap();
        assert_eq!(ok[0].utterances.len(), 16);
    }

    #[test]
    fn transcript_notes_respect_count_mode() {
        let mut utterances: Vec<(&str, &str)> = (0..15).map(|_| ("Ross", "hi")).collect();
        utterances.push((TRANSCRIPT_NOTE_SPEAKER, "(they hug)"));
        let line = dialog_line("d1", &utterances);
        // 16 in All mode
        assert!(parse_dialog_corpus(Cursor::new(line.clone()), &LoadOptions::default()).is_err());
        // 15 when notes are excluded
        let ok = parse_dialog_corpus(
            Cursor::new(line),
            &LoadOptions {
                count_mode: UtteranceCountMode::ExcludeTranscriptNotes,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ok[0].utterances.len(), 16);
    }

    #[test]
    fn duplicate_id_and_malformed_line_are_named() {
        let two = format!(
            "{}\n{}",
            dialog_line("d1", &[("A", "x")]),
            dialog_line("d1", &[("B", "y")])
        );
        let err = parse_dialog_corpus(Cursor::new(two), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateDialogId { line: 2, .. }));

        let bad = format!("{}\nnot json", dialog_line("d1", &[("A", "x")]));
        let err = parse_dialog_corpus(Cursor::new(bad), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedLine { line: 2, .. }));
    }

    fn thanks_corpus() -> Vec<Dialog> {
        vec![Dialog {
            id: "d1".into(),
            utterances: vec![
                Utterance::new("Angela", "Wear the gown I gave you on last Thanksgiving."),
                Utterance::new("Mary", "I'd rather eat pizza."),
            ],
        }]
    }

    fn ann_line(dialog: &str, surface: &str, category: &str, foreignness: i64, idx: u32) -> String {
        format!(
            r#"{{"dialog_id":"{dialog}","surface":"{surface}","category":"{category}","foreignness":{foreignness},"occurrence_index":{idx}}}"#
        )
    }

    #[test]
    fn accepts_known_annotations() {
        let lines = [
            ann_line("d1", "Thanksgiving", "SocialCulture", 3, 0),
            ann_line("d1", "pizza", "MaterialCulture", 1, 0),
        ]
        .join("\n");
        let set = parse_csi_annotations(Cursor::new(lines), &thanks_corpus()).unwrap();
        assert_eq!(set.annotations.len(), 2);
        assert!(set.warnings.is_empty());
        assert!(set.annotations[0].included_in_analysis());
        // level 1 is kept but excluded from analysis
        assert!(!set.annotations[1].included_in_analysis());
    }

    #[test]
    fn accepts_human_readable_category_labels() {
        let line = ann_line("d1", "Thanksgiving", "Social Culture", 2, 0);
        let set = parse_csi_annotations(Cursor::new(line), &thanks_corpus()).unwrap();
        assert_eq!(set.annotations[0].category, CsiCategory::SocialCulture);
    }

    #[test]
    fn rejects_bad_category_and_foreignness() {
        let line = ann_line("d1", "Thanksgiving", "Cuisine", 3, 0);
        let err = parse_csi_annotations(Cursor::new(line), &thanks_corpus()).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownCategory { .. }));

        let line = ann_line("d1", "Thanksgiving", "SocialCulture", 4, 0);
        let err = parse_csi_annotations(Cursor::new(line), &thanks_corpus()).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidForeignness { value: 4, .. }));
    }

    #[test]
    fn missing_surface_is_a_warning_not_an_error() {
        let line = ann_line("d1", "rodeo", "SocialCulture", 3, 0);
        let set = parse_csi_annotations(Cursor::new(line), &thanks_corpus()).unwrap();
        assert_eq!(set.annotations.len(), 1);
        assert_eq!(set.warnings.len(), 1);
        assert_eq!(set.warnings[0].kind, AnnotationWarningKind::SurfaceNotFound);
    }

    #[test]
    fn occurrence_index_beyond_matches_is_flagged() {
        let line = ann_line("d1", "Thanksgiving", "SocialCulture", 3, 1);
        let set = parse_csi_annotations(Cursor::new(line), &thanks_corpus()).unwrap();
        assert_eq!(
            set.warnings[0].kind,
            AnnotationWarningKind::OccurrenceIndexBeyondMatches { occurrences_found: 1 }
        );
    }

    #[test]
    fn duplicate_annotation_key_is_an_error() {
        let lines = [
            ann_line("d1", "Thanksgiving", "SocialCulture", 3, 0),
            ann_line("d1", "Thanksgiving", "SocialCulture", 2, 0),
        ]
        .join("\n");
        let err = parse_csi_annotations(Cursor::new(lines), &thanks_corpus()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateAnnotation { .. }));
    }

    #[test]
    fn structure_report_identity_is_clear() {
        let d = thanks_corpus().remove(0);
        let adapted = AdaptationRecord {
            dialog_id: d.id.clone(),
            model_id: "m".into(),
            culture_id: "india".into(),
            utterances: d.utterances.clone(),
            raw_completion: d.as_prompt_block(),
        };
        let report = validate_adaptation_structure(&d, &adapted);
        assert!(report.utterance_count_match);
        assert!(report.speaker_mismatches.is_empty());
        assert!(!report.empty_adaptation);
    }

    #[test]
    fn structure_report_flags_renamed_speaker_and_empty() {
        let d = thanks_corpus().remove(0);
        let renamed = AdaptationRecord {
            dialog_id: d.id.clone(),
            model_id: "m".into(),
            culture_id: "india".into(),
            utterances: vec![
                Utterance::new("Riya", "Wear the kurta."),
                Utterance::new("Mary", "Okay."),
            ],
            raw_completion: String::new(),
        };
        let report = validate_adaptation_structure(&d, &renamed);
        assert_eq!(
            report.speaker_mismatches,
            vec![(0usize, "Angela".to_string(), "Riya".to_string())]
        );

        let empty = AdaptationRecord {
            dialog_id: d.id.clone(),
            model_id: "m".into(),
            culture_id: "india".into(),
            utterances: vec![],
            raw_completion: "I cannot adapt this.".into(),
        };
        let report = validate_adaptation_structure(&d, &empty);
        assert!(report.empty_adaptation);
        assert!(!report.utterance_count_match);
    }

    #[test]
    fn speaker_comparison_is_case_insensitive_after_trim() {
        let d = Dialog {
            id: "d".into(),
            utterances: vec![Utterance::new("Ross", "hi")],
        };
        let adapted = AdaptationRecord {
            dialog_id: "d".into(),
            model_id: "m".into(),
            culture_id: "c".into(),
            utterances: vec![Utterance::new("  ROSS ", "namaste")],
            raw_completion: String::new(),
        };
        assert!(validate_adaptation_structure(&d, &adapted).speaker_mismatches.is_empty());
    }

    #[test]
    fn stats_on_empty_corpus_are_zero() {
        let stats = corpus_stats(&[], &[]).unwrap();
        assert_eq!(stats.n_dialogs, 0);
        assert_eq!(stats.n_utterances, 0);
        assert_eq!(stats.n_speakers, 0);
        assert_eq!(stats.n_csi_occurrences, 0);
    }

    #[test]
    fn stats_count_categories() {
        let dialogs = thanks_corpus();
        let anns = vec![
            CsiAnnotation {
                dialog_id: "d1".into(),
                surface: "Thanksgiving".into(),
                category: CsiCategory::SocialCulture,
                foreignness: 3,
                occurrence_index: 0,
            },
            CsiAnnotation {
                dialog_id: "d1".into(),
                surface: "pizza".into(),
                category: CsiCategory::SocialCulture,
                foreignness: 1,
                occurrence_index: 0,
            },
        ];
        let stats = corpus_stats(&dialogs, &anns).unwrap();
        assert_eq!(stats.per_category[&CsiCategory::SocialCulture], 2);
        assert_eq!(stats.n_speakers, 2);
        assert_eq!(stats.n_csi_occurrences, 2);

        let dangling = vec![CsiAnnotation {
            dialog_id: "nope".into(),
            surface: "x".into(),
            category: CsiCategory::Ecology,
            foreignness: 2,
            occurrence_index: 0,
        }];
        assert!(matches!(
            corpus_stats(&dialogs, &dangling).unwrap_err(),
            CorpusError::DanglingDialogId { .. }
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_ordered() {
        let dialogs: Vec<Dialog> = (0..50)
            .map(|i| Dialog {
                id: format!("d{i:03}"),
                utterances: vec![Utterance::new("A", "x")],
            })
            .collect();
        let a = sample_dialog_ids(&dialogs, 10, 42);
        let b = sample_dialog_ids(&dialogs, 10, 42);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(a, sorted, "results come back in corpus order");
        assert_ne!(a, sample_dialog_ids(&dialogs, 10, 43));
    }

    prop_compose! {
        fn arb_utterance()(speaker in "[A-Za-z][A-Za-z ]{0,10}", text in "[ -~]{0,40}") -> Utterance {
            Utterance::new(speaker.trim().to_string() + "x", text)
        }
    }

    prop_compose! {
        fn arb_dialog(id: usize)(utterances in proptest::collection::vec(arb_utterance(), 1..8)) -> Dialog {
            let utterances = utterances
                .into_iter()
                .map(|u| if u.text.is_empty() { Utterance::new(u.speaker, "x") } else { u })
                .collect();
            Dialog { id: format!("d{id}"), utterances }
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_byte_identical(d in arb_dialog(7)) {
            let line = to_record_line(&d);
            let parsed =
                parse_dialog_corpus(Cursor::new(line.clone()), &LoadOptions::default()).unwrap();
            prop_assert_eq!(&parsed[0], &d);
            prop_assert_eq!(to_record_line(&parsed[0]), line);
        }

        #[test]
        fn stats_totals_equal_breakdown_sums(
            cats in proptest::collection::vec((0usize..9, 1u8..=3), 0..40)
        ) {
            let dialogs = vec![Dialog {
                id: "d1".into(),
                utterances: vec![Utterance::new("A", "x")],
            }];
            let anns: Vec<CsiAnnotation> = cats
                .iter()
                .enumerate()
                .map(|(i, (c, f))| CsiAnnotation {
                    dialog_id: "d1".into(),
                    surface: format!("s{i}"),
                    category: CsiCategory::ALL[*c],
                    foreignness: *f,
                    occurrence_index: 0,
                })
                .collect();
            let stats = corpus_stats(&dialogs, &anns).unwrap();
            prop_assert_eq!(stats.per_category.values().sum::<u64>(), stats.n_csi_occurrences);
            prop_assert_eq!(stats.per_foreignness.values().sum::<u64>(), stats.n_csi_occurrences);
        }
    }
}
