//! Pipeline orchestration for the adapt and evaluate commands.
//!
//! Stages run sequentially; within a stage, judge calls fan out across
//! threads up to `max_inflight` and results are merged back in input order,
//! so outputs are byte-identical across runs given the same cache. Every
//! intermediate is persisted as JSON lines under the output directory.

use std::collections::HashMap;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use adapteval::corpus::{
    corpus_stats, parse_adaptations, parse_csi_annotations, parse_dialog_corpus,
    validate_adaptation_structure, AdaptationRecord, AnnotationSet, CsiAnnotation, Dialog,
    LoadOptions, StructureReport,
};
use adapteval::judge::{
    client_for_endpoint, format_edit_line, generate_adaptation, parse_dialog_scores,
    parse_edit_list, parse_edit_scores, parse_strategy, render, CompletionBackend, DialogScores,
    Edit, EditScores, JudgeError, ResponseCache, RetryPolicy, RunCounters, Session, Strategy,
    TemplateId,
};
use adapteval::metrics::{
    aggregate_dialog_scores, aggregate_edit_scores, align_edits_to_csi, csi_edited_percentage,
    strategy_distribution, CsiEditReport, CsiOutcome, DialogAggregate, DialogAlignment,
    EditAggregate, StrategyDistribution,
};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::{model_slug, RunConfig};
use crate::manifest::RunManifest;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Corpus(#[from] adapteval::corpus::CorpusError),
    #[error("{0}")]
    Judge(#[from] JudgeError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("adaptations file {0} is missing; run `adapt` first")]
    MissingAdaptations(PathBuf),
    #[error("model '{model}' has no adaptations for dialog ids: {ids}")]
    MissingDialogs { model: String, ids: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// Bounded fan-out preserving input order: at most `max_inflight` items are
/// in flight at once, and result `i` always corresponds to item `i`.
pub fn parallel_map<T, R, F>(items: &[T], max_inflight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = max_inflight.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                *slots[i].lock().expect("result slot poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot poisoned").expect("worker filled every slot"))
        .collect()
}

/// Atomic line-oriented write: temp file then rename.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    {
        let mut file = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
        for line in lines {
            writeln!(file, "{line}").map_err(io_err(&tmp))?;
        }
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    let body = serde_json::to_string_pretty(value).expect("row types serialize");
    std::fs::write(&tmp, body).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row = serde_json::from_str(line).map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn jsonl<T: Serialize>(rows: &[T]) -> Vec<String> {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("row types serialize"))
        .collect()
}

/// Well-known output locations for one model.
pub struct ModelPaths {
    pub adaptations: PathBuf,
    pub structure: PathBuf,
    pub eval_dir: PathBuf,
}

impl ModelPaths {
    pub fn new(out_dir: &Path, model_id: &str) -> Self {
        let slug = model_slug(model_id);
        Self {
            adaptations: out_dir.join(format!("adaptations.{slug}.jsonl")),
            structure: out_dir.join(format!("structure.{slug}.jsonl")),
            eval_dir: out_dir.join(format!("eval.{slug}")),
        }
    }

    pub fn csi_report(&self) -> PathBuf {
        self.eval_dir.join("csi_report.json")
    }
    pub fn edits(&self) -> PathBuf {
        self.eval_dir.join("edits.jsonl")
    }
    pub fn edit_scores(&self) -> PathBuf {
        self.eval_dir.join("edit_scores.jsonl")
    }
    pub fn alignment(&self) -> PathBuf {
        self.eval_dir.join("alignment.jsonl")
    }
    pub fn strategies(&self) -> PathBuf {
        self.eval_dir.join("strategies.jsonl")
    }
    pub fn dialog_scores(&self) -> PathBuf {
        self.eval_dir.join("dialog_scores.jsonl")
    }
    pub fn aggregates(&self) -> PathBuf {
        self.eval_dir.join("aggregates.json")
    }
}

pub fn load_corpus(config: &RunConfig) -> Result<(Vec<Dialog>, AnnotationSet), PipelineError> {
    let options = LoadOptions {
        permissive: config.run.permissive,
        count_mode: config.run.count_mode,
    };
    let dialogs_file =
        std::fs::File::open(&config.corpus.dialogs).map_err(io_err(&config.corpus.dialogs))?;
    let dialogs = parse_dialog_corpus(BufReader::new(dialogs_file), &options)?;
    let annotations_file = std::fs::File::open(&config.corpus.annotations)
        .map_err(io_err(&config.corpus.annotations))?;
    let annotations = parse_csi_annotations(BufReader::new(annotations_file), &dialogs)?;
    Ok((dialogs, annotations))
}

/// `validate-corpus`: load, check, and print corpus statistics.
pub fn cmd_validate_corpus(config: &RunConfig, manifest: &mut RunManifest) -> Result<String, PipelineError> {
    let (dialogs, annotations) = load_corpus(config)?;
    let stats = corpus_stats(&dialogs, &annotations.annotations)?;
    for warning in &annotations.warnings {
        manifest.warnings.push(format!(
            "line {}: surface '{}' in dialog '{}': {:?}",
            warning.line, warning.surface, warning.dialog_id, warning.kind
        ));
    }
    let mut out = String::new();
    out.push_str(&format!("dialogs: {}\n", stats.n_dialogs));
    out.push_str(&format!("utterances: {}\n", stats.n_utterances));
    out.push_str(&format!("speakers: {}\n", stats.n_speakers));
    out.push_str(&format!("csi occurrences: {}\n", stats.n_csi_occurrences));
    for (category, count) in &stats.per_category {
        out.push_str(&format!("  category {category}: {count}\n"));
    }
    for (level, count) in &stats.per_foreignness {
        out.push_str(&format!("  foreignness {level}: {count}\n"));
    }
    out.push_str(&format!("annotation warnings: {}\n", annotations.warnings.len()));
    Ok(out)
}

/// `adapt`: one adaptation per (dialog, adapter model), with structure
/// reports alongside. Backend failures leave partial output and are
/// recorded as hard errors.
pub fn cmd_adapt(config: &RunConfig, manifest: &mut RunManifest) -> Result<(), PipelineError> {
    let (dialogs, _) = manifest.time_stage("load_corpus", |_| load_corpus(config))?;
    if dialogs.is_empty() {
        manifest.warnings.push("corpus is empty; nothing to adapt".to_string());
    }
    let cache = ResponseCache::open(&config.run.cache_dir)?;
    let retry = RetryPolicy { max_retries: config.run.retries, ..Default::default() };
    let counters = RunCounters::default();

    for backend in &config.adapters {
        let stage = format!("adapt:{}", backend.model_id);
        let client = client_for_endpoint(backend)?;
        let session = Session::new(backend, client.as_ref(), Some(&cache), retry, &counters);
        let results = manifest.time_stage(&stage, |_| {
            parallel_map(&dialogs, config.run.max_inflight, |dialog| {
                generate_adaptation(&session, dialog, &config.culture)
            })
        });

        let paths = ModelPaths::new(&config.run.out_dir, &backend.model_id);
        let mut records: Vec<AdaptationRecord> = Vec::new();
        let mut reports: Vec<StructureReport> = Vec::new();
        for (dialog, result) in dialogs.iter().zip(results) {
            match result {
                Ok(record) => {
                    reports.push(validate_adaptation_structure(dialog, &record));
                    records.push(record);
                }
                Err(e) => {
                    manifest.hard_errors.push(format!(
                        "adapt {} dialog {}: {e}",
                        backend.model_id, dialog.id
                    ));
                }
            }
        }
        write_lines(&paths.adaptations, &jsonl(&records))?;
        write_lines(&paths.structure, &jsonl(&reports))?;
    }
    manifest.counters = counters.snapshot();
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionRow {
    pub dialog_id: String,
    pub utterance_index: usize,
    pub edits: Vec<Edit>,
    pub residue: Vec<String>,
    pub requeried: bool,
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditScoreRow {
    pub dialog_id: String,
    pub utterance_index: usize,
    pub ordinal: usize,
    pub edit: Edit,
    pub scores: Option<EditScores>,
    pub requeried: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyRowKind {
    /// Aligned CSI edit classified by the judge.
    Classified,
    /// CSI still present and unmatched: assigned by alignment, not the judge.
    Preservation,
    /// CSI edited away but no extracted edit matched; no strategy guessed.
    Unaligned,
    /// Non-CSI edit whose target matches a target-culture pattern.
    Creation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyRow {
    pub dialog_id: String,
    pub kind: StrategyRowKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occurrence_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit: Option<Edit>,
    pub strategy: Option<Strategy>,
    pub requeried: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DialogScoreRow {
    pub dialog_id: String,
    pub scores: Option<DialogScores>,
    pub requeried: bool,
}

/// Everything `report` needs for one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregatesFile {
    pub model_id: String,
    pub threshold: u32,
    pub overall_pct_edited: Option<f64>,
    pub n_csi_occurrences: u64,
    pub n_csi_found: u64,
    pub edits: EditAggregate,
    pub dialogs: DialogAggregate,
    pub strategies: StrategyDistribution,
    pub n_unaligned_csi: u64,
}

/// Terminal failure of one judged call.
enum JudgeFailure {
    /// The backend never produced a completion; a hard error.
    Transport(String),
    /// Both attempts completed but neither parsed; recorded as a null.
    Parse(String),
}

/// Outcome of one judged call: parsed value, whether a re-query happened,
/// and the terminal failure if both attempts were unusable.
struct Judged<T> {
    value: Option<T>,
    requeried: bool,
    failure: Option<JudgeFailure>,
}

fn is_parse_failure(err: &JudgeError) -> bool {
    matches!(
        err,
        JudgeError::Unparseable { .. }
            | JudgeError::MissingKey(_)
            | JudgeError::OutOfRange { .. }
            | JudgeError::MissingAspect(_)
            | JudgeError::NonIntegerScore { .. }
    )
}

/// Completes `prompt` and parses it, re-querying exactly once on an
/// unparseable or out-of-range response, then recording a null.
fn complete_and_parse<T>(
    session: &Session<'_>,
    prompt: &str,
    parse: impl Fn(&str) -> Result<T, JudgeError>,
) -> Judged<T> {
    let first = match session.complete(prompt, 1) {
        Ok(text) => text,
        Err(e) => {
            return Judged {
                value: None,
                requeried: false,
                failure: Some(JudgeFailure::Transport(e.to_string())),
            }
        }
    };
    match parse(&first) {
        Ok(value) => Judged { value: Some(value), requeried: false, failure: None },
        Err(e) if is_parse_failure(&e) => {
            session.counters.requeries.fetch_add(1, Ordering::Relaxed);
            let second = match session.complete(prompt, 2) {
                Ok(text) => text,
                Err(e) => {
                    return Judged {
                        value: None,
                        requeried: true,
                        failure: Some(JudgeFailure::Transport(e.to_string())),
                    }
                }
            };
            match parse(&second) {
                Ok(value) => Judged { value: Some(value), requeried: true, failure: None },
                Err(e2) => {
                    session.counters.null_scores.fetch_add(1, Ordering::Relaxed);
                    Judged {
                        value: None,
                        requeried: true,
                        failure: Some(JudgeFailure::Parse(e2.to_string())),
                    }
                }
            }
        }
        Err(e) => Judged {
            value: None,
            requeried: false,
            failure: Some(JudgeFailure::Transport(e.to_string())),
        },
    }
}

/// Routes a judged call's terminal failure: transport failures are hard
/// errors (partial output, nonzero exit), parse failures are nulls already
/// counted by the session.
fn record_failure(manifest: &mut RunManifest, context_label: &str, failure: Option<JudgeFailure>) {
    match failure {
        Some(JudgeFailure::Transport(message)) => {
            manifest.hard_errors.push(format!("{context_label}: {message}"));
        }
        Some(JudgeFailure::Parse(message)) => {
            manifest.warnings.push(format!("{context_label}: null score ({message})"));
        }
        None => {}
    }
}

struct EvalContext<'a> {
    config: &'a RunConfig,
    dialogs: &'a [Dialog],
    dialog_by_id: HashMap<&'a str, &'a Dialog>,
    annotations: &'a [CsiAnnotation],
}

/// `evaluate`: structure validation, % CSI edited, edit extraction, edit
/// scoring, CSI alignment, strategy classification, dialog scoring, and
/// aggregation, in that order, each persisted under `eval.<model>/`.
pub fn cmd_evaluate(config: &RunConfig, manifest: &mut RunManifest) -> Result<(), PipelineError> {
    let (dialogs, annotation_set) = manifest.time_stage("load_corpus", |_| load_corpus(config))?;
    let context = EvalContext {
        config,
        dialogs: &dialogs,
        dialog_by_id: dialogs.iter().map(|d| (d.id.as_str(), d)).collect(),
        annotations: &annotation_set.annotations,
    };
    let cache = ResponseCache::open(&config.run.cache_dir)?;
    let retry = RetryPolicy { max_retries: config.run.retries, ..Default::default() };
    let counters = RunCounters::default();
    let judge_client = client_for_endpoint(&config.judge)?;
    let session =
        Session::new(&config.judge, judge_client.as_ref(), Some(&cache), retry, &counters);

    for backend in &config.adapters {
        evaluate_model(&context, backend, &session, manifest)?;
    }
    manifest.counters = counters.snapshot();
    Ok(())
}

fn evaluate_model(
    context: &EvalContext<'_>,
    backend: &CompletionBackend,
    session: &Session<'_>,
    manifest: &mut RunManifest,
) -> Result<(), PipelineError> {
    let config = context.config;
    let model = backend.model_id.as_str();
    let paths = ModelPaths::new(&config.run.out_dir, model);
    if !paths.adaptations.exists() {
        return Err(PipelineError::MissingAdaptations(paths.adaptations.clone()));
    }
    let adaptations_file =
        std::fs::File::open(&paths.adaptations).map_err(io_err(&paths.adaptations))?;
    let adaptations = parse_adaptations(BufReader::new(adaptations_file))?;
    let adaptation_by_id: HashMap<&str, &AdaptationRecord> =
        adaptations.iter().map(|a| (a.dialog_id.as_str(), a)).collect();

    let missing: Vec<&str> = context
        .dialogs
        .iter()
        .map(|d| d.id.as_str())
        .filter(|id| !adaptation_by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::MissingDialogs {
            model: model.to_string(),
            ids: missing.join(", "),
        });
    }

    // 1. structure validation
    manifest.time_stage(&format!("structure:{model}"), |_| -> Result<(), PipelineError> {
        let reports: Vec<StructureReport> = context
            .dialogs
            .iter()
            .map(|d| validate_adaptation_structure(d, adaptation_by_id[d.id.as_str()]))
            .collect();
        write_lines(&paths.structure, &jsonl(&reports))
    })?;

    // 2. % CSI edited
    let csi_report = manifest.time_stage(&format!("csi_edited:{model}"), |m| {
        let report =
            csi_edited_percentage(context.annotations, &adaptations, config.run.csi_match_threshold);
        for warning in &report.coverage_warnings {
            m.warnings.push(format!("{model}: {warning}"));
        }
        report
    });
    write_json(&paths.csi_report(), &csi_report)?;

    // 3. edit extraction, per index-aligned utterance pair up to the
    // shorter length; the tail shows up in the structure report's count
    // mismatch
    let extraction_rows = manifest.time_stage(&format!("extract_edits:{model}"), |m| {
        let mut pairs: Vec<(&Dialog, &AdaptationRecord, usize)> = Vec::new();
        for dialog in context.dialogs {
            let adaptation = adaptation_by_id[dialog.id.as_str()];
            let n = dialog.utterances.len().min(adaptation.utterances.len());
            for index in 0..n {
                pairs.push((dialog, adaptation, index));
            }
        }
        let results = parallel_map(&pairs, config.run.max_inflight, |(dialog, adaptation, index)| {
            extract_pair(session, dialog, adaptation, *index)
        });
        let mut rows = Vec::with_capacity(results.len());
        for (row, failure) in results {
            record_failure(
                m,
                &format!(
                    "{model}: extract dialog {} utterance {}",
                    row.dialog_id, row.utterance_index
                ),
                failure,
            );
            rows.push(row);
        }
        rows
    });
    write_lines(&paths.edits(), &jsonl(&extraction_rows))?;

    // 4. edit scoring
    let edit_refs: Vec<(String, Edit, usize)> = extraction_rows
        .iter()
        .flat_map(|row| {
            row.edits
                .iter()
                .enumerate()
                .map(|(ordinal, edit)| (row.dialog_id.clone(), edit.clone(), ordinal))
        })
        .collect();
    let score_rows = manifest.time_stage(&format!("score_edits:{model}"), |m| {
        let results = parallel_map(&edit_refs, config.run.max_inflight, |(dialog_id, edit, ordinal)| {
            let dialog = context.dialog_by_id[dialog_id.as_str()];
            let adaptation = adaptation_by_id[dialog_id.as_str()];
            let judged = complete_and_parse(
                session,
                &render(
                    TemplateId::ScoreEdit,
                    &[
                        ("original_dialog", &dialog.as_prompt_block()),
                        ("adapted_dialog", &adaptation.as_prompt_block()),
                        ("edit", &format_edit_line(edit)),
                    ],
                )
                .expect("score_edit bindings are complete"),
                parse_edit_scores,
            );
            let row = EditScoreRow {
                dialog_id: dialog_id.clone(),
                utterance_index: edit.utterance_index,
                ordinal: *ordinal,
                edit: edit.clone(),
                scores: judged.value,
                requeried: judged.requeried,
            };
            (row, judged.failure)
        });
        let mut rows = Vec::with_capacity(results.len());
        for (row, failure) in results {
            record_failure(
                m,
                &format!(
                    "{model}: score edit dialog {} utterance {} #{}",
                    row.dialog_id, row.utterance_index, row.ordinal
                ),
                failure,
            );
            rows.push(row);
        }
        rows
    });
    write_lines(&paths.edit_scores(), &jsonl(&score_rows))?;

    // 5. CSI alignment against the per-occurrence found decisions
    let alignments = manifest.time_stage(&format!("align:{model}"), |_| {
        align_model(context, &extraction_rows, &csi_report)
    });
    write_lines(&paths.alignment(), &jsonl(&alignments))?;

    // 6. strategy classification for aligned CSI edits
    let strategy_rows = manifest.time_stage(&format!("classify:{model}"), |m| {
        classify_model(context, session, &adaptation_by_id, &extraction_rows, &alignments, &csi_report, m)
    });
    write_lines(&paths.strategies(), &jsonl(&strategy_rows))?;

    // 7. dialog scoring
    let dialog_rows = manifest.time_stage(&format!("score_dialogs:{model}"), |m| {
        let results = parallel_map(context.dialogs, config.run.max_inflight, |dialog| {
            let adaptation = adaptation_by_id[dialog.id.as_str()];
            let judged = complete_and_parse(
                session,
                &render(
                    TemplateId::ScoreDialog,
                    &[
                        ("original_dialog", &dialog.as_prompt_block()),
                        ("adapted_dialog", &adaptation.as_prompt_block()),
                    ],
                )
                .expect("score_dialog bindings are complete"),
                parse_dialog_scores,
            );
            let row = DialogScoreRow {
                dialog_id: dialog.id.clone(),
                scores: judged.value,
                requeried: judged.requeried,
            };
            (row, judged.failure)
        });
        let mut rows = Vec::with_capacity(results.len());
        for (row, failure) in results {
            record_failure(m, &format!("{model}: score dialog {}", row.dialog_id), failure);
            rows.push(row);
        }
        rows
    });
    write_lines(&paths.dialog_scores(), &jsonl(&dialog_rows))?;

    // 8. aggregation
    let aggregates = manifest.time_stage(&format!("aggregate:{model}"), |m| {
        let edit_scores: Vec<Option<EditScores>> =
            score_rows.iter().map(|r| r.scores).collect();
        let dialog_scores: Vec<Option<DialogScores>> =
            dialog_rows.iter().map(|r| r.scores.clone()).collect();
        let strategies: Vec<Strategy> =
            strategy_rows.iter().filter_map(|r| r.strategy).collect();
        let n_unaligned = strategy_rows
            .iter()
            .filter(|r| r.kind == StrategyRowKind::Unaligned)
            .count() as u64;
        let dialog_aggregate = aggregate_dialog_scores(&dialog_scores);
        if dialog_aggregate.n_dialogs == 0 && !context.dialogs.is_empty() {
            m.warnings
                .push(format!("{model}: every dialog score was null; aggregates are undefined"));
        }
        AggregatesFile {
            model_id: model.to_string(),
            threshold: config.run.csi_match_threshold,
            overall_pct_edited: csi_report.overall_pct_edited(),
            n_csi_occurrences: csi_report.n_occurrences,
            n_csi_found: csi_report.n_found,
            edits: aggregate_edit_scores(&edit_scores),
            dialogs: dialog_aggregate,
            strategies: strategy_distribution(&strategies),
            n_unaligned_csi: n_unaligned,
        }
    });
    write_json(&paths.aggregates(), &aggregates)?;
    Ok(())
}

fn extract_pair(
    session: &Session<'_>,
    dialog: &Dialog,
    adaptation: &AdaptationRecord,
    index: usize,
) -> (ExtractionRow, Option<JudgeFailure>) {
    let prompt = render(
        TemplateId::ExtractEdits,
        &[
            ("original_utterance", &dialog.utterances[index].to_string()),
            ("adapted_utterance", &adaptation.utterances[index].to_string()),
        ],
    )
    .expect("extract_edits bindings are complete");
    let judged = complete_and_parse(session, &prompt, |raw| parse_edit_list(raw, index));
    let row = match judged.value {
        Some(list) => ExtractionRow {
            dialog_id: dialog.id.clone(),
            utterance_index: index,
            // drop no-op edits whose source and target normalize identically
            edits: list.edits.into_iter().filter(|e| !e.is_noop()).collect(),
            residue: list.residue,
            requeried: judged.requeried,
            failed: false,
        },
        None => ExtractionRow {
            dialog_id: dialog.id.clone(),
            utterance_index: index,
            edits: Vec::new(),
            residue: Vec::new(),
            requeried: judged.requeried,
            failed: true,
        },
    };
    (row, judged.failure)
}

/// Eligible annotations of one dialog paired with their found flags, in
/// annotation order.
fn eligible_with_found<'a>(
    context: &'a EvalContext<'_>,
    csi_report: &CsiEditReport,
    dialog_id: &str,
) -> (Vec<CsiAnnotation>, Vec<bool>) {
    let decided: HashMap<(&str, &str, u32), bool> = csi_report
        .per_csi
        .iter()
        .map(|d| ((d.dialog_id.as_str(), d.surface.as_str(), d.occurrence_index), !d.edited))
        .collect();
    let mut annotations = Vec::new();
    let mut found = Vec::new();
    for a in context.annotations.iter().filter(|a| a.dialog_id == dialog_id) {
        if let Some(&present) =
            decided.get(&(a.dialog_id.as_str(), a.surface.as_str(), a.occurrence_index))
        {
            annotations.push(a.clone());
            found.push(present);
        }
    }
    (annotations, found)
}

fn align_model(
    context: &EvalContext<'_>,
    extraction_rows: &[ExtractionRow],
    csi_report: &CsiEditReport,
) -> Vec<DialogAlignment> {
    let mut edits_by_dialog: HashMap<&str, Vec<Edit>> = HashMap::new();
    for row in extraction_rows {
        edits_by_dialog
            .entry(row.dialog_id.as_str())
            .or_default()
            .extend(row.edits.iter().cloned());
    }
    context
        .dialogs
        .iter()
        .map(|dialog| {
            let (annotations, found) = eligible_with_found(context, csi_report, &dialog.id);
            let edits = edits_by_dialog.get(dialog.id.as_str()).cloned().unwrap_or_default();
            align_edits_to_csi(
                &dialog.id,
                &edits,
                &annotations,
                &found,
                context.config.run.csi_match_threshold,
                &context.config.culture.target_patterns,
            )
        })
        .collect()
}

fn classify_model(
    context: &EvalContext<'_>,
    session: &Session<'_>,
    adaptation_by_id: &HashMap<&str, &AdaptationRecord>,
    extraction_rows: &[ExtractionRow],
    alignments: &[DialogAlignment],
    csi_report: &CsiEditReport,
    manifest: &mut RunManifest,
) -> Vec<StrategyRow> {
    let mut edits_by_dialog: HashMap<&str, Vec<Edit>> = HashMap::new();
    for row in extraction_rows {
        edits_by_dialog
            .entry(row.dialog_id.as_str())
            .or_default()
            .extend(row.edits.iter().cloned());
    }

    // collect the judge calls first so they can fan out together
    struct Pending {
        dialog_id: String,
        surface: String,
        occurrence_index: u32,
        edit: Edit,
    }
    let mut pending: Vec<Pending> = Vec::new();
    let mut immediate: Vec<StrategyRow> = Vec::new();
    for alignment in alignments {
        // the same filter alignment consumed, so outcomes pair up correctly
        let (annotations, _) = eligible_with_found(context, csi_report, &alignment.dialog_id);
        let edits = edits_by_dialog.get(alignment.dialog_id.as_str()).cloned().unwrap_or_default();
        for (annotation, outcome) in annotations.iter().zip(&alignment.csi_outcomes) {
            match outcome {
                CsiOutcome::AlignedToEdit { edit_index, .. } => pending.push(Pending {
                    dialog_id: alignment.dialog_id.clone(),
                    surface: annotation.surface.clone(),
                    occurrence_index: annotation.occurrence_index,
                    edit: edits[*edit_index].clone(),
                }),
                CsiOutcome::Preserved => immediate.push(StrategyRow {
                    dialog_id: alignment.dialog_id.clone(),
                    kind: StrategyRowKind::Preservation,
                    surface: Some(annotation.surface.clone()),
                    occurrence_index: Some(annotation.occurrence_index),
                    edit: None,
                    strategy: Some(Strategy::Preservation),
                    requeried: false,
                }),
                CsiOutcome::Unaligned => immediate.push(StrategyRow {
                    dialog_id: alignment.dialog_id.clone(),
                    kind: StrategyRowKind::Unaligned,
                    surface: Some(annotation.surface.clone()),
                    occurrence_index: Some(annotation.occurrence_index),
                    edit: None,
                    strategy: None,
                    requeried: false,
                }),
            }
        }
        for &edit_index in &alignment.creation_candidates {
            immediate.push(StrategyRow {
                dialog_id: alignment.dialog_id.clone(),
                kind: StrategyRowKind::Creation,
                surface: None,
                occurrence_index: None,
                edit: Some(edits[edit_index].clone()),
                strategy: Some(Strategy::Creation),
                requeried: false,
            });
        }
    }

    let results = parallel_map(&pending, context.config.run.max_inflight, |item| {
        let dialog = context.dialog_by_id[item.dialog_id.as_str()];
        let adaptation = adaptation_by_id[item.dialog_id.as_str()];
        let judged = complete_and_parse(
            session,
            &render(
                TemplateId::ClassifyStrategy,
                &[
                    ("original_dialog", &dialog.as_prompt_block()),
                    ("adapted_dialog", &adaptation.as_prompt_block()),
                    ("edit", &format_edit_line(&item.edit)),
                ],
            )
            .expect("classify_strategy bindings are complete"),
            parse_strategy,
        );
        let row = StrategyRow {
            dialog_id: item.dialog_id.clone(),
            kind: StrategyRowKind::Classified,
            surface: Some(item.surface.clone()),
            occurrence_index: Some(item.occurrence_index),
            edit: Some(item.edit.clone()),
            strategy: judged.value,
            requeried: judged.requeried,
        };
        (row, judged.failure)
    });
    let mut classified = Vec::with_capacity(results.len());
    for (row, failure) in results {
        record_failure(
            manifest,
            &format!(
                "classify dialog {} surface {:?}",
                row.dialog_id,
                row.surface.as_deref().unwrap_or("")
            ),
            failure,
        );
        classified.push(row);
    }

    fn kind_ordinal(kind: StrategyRowKind) -> u8 {
        match kind {
            StrategyRowKind::Classified => 0,
            StrategyRowKind::Preservation => 1,
            StrategyRowKind::Unaligned => 2,
            StrategyRowKind::Creation => 3,
        }
    }
    let mut rows = classified;
    rows.extend(immediate);
    rows.sort_by(|a, b| {
        (&a.dialog_id, kind_ordinal(a.kind), &a.surface, a.occurrence_index).cmp(&(
            &b.dialog_id,
            kind_ordinal(b.kind),
            &b.surface,
            b.occurrence_index,
        ))
    });
    rows
}
