//! Human-vs-judge rank correlation and inter-aspect correlation matrices.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adapteval::judge::DIALOG_ASPECTS;
use adapteval::metrics::format_fixed;
use adapteval::stats::{
    correlation_matrix, kendall_tau_b_with, MatrixCell, PValueMethod, StatsError, TauResult,
};
use serde::Deserialize;

use crate::config::{model_slug, RunConfig};
use crate::manifest::RunManifest;
use crate::pipeline::{read_jsonl, write_lines, DialogScoreRow, ModelPaths, PipelineError};

#[derive(Debug, thiserror::Error)]
pub enum CorrelateError {
    #[error("{0}")]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Stats(#[from] StatsError),
    #[error("human ratings csv {path}: {message}")]
    BadCsv { path: PathBuf, message: String },
    #[error("no scored dialogs overlap the human-rated ones for model '{0}'")]
    NoOverlap(String),
    #[error("--model is required when the config lists several adapters")]
    AmbiguousModel,
    #[error("model '{0}' is not in the config's adapter list")]
    UnknownModel(String),
}

#[derive(Debug, Deserialize)]
struct HumanRow {
    dialog_id: String,
    #[allow(dead_code)]
    rater_id: String,
    naturalness: u8,
    localisation: u8,
    offensiveness: u8,
    stereotypical: u8,
    content_preservation: u8,
}

/// Per-dialog mean across raters for each aspect, keyed by dialog id.
fn load_human_averages(
    path: &Path,
) -> Result<BTreeMap<String, [f64; 5]>, CorrelateError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CorrelateError::BadCsv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut sums: BTreeMap<String, ([f64; 5], u32)> = BTreeMap::new();
    for row in reader.deserialize::<HumanRow>() {
        let row = row.map_err(|e| CorrelateError::BadCsv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        for (name, value) in DIALOG_ASPECTS.iter().zip([
            row.naturalness,
            row.localisation,
            row.offensiveness,
            row.stereotypical,
            row.content_preservation,
        ]) {
            if !(1..=5).contains(&value) {
                return Err(CorrelateError::BadCsv {
                    path: path.to_path_buf(),
                    message: format!(
                        "dialog {} rater {}: {name} score {value} outside 1..=5",
                        row.dialog_id, row.rater_id
                    ),
                });
            }
        }
        let entry = sums.entry(row.dialog_id.clone()).or_insert(([0.0; 5], 0));
        entry.0[0] += row.naturalness as f64;
        entry.0[1] += row.localisation as f64;
        entry.0[2] += row.offensiveness as f64;
        entry.0[3] += row.stereotypical as f64;
        entry.0[4] += row.content_preservation as f64;
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(id, (totals, n))| (id, totals.map(|t| t / n as f64)))
        .collect())
}

/// Human-vs-judge tau for one aspect; `None` when tau is undefined (a
/// constant side).
pub struct AspectCorrelation {
    pub aspect: &'static str,
    pub result: Option<TauResult>,
    pub note: Option<String>,
}

pub struct CorrelationOutput {
    pub model_id: String,
    pub aspects: Vec<AspectCorrelation>,
    pub matrices: Vec<(String, Vec<Vec<MatrixCell>>)>,
}

pub fn resolve_model(config: &RunConfig, requested: Option<&str>) -> Result<String, CorrelateError> {
    match requested {
        Some(id) => {
            if config.adapters.iter().any(|b| b.model_id == id) {
                Ok(id.to_string())
            } else {
                Err(CorrelateError::UnknownModel(id.to_string()))
            }
        }
        None if config.adapters.len() == 1 => Ok(config.adapters[0].model_id.clone()),
        None => Err(CorrelateError::AmbiguousModel),
    }
}

fn judge_columns(rows: &[DialogScoreRow]) -> BTreeMap<String, [f64; 5]> {
    rows.iter()
        .filter_map(|row| {
            row.scores.as_ref().map(|s| {
                (
                    row.dialog_id.clone(),
                    [
                        s.naturalness as f64,
                        s.localisation as f64,
                        s.offensiveness as f64,
                        s.stereotypical as f64,
                        s.content_preservation as f64,
                    ],
                )
            })
        })
        .collect()
}

/// `correlate`: a per-aspect human-vs-judge correlation table for one model
/// plus inter-aspect correlation matrices for every evaluated model.
pub fn cmd_correlate(
    config: &RunConfig,
    human_csv: &Path,
    requested_model: Option<&str>,
    manifest: &mut RunManifest,
) -> Result<CorrelationOutput, CorrelateError> {
    let model = resolve_model(config, requested_model)?;
    let human = manifest.time_stage("load_human_ratings", |_| load_human_averages(human_csv))?;

    let paths = ModelPaths::new(&config.run.out_dir, &model);
    let rows: Vec<DialogScoreRow> = read_jsonl(&paths.dialog_scores())?;
    let judge = judge_columns(&rows);

    let overlap: Vec<&String> = human.keys().filter(|id| judge.contains_key(*id)).collect();
    if overlap.is_empty() {
        return Err(CorrelateError::NoOverlap(model));
    }
    let method = if config.run.exact_p_values {
        PValueMethod::ExactPermutation
    } else {
        PValueMethod::NormalApproximation
    };

    let mut aspects = Vec::new();
    for (i, aspect) in DIALOG_ASPECTS.iter().enumerate() {
        let human_vec: Vec<f64> = overlap.iter().map(|id| human[*id][i]).collect();
        let judge_vec: Vec<f64> = overlap.iter().map(|id| judge[*id][i]).collect();
        match kendall_tau_b_with(&human_vec, &judge_vec, method) {
            Ok(result) => aspects.push(AspectCorrelation { aspect, result: Some(result), note: None }),
            Err(e @ StatsError::UndefinedTau(_)) => aspects.push(AspectCorrelation {
                aspect,
                result: None,
                note: Some(e.to_string()),
            }),
            Err(e) => return Err(e.into()),
        }
    }

    // inter-aspect matrices over every model with scored dialogs
    let mut matrices = Vec::new();
    for backend in &config.adapters {
        let paths = ModelPaths::new(&config.run.out_dir, &backend.model_id);
        let path = paths.dialog_scores();
        if !path.exists() {
            manifest
                .warnings
                .push(format!("{}: no dialog scores; skipping its matrix", backend.model_id));
            continue;
        }
        let rows: Vec<DialogScoreRow> = read_jsonl(&path)?;
        let scored = judge_columns(&rows);
        if scored.len() < 2 {
            manifest.warnings.push(format!(
                "{}: fewer than 2 scored dialogs; skipping its matrix",
                backend.model_id
            ));
            continue;
        }
        let columns: Vec<(String, Vec<f64>)> = DIALOG_ASPECTS
            .iter()
            .enumerate()
            .map(|(i, aspect)| {
                (aspect.to_string(), scored.values().map(|v| v[i]).collect::<Vec<f64>>())
            })
            .collect();
        matrices.push((backend.model_id.clone(), correlation_matrix(&columns, config.run.significance_level)?));
    }

    let output = CorrelationOutput { model_id: model, aspects, matrices };
    write_correlation_files(config, &output, method)?;
    Ok(output)
}

fn write_correlation_files(
    config: &RunConfig,
    output: &CorrelationOutput,
    method: PValueMethod,
) -> Result<(), PipelineError> {
    let dir = config.run.out_dir.join("correlate");

    let mut csv_lines = vec!["aspect,tau,p_value,n,band,significant,method".to_string()];
    for a in &output.aspects {
        match &a.result {
            Some(r) => csv_lines.push(format!(
                "{},{},{},{},{},{},{}",
                a.aspect,
                format_fixed(r.tau, 2),
                format_fixed(r.p_value, 4),
                r.n,
                r.band,
                r.p_value < config.run.significance_level,
                r.method,
            )),
            None => csv_lines.push(format!("{},undefined,,,,,{method}", a.aspect)),
        }
    }
    write_lines(&dir.join("correlation.csv"), &csv_lines)?;

    let mut md = String::new();
    md.push_str("# Human vs judge correlation\n\n");
    md.push_str(&format!("Model: {}\n\n", output.model_id));
    md.push_str("| Aspect | Kendall tau | p-value | n | band |\n");
    md.push_str("|---|---|---|---|---|\n");
    for a in &output.aspects {
        match &a.result {
            Some(r) => md.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                a.aspect,
                format_fixed(r.tau, 2),
                format_fixed(r.p_value, 4),
                r.n,
                r.band
            )),
            None => md.push_str(&format!(
                "| {} | undefined | - | - | {} |\n",
                a.aspect,
                a.note.as_deref().unwrap_or("-")
            )),
        }
    }
    md.push_str(&format!(
        "\np-values: {method}; significance level {}.\n",
        config.run.significance_level
    ));
    for (model, matrix) in &output.matrices {
        md.push_str(&format!("\n## Aspect correlation matrix: {model}\n\n"));
        md.push_str(&render_matrix_markdown(matrix));
        let csv = matrix_csv(matrix);
        write_lines(&dir.join(format!("matrix.{}.csv", model_slug(model))), &csv)?;
    }
    std::fs::write(dir.join("correlation.md"), md).map_err(|source| PipelineError::Io {
        path: dir.join("correlation.md"),
        source,
    })?;
    Ok(())
}

pub fn render_matrix_markdown(matrix: &[Vec<MatrixCell>]) -> String {
    let mut md = String::new();
    md.push_str("| |");
    for cell in &matrix[0] {
        md.push_str(&format!(" {} |", cell.col));
    }
    md.push('\n');
    md.push_str("|---|");
    for _ in &matrix[0] {
        md.push_str("---|");
    }
    md.push('\n');
    for row in matrix {
        md.push_str(&format!("| {} |", row[0].row));
        for cell in row {
            match &cell.result {
                Some(r) => {
                    let star = if cell.significant { "*" } else { "" };
                    md.push_str(&format!(" {}{star} |", format_fixed(r.tau, 2)));
                }
                None => md.push_str(" n/a |"),
            }
        }
        md.push('\n');
    }
    md.push_str("\n`*` marks cells significant at the configured level.\n");
    md
}

fn matrix_csv(matrix: &[Vec<MatrixCell>]) -> Vec<String> {
    let mut lines = vec!["row,col,tau,p_value,significant".to_string()];
    for row in matrix {
        for cell in row {
            match &cell.result {
                Some(r) => lines.push(format!(
                    "{},{},{},{},{}",
                    cell.row,
                    cell.col,
                    format_fixed(r.tau, 4),
                    format_fixed(r.p_value, 6),
                    cell.significant
                )),
                None => lines.push(format!("{},{},undefined,,false", cell.row, cell.col)),
            }
        }
    }
    lines
}
