//! Report emission: a Markdown summary plus plotting-ready CSVs covering
//! edit-level aggregates, dialog-level aggregates, % CSI edited breakdowns,
//! strategy distributions, and aspect correlation matrices.

use std::path::PathBuf;

use adapteval::judge::{Strategy, DIALOG_ASPECTS};
use adapteval::metrics::{format_fixed, CsiEditReport, EditAggregate};
use adapteval::stats::correlation_matrix;
use serde_json::from_str;

use crate::config::{model_slug, RunConfig};
use crate::correlate::render_matrix_markdown;
use crate::manifest::RunManifest;
use crate::pipeline::{read_jsonl, write_lines, AggregatesFile, DialogScoreRow, ModelPaths, PipelineError};

/// One model's edit-level score cell in the summary table:
/// `correctness% / avg localisation / loc%(0, 1, 2) / offensiveness%`.
/// Correctness, average localisation, and offensiveness render at 2
/// decimals; the distribution renders at 1, matching the published layout.
pub fn format_edit_aggregate_row(agg: &EditAggregate) -> String {
    match (
        agg.pct_correct,
        agg.avg_localisation,
        agg.localisation_distribution,
        agg.pct_offensive,
    ) {
        (Some(correct), Some(avg), Some((p0, p1, p2)), Some(offensive)) => format!(
            "{} / {} / {}, {}, {} / {}",
            format_fixed(correct, 2),
            format_fixed(avg, 2),
            format_fixed(p0, 1),
            format_fixed(p1, 1),
            format_fixed(p2, 1),
            format_fixed(offensive, 2),
        ),
        _ => "n/a (no scored edits)".to_string(),
    }
}

fn opt_fixed(value: Option<f64>, decimals: u32) -> String {
    value.map_or_else(|| "n/a".to_string(), |v| format_fixed(v, decimals))
}

struct ModelData {
    model_id: String,
    aggregates: AggregatesFile,
    csi: CsiEditReport,
    dialog_scores: Vec<DialogScoreRow>,
}

fn load_model_data(config: &RunConfig) -> Result<Vec<ModelData>, PipelineError> {
    let mut out = Vec::new();
    for backend in &config.adapters {
        let paths = ModelPaths::new(&config.run.out_dir, &backend.model_id);
        let aggregates_path = paths.aggregates();
        let aggregates_raw = std::fs::read_to_string(&aggregates_path)
            .map_err(|source| PipelineError::Io { path: aggregates_path.clone(), source })?;
        let aggregates: AggregatesFile = from_str(&aggregates_raw).map_err(|e| PipelineError::Io {
            path: aggregates_path.clone(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?;
        let csi_path = paths.csi_report();
        let csi_raw = std::fs::read_to_string(&csi_path)
            .map_err(|source| PipelineError::Io { path: csi_path.clone(), source })?;
        let csi: CsiEditReport = from_str(&csi_raw).map_err(|e| PipelineError::Io {
            path: csi_path,
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?;
        let dialog_scores = read_jsonl(&paths.dialog_scores())?;
        out.push(ModelData { model_id: backend.model_id.clone(), aggregates, csi, dialog_scores });
    }
    Ok(out)
}

/// `report`: renders `report/report.md` and the CSV bundle from the
/// persisted evaluation outputs.
pub fn cmd_report(config: &RunConfig, manifest: &mut RunManifest) -> Result<PathBuf, PipelineError> {
    let models = manifest.time_stage("load_outputs", |_| load_model_data(config))?;
    let dir = config.run.out_dir.join("report");
    std::fs::create_dir_all(&dir)
        .map_err(|source| PipelineError::Io { path: dir.clone(), source })?;

    let mut md = String::new();
    md.push_str("# Adaptation evaluation report\n");

    // edit-level scores
    md.push_str("\n## Edit-level scores\n\n");
    md.push_str("| Model | # Edits | Correctness(%) / Localisation(avg) / Localisation %(0, 1, 2) / Offensiveness(%) | Null scores |\n");
    md.push_str("|---|---|---|---|\n");
    let mut edit_csv =
        vec!["model,n_edits,n_null,pct_correct,avg_localisation,pct_loc0,pct_loc1,pct_loc2,pct_offensive".to_string()];
    for m in &models {
        let agg = &m.aggregates.edits;
        md.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            m.model_id,
            agg.n_edits,
            format_edit_aggregate_row(agg),
            agg.n_null_scores
        ));
        let dist = agg.localisation_distribution;
        edit_csv.push(format!(
            "{},{},{},{},{},{},{},{},{}",
            m.model_id,
            agg.n_edits,
            agg.n_null_scores,
            opt_fixed(agg.pct_correct, 2),
            opt_fixed(agg.avg_localisation, 2),
            opt_fixed(dist.map(|d| d.0), 2),
            opt_fixed(dist.map(|d| d.1), 2),
            opt_fixed(dist.map(|d| d.2), 2),
            opt_fixed(agg.pct_offensive, 2),
        ));
    }
    write_lines(&dir.join("edit_aggregates.csv"), &edit_csv)?;

    // dialog-level scores
    md.push_str("\n## Dialog-level scores\n\n");
    md.push_str("| Aspect |");
    for m in &models {
        md.push_str(&format!(" {} |", m.model_id));
    }
    md.push_str("\n|---|");
    md.push_str(&"---|".repeat(models.len()));
    md.push('\n');
    let mut dialog_csv = vec!["model,aspect,mean,n_dialogs,n_null".to_string()];
    for aspect in DIALOG_ASPECTS {
        md.push_str(&format!("| {aspect} |"));
        for m in &models {
            md.push_str(&format!(" {} |", opt_fixed(m.aggregates.dialogs.aspect(aspect), 2)));
        }
        md.push('\n');
        for m in &models {
            dialog_csv.push(format!(
                "{},{},{},{},{}",
                m.model_id,
                aspect,
                opt_fixed(m.aggregates.dialogs.aspect(aspect), 2),
                m.aggregates.dialogs.n_dialogs,
                m.aggregates.dialogs.n_null
            ));
        }
    }
    write_lines(&dir.join("dialog_aggregates.csv"), &dialog_csv)?;

    // % CSI edited
    md.push_str("\n## % CSI edited\n\n");
    let mut csi_csv = vec!["model,bucket_type,bucket,total,found,pct_edited".to_string()];
    for m in &models {
        match m.csi.overall_pct_edited() {
            None => {
                md.push_str(&format!("{}: no eligible CSI occurrences (section empty)\n\n", m.model_id));
            }
            Some(pct) => {
                md.push_str(&format!(
                    "**{}**: {}% of {} occurrences edited\n\n",
                    m.model_id,
                    format_fixed(pct, 2),
                    m.csi.n_occurrences
                ));
                csi_csv.push(format!(
                    "{},overall,overall,{},{},{}",
                    m.model_id,
                    m.csi.n_occurrences,
                    m.csi.n_found,
                    format_fixed(pct, 2)
                ));
                md.push_str("| Bucket | Total | Edited % |\n|---|---|---|\n");
                for (category, stat) in &m.csi.per_category {
                    md.push_str(&format!(
                        "| {category} | {} | {} |\n",
                        stat.total,
                        format_fixed(stat.pct_edited(), 2)
                    ));
                    csi_csv.push(format!(
                        "{},category,{},{},{},{}",
                        m.model_id,
                        category.identifier(),
                        stat.total,
                        stat.found,
                        format_fixed(stat.pct_edited(), 2)
                    ));
                }
                for (level, stat) in &m.csi.per_foreignness {
                    md.push_str(&format!(
                        "| foreignness {level} | {} | {} |\n",
                        stat.total,
                        format_fixed(stat.pct_edited(), 2)
                    ));
                    csi_csv.push(format!(
                        "{},foreignness,{level},{},{},{}",
                        m.model_id,
                        stat.total,
                        stat.found,
                        format_fixed(stat.pct_edited(), 2)
                    ));
                }
                md.push('\n');
            }
        }
    }
    write_lines(&dir.join("csi_breakdown.csv"), &csi_csv)?;

    // strategy distribution
    md.push_str("\n## Translation strategy distribution\n\n");
    let mut strat_csv = vec!["model,strategy,percentage".to_string()];
    md.push_str("| Model |");
    for strategy in Strategy::CLASSIFIABLE {
        md.push_str(&format!(" {strategy} |"));
    }
    md.push_str(" Preserved | Created | Unaligned |\n|---|");
    md.push_str(&"---|".repeat(Strategy::CLASSIFIABLE.len() + 3));
    md.push('\n');
    for m in &models {
        let dist = &m.aggregates.strategies;
        md.push_str(&format!("| {} |", m.model_id));
        for strategy in Strategy::CLASSIFIABLE {
            let pct = dist.percentages.get(&strategy).copied().unwrap_or(0.0);
            md.push_str(&format!(" {} |", format_fixed(pct, 2)));
            strat_csv.push(format!("{},{},{}", m.model_id, strategy, format_fixed(pct, 2)));
        }
        md.push_str(&format!(
            " {} | {} | {} |\n",
            dist.preservation_count, dist.creation_count, m.aggregates.n_unaligned_csi
        ));
        if dist.is_empty() {
            md.push_str(&format!("\n{}: no classified CSI edits (distribution empty)\n", m.model_id));
        }
    }
    write_lines(&dir.join("strategies.csv"), &strat_csv)?;

    // aspect correlation matrices from the judge's dialog scores
    md.push_str("\n## Aspect correlation\n");
    for m in &models {
        let scored: Vec<&DialogScoreRow> =
            m.dialog_scores.iter().filter(|r| r.scores.is_some()).collect();
        md.push_str(&format!("\n### {}\n\n", m.model_id));
        if scored.len() < 2 {
            md.push_str("fewer than 2 scored dialogs; matrix omitted\n");
            continue;
        }
        let columns: Vec<(String, Vec<f64>)> = DIALOG_ASPECTS
            .iter()
            .map(|aspect| {
                (
                    aspect.to_string(),
                    scored
                        .iter()
                        .map(|r| r.scores.as_ref().expect("filtered to scored").aspect(aspect).unwrap() as f64)
                        .collect(),
                )
            })
            .collect();
        match correlation_matrix(&columns, config.run.significance_level) {
            Ok(matrix) => {
                md.push_str(&render_matrix_markdown(&matrix));
                let mut matrix_csv = vec!["row,col,tau,significant".to_string()];
                for row in &matrix {
                    for cell in row {
                        let tau = cell
                            .result
                            .as_ref()
                            .map_or_else(|| "undefined".to_string(), |r| format_fixed(r.tau, 4));
                        matrix_csv.push(format!("{},{},{},{}", cell.row, cell.col, tau, cell.significant));
                    }
                }
                write_lines(&dir.join(format!("aspect_matrix.{}.csv", model_slug(&m.model_id))), &matrix_csv)?;
            }
            Err(e) => md.push_str(&format!("matrix unavailable: {e}\n")),
        }
    }

    // flattened model x metric rows for plotting
    let mut metrics_csv = vec!["model,metric,value".to_string()];
    for m in &models {
        let agg = &m.aggregates;
        let mut push = |metric: &str, value: String| {
            metrics_csv.push(format!("{},{metric},{value}", m.model_id));
        };
        push("pct_csi_edited", opt_fixed(m.csi.overall_pct_edited(), 2));
        push("n_edits", agg.edits.n_edits.to_string());
        push("pct_correct", opt_fixed(agg.edits.pct_correct, 2));
        push("avg_localisation", opt_fixed(agg.edits.avg_localisation, 2));
        push("pct_offensive", opt_fixed(agg.edits.pct_offensive, 2));
        for aspect in DIALOG_ASPECTS {
            push(&format!("dialog_{aspect}"), opt_fixed(agg.dialogs.aspect(aspect), 2));
        }
    }
    write_lines(&dir.join("metrics.csv"), &metrics_csv)?;

    // footer: everything a reader needs to reproduce or compare runs
    md.push_str("\n---\n");
    md.push_str(&format!(
        "fuzzy match threshold: {} (reported % CSI edited values are matcher-sensitive)\n\n",
        config.run.csi_match_threshold
    ));
    md.push_str(&format!(
        "judge model: {} (endpoint {}), temperature {}, max_tokens {}, seed {}\n\n",
        config.judge.model_id,
        config.judge.endpoint,
        config.judge.decoding.temperature,
        config.judge.decoding.max_tokens,
        config.judge.decoding.seed.map_or("none".to_string(), |s| s.to_string()),
    ));
    md.push_str(&format!(
        "significance level: {}; p-values: {}\n",
        config.run.significance_level,
        if config.run.exact_p_values { "exact permutation" } else { "normal approximation" }
    ));

    let report_path = dir.join("report.md");
    let tmp = dir.join(format!(".report.md.tmp-{}", std::process::id()));
    std::fs::write(&tmp, &md).map_err(|source| PipelineError::Io { path: tmp.clone(), source })?;
    std::fs::rename(&tmp, &report_path)
        .map_err(|source| PipelineError::Io { path: report_path.clone(), source })?;
    Ok(report_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_scale_row_renders_format_exact() {
        // 3256 scored edits: 3225 correct, localisation counts 16/1521/1719,
        // 14 offensive
        let mut scores = Vec::new();
        for i in 0..3256u32 {
            scores.push(Some(adapteval::judge::EditScores {
                correctness: u8::from(i < 3225),
                localisation: if i < 16 { 0 } else if i < 16 + 1521 { 1 } else { 2 },
                offensiveness: u8::from(i < 14),
            }));
        }
        let agg = adapteval::metrics::aggregate_edit_scores(&scores);
        assert_eq!(format_edit_aggregate_row(&agg), "99.05 / 1.52 / 0.5, 46.7, 52.8 / 0.43");
    }

    #[test]
    fn undefined_aggregates_render_na() {
        let agg = EditAggregate::default();
        assert_eq!(format_edit_aggregate_row(&agg), "n/a (no scored edits)");
    }
}
