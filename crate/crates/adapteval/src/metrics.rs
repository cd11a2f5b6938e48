//! Edit-level and dialog-level metric computation: % CSI edited, alignment
//! of extracted edits to annotated CSI, aggregate scores, and strategy
//! distributions.
//!
//! All math runs in full precision; rounding happens only at report
//! emission via [`round_half_up`] / [`format_fixed`]. Null scores (parse
//! failures that survived the one re-query) are excluded from denominators
//! and counted separately so they cannot bias percentages.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{AdaptationRecord, CsiAnnotation, CsiCategory};
use crate::judge::{DialogScores, Edit, EditScores, Strategy};
use crate::textmatch::{contains_fuzzy, normalize, token_set_ratio};

/// Half-up rounding to `decimals` places (half away from zero for the
/// negative values that only occur in correlation output).
pub fn round_half_up(value: f64, decimals: u32) -> f64 {
    let factor = 10f64.powi(decimals as i32);
    let scaled = value * factor;
    let rounded = if scaled < 0.0 { -(-scaled + 0.5).floor() } else { (scaled + 0.5).floor() };
    rounded / factor
}

/// Fixed-point rendering with half-up rounding, e.g. `format_fixed(99.048, 2)
/// == "99.05"`.
pub fn format_fixed(value: f64, decimals: u32) -> String {
    format!("{:.*}", decimals as usize, round_half_up(value, decimals))
}

/// Found/edited decision for one CSI occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsiDecision {
    pub dialog_id: String,
    pub surface: String,
    pub occurrence_index: u32,
    pub category: CsiCategory,
    pub foreignness: u8,
    /// True iff the surface was *not* found in the adaptation.
    pub edited: bool,
    /// Best fuzzy window score against the adapted dialog text.
    pub match_score: u8,
}

/// Found/total tallies for one breakdown bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketStat {
    pub total: u64,
    pub found: u64,
}

impl BucketStat {
    pub fn pct_edited(&self) -> f64 {
        100.0 * (1.0 - self.found as f64 / self.total as f64)
    }
}

/// Per-occurrence extent-of-adaptation report:
/// `% CSI edited = 100 - % of CSI found in adaptations`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsiEditReport {
    /// Fuzzy-match threshold the decisions were made at; reported values are
    /// matcher-sensitive, so every report records it.
    pub threshold: u32,
    /// Occurrences evaluated (foreignness >= 2 with a covered dialog).
    pub n_occurrences: u64,
    pub n_found: u64,
    pub per_category: BTreeMap<CsiCategory, BucketStat>,
    pub per_foreignness: BTreeMap<u8, BucketStat>,
    pub per_csi: Vec<CsiDecision>,
    /// Dialog ids whose annotations could not be evaluated (no adaptation),
    /// plus any surfaces that could not be searched for.
    pub coverage_warnings: Vec<String>,
}

impl CsiEditReport {
    /// `None` when no occurrence was eligible.
    pub fn overall_pct_edited(&self) -> Option<f64> {
        (self.n_occurrences > 0)
            .then(|| 100.0 * (1.0 - self.n_found as f64 / self.n_occurrences as f64))
    }
}

/// Decides, per eligible CSI occurrence, whether it still appears in the
/// model's adaptation of its dialog. Level-1 annotations are filtered here;
/// found-ness is evaluated against the full adapted dialog text because
/// adaptations may move content across utterances. `adaptations` must all
/// belong to one model.
pub fn csi_edited_percentage(
    annotations: &[CsiAnnotation],
    adaptations: &[AdaptationRecord],
    threshold: u32,
) -> CsiEditReport {
    let adapted_text: HashMap<&str, String> = adaptations
        .iter()
        .map(|a| (a.dialog_id.as_str(), a.full_text()))
        .collect();

    let mut report = CsiEditReport { threshold, ..Default::default() };
    let mut missing_dialogs: Vec<&str> = Vec::new();
    for annotation in annotations.iter().filter(|a| a.included_in_analysis()) {
        let Some(text) = adapted_text.get(annotation.dialog_id.as_str()) else {
            if !missing_dialogs.contains(&annotation.dialog_id.as_str()) {
                missing_dialogs.push(annotation.dialog_id.as_str());
            }
            continue;
        };
        let (found, best) = match contains_fuzzy(&annotation.surface, text, threshold) {
            Ok(result) => result,
            Err(e) => {
                report.coverage_warnings.push(format!(
                    "annotation ({}, '{}', {}) skipped: {e}",
                    annotation.dialog_id, annotation.surface, annotation.occurrence_index
                ));
                continue;
            }
        };
        report.n_occurrences += 1;
        if found {
            report.n_found += 1;
        }
        let cat = report.per_category.entry(annotation.category).or_default();
        cat.total += 1;
        cat.found += u64::from(found);
        let level = report.per_foreignness.entry(annotation.foreignness).or_default();
        level.total += 1;
        level.found += u64::from(found);
        report.per_csi.push(CsiDecision {
            dialog_id: annotation.dialog_id.clone(),
            surface: annotation.surface.clone(),
            occurrence_index: annotation.occurrence_index,
            category: annotation.category,
            foreignness: annotation.foreignness,
            edited: !found,
            match_score: best.score,
        });
    }
    for id in missing_dialogs {
        report
            .coverage_warnings
            .push(format!("dialog '{id}' has annotations but no adaptation; excluded"));
    }
    report
}

/// Where one eligible CSI occurrence ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiOutcome {
    /// An extracted edit's source matched this CSI; the strategy classifier
    /// decides the strategy.
    AlignedToEdit { edit_index: usize, score: u8 },
    /// No edit matched and the surface is still present: Preservation.
    Preserved,
    /// The surface is gone but no extracted edit accounts for it; reported
    /// as unaligned rather than guessing a strategy.
    Unaligned,
}

/// Alignment of one dialog's edits to its CSI occurrences.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogAlignment {
    pub dialog_id: String,
    /// One entry per eligible annotation, in input order.
    pub csi_outcomes: Vec<CsiOutcome>,
    /// Indices of edits whose source matched no CSI but whose target matches
    /// a target-culture pattern: Creation candidates.
    pub creation_candidates: Vec<usize>,
}

/// Greedily matches extracted edits to CSI occurrences by descending
/// `token_set_ratio(surface, edit.source)`, ties broken by earlier
/// utterance, then input order. Each CSI takes at most one edit and each
/// edit at most one CSI. `found` carries the per-occurrence decisions from
/// [`csi_edited_percentage`] and must parallel `annotations`.
pub fn align_edits_to_csi(
    dialog_id: &str,
    edits: &[Edit],
    annotations: &[CsiAnnotation],
    found: &[bool],
    threshold: u32,
    target_patterns: &[String],
) -> DialogAlignment {
    assert_eq!(annotations.len(), found.len(), "found flags must parallel annotations");
    let surface_norm: Vec<String> =
        annotations.iter().map(|a| normalize(&a.surface)).collect();
    let source_norm: Vec<String> = edits.iter().map(|e| normalize(&e.source)).collect();

    let mut pairs: Vec<(u8, usize, usize)> = Vec::new();
    for (ci, surface) in surface_norm.iter().enumerate() {
        for (ei, source) in source_norm.iter().enumerate() {
            let score = token_set_ratio(surface, source);
            if score as u32 >= threshold {
                pairs.push((score, ci, ei));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(edits[a.2].utterance_index.cmp(&edits[b.2].utterance_index))
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut csi_match: Vec<Option<(usize, u8)>> = vec![None; annotations.len()];
    let mut edit_taken = vec![false; edits.len()];
    for (score, ci, ei) in pairs {
        if csi_match[ci].is_none() && !edit_taken[ei] {
            csi_match[ci] = Some((ei, score));
            edit_taken[ei] = true;
        }
    }

    let csi_outcomes = csi_match
        .iter()
        .zip(found)
        .map(|(m, &present)| match m {
            Some((edit_index, score)) => {
                CsiOutcome::AlignedToEdit { edit_index: *edit_index, score: *score }
            }
            None if present => CsiOutcome::Preserved,
            None => CsiOutcome::Unaligned,
        })
        .collect();

    let creation_candidates = edits
        .iter()
        .enumerate()
        .filter(|(ei, edit)| {
            !edit_taken[*ei]
                && !edit.target.is_empty()
                && target_patterns.iter().any(|pattern| {
                    contains_fuzzy(pattern, &edit.target, threshold)
                        .map(|(found, _)| found)
                        .unwrap_or(false)
                })
        })
        .map(|(ei, _)| ei)
        .collect();

    DialogAlignment {
        dialog_id: dialog_id.to_string(),
        csi_outcomes,
        creation_candidates,
    }
}

/// Aggregate of edit-level scores. `n_edits` counts scored edits; nulls are
/// excluded from every denominator. Aggregates are `None` when nothing was
/// scored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditAggregate {
    pub n_edits: u64,
    pub n_null_scores: u64,
    pub pct_correct: Option<f64>,
    pub avg_localisation: Option<f64>,
    /// Percentages of localisation scores 0, 1, and 2.
    pub localisation_distribution: Option<(f64, f64, f64)>,
    pub pct_offensive: Option<f64>,
}

pub fn aggregate_edit_scores(scores: &[Option<EditScores>]) -> EditAggregate {
    let mut agg = EditAggregate::default();
    let (mut correct, mut offensive) = (0u64, 0u64);
    let mut loc_counts = [0u64; 3];
    for score in scores {
        match score {
            Some(s) => {
                agg.n_edits += 1;
                correct += u64::from(s.correctness == 1);
                offensive += u64::from(s.offensiveness == 1);
                loc_counts[s.localisation.min(2) as usize] += 1;
            }
            None => agg.n_null_scores += 1,
        }
    }
    if agg.n_edits > 0 {
        let n = agg.n_edits as f64;
        agg.pct_correct = Some(100.0 * correct as f64 / n);
        agg.pct_offensive = Some(100.0 * offensive as f64 / n);
        agg.avg_localisation =
            Some((loc_counts[1] as f64 + 2.0 * loc_counts[2] as f64) / n);
        agg.localisation_distribution = Some((
            100.0 * loc_counts[0] as f64 / n,
            100.0 * loc_counts[1] as f64 / n,
            100.0 * loc_counts[2] as f64 / n,
        ));
    }
    agg
}

/// Aggregate of dialog-level scores: per-aspect means over scored dialogs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DialogAggregate {
    pub n_dialogs: u64,
    pub n_null: u64,
    pub naturalness: Option<f64>,
    pub localisation: Option<f64>,
    pub offensiveness: Option<f64>,
    pub stereotypical: Option<f64>,
    pub content_preservation: Option<f64>,
}

impl DialogAggregate {
    pub fn aspect(&self, name: &str) -> Option<f64> {
        match name {
            "naturalness" => self.naturalness,
            "localisation" => self.localisation,
            "offensiveness" => self.offensiveness,
            "stereotypical" => self.stereotypical,
            "content_preservation" => self.content_preservation,
            _ => None,
        }
    }
}

pub fn aggregate_dialog_scores(records: &[Option<DialogScores>]) -> DialogAggregate {
    let mut agg = DialogAggregate::default();
    let mut sums = [0u64; 5];
    for record in records {
        match record {
            Some(r) => {
                agg.n_dialogs += 1;
                sums[0] += r.naturalness as u64;
                sums[1] += r.localisation as u64;
                sums[2] += r.offensiveness as u64;
                sums[3] += r.stereotypical as u64;
                sums[4] += r.content_preservation as u64;
            }
            None => agg.n_null += 1,
        }
    }
    if agg.n_dialogs > 0 {
        let n = agg.n_dialogs as f64;
        agg.naturalness = Some(sums[0] as f64 / n);
        agg.localisation = Some(sums[1] as f64 / n);
        agg.offensiveness = Some(sums[2] as f64 / n);
        agg.stereotypical = Some(sums[3] as f64 / n);
        agg.content_preservation = Some(sums[4] as f64 / n);
    }
    agg
}

/// Distribution over the five classifiable strategies. Preservation is
/// captured by % CSI edited and Creation applies to non-CSI edits, so both
/// are reported as separate counts outside the percentage denominator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StrategyDistribution {
    pub n_classified: u64,
    pub percentages: BTreeMap<Strategy, f64>,
    pub preservation_count: u64,
    pub creation_count: u64,
}

impl StrategyDistribution {
    pub fn is_empty(&self) -> bool {
        self.n_classified == 0
    }
}

pub fn strategy_distribution(strategies: &[Strategy]) -> StrategyDistribution {
    let mut dist = StrategyDistribution::default();
    let mut counts: BTreeMap<Strategy, u64> =
        Strategy::CLASSIFIABLE.iter().map(|s| (*s, 0)).collect();
    for strategy in strategies {
        match strategy {
            Strategy::Preservation => dist.preservation_count += 1,
            Strategy::Creation => dist.creation_count += 1,
            s => {
                *counts.get_mut(s).expect("all classifiable strategies present") += 1;
                dist.n_classified += 1;
            }
        }
    }
    dist.percentages = counts
        .into_iter()
        .map(|(s, c)| {
            let pct = if dist.n_classified == 0 {
                0.0
            } else {
                100.0 * c as f64 / dist.n_classified as f64
            };
            (s, pct)
        })
        .collect();
    dist
}
