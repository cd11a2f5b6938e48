//! Parsers for the judge's completions. Each parser returns a value, a typed
//! error, or residue; malformed lines are collected, never silently dropped.

use std::sync::OnceLock;

use regex::Regex;

use super::{DialogScores, Edit, EditScores, Explanations, JudgeError, Strategy};

/// Parsed edit lines plus the lines that did not conform to the grammar.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EditList {
    pub edits: Vec<Edit>,
    pub residue: Vec<String>,
}

const NO_EDIT_MARKER: &str = "no edit found";

fn split_arrow(line: &str) -> Option<(&str, &str)> {
    if let Some(pos) = line.find('→') {
        Some((&line[..pos], &line[pos + '→'.len_utf8()..]))
    } else {
        line.find("->").map(|pos| (&line[..pos], &line[pos + 2..]))
    }
}

/// Parses an edit-extraction completion, line by line:
///
/// - `X → Y` yields a modification
/// - `X → # deletion` yields a deletion
/// - `→ Y # addition` yields an insertion
/// - the literal `No edit found.` yields an empty list
///
/// Both `→` and `->` are accepted. Lines that fit none of those forms are
/// collected as residue; a completion with neither edit lines nor the
/// no-edit marker is an unparseable error.
pub fn parse_edit_list(raw: &str, utterance_index: usize) -> Result<EditList, JudgeError> {
    let mut list = EditList::default();
    let mut saw_no_edit = false;
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.trim_end_matches('.').eq_ignore_ascii_case(NO_EDIT_MARKER) {
            saw_no_edit = true;
            continue;
        }
        let Some((left, right)) = split_arrow(line) else {
            list.residue.push(line.to_string());
            continue;
        };
        let left = left.trim();
        let right = right.trim();
        if let Some(hash) = right.find('#') {
            let content = right[..hash].trim();
            let marker = right[hash + 1..].trim().to_ascii_lowercase();
            if marker.starts_with("deletion") && !left.is_empty() && content.is_empty() {
                list.edits.push(Edit::delete(left, utterance_index));
            } else if marker.starts_with("addition") && left.is_empty() && !content.is_empty() {
                list.edits.push(Edit::insert(content, utterance_index));
            } else {
                list.residue.push(line.to_string());
            }
        } else if !left.is_empty() && !right.is_empty() {
            list.edits.push(Edit::modify(left, right, utterance_index));
        } else {
            list.residue.push(line.to_string());
        }
    }
    if list.edits.is_empty() && !saw_no_edit {
        return Err(JudgeError::Unparseable {
            what: "edit list",
            detail: format!("no edit lines and no '{NO_EDIT_MARKER}' marker"),
        });
    }
    Ok(list)
}

/// One line of the extraction grammar; inverse of [`parse_edit_list`] for a
/// single edit.
pub fn format_edit_line(edit: &Edit) -> String {
    match edit.kind {
        super::EditKind::Modify => format!("{} → {}", edit.source, edit.target),
        super::EditKind::Delete => format!("{} → # deletion", edit.source),
        super::EditKind::Insert => format!("→ {} # addition", edit.target),
    }
}

/// Formats a whole list back into the line grammar; an empty list renders
/// the no-edit marker.
pub fn format_edit_list(edits: &[Edit]) -> String {
    if edits.is_empty() {
        return "No edit found.".to_string();
    }
    let lines: Vec<String> = edits.iter().map(format_edit_line).collect();
    lines.join("\n")
}

/// Returns the first balanced brace block of `raw`, tolerating preambles and
/// fenced code blocks around it.
fn first_brace_block(raw: &str) -> Option<&str> {
    let bytes = raw.as_bytes();
    let mut start = None;
    let mut depth = 0usize;
    let mut in_string: Option<u8> = None;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if let Some(quote) = in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == quote {
                in_string = None;
            }
            continue;
        }
        match b {
            b'"' | b'\'' if start.is_some() => in_string = Some(b),
            b'{' => {
                if start.is_none() {
                    start = Some(i);
                }
                depth += 1;
            }
            b'}' if start.is_some() => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start.unwrap()..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn score_pair_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i)['"]?([a-z_ ]+?)['"]?\s*:\s*(-?\d+)"#).expect("static regex compiles")
    })
}

/// Parses the Python-dict style edit rating, e.g.
/// `{'correctness': 1, 'localisation': 2, 'offensiveness': 0}`.
///
/// The first brace block is extracted so preambles are tolerated. Keys match
/// case-insensitively and both `localisation` and `localization` are
/// accepted. Out-of-range values are errors, never clamped.
pub fn parse_edit_scores(raw: &str) -> Result<EditScores, JudgeError> {
    let block = first_brace_block(raw).ok_or(JudgeError::Unparseable {
        what: "edit scores",
        detail: "no brace-delimited block found".to_string(),
    })?;
    let mut correctness = None;
    let mut localisation = None;
    let mut offensiveness = None;
    for cap in score_pair_regex().captures_iter(block) {
        let key = cap[1].trim().to_ascii_lowercase();
        let value: i64 = cap[2].parse().map_err(|_| JudgeError::Unparseable {
            what: "edit scores",
            detail: format!("bad integer for '{key}'"),
        })?;
        let slot = match key.as_str() {
            "correctness" => &mut correctness,
            "localisation" | "localization" => &mut localisation,
            "offensiveness" => &mut offensiveness,
            _ => continue,
        };
        if slot.is_none() {
            *slot = Some((key, value));
        }
    }
    let take = |slot: Option<(String, i64)>, name: &str, max: i64| -> Result<u8, JudgeError> {
        let (key, value) = slot.ok_or_else(|| JudgeError::MissingKey(name.to_string()))?;
        if (0..=max).contains(&value) {
            Ok(value as u8)
        } else {
            Err(JudgeError::OutOfRange { key, value })
        }
    };
    Ok(EditScores {
        correctness: take(correctness, "correctness", 1)?,
        localisation: take(localisation, "localisation", 2)?,
        offensiveness: take(offensiveness, "offensiveness", 1)?,
    })
}

fn strategy_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(addition|omission|globali[sz]ation|locali[sz]ation|transformation)\b")
            .expect("static regex compiles")
    })
}

/// Scans a strategy-classification completion for the five classifiable
/// strategy names (either spelling) and returns the last occurrence, the one
/// closest to the model's final answer. Preservation and Creation are never
/// produced here: they are assigned by alignment, not by the classifier.
pub fn parse_strategy(raw: &str) -> Result<Strategy, JudgeError> {
    let last = strategy_regex()
        .find_iter(raw)
        .last()
        .ok_or(JudgeError::Unparseable {
            what: "strategy",
            detail: "no strategy name found".to_string(),
        })?;
    let name = last.as_str().to_ascii_lowercase();
    Ok(match name.as_str() {
        "addition" => Strategy::Addition,
        "omission" => Strategy::Omission,
        "globalisation" | "globalization" => Strategy::Globalisation,
        "localisation" | "localization" => Strategy::Localisation,
        _ => Strategy::Transformation,
    })
}

fn aspect_key_matches(key: &str, aspect: &str) -> bool {
    let canon: String = key
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    match aspect {
        "localisation" => canon == "localisation" || canon == "localization",
        "content_preservation" => canon == "contentpreservation",
        _ => canon == aspect,
    }
}

fn integer_score(value: &serde_json::Value, aspect: &str) -> Result<i64, JudgeError> {
    if let Some(n) = value.as_i64() {
        return Ok(n);
    }
    if let Some(f) = value.as_f64() {
        if f.fract() == 0.0 {
            return Ok(f as i64);
        }
    }
    Err(JudgeError::NonIntegerScore { aspect: aspect.to_string() })
}

/// Parses the dialog-level rating: a JSON object shaped
/// `{aspect: {score:, explanation:}, ...}` with all five aspects present and
/// integer scores in 1..=5. The first well-formed object in the completion
/// is used, so preambles and code fences are tolerated. A bare integer in
/// place of the inner object is accepted (with an empty explanation).
pub fn parse_dialog_scores(raw: &str) -> Result<DialogScores, JudgeError> {
    let mut search = raw;
    let object = loop {
        let block = first_brace_block(search).ok_or(JudgeError::Unparseable {
            what: "dialog scores",
            detail: "no JSON object found".to_string(),
        })?;
        match serde_json::from_str::<serde_json::Value>(block) {
            Ok(serde_json::Value::Object(map)) => break map,
            _ => {
                let offset = block.as_ptr() as usize - search.as_ptr() as usize;
                search = &search[offset + 1..];
            }
        }
    };

    let mut scores = [0u8; 5];
    let mut explanations = Explanations::default();
    for (i, aspect) in super::DIALOG_ASPECTS.iter().enumerate() {
        let (_, value) = object
            .iter()
            .find(|(k, _)| aspect_key_matches(k, aspect))
            .ok_or_else(|| JudgeError::MissingAspect(aspect.to_string()))?;
        let (score, explanation) = match value {
            serde_json::Value::Object(inner) => {
                let score_value = inner
                    .iter()
                    .find(|(k, _)| k.eq_ignore_ascii_case("score"))
                    .map(|(_, v)| v)
                    .ok_or_else(|| JudgeError::MissingAspect(format!("{aspect}.score")))?;
                let explanation = inner
                    .iter()
                    .find(|(k, _)| k.eq_ignore_ascii_case("explanation"))
                    .and_then(|(_, v)| v.as_str())
                    .unwrap_or_default()
                    .to_string();
                (integer_score(score_value, aspect)?, explanation)
            }
            other => (integer_score(other, aspect)?, String::new()),
        };
        if !(1..=5).contains(&score) {
            return Err(JudgeError::OutOfRange { key: aspect.to_string(), value: score });
        }
        scores[i] = score as u8;
        match *aspect {
            "naturalness" => explanations.naturalness = explanation,
            "localisation" => explanations.localisation = explanation,
            "offensiveness" => explanations.offensiveness = explanation,
            "stereotypical" => explanations.stereotypical = explanation,
            _ => explanations.content_preservation = explanation,
        }
    }
    Ok(DialogScores {
        naturalness: scores[0],
        localisation: scores[1],
        offensiveness: scores[2],
        stereotypical: scores[3],
        content_preservation: scores[4],
        explanations,
    })
}

#[cfg(test)]
mod tests {
    use super::super::EditKind;
    use super::*;
    use proptest::prelude::*;
    // explicit import so the glob from proptest's prelude (which has a
    // `Strategy` trait) cannot shadow the domain enum
    use super::Strategy;

    #[test]
    fn parses_modify_delete_insert_lines() {
        let raw = "ice cream → biryani\nnude → # deletion\n→ and do yoga # addition";
        let list = parse_edit_list(raw, 3).unwrap();
        assert_eq!(
            list.edits,
            vec![
                Edit::modify("ice cream", "biryani", 3),
                Edit::delete("nude", 3),
                Edit::insert("and do yoga", 3),
            ]
        );
        assert!(list.residue.is_empty());
    }

    #[test]
    fn parses_the_seven_edit_exemplar_block() {
        let raw = "ice cream → biryani\nRocky Road → Butter Chicken\nCookie Dough → Paneer Tikka\nBing! Cherry Vanilla → Paan\nJimmies → Naan\nnuts → rice\nwhipped cream → raita";
        let list = parse_edit_list(raw, 0).unwrap();
        assert_eq!(list.edits.len(), 7);
        assert!(list.edits.iter().all(|e| e.kind == EditKind::Modify));
        assert_eq!(list.edits[3], Edit::modify("Bing! Cherry Vanilla", "Paan", 0));
    }

    #[test]
    fn no_edit_marker_yields_empty_list() {
        assert!(parse_edit_list("No edit found.", 0).unwrap().edits.is_empty());
        assert!(parse_edit_list("no edit found", 0).unwrap().edits.is_empty());
    }

    #[test]
    fn ascii_arrow_is_accepted() {
        let list = parse_edit_list("vegan cafe -> chai stall", 1).unwrap();
        assert_eq!(list.edits, vec![Edit::modify("vegan cafe", "chai stall", 1)]);
    }

    #[test]
    fn nonconforming_lines_become_residue() {
        let raw = "Edits:\nice cream → biryani\n→ dangling";
        let list = parse_edit_list(raw, 0).unwrap();
        assert_eq!(list.edits.len(), 1);
        assert_eq!(list.residue, vec!["Edits:".to_string(), "→ dangling".to_string()]);
    }

    #[test]
    fn pure_prose_is_unparseable() {
        let err = parse_edit_list("I could not find anything of note.", 0).unwrap_err();
        assert!(matches!(err, JudgeError::Unparseable { what: "edit list", .. }));
    }

    #[test]
    fn format_round_trips_the_grammar() {
        let edits = vec![
            Edit::modify("FICA", "Income Tax", 2),
            Edit::delete("nude", 2),
            Edit::insert("and do yoga", 2),
        ];
        let formatted = format_edit_list(&edits);
        let parsed = parse_edit_list(&formatted, 2).unwrap();
        assert_eq!(parsed.edits, edits);
        assert!(parsed.residue.is_empty());
        assert_eq!(format_edit_list(&[]), "No edit found.");
    }

    #[test]
    fn parses_edit_scores_exemplar() {
        let s = parse_edit_scores("{'correctness': 1, 'localisation': 2, 'offensiveness': 0}")
            .unwrap();
        assert_eq!(s, EditScores { correctness: 1, localisation: 2, offensiveness: 0 });
    }

    #[test]
    fn edit_scores_tolerate_preamble_and_double_quotes() {
        let s = parse_edit_scores(
            "Sure! {\"correctness\": 0, \"localization\": 1, \"offensiveness\": 1}",
        )
        .unwrap();
        assert_eq!(s, EditScores { correctness: 0, localisation: 1, offensiveness: 1 });
    }

    #[test]
    fn edit_scores_out_of_range_is_an_error_not_clamped() {
        let err =
            parse_edit_scores("{'correctness': 1, 'localisation': 3, 'offensiveness': 0}")
                .unwrap_err();
        assert!(matches!(err, JudgeError::OutOfRange { value: 3, .. }));
        let err =
            parse_edit_scores("{'correctness': 2, 'localisation': 1, 'offensiveness': 0}")
                .unwrap_err();
        assert!(matches!(err, JudgeError::OutOfRange { value: 2, .. }));
    }

    #[test]
    fn edit_scores_missing_key_is_named() {
        let err = parse_edit_scores("{'correctness': 1, 'offensiveness': 0}").unwrap_err();
        assert!(matches!(err, JudgeError::MissingKey(ref k) if k == "localisation"));
        let err = parse_edit_scores("no dict here").unwrap_err();
        assert!(matches!(err, JudgeError::Unparseable { what: "edit scores", .. }));
    }

    #[test]
    fn strategy_table_rows_parse() {
        let rows = [
            ("the strategy used here is globalisation", Strategy::Globalisation),
            ("This is a Transformation because the item changed", Strategy::Transformation),
            ("clearly: Localization", Strategy::Localisation),
            ("omission was applied", Strategy::Omission),
            ("an addition of explanatory text", Strategy::Addition),
        ];
        for (raw, want) in rows {
            assert_eq!(parse_strategy(raw).unwrap(), want, "{raw}");
        }
    }

    #[test]
    fn strategy_last_occurrence_wins() {
        let raw = "I think both Globalization and then finally Omission";
        assert_eq!(parse_strategy(raw).unwrap(), Strategy::Omission);
    }

    #[test]
    fn strategy_requires_word_boundaries() {
        // "additionally" must not read as Addition
        let err = parse_strategy("Additionally, nothing fits.").unwrap_err();
        assert!(matches!(err, JudgeError::Unparseable { what: "strategy", .. }));
    }

    #[test]
    fn strategy_never_returns_preservation_or_creation() {
        for raw in ["preservation", "creation", "the Preservation strategy"] {
            assert!(parse_strategy(raw).is_err(), "{raw}");
        }
    }

    fn dialog_scores_json(stereotypical: Option<u8>) -> String {
        let mut parts = vec![
            r#""naturalness": {"score": 3, "explanation": "flows fine"}"#.to_string(),
            r#""localisation": {"score": 3, "explanation": "some localisation"}"#.to_string(),
            r#""offensiveness": {"score": 3, "explanation": "mild"}"#.to_string(),
            r#""content preservation": {"score": 3, "explanation": "intact"}"#.to_string(),
        ];
        if let Some(s) = stereotypical {
            parts.insert(3, format!(r#""stereotypical": {{"score": {s}, "explanation": "ok"}}"#));
        }
        format!("{{{}}}", parts.join(", "))
    }

    #[test]
    fn parses_dialog_scores_object() {
        let scores = parse_dialog_scores(&dialog_scores_json(Some(3))).unwrap();
        assert_eq!(scores.naturalness, 3);
        assert_eq!(scores.content_preservation, 3);
        assert_eq!(scores.explanations.naturalness, "flows fine");
    }

    #[test]
    fn missing_aspect_is_an_error() {
        let err = parse_dialog_scores(&dialog_scores_json(None)).unwrap_err();
        assert!(matches!(err, JudgeError::MissingAspect(ref a) if a == "stereotypical"));
    }

    #[test]
    fn fenced_code_block_is_tolerated() {
        let raw = format!("Here you go:\n```json\n{}\n```", dialog_scores_json(Some(2)));
        let scores = parse_dialog_scores(&raw).unwrap();
        assert_eq!(scores.stereotypical, 2);
    }

    #[test]
    fn dialog_score_out_of_range_rejected() {
        let raw = dialog_scores_json(Some(6));
        let err = parse_dialog_scores(&raw).unwrap_err();
        assert!(matches!(err, JudgeError::OutOfRange { value: 6, .. }));
    }

    #[test]
    fn dialog_score_non_integer_rejected() {
        let raw = r#"{"naturalness": 3.5, "localisation": 3, "offensiveness": 1, "stereotypical": 1, "content_preservation": 3}"#;
        let err = parse_dialog_scores(raw).unwrap_err();
        assert!(matches!(err, JudgeError::NonIntegerScore { ref aspect } if aspect == "naturalness"));
    }

    #[test]
    fn bare_integer_scores_are_accepted() {
        let raw = r#"{"naturalness": 4, "localisation": 5, "offensiveness": 1, "stereotypical": 1, "content_preservation": 4}"#;
        let scores = parse_dialog_scores(raw).unwrap();
        assert_eq!(scores.localisation, 5);
        assert_eq!(scores.explanations.localisation, "");
    }

    proptest! {
        #[test]
        fn parsers_never_panic(raw in "[ -~\n→]{0,200}") {
            let _ = parse_edit_list(&raw, 0);
            let _ = parse_edit_scores(&raw);
            let _ = parse_strategy(&raw);
            let _ = parse_dialog_scores(&raw);
        }

        #[test]
        fn single_strategy_name_is_found_regardless_of_prose(
            prefix in "[a-z ]{0,40}",
            suffix in "[a-z ]{0,40}",
            pick in 0usize..5,
        ) {
            let strategy = Strategy::CLASSIFIABLE[pick];
            // embed with spaces so prose never fuses into the name
            let raw = format!("{prefix} {strategy} {suffix}");
            // ambient prose may itself contain a strategy word; only assert
            // when the embedded name is the last match
            if parse_strategy(&suffix).is_err() {
                prop_assert_eq!(parse_strategy(&raw).unwrap(), strategy);
            }
        }

        #[test]
        fn edit_list_round_trip(
            specs in proptest::collection::vec(
                (0u8..3, "[A-Za-z][A-Za-z ']{0,12}", "[A-Za-z][A-Za-z ']{0,12}"),
                0..6,
            )
        ) {
            let edits: Vec<Edit> = specs
                .iter()
                .map(|(kind, src, tgt)| match kind {
                    0 => Edit::modify(src.trim(), tgt.trim(), 1),
                    1 => Edit::delete(src.trim(), 1),
                    _ => Edit::insert(tgt.trim(), 1),
                })
                .filter(|e| !e.source.contains('#') && !e.target.contains('#'))
                .collect();
            let parsed = parse_edit_list(&format_edit_list(&edits), 1).unwrap();
            prop_assert_eq!(parsed.edits, edits);
            prop_assert!(parsed.residue.is_empty());
        }
    }
}
