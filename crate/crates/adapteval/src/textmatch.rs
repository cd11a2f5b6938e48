//! Deterministic fuzzy string matching.
//!
//! Decides whether an annotated culture-specific item still appears in an
//! adapted dialog and aligns extracted edits to annotations. All scores are
//! integers in 0..=100 so thresholds behave predictably at boundaries.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchError {
    /// The needle normalizes to zero tokens and cannot be searched for.
    #[error("needle is empty after normalization")]
    EmptyNeedle,
    #[error("threshold {0} is out of range 0..=100")]
    InvalidThreshold(u32),
}

/// Best fuzzy match of a needle against one token window of a haystack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Token-set similarity in 0..=100.
    pub score: u8,
    /// The winning window, joined from normalized haystack tokens.
    pub matched_window: String,
    /// Half-open `[start, end)` token span of the window in the normalized
    /// haystack.
    pub window_span: (usize, usize),
}

/// Lowercases, maps punctuation to spaces, collapses whitespace runs, and
/// trims. Every other matching routine assumes its inputs went through this.
pub fn normalize(text: &str) -> String {
    let mapped: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Unit-cost Levenshtein distance over Unicode scalar values.
fn edit_distance(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut prev = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let cur = row[j + 1];
            let sub = prev + usize::from(ca != cb);
            row[j + 1] = sub.min(row[j] + 1).min(cur + 1);
            prev = cur;
        }
    }
    row[b.len()]
}

/// Similarity of two already-normalized strings:
/// `100 * (1 - editdistance(a, b) / max(|a|, |b|))`, rounded half-up.
/// Two empty strings score 100.
pub fn similarity_ratio(a: &str, b: &str) -> u8 {
    let ca: Vec<char> = a.chars().collect();
    let cb: Vec<char> = b.chars().collect();
    let longest = ca.len().max(cb.len());
    if longest == 0 {
        return 100;
    }
    let dist = edit_distance(&ca, &cb);
    // half-up rounding of 100*(longest-dist)/longest in integer arithmetic
    let num = 100 * (longest - dist) as u64;
    let den = longest as u64;
    ((2 * num + den) / (2 * den)) as u8
}

fn token_set(s: &str) -> std::collections::BTreeSet<&str> {
    s.split_whitespace().collect()
}

/// Word-order-insensitive similarity. With `I` the sorted shared tokens and
/// `Da`/`Db` the sorted tokens unique to each side, compares the joined
/// strings `I`, `I+Da`, `I+Db` pairwise and returns the best ratio.
/// Returns 0 when either input has no tokens.
pub fn token_set_ratio(a: &str, b: &str) -> u8 {
    let ta = token_set(a);
    let tb = token_set(b);
    if ta.is_empty() || tb.is_empty() {
        return 0;
    }
    let shared: Vec<&str> = ta.intersection(&tb).copied().collect();
    let only_a: Vec<&str> = ta.difference(&tb).copied().collect();
    let only_b: Vec<&str> = tb.difference(&ta).copied().collect();

    let s0 = shared.join(" ");
    let s1 = [shared.as_slice(), only_a.as_slice()].concat().join(" ");
    let s2 = [shared.as_slice(), only_b.as_slice()].concat().join(" ");

    similarity_ratio(&s0, &s1)
        .max(similarity_ratio(&s0, &s2))
        .max(similarity_ratio(&s1, &s2))
}

/// Searches for a fuzzy occurrence of `needle` anywhere in `haystack`.
///
/// Both inputs are normalized here. Token windows of widths `k-1`, `k`, `k+1`
/// (`k` = needle token count, widths clamped to at least one token) are
/// scored with [`token_set_ratio`]; the best window wins, with ties broken by
/// earliest start, then narrowest width. Windows wider than the haystack do
/// not exist, so a needle more than one token longer than the whole haystack
/// scores 0. `found` holds iff the best score reaches `threshold`.
pub fn contains_fuzzy(
    needle: &str,
    haystack: &str,
    threshold: u32,
) -> Result<(bool, MatchResult), MatchError> {
    if threshold > 100 {
        return Err(MatchError::InvalidThreshold(threshold));
    }
    let needle_norm = normalize(needle);
    let needle_tokens = needle_norm.split_whitespace().count();
    if needle_tokens == 0 {
        return Err(MatchError::EmptyNeedle);
    }
    let hay_norm = normalize(haystack);
    let hay_tokens: Vec<&str> = hay_norm.split_whitespace().collect();

    let mut best = MatchResult {
        score: 0,
        matched_window: String::new(),
        window_span: (0, 0),
    };
    if hay_tokens.is_empty() {
        return Ok((best.score as u32 >= threshold, best));
    }

    let mut widths: Vec<usize> = [
        needle_tokens.saturating_sub(1),
        needle_tokens,
        needle_tokens + 1,
    ]
    .iter()
    .map(|&w| w.max(1))
    .collect();
    widths.sort_unstable();
    widths.dedup();

    for start in 0..hay_tokens.len() {
        for &width in &widths {
            let end = start + width;
            if end > hay_tokens.len() {
                continue;
            }
            let window = hay_tokens[start..end].join(" ");
            let score = token_set_ratio(&needle_norm, &window);
            if score > best.score {
                best = MatchResult {
                    score,
                    matched_window: window,
                    window_span: (start, end),
                };
            }
        }
    }
    Ok((best.score as u32 >= threshold, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent quadratic DP oracle for the unit-cost edit distance.
    fn oracle_edit_distance(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 0..=a.len() {
            dp[i][0] = i;
        }
        for j in 0..=b.len() {
            dp[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = dp[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
            }
        }
        dp[a.len()][b.len()]
    }

    fn oracle_ratio(a: &str, b: &str) -> u8 {
        let longest = a.chars().count().max(b.chars().count());
        if longest == 0 {
            return 100;
        }
        let d = oracle_edit_distance(a, b);
        let exact = 100.0 * (longest - d) as f64 / longest as f64;
        (exact + 0.5).floor() as u8
    }

    #[test]
    fn normalize_strips_punctuation_and_case() {
        assert_eq!(normalize("Wendy's!"), "wendy s");
        assert_eq!(normalize("  Ice   Cream "), "ice cream");
        assert_eq!(normalize(""), "");
    }

    #[test]
    fn similarity_ratio_known_values() {
        assert_eq!(similarity_ratio("abc", "abc"), 100);
        // distance 3 over max length 7: 100*(1 - 3/7) = 57.14 -> 57
        assert_eq!(similarity_ratio("kitten", "sitting"), 57);
        assert_eq!(similarity_ratio("a", ""), 0);
        assert_eq!(similarity_ratio("", ""), 100);
    }

    #[test]
    fn token_set_ratio_known_values() {
        assert_eq!(token_set_ratio("ice cream", "cream ice"), 100);
        // frozen from the formula oracle: I={meatball}, Da={sub},
        // Db={sandwich}; best pair is ("meatball", "meatball sub") at 67
        assert_eq!(token_set_ratio("meatball sub", "meatball sandwich"), 67);
        assert_eq!(token_set_ratio("", "x"), 0);
        assert_eq!(token_set_ratio("", ""), 0);
    }

    #[test]
    fn contains_fuzzy_verbatim_presence() {
        let (found, best) =
            contains_fuzzy("Thanksgiving", "wear the gown I gave you on last Thanksgiving", 80)
                .unwrap();
        assert!(found);
        assert_eq!(best.score, 100);
        assert!(best.matched_window.contains("thanksgiving"));
    }

    #[test]
    fn contains_fuzzy_rejects_replacement() {
        // the adaptation replaced "last Thanksgiving" with "Diwali last time"
        let (found, best) =
            contains_fuzzy("Thanksgiving", "wear the kurta I gave you on Diwali last time", 80)
                .unwrap();
        assert!(!found, "best window scored {}", best.score);
    }

    #[test]
    fn contains_fuzzy_empty_cases() {
        let (found, best) = contains_fuzzy("token", "", 80).unwrap();
        assert!(!found);
        assert_eq!(best.score, 0);
        assert_eq!(best.window_span, (0, 0));
        assert_eq!(contains_fuzzy("", "anything", 80), Err(MatchError::EmptyNeedle));
        assert_eq!(contains_fuzzy("!!!", "anything", 80), Err(MatchError::EmptyNeedle));
        assert_eq!(
            contains_fuzzy("x", "y", 101),
            Err(MatchError::InvalidThreshold(101))
        );
    }

    #[test]
    fn contains_fuzzy_ties_break_to_earliest_window() {
        let (_, best) = contains_fuzzy("alpha", "alpha beta alpha", 80).unwrap();
        assert_eq!(best.window_span.0, 0);
    }

    #[test]
    fn contains_fuzzy_needle_much_wider_than_haystack_scores_zero() {
        // narrowest allowed window is k-1 = 3 tokens; none fit
        let (found, best) = contains_fuzzy("one two three four", "one two", 0).unwrap();
        assert_eq!(best.score, 0);
        assert!(found, "threshold 0 is always met");
        // k-1 window equal to the haystack still matches
        let (_, best) = contains_fuzzy("one two three", "one two", 0).unwrap();
        assert!(best.score > 0);
    }

    proptest! {
        #[test]
        fn similarity_matches_dp_oracle(a in "[a-d ]{0,32}", b in "[a-d ]{0,32}") {
            prop_assert_eq!(similarity_ratio(&a, &b), oracle_ratio(&a, &b));
        }

        #[test]
        fn similarity_is_symmetric(a in "[a-f]{0,16}", b in "[a-f]{0,16}") {
            prop_assert_eq!(similarity_ratio(&a, &b), similarity_ratio(&b, &a));
        }

        #[test]
        fn similarity_100_iff_equal(a in "[a-c]{0,12}", b in "[a-c]{0,12}") {
            prop_assert_eq!(similarity_ratio(&a, &b) == 100, a == b);
        }

        #[test]
        fn token_set_ratio_ignores_token_order(
            tokens in proptest::collection::vec("[a-e]{1,4}", 1..6),
            other in proptest::collection::vec("[a-e]{1,4}", 1..6),
            seed in 0u64..1000,
        ) {
            let mut shuffled = tokens.clone();
            // deterministic permutation derived from the seed
            let n = shuffled.len();
            for i in (1..n).rev() {
                let j = (seed as usize).wrapping_mul(31).wrapping_add(i) % (i + 1);
                shuffled.swap(i, j);
            }
            let a = tokens.join(" ");
            let a_perm = shuffled.join(" ");
            let b = other.join(" ");
            prop_assert_eq!(token_set_ratio(&a, &b), token_set_ratio(&a_perm, &b));
        }

        #[test]
        fn appending_tokens_never_lowers_best_score(
            needle in proptest::collection::vec("[a-d]{1,4}", 1..4),
            hay in proptest::collection::vec("[a-d]{1,4}", 0..8),
            extra in proptest::collection::vec("[a-d]{1,4}", 0..8),
        ) {
            let needle = needle.join(" ");
            let short = hay.join(" ");
            let long = [hay, extra].concat().join(" ");
            let (_, before) = contains_fuzzy(&needle, &short, 80).unwrap();
            let (_, after) = contains_fuzzy(&needle, &long, 80).unwrap();
            prop_assert!(after.score >= before.score);
        }
    }
}
