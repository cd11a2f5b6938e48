//! Kendall rank correlation with tie correction, significance, and
//! interpretation bands for 1-5 rating data.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("input lengths differ: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("tau is undefined: {0} side is constant")]
    UndefinedTau(&'static str),
    #[error("columns have differing lengths")]
    RaggedTable,
    #[error("exact p-value supported only for n <= {max}, got {n}")]
    ExactTooLarge { n: usize, max: usize },
}

/// Interpretation bands for |tau| following Botsch's convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationBand {
    VeryWeak,
    Weak,
    Moderate,
    Strong,
}

impl std::fmt::Display for CorrelationBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::VeryWeak => write!(f, "very weak"),
            Self::Weak => write!(f, "weak"),
            Self::Moderate => write!(f, "moderate"),
            Self::Strong => write!(f, "strong"),
        }
    }
}

/// How the two-sided p-value is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    /// z = 3*tau*sqrt(n(n-1)) / sqrt(2(2n+5)) against the standard normal.
    NormalApproximation,
    /// Enumeration of all permutations of one side (n <= 10).
    ExactPermutation,
}

impl std::fmt::Display for PValueMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NormalApproximation => write!(f, "normal approximation"),
            Self::ExactPermutation => write!(f, "exact permutation"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauResult {
    pub tau: f64,
    pub p_value: f64,
    pub n: usize,
    pub band: CorrelationBand,
    pub method: PValueMethod,
}

const EXACT_MAX_N: usize = 10;

/// Tie-corrected Kendall rank correlation (tau-b) with a two-sided p-value
/// from the normal approximation.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<TauResult, StatsError> {
    kendall_tau_b_with(x, y, PValueMethod::NormalApproximation)
}

/// As [`kendall_tau_b`] with an explicit p-value method. The exact
/// permutation method enumerates all n! orderings and is limited to n <= 10.
pub fn kendall_tau_b_with(
    x: &[f64],
    y: &[f64],
    method: PValueMethod,
) -> Result<TauResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { x: x.len(), y: y.len() });
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFewObservations(n));
    }
    let tau = tau_b_statistic(x, y)?;
    let p_value = match method {
        PValueMethod::NormalApproximation => normal_p_value(tau, n),
        PValueMethod::ExactPermutation => {
            if n > EXACT_MAX_N {
                return Err(StatsError::ExactTooLarge { n, max: EXACT_MAX_N });
            }
            exact_p_value(x, y, tau)?
        }
    };
    Ok(TauResult { tau, p_value, n, band: interpret_tau(tau), method })
}

/// tau-b = (C - D) / sqrt((n0 - n1)(n0 - n2)) where n0 = n(n-1)/2 and
/// n1/n2 are the tie corrections for each side.
///
/// Computed by sorting on x and counting discordant pairs as merge-sort
/// inversions of y, so large inputs stay O(n log n). The quadratic
/// pair-enumeration oracle in the tests is the independent reference.
fn tau_b_statistic(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        x[a].partial_cmp(&x[b])
            .unwrap()
            .then(y[a].partial_cmp(&y[b]).unwrap())
    });

    let n0 = n as i64 * (n as i64 - 1) / 2;
    let ties_x = joint_run_pairs(&idx, |i| x[i], |_| 0.0);
    let ties_xy = joint_run_pairs(&idx, |i| x[i], |i| y[i]);
    let mut y_sorted_by_x: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let ties_y = {
        let mut ys = y.to_vec();
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted_run_pairs(&ys)
    };

    if ties_x == n0 {
        return Err(StatsError::UndefinedTau("x"));
    }
    if ties_y == n0 {
        return Err(StatsError::UndefinedTau("y"));
    }

    let discordant = count_inversions(&mut y_sorted_by_x) as i64;
    // pairs tied in x are never inversions after the (x, y) sort, so
    // C - D = n0 - ties_x - ties_y + ties_xy - 2*discordant
    let con_minus_dis = n0 - ties_x - ties_y + ties_xy - 2 * discordant;
    let denom = ((n0 - ties_x) as f64 * (n0 - ties_y) as f64).sqrt();
    Ok(con_minus_dis as f64 / denom)
}

/// Number of pairs lying in equal-key runs of `idx` under the composite key
/// `(kx, ky)`.
fn joint_run_pairs(idx: &[usize], kx: impl Fn(usize) -> f64, ky: impl Fn(usize) -> f64) -> i64 {
    let mut pairs = 0i64;
    let mut run = 1i64;
    for w in idx.windows(2) {
        if kx(w[0]) == kx(w[1]) && ky(w[0]) == ky(w[1]) {
            run += 1;
        } else {
            pairs += run * (run - 1) / 2;
            run = 1;
        }
    }
    pairs + run * (run - 1) / 2
}

fn sorted_run_pairs(sorted: &[f64]) -> i64 {
    let mut pairs = 0i64;
    let mut run = 1i64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            pairs += run * (run - 1) / 2;
            run = 1;
        }
    }
    pairs + run * (run - 1) / 2
}

/// Counts strict inversions (i < j with v[i] > v[j]) by merge sort.
fn count_inversions(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mut buf = v.to_vec();
    merge_count(v, &mut buf)
}

fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left_buf, right_buf) = buf.split_at_mut(mid);
    let mut inversions = {
        let (left, right) = v.split_at_mut(mid);
        merge_count(left, left_buf) + merge_count(right, right_buf)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf[k] = v[i];
            i += 1;
        } else {
            buf[k] = v[j];
            inversions += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    while i < mid {
        buf[k] = v[i];
        i += 1;
        k += 1;
    }
    while j < n {
        buf[k] = v[j];
        j += 1;
        k += 1;
    }
    v.copy_from_slice(&buf[..n]);
    inversions
}

fn normal_p_value(tau: f64, n: usize) -> f64 {
    let nf = n as f64;
    let z = 3.0 * tau * (nf * (nf - 1.0)).sqrt() / (2.0 * (2.0 * nf + 5.0)).sqrt();
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Fraction of permutations of `y` whose |tau| reaches the observed |tau|.
/// A small slack absorbs floating-point noise in the comparison.
fn exact_p_value(x: &[f64], y: &[f64], observed: f64) -> Result<f64, StatsError> {
    let mut perm = y.to_vec();
    let n = perm.len();
    let mut c = vec![0usize; n];
    let mut at_least = 0u64;
    let mut total = 0u64;
    let threshold = observed.abs() - 1e-12;

    let mut tally = |p: &[f64]| {
        total += 1;
        if let Ok(t) = tau_b_statistic(x, p) {
            if t.abs() >= threshold {
                at_least += 1;
            }
        }
    };
    tally(&perm);
    // Heap's algorithm
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            tally(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(at_least as f64 / total as f64)
}

/// Maps |tau| to its interpretation band: [0, 0.1) very weak, [0.1, 0.2)
/// weak, [0.2, 0.3) moderate, [0.3, 1.0] strong.
pub fn interpret_tau(tau: f64) -> CorrelationBand {
    let t = tau.abs();
    if t < 0.1 {
        CorrelationBand::VeryWeak
    } else if t < 0.2 {
        CorrelationBand::Weak
    } else if t < 0.3 {
        CorrelationBand::Moderate
    } else {
        CorrelationBand::Strong
    }
}

/// One cell of a pairwise correlation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub row: String,
    pub col: String,
    pub result: Option<TauResult>,
    pub significant: bool,
}

/// Pairwise tau over named, same-length columns. The matrix is symmetric
/// with tau = 1 on the diagonal; a cell is significant iff its p-value is
/// below `significance_level`. Cells with undefined tau (a constant column)
/// carry `None`.
pub fn correlation_matrix(
    columns: &[(String, Vec<f64>)],
    significance_level: f64,
) -> Result<Vec<Vec<MatrixCell>>, StatsError> {
    if let Some(first) = columns.first() {
        if columns.iter().any(|(_, v)| v.len() != first.1.len()) {
            return Err(StatsError::RaggedTable);
        }
    }
    let mut rows = Vec::with_capacity(columns.len());
    for (i, (name_i, col_i)) in columns.iter().enumerate() {
        let mut row = Vec::with_capacity(columns.len());
        for (j, (name_j, col_j)) in columns.iter().enumerate() {
            let result = if i == j {
                Some(TauResult {
                    tau: 1.0,
                    p_value: 0.0,
                    n: col_i.len(),
                    band: CorrelationBand::Strong,
                    method: PValueMethod::NormalApproximation,
                })
            } else {
                match kendall_tau_b(col_i, col_j) {
                    Ok(r) => Some(r),
                    Err(StatsError::UndefinedTau(_)) => None,
                    Err(e) => return Err(e),
                }
            };
            let significant = result
                .as_ref()
                .map(|r| r.p_value < significance_level)
                .unwrap_or(false);
            row.push(MatrixCell {
                row: name_i.clone(),
                col: name_j.clone(),
                result,
                significant,
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force pair-counting oracle, kept independent of the merge-sort
    /// implementation above.
    pub(crate) fn oracle_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
        let n = x.len();
        let (mut c, mut d, mut tx, mut ty, mut txy) = (0i64, 0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in (i + 1)..n {
                let a = x[i].partial_cmp(&x[j]).unwrap() as i32;
                let b = y[i].partial_cmp(&y[j]).unwrap() as i32;
                match (a, b) {
                    (0, 0) => txy += 1,
                    (0, _) => tx += 1,
                    (_, 0) => ty += 1,
                    _ if a == b => c += 1,
                    _ => d += 1,
                }
            }
        }
        let n0 = (n * (n - 1) / 2) as i64;
        let n1 = tx + txy;
        let n2 = ty + txy;
        let den = (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt();
        if den == 0.0 {
            None
        } else {
            Some((c - d) as f64 / den)
        }
    }

    #[test]
    fn perfect_concordance_and_discordance() {
        let r = kendall_tau_b(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.tau, 1.0);
        let r = kendall_tau_b(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(r.tau, -1.0);
    }

    #[test]
    fn hand_case_with_ties() {
        // C=4, D=0, one tied pair each side: 4 / sqrt(5*5) = 0.8
        let r = kendall_tau_b(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 3.0]).unwrap();
        assert!((r.tau - 0.8).abs() < 1e-12);
    }

    #[test]
    fn error_cases() {
        assert_eq!(
            kendall_tau_b(&[1.0], &[1.0, 2.0]),
            Err(StatsError::LengthMismatch { x: 1, y: 2 })
        );
        assert_eq!(kendall_tau_b(&[1.0], &[1.0]), Err(StatsError::TooFewObservations(1)));
        assert_eq!(
            kendall_tau_b(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(StatsError::UndefinedTau("x"))
        );
        assert_eq!(
            kendall_tau_b(&[1.0, 2.0, 3.0], &[7.0, 7.0, 7.0]),
            Err(StatsError::UndefinedTau("y"))
        );
        let long: Vec<f64> = (0..11).map(f64::from).collect();
        assert_eq!(
            kendall_tau_b_with(&long, &long, PValueMethod::ExactPermutation),
            Err(StatsError::ExactTooLarge { n: 11, max: 10 })
        );
    }

    #[test]
    fn interpretation_bands() {
        assert_eq!(interpret_tau(0.05), CorrelationBand::VeryWeak);
        assert_eq!(interpret_tau(0.15), CorrelationBand::Weak);
        assert_eq!(interpret_tau(-0.25), CorrelationBand::Moderate);
        assert_eq!(interpret_tau(0.63), CorrelationBand::Strong);
        assert_eq!(interpret_tau(0.3), CorrelationBand::Strong);
        assert_eq!(interpret_tau(-1.0), CorrelationBand::Strong);
        assert_eq!(interpret_tau(0.1), CorrelationBand::Weak);
        assert_eq!(interpret_tau(0.2), CorrelationBand::Moderate);
    }

    #[test]
    fn exact_and_normal_p_values_agree_roughly() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [2.0, 1.0, 4.0, 3.0, 6.0, 5.0];
        let approx = kendall_tau_b(&x, &y).unwrap();
        let exact = kendall_tau_b_with(&x, &y, PValueMethod::ExactPermutation).unwrap();
        assert_eq!(approx.tau, exact.tau);
        assert!(exact.p_value > 0.0 && exact.p_value <= 1.0);
        assert!((approx.p_value - exact.p_value).abs() < 0.25);
    }

    #[test]
    fn matrix_known_shapes() {
        let cols = vec![
            ("a".to_string(), vec![1.0, 2.0, 3.0, 4.0]),
            ("b".to_string(), vec![1.0, 2.0, 3.0, 4.0]),
            ("c".to_string(), vec![4.0, 3.0, 2.0, 1.0]),
        ];
        let m = correlation_matrix(&cols, 0.05).unwrap();
        assert_eq!(m[0][0].result.as_ref().unwrap().tau, 1.0);
        assert_eq!(m[0][1].result.as_ref().unwrap().tau, 1.0);
        assert_eq!(m[0][2].result.as_ref().unwrap().tau, -1.0);
        // symmetric in tau
        assert_eq!(
            m[1][2].result.as_ref().unwrap().tau,
            m[2][1].result.as_ref().unwrap().tau
        );
    }

    #[test]
    fn matrix_rejects_ragged_input() {
        let cols = vec![
            ("a".to_string(), vec![1.0, 2.0]),
            ("b".to_string(), vec![1.0]),
        ];
        assert_eq!(correlation_matrix(&cols, 0.05), Err(StatsError::RaggedTable));
    }

    #[test]
    fn matrix_marks_constant_columns_undefined() {
        let cols = vec![
            ("a".to_string(), vec![1.0, 2.0, 3.0]),
            ("flat".to_string(), vec![5.0, 5.0, 5.0]),
        ];
        let m = correlation_matrix(&cols, 0.05).unwrap();
        assert!(m[0][1].result.is_none());
        assert!(!m[0][1].significant);
        // diagonal stays defined even for the constant column
        assert_eq!(m[1][1].result.as_ref().unwrap().tau, 1.0);
    }

    proptest! {
        #[test]
        fn matches_pair_counting_oracle(
            pairs in proptest::collection::vec((1u8..=5, 1u8..=5), 2..=8)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            match (kendall_tau_b(&x, &y), oracle_tau_b(&x, &y)) {
                (Ok(r), Some(t)) => prop_assert!((r.tau - t).abs() < 1e-12),
                (Err(StatsError::UndefinedTau(_)), None) => {}
                (got, want) => prop_assert!(false, "mismatch: {:?} vs {:?}", got, want),
            }
        }

        #[test]
        fn invariant_under_monotone_transform(
            pairs in proptest::collection::vec((1u8..=5, 1u8..=5), 3..=12)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            // strictly monotone transforms of either side
            let x2: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            let y2: Vec<f64> = y.iter().map(|v| 3.0 * v + 1.0).collect();
            if let Ok(base) = kendall_tau_b(&x, &y) {
                let r = kendall_tau_b(&x2, &y2).unwrap();
                prop_assert!((base.tau - r.tau).abs() < 1e-12);
            }
        }

        #[test]
        fn antisymmetric_for_tie_free_y(
            x in proptest::collection::vec(1u8..=5, 4..=10),
            seed in 0u64..500,
        ) {
            let n = x.len();
            // tie-free y: a permutation of 1..=n
            let mut y: Vec<f64> = (1..=n).map(|v| v as f64).collect();
            for i in (1..n).rev() {
                let j = (seed as usize).wrapping_mul(37).wrapping_add(i * 7) % (i + 1);
                y.swap(i, j);
            }
            let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let reversed: Vec<f64> = y.iter().map(|v| (n + 1) as f64 - v).collect();
            if let Ok(base) = kendall_tau_b(&xf, &y) {
                let r = kendall_tau_b(&xf, &reversed).unwrap();
                prop_assert!((base.tau + r.tau).abs() < 1e-12);
            }
        }
    }
}
