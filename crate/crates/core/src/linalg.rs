//! Probability-matrix types and the small dense linear algebra the estimators
//! rely on.
//!
//! Conditional pmfs are stored as column-stochastic matrices: the entry at
//! `(i, j)` is `p(a_i | b_j)`, so every column is a pmf.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value threshold used for every numeric rank decision.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Column-sum tolerance for validated pmfs.
pub const PMF_TOL: f64 = 1e-12;

/// Cardinalities of the five categorical axes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySpec {
    /// Number of source domains.
    pub k_e: usize,
    /// Confounder cardinality.
    pub k_u: usize,
    /// Proxy cardinality.
    pub k_w: usize,
    /// Treatment cardinality.
    pub k_x: usize,
    /// Outcome cardinality.
    pub k_y: usize,
    #[serde(default, skip_serializing_if = "AxisLabels::is_empty")]
    pub labels: AxisLabels,
}

/// Optional human-readable category names per axis.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisLabels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<String>>,
}

impl AxisLabels {
    pub fn is_empty(&self) -> bool {
        self.e.is_none() && self.u.is_none() && self.w.is_none() && self.x.is_none() && self.y.is_none()
    }
}

impl CategorySpec {
    pub fn new(k_e: usize, k_u: usize, k_w: usize, k_x: usize, k_y: usize) -> Result<Self> {
        let dims = CategorySpec {
            k_e,
            k_u,
            k_w,
            k_x,
            k_y,
            labels: AxisLabels::default(),
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn with_labels(mut self, labels: AxisLabels) -> Result<Self> {
        self.labels = labels;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("k_E", self.k_e, &self.labels.e),
            ("k_U", self.k_u, &self.labels.u),
            ("k_W", self.k_w, &self.labels.w),
            ("k_X", self.k_x, &self.labels.x),
            ("k_Y", self.k_y, &self.labels.y),
        ];
        for (name, k, labels) in axes {
            if k == 0 {
                return Err(Error::InvalidDims(format!("{name} must be at least 1")));
            }
            if let Some(labels) = labels {
                if labels.len() != k {
                    return Err(Error::InvalidDims(format!(
                        "{name} = {k} but {} labels given",
                        labels.len()
                    )));
                }
                let mut sorted: Vec<&String> = labels.iter().collect();
                sorted.sort();
                if sorted.windows(2).any(|p| p[0] == p[1]) {
                    return Err(Error::InvalidDims(format!("duplicate label on axis {name}")));
                }
            }
        }
        Ok(())
    }
}

/// First failure found by [`validate_stochastic`].
#[derive(Debug, Clone, PartialEq)]
pub enum StochasticViolation {
    ColumnSum { column: usize, sum: f64 },
    Negative { row: usize, column: usize, value: f64 },
    Zero { row: usize, column: usize },
    NonFinite { row: usize, column: usize },
}

impl fmt::Display for StochasticViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StochasticViolation::ColumnSum { column, sum } => {
                write!(f, "column {column} sums to {sum}")
            }
            StochasticViolation::Negative { row, column, value } => {
                write!(f, "entry ({row}, {column}) is negative ({value})")
            }
            StochasticViolation::Zero { row, column } => {
                write!(f, "entry ({row}, {column}) is zero but full support is required")
            }
            StochasticViolation::NonFinite { row, column } => {
                write!(f, "entry ({row}, {column}) is not finite")
            }
        }
    }
}

/// Checks that every column of `m` is a pmf: entries non-negative (strictly
/// positive when `strict_positive`) and summing to one within `tol`.
pub fn validate_stochastic(
    m: &DMatrix<f64>,
    tol: f64,
    strict_positive: bool,
) -> std::result::Result<(), StochasticViolation> {
    for column in 0..m.ncols() {
        let mut sum = 0.0;
        for row in 0..m.nrows() {
            let value = m[(row, column)];
            if !value.is_finite() {
                return Err(StochasticViolation::NonFinite { row, column });
            }
            if value < 0.0 {
                return Err(StochasticViolation::Negative { row, column, value });
            }
            if strict_positive && value == 0.0 {
                return Err(StochasticViolation::Zero { row, column });
            }
            sum += value;
        }
        if (sum - 1.0).abs() > tol {
            return Err(StochasticViolation::ColumnSum { column, sum });
        }
    }
    Ok(())
}

/// A validated conditional pmf `P(A|B)` with `rows = k_A`, `cols = k_B`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix(DMatrix<f64>);

impl StochasticMatrix {
    pub fn new(m: DMatrix<f64>, strict_positive: bool) -> std::result::Result<Self, StochasticViolation> {
        validate_stochastic(&m, PMF_TOL, strict_positive)?;
        Ok(StochasticMatrix(m))
    }

    /// Builds from a list of columns, each a pmf over the rows.
    pub fn from_columns(
        columns: &[Vec<f64>],
        strict_positive: bool,
    ) -> std::result::Result<Self, StochasticViolation> {
        let rows = columns.first().map_or(0, Vec::len);
        let m = DMatrix::from_fn(rows, columns.len(), |r, c| {
            columns[c].get(r).copied().unwrap_or(f64::NAN)
        });
        Self::new(m, strict_positive)
    }

    /// Builds from dense row-major entries.
    pub fn from_row_major(
        rows: usize,
        cols: usize,
        entries: &[f64],
        strict_positive: bool,
    ) -> std::result::Result<Self, StochasticViolation> {
        Self::new(DMatrix::from_row_slice(rows, cols, entries), strict_positive)
    }

    pub fn identity(k: usize) -> Self {
        StochasticMatrix(DMatrix::identity(k, k))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        self.0.column(col).iter().copied().collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols()).map(|c| self.column(c)).collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// A validated marginal pmf.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(entries: Vec<f64>, strict_positive: bool) -> std::result::Result<Self, StochasticViolation> {
        let m = DMatrix::from_column_slice(entries.len(), 1, &entries);
        validate_stochastic(&m, PMF_TOL, strict_positive)?;
        Ok(ProbVector(entries))
    }

    pub fn uniform(k: usize) -> Self {
        ProbVector(vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Singular values in descending order. There are `min(rows, cols)` of them.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|p, q| q.total_cmp(p));
    sv
}

/// `sigma_max / sigma_min`, or `+inf` when the smallest singular value is zero
/// to working precision (below `max(1e-300, eps * max(rows, cols) * sigma_max)`).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = singular_values(a);
    let (Some(&max), Some(&min)) = (sv.first(), sv.last()) else {
        return f64::INFINITY;
    };
    let floor = (f64::EPSILON * a.nrows().max(a.ncols()) as f64 * max).max(1e-300);
    if min < floor {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Number of singular values at least `rel_tol * sigma_max`.
pub fn numeric_row_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(a);
    match sv.first() {
        Some(&max) if max > 0.0 => sv.iter().filter(|&&s| s >= rel_tol * max).count(),
        _ => 0,
    }
}

/// Moore–Penrose pseudo-inverse via SVD; singular values below
/// `rel_tol * sigma_max` are treated as zero.
pub fn pseudoinverse(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, m);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let max = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = rel_tol * max;
    let mut out = DMatrix::zeros(n, m);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let inv = 1.0 / s;
        for i in 0..n {
            let vik = v_t[(k, i)] * inv;
            for j in 0..m {
                out[(i, j)] += vik * u[(j, k)];
            }
        }
    }
    out
}

/// Right pseudo-inverse `A^T (A A^T)^{-1}` of a matrix with linearly
/// independent rows, computed through the SVD.
pub fn right_pseudoinverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    right_pseudoinverse_with_tol(a, DEFAULT_RANK_TOL)
}

pub fn right_pseudoinverse_with_tol(a: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::Shape("right pseudo-inverse of an empty matrix".into()));
    }
    if m > n {
        return Err(Error::SingularSystem { ratio: 0.0 });
    }
    let sv = singular_values(a);
    let max = sv[0];
    let min = sv[sv.len() - 1];
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if ratio < rel_tol {
        return Err(Error::SingularSystem { ratio });
    }
    Ok(pseudoinverse(a, 0.0))
}

/// `A^T (A A^T + delta I)^{-1}`: a regularised right inverse for exploratory
/// use on nearly rank-deficient inputs. Requires `delta > 0`.
pub fn ridge_right_pseudoinverse(a: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("ridge delta must be positive".into()));
    }
    let gram = a * a.transpose() + DMatrix::identity(a.nrows(), a.nrows()) * delta;
    let inv = gram
        .try_inverse()
        .ok_or(Error::SingularSystem { ratio: 0.0 })?;
    Ok(a.transpose() * inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn validate_examples() {
        let ok = DMatrix::from_row_slice(2, 2, &[0.3, 0.6, 0.7, 0.4]);
        assert!(validate_stochastic(&ok, 1e-12, false).is_ok());

        let bad = DMatrix::from_row_slice(2, 1, &[0.5, 0.6]);
        match validate_stochastic(&bad, 1e-12, false) {
            Err(StochasticViolation::ColumnSum { column: 0, sum }) => {
                assert!((sum - 1.1).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }

        let eye = DMatrix::<f64>::identity(3, 3);
        assert!(validate_stochastic(&eye, 1e-12, false).is_ok());
        assert!(matches!(
            validate_stochastic(&eye, 1e-12, true),
            Err(StochasticViolation::Zero { .. })
        ));
    }

    #[test]
    fn negative_entry_is_reported() {
        let m = DMatrix::from_row_slice(2, 1, &[1.5, -0.5]);
        assert!(matches!(
            validate_stochastic(&m, 1e-12, false),
            Err(StochasticViolation::Negative { row: 1, column: 0, .. })
        ));
    }

    #[test]
    fn pseudoinverse_examples() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!(max_abs_diff(&right_pseudoinverse(&eye).unwrap(), &eye) < 1e-14);

        let a = DMatrix::from_row_slice(2, 2, &[0.3, 0.6, 0.7, 0.4]);
        let det = -0.3;
        let expected = DMatrix::from_row_slice(2, 2, &[0.4, -0.6, -0.7, 0.3]) / det;
        let inv = right_pseudoinverse(&a).unwrap();
        assert!(max_abs_diff(&inv, &expected) < 1e-12);
        assert!(max_abs_diff(&(&a * &inv), &DMatrix::identity(2, 2)) < 1e-12);

        let wide = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(max_abs_diff(&right_pseudoinverse(&wide).unwrap(), &wide.transpose()) < 1e-14);
    }

    #[test]
    fn singular_and_tall_inputs_are_refused() {
        let rank_one = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert!(matches!(
            right_pseudoinverse(&rank_one),
            Err(Error::SingularSystem { .. })
        ));
        let tall = DMatrix::from_row_slice(3, 2, &[0.2, 0.4, 0.4, 0.2, 0.4, 0.4]);
        assert!(right_pseudoinverse(&tall).is_err());
    }

    #[test]
    fn condition_number_examples() {
        assert!((condition_number(&DMatrix::identity(4, 4)) - 1.0).abs() < 1e-14);
        let rank_one = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(condition_number(&rank_one), f64::INFINITY);
        let b2 = counterexample_proxy_matrix();
        assert_eq!(condition_number(&b2), f64::INFINITY);
    }

    fn counterexample_proxy_matrix() -> DMatrix<f64> {
        DMatrix::from_row_slice(
            3,
            3,
            &[0.23, 0.3, 0.2, 0.46, 0.6, 0.4, 0.31, 0.1, 0.4],
        )
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numeric_row_rank(&DMatrix::identity(4, 4), DEFAULT_RANK_TOL), 4);
        assert_eq!(numeric_row_rank(&counterexample_proxy_matrix(), DEFAULT_RANK_TOL), 2);
        let col = DMatrix::from_column_slice(3, 1, &[0.2, 0.3, 0.5]);
        assert_eq!(numeric_row_rank(&col, DEFAULT_RANK_TOL), 1);
    }

    #[test]
    fn ridge_inverse_approaches_exact_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 0.6, 0.7, 0.4]);
        let ridge = ridge_right_pseudoinverse(&a, 1e-12).unwrap();
        let exact = right_pseudoinverse(&a).unwrap();
        assert!(max_abs_diff(&ridge, &exact) < 1e-9);
        assert!(ridge_right_pseudoinverse(&a, 0.0).is_err());
    }

    #[test]
    fn category_spec_rules() {
        assert!(CategorySpec::new(2, 2, 2, 2, 2).is_ok());
        assert!(CategorySpec::new(0, 2, 2, 2, 2).is_err());
        let dims = CategorySpec::new(2, 1, 1, 1, 1).unwrap();
        let dup = AxisLabels {
            e: Some(vec!["a".into(), "a".into()]),
            ..Default::default()
        };
        assert!(dims.clone().with_labels(dup).is_err());
        let short = AxisLabels {
            e: Some(vec!["a".into()]),
            ..Default::default()
        };
        assert!(dims.with_labels(short).is_err());
    }

    fn matrix_strategy(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
        (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
            proptest::collection::vec(0.01f64..1.0, r * c)
                .prop_map(move |v| DMatrix::from_row_slice(r, c, &v))
        })
    }

    /// Wide matrices with rows well away from linear dependence.
    fn full_row_rank_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (1usize..=4, 0usize..=3).prop_flat_map(|(r, extra)| {
            let c = r + extra;
            proptest::collection::vec(-1.0f64..1.0, r * c).prop_map(move |v| {
                let mut m = DMatrix::from_row_slice(r, c, &v);
                for i in 0..r {
                    m[(i, i)] += 3.0;
                }
                m
            })
        })
    }

    proptest! {
        #[test]
        fn right_inverse_is_a_right_inverse(a in full_row_rank_strategy()) {
            let pinv = right_pseudoinverse(&a).unwrap();
            let prod = &a * &pinv;
            prop_assert!(max_abs_diff(&prod, &DMatrix::identity(a.nrows(), a.nrows())) < 1e-9);
            // The literal A^T (A A^T)^{-1} product agrees on well-conditioned input.
            let literal = a.transpose() * (&a * a.transpose()).try_inverse().unwrap();
            prop_assert!(max_abs_diff(&pinv, &literal) < 1e-9);
        }

        #[test]
        fn square_right_inverse_is_the_inverse(a in full_row_rank_strategy().prop_filter("square", |m| m.is_square())) {
            let inv = a.clone().try_inverse().unwrap();
            prop_assert!(max_abs_diff(&right_pseudoinverse(&a).unwrap(), &inv) < 1e-9);
        }

        #[test]
        fn condition_number_scale_and_permutation_invariant(a in matrix_strategy(4, 4), scale in 0.01f64..100.0, seed in 0u64..1000) {
            let kappa = condition_number(&a);
            let scaled = condition_number(&(&a * scale));
            if kappa.is_finite() && kappa < 1e8 {
                prop_assert!((kappa - scaled).abs() <= 1e-10 * kappa);
                let mut rows: Vec<usize> = (0..a.nrows()).collect();
                let mut cols: Vec<usize> = (0..a.ncols()).collect();
                rows.rotate_left((seed as usize) % a.nrows());
                cols.reverse();
                let permuted = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(rows[i], cols[j])]);
                prop_assert!((condition_number(&permuted) - kappa).abs() <= 1e-10 * kappa);
            }
        }

        #[test]
        fn rank_invariant_under_transpose_and_column_permutation(a in matrix_strategy(4, 5)) {
            let r = numeric_row_rank(&a, DEFAULT_RANK_TOL);
            let mut cols: Vec<usize> = (0..a.ncols()).collect();
            cols.reverse();
            let permuted = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, cols[j])]);
            prop_assert_eq!(numeric_row_rank(&permuted.transpose(), DEFAULT_RANK_TOL), r);
        }
    }
}
