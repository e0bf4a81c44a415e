//! Population-level identification of `q(y | do(x))` in the target domain.
//!
//! The central formula is `q(y|do(x)) = P(y|E,x) P(W|E,x)^+ Q(W)`, valid when
//! `P(W|E,x)` has linearly independent rows. Proxies with dependent rows can
//! first be coarsened with [`reduce_proxy`]; continuous proxies are binned
//! with [`discretize_proxy`] and [`search_partition`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    condition_number, numeric_row_rank, pseudoinverse, ridge_right_pseudoinverse, right_pseudoinverse_with_tol,
    singular_values, DEFAULT_RANK_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentifyOptions {
    /// Relative singular-value threshold for the full-row-rank check.
    pub rank_tol: f64,
    /// Opt-in ridge `delta` added to `A A^T`. Skips the rank check.
    pub ridge: Option<f64>,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions {
            rank_tol: DEFAULT_RANK_TOL,
            ridge: None,
        }
    }
}

/// `P(y|E,x) P(W|E,x)^+ Q(W)`. Refuses rank-deficient `P(W|E,x)`.
pub fn identify_effect(p_y_given_ex: &[f64], p_w_given_ex: &DMatrix<f64>, q_w: &[f64]) -> Result<f64> {
    identify_effect_with(p_y_given_ex, p_w_given_ex, q_w, IdentifyOptions::default())
}

pub fn identify_effect_with(
    p_y_given_ex: &[f64],
    p_w_given_ex: &DMatrix<f64>,
    q_w: &[f64],
    opts: IdentifyOptions,
) -> Result<f64> {
    let (k_w, k_e) = p_w_given_ex.shape();
    if p_y_given_ex.len() != k_e || q_w.len() != k_w {
        return Err(Error::Shape(format!(
            "P(y|E,x) has {} entries and Q(W) {}, but P(W|E,x) is {k_w}x{k_e}",
            p_y_given_ex.len(),
            q_w.len()
        )));
    }
    let pinv = match opts.ridge {
        Some(delta) => ridge_right_pseudoinverse(p_w_given_ex, delta)?,
        None => {
            let rank = numeric_row_rank(p_w_given_ex, opts.rank_tol);
            if rank < k_w {
                return Err(Error::RankDeficient {
                    rank,
                    rows: k_w,
                    condition_number: condition_number(p_w_given_ex),
                });
            }
            right_pseudoinverse_with_tol(p_w_given_ex, opts.rank_tol)?
        }
    };
    Ok(apply_formula(p_y_given_ex, &pinv, q_w))
}

/// Row vector times matrix times column vector.
pub(crate) fn apply_formula(row: &[f64], middle: &DMatrix<f64>, col: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, &r) in row.iter().enumerate() {
        let inner: f64 = col.iter().enumerate().map(|(j, &c)| middle[(i, j)] * c).sum();
        total += r * inner;
    }
    total
}

/// `diag(P(y|U,W,x) P(W|U)) Q(U)`, with `p_y_given_uw[(u, w)] = p(y|u,w,x)`.
pub fn causal_decomposition_effect(p_y_given_uw: &DMatrix<f64>, p_w_given_u: &DMatrix<f64>, q_u: &[f64]) -> Result<f64> {
    let (k_u, k_w) = p_y_given_uw.shape();
    if p_w_given_u.shape() != (k_w, k_u) || q_u.len() != k_u {
        return Err(Error::Shape("P(y|U,W,x) must be k_U x k_W, P(W|U) k_W x k_U and Q(U) length k_U".into()));
    }
    let product = p_y_given_uw * p_w_given_u;
    Ok(product.diagonal().iter().zip(q_u).map(|(d, q)| d * q).sum())
}

/// Conditional effect `q(y | do(x), z)` from one covariate stratum.
pub fn identify_conditional_effect(
    p_y_given_exz: &[f64],
    p_w_given_exz: &DMatrix<f64>,
    q_w_given_z: &[f64],
) -> Result<f64> {
    identify_effect(p_y_given_exz, p_w_given_exz, q_w_given_z)
}

/// Population pieces of one covariate stratum `Z = z`.
#[derive(Debug, Clone)]
pub struct CovariateStratum {
    pub p_y_given_exz: Vec<f64>,
    pub p_w_given_exz: DMatrix<f64>,
    pub q_w_given_z: Vec<f64>,
}

/// `sum_z q(y | do(x), z) q(z)`.
pub fn identify_total_effect_with_covariate(strata: &[CovariateStratum], q_z: &[f64]) -> Result<f64> {
    if strata.len() != q_z.len() {
        return Err(Error::Shape(format!("{} strata but q(z) has {} entries", strata.len(), q_z.len())));
    }
    let mut total = 0.0;
    for (z, (s, &qz)) in strata.iter().zip(q_z).enumerate() {
        let effect = identify_conditional_effect(&s.p_y_given_exz, &s.p_w_given_exz, &s.q_w_given_z)
            .map_err(|e| Error::StratumRankDeficient { z, source: Box::new(e) })?;
        total += effect * qz;
    }
    Ok(total)
}

/// One absorption step of [`reduce_proxy`]: every proxy level labelled
/// `merged` is relabelled `absorbed_into`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub merged: usize,
    pub absorbed_into: usize,
    /// Coefficient of the absorbing row in the linear combination that
    /// expresses the merged row.
    pub coefficient: f64,
}

/// A coarsening `W -> W~` of the proxy levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyMapping {
    pub source_cardinality: usize,
    /// `assignment[w]` is the coarse level of `w`, 0-based.
    pub assignment: Vec<usize>,
    pub merges: Vec<Merge>,
}

impl ProxyMapping {
    pub fn identity(k_w: usize) -> Self {
        ProxyMapping {
            source_cardinality: k_w,
            assignment: (0..k_w).collect(),
            merges: Vec::new(),
        }
    }

    pub fn target_cardinality(&self) -> usize {
        self.assignment.iter().max().map_or(0, |m| m + 1)
    }

    pub fn is_identity(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn map(&self, w: usize) -> usize {
        self.assignment[w]
    }

    /// Replays the merge log from the identity labelling.
    pub fn replay(&self) -> Vec<usize> {
        let mut label: Vec<usize> = (0..self.source_cardinality).collect();
        for m in &self.merges {
            for l in label.iter_mut() {
                if *l == m.merged {
                    *l = m.absorbed_into;
                }
            }
        }
        let mut distinct = label.clone();
        distinct.sort_unstable();
        distinct.dedup();
        label
            .iter()
            .map(|l| distinct.binary_search(l).expect("label present"))
            .collect()
    }

    /// Sums the rows of a `k_W x n` matrix per coarse level.
    pub fn apply_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.target_cardinality(), m.ncols());
        for (w, &t) in self.assignment.iter().enumerate() {
            for c in 0..m.ncols() {
                out[(t, c)] += m[(w, c)];
            }
        }
        out
    }

    /// Sums a pmf over `W` per coarse level.
    pub fn apply_vector(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.target_cardinality()];
        for (w, &t) in self.assignment.iter().enumerate() {
            out[t] += v[w];
        }
        out
    }
}

fn rows_of(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

fn rank_abs(m: &DMatrix<f64>, abs_tol: f64) -> usize {
    singular_values(m).iter().filter(|&&s| s >= abs_tol && s > 0.0).count()
}

/// Merges linearly dependent proxy levels until `P(W~|E,x)` has full row
/// rank, preserving the rank.
///
/// Dependent rows are processed in ascending order. A dependent row `v_i` is
/// written over the independent rows that precede it,
/// `v_i = sum_j lambda_j v_j`, and absorbed into the first `v_k` with
/// `lambda_k != -1`; adding `v_i` to such a `v_k` keeps the set independent.
pub fn reduce_proxy(p_w_given_ex: &DMatrix<f64>, rel_tol: f64) -> ProxyMapping {
    let k_w = p_w_given_ex.nrows();
    let sigma_max = singular_values(p_w_given_ex).first().copied().unwrap_or(0.0);
    let abs_tol = rel_tol * sigma_max;
    // Each group keeps the original index of the row that absorbed it.
    let mut groups: Vec<(usize, Vec<usize>)> = (0..k_w).map(|w| (w, vec![w])).collect();
    let mut merges = Vec::new();

    let merged_matrix = |groups: &[(usize, Vec<usize>)]| {
        DMatrix::from_fn(groups.len(), p_w_given_ex.ncols(), |g, c| {
            groups[g].1.iter().map(|&w| p_w_given_ex[(w, c)]).sum()
        })
    };

    loop {
        let current = merged_matrix(&groups);
        if groups.len() <= 1 || rank_abs(&current, abs_tol) == groups.len() {
            break;
        }
        let mut independent: Vec<usize> = Vec::new();
        let mut dependent = None;
        for i in 0..groups.len() {
            let mut candidate = independent.clone();
            candidate.push(i);
            if rank_abs(&rows_of(&current, &candidate), abs_tol) > independent.len() {
                independent.push(i);
            } else {
                dependent = Some(i);
                break;
            }
        }
        let Some(i) = dependent else { break };

        let (absorbing, coefficient) = if independent.is_empty() {
            // A zero row: any other level can absorb it.
            (if i == 0 { 1 } else { 0 }, 0.0)
        } else {
            let basis_t = rows_of(&current, &independent).transpose();
            let target = current.row(i).transpose();
            let lambda = pseudoinverse(&basis_t, DEFAULT_RANK_TOL) * target;
            let pos = (0..independent.len())
                .find(|&j| (lambda[j] + 1.0).abs() > 1e-9)
                .unwrap_or(0);
            (independent[pos], lambda[pos])
        };

        let (merged_id, members) = groups.remove(i);
        let absorbing = if absorbing > i { absorbing - 1 } else { absorbing };
        merges.push(Merge {
            merged: merged_id,
            absorbed_into: groups[absorbing].0,
            coefficient,
        });
        groups[absorbing].1.extend(members);
    }

    let mut assignment = vec![0; k_w];
    for (g, (_, members)) in groups.iter().enumerate() {
        for &w in members {
            assignment[w] = g;
        }
    }
    ProxyMapping {
        source_cardinality: k_w,
        assignment,
        merges,
    }
}

/// A finite partition of the proxy's support into `m` bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Bins `[lower, c_1], (c_1, c_2], ..., (c_{m-1}, upper]`; missing bounds
    /// are infinite.
    Cuts {
        cuts: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        upper: Option<f64>,
    },
    /// One singleton bin per listed value.
    Levels(Vec<f64>),
}

impl Partition {
    pub fn cuts(cuts: Vec<f64>) -> Result<Self> {
        let p = Partition::Cuts {
            cuts,
            lower: None,
            upper: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Partition::Cuts { cuts, lower, upper } => {
                if cuts.iter().any(|c| !c.is_finite()) || cuts.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidArgument("cut points must be finite and strictly increasing".into()));
                }
                if let (Some(lo), Some(first)) = (lower, cuts.first()) {
                    if lo > first {
                        return Err(Error::InvalidArgument("lower bound exceeds the first cut".into()));
                    }
                }
                if let (Some(hi), Some(last)) = (upper, cuts.last()) {
                    if hi <= last {
                        return Err(Error::InvalidArgument("upper bound must exceed the last cut".into()));
                    }
                }
            }
            Partition::Levels(levels) => {
                if levels.is_empty() {
                    return Err(Error::InvalidArgument("a level partition needs at least one level".into()));
                }
                let mut sorted = levels.clone();
                sorted.sort_by(f64::total_cmp);
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::InvalidArgument("duplicate level".into()));
                }
            }
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        match self {
            Partition::Cuts { cuts, .. } => cuts.len() + 1,
            Partition::Levels(levels) => levels.len(),
        }
    }

    /// 0-based bin of `value`, if it lies in the support.
    pub fn bin(&self, value: f64) -> Option<usize> {
        if value.is_nan() {
            return None;
        }
        match self {
            Partition::Cuts { cuts, lower, upper } => {
                if lower.is_some_and(|lo| value < lo) || upper.is_some_and(|hi| value > hi) {
                    return None;
                }
                Some(cuts.partition_point(|&c| c < value))
            }
            Partition::Levels(levels) => levels.iter().position(|&l| l == value),
        }
    }
}

/// Codes each reading by its bin (0-based).
pub fn discretize_proxy(values: &[f64], partition: &Partition) -> Result<Vec<usize>> {
    partition.validate()?;
    values
        .iter()
        .map(|&v| partition.bin(v).ok_or(Error::OutOfSupport { value: v }))
        .collect()
}

/// A continuous proxy reading from a source record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyReading {
    pub value: f64,
    pub x: usize,
    /// 0-based source domain.
    pub domain: usize,
}

/// Outcome of [`search_partition`].
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionChoice {
    pub partition: Partition,
    /// Smallest numeric rank of `P(W~|E,x)` over `x`.
    pub rank: usize,
    /// The `k_U`-th largest singular value, minimised over `x`.
    pub score: f64,
}

/// Binned `P(W~|E,x)` for every `x`, or `None` if some `(x, e)` cell is empty.
fn binned_matrices(
    readings: &[ProxyReading],
    partition: &Partition,
    k_x: usize,
    k_e: usize,
) -> Result<Option<Vec<DMatrix<f64>>>> {
    let m = partition.bins();
    let mut counts = vec![DMatrix::<f64>::zeros(m, k_e); k_x];
    for r in readings {
        if r.x >= k_x || r.domain >= k_e {
            return Err(Error::InvalidArgument(format!(
                "reading with x={} in domain {} is out of range",
                r.x + 1,
                r.domain + 1
            )));
        }
        let b = partition.bin(r.value).ok_or(Error::OutOfSupport { value: r.value })?;
        counts[r.x][(b, r.domain)] += 1.0;
    }
    for c in counts.iter_mut() {
        for e in 0..k_e {
            let total: f64 = c.column(e).sum();
            if total == 0.0 {
                return Ok(None);
            }
            c.column_mut(e).scale_mut(1.0 / total);
        }
    }
    Ok(Some(counts))
}

/// Picks a partition of a continuous proxy such that the estimated
/// `P(W~|E,x)` reaches rank `k_u` for every `x`.
///
/// A singleton-level partition is used as is when the readings take between
/// `k_u` and `m_max` distinct values and it is valid. Otherwise empirical
/// quantile partitions with `m = k_u, ..., m_max` bins are scored by the
/// `k_u`-th singular value (worst case over `x`) and the best valid one wins.
pub fn search_partition(
    readings: &[ProxyReading],
    k_x: usize,
    k_e: usize,
    k_u: usize,
    m_max: usize,
    rel_tol: f64,
) -> Result<PartitionChoice> {
    if m_max < k_u || k_u == 0 {
        return Err(Error::InvalidArgument(format!("m_max = {m_max} must be at least k_U = {k_u} >= 1")));
    }
    if readings.is_empty() {
        return Err(Error::EmptyInput("no proxy readings".into()));
    }
    if let Some(r) = readings.iter().find(|r| !r.value.is_finite()) {
        return Err(Error::OutOfSupport { value: r.value });
    }
    let mut sorted: Vec<f64> = readings.iter().map(|r| r.value).collect();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();

    let evaluate = |partition: &Partition| -> Result<Option<(usize, f64)>> {
        let Some(mats) = binned_matrices(readings, partition, k_x, k_e)? else {
            return Ok(None);
        };
        let mut rank = usize::MAX;
        let mut score = f64::INFINITY;
        for m in &mats {
            rank = rank.min(numeric_row_rank(m, rel_tol));
            let sv = singular_values(m);
            score = score.min(sv.get(k_u - 1).copied().unwrap_or(0.0));
        }
        Ok(Some((rank, score)))
    };

    let mut best_rank = 0;
    if distinct.len() >= k_u && distinct.len() <= m_max {
        let levels = Partition::Levels(distinct.clone());
        if let Some((rank, score)) = evaluate(&levels)? {
            best_rank = rank;
            if rank >= k_u {
                return Ok(PartitionChoice {
                    partition: levels,
                    rank,
                    score,
                });
            }
        }
    }

    let n = sorted.len();
    let mut best: Option<PartitionChoice> = None;
    for m in k_u..=m_max {
        let mut cuts: Vec<f64> = (1..m)
            .map(|i| sorted[((i * n).div_ceil(m)).saturating_sub(1).min(n - 1)])
            .collect();
        cuts.dedup();
        // A cut at the maximum would leave the last bin empty.
        cuts.retain(|&c| c < sorted[n - 1]);
        if cuts.len() + 1 < k_u {
            continue;
        }
        let partition = Partition::Cuts {
            cuts,
            lower: None,
            upper: None,
        };
        let Some((rank, score)) = evaluate(&partition)? else {
            continue;
        };
        best_rank = best_rank.max(rank);
        if rank >= k_u && best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(PartitionChoice { partition, rank, score });
        }
    }
    best.ok_or(Error::NoValidPartition { k_u, best_rank })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::validate_stochastic;
    use crate::scm::fixtures::{counterexample, CounterexampleVariant};
    use crate::scm::{population_views, sample_scm_spec, true_effect};
    use crate::{linalg::CategorySpec, rng::seeded};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn two_domain_example_matches_adjustment() {
        // W = U, P(U|E,x) = [[0.3, 0.6], [0.7, 0.4]], p(y|U,x) = (0.2, 0.8), Q(U) = (0.5, 0.5).
        let p_w = DMatrix::from_row_slice(2, 2, &[0.3, 0.6, 0.7, 0.4]);
        let p_y_u = [0.2, 0.8];
        let p_y_e: Vec<f64> = (0..2).map(|e| p_y_u[0] * p_w[(0, e)] + p_y_u[1] * p_w[(1, e)]).collect();
        assert!((p_y_e[0] - 0.62).abs() < 1e-15 && (p_y_e[1] - 0.44).abs() < 1e-15);
        let adjustment = 0.2 * 0.5 + 0.8 * 0.5;
        let effect = identify_effect(&p_y_e, &p_w, &[0.5, 0.5]).unwrap();
        assert!((effect - adjustment).abs() < 1e-12);
        assert!((effect - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scalar_case() {
        let effect = identify_effect(&[0.37], &DMatrix::from_element(1, 1, 1.0), &[1.0]).unwrap();
        assert!((effect - 0.37).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p_w = DMatrix::identity(2, 2);
        assert!(matches!(identify_effect(&[0.1], &p_w, &[0.5, 0.5]), Err(Error::Shape(_))));
    }

    #[test]
    fn counterexample_is_refused_and_observationally_equivalent() {
        let v1 = counterexample(CounterexampleVariant::First);
        let v2 = counterexample(CounterexampleVariant::Second);
        let a = population_views(&v1, 0, 0).unwrap();
        let b = population_views(&v2, 0, 0).unwrap();
        assert!((&a.p_w_given_ex - &b.p_w_given_ex).abs().max() < 1e-12);
        for (p, q) in a.p_y_given_ex.iter().zip(&b.p_y_given_ex) {
            assert!((p - q).abs() < 1e-12);
        }
        for (p, q) in a.q_w.iter().zip(&b.q_w) {
            assert!((p - q).abs() < 1e-12);
        }
        for views in [&a, &b] {
            let err = identify_effect(&views.p_y_given_ex, &views.p_w_given_ex, &views.q_w).unwrap_err();
            assert!(matches!(err, Error::RankDeficient { rank: 2, rows: 3, .. }), "{err}");
        }
        assert!(((true_effect(&v1, 0, 0).unwrap() - true_effect(&v2, 0, 0).unwrap()) - 0.023).abs() < 1e-12);
    }

    #[test]
    fn ridge_option_skips_the_refusal() {
        let v1 = counterexample(CounterexampleVariant::First);
        let a = population_views(&v1, 0, 0).unwrap();
        let opts = IdentifyOptions {
            ridge: Some(1e-6),
            ..Default::default()
        };
        let value = identify_effect_with(&a.p_y_given_ex, &a.p_w_given_ex, &a.q_w, opts).unwrap();
        assert!(value.is_finite());
    }

    #[test]
    fn decomposition_examples() {
        let v1 = counterexample(CounterexampleVariant::First);
        let d = &v1.dims;
        let p_y_uw = DMatrix::from_fn(d.k_u, d.k_w, |u, w| v1.p_y(u, w, 0)[0]);
        let value = causal_decomposition_effect(&p_y_uw, v1.p_w_given_u.as_matrix(), v1.q_u.as_slice()).unwrap();
        assert!((value - 0.39).abs() < 1e-12);

        let constant = DMatrix::from_element(3, 3, 0.42);
        let value = causal_decomposition_effect(&constant, v1.p_w_given_u.as_matrix(), &[0.2, 0.5, 0.3]).unwrap();
        assert!((value - 0.42).abs() < 1e-15);
    }

    #[test]
    fn decomposition_matches_true_effect_on_random_specs() {
        let mut rng = seeded(77);
        for _ in 0..50 {
            let dims = CategorySpec::new(3, rng.random_range(1..4), rng.random_range(1..4), 2, 3).unwrap();
            let spec = sample_scm_spec(&dims, &mut rng).unwrap();
            for x in 0..2 {
                for y in 0..3 {
                    let p_y_uw = DMatrix::from_fn(dims.k_u, dims.k_w, |u, w| spec.p_y(u, w, x)[y]);
                    let a = causal_decomposition_effect(&p_y_uw, spec.p_w_given_u.as_matrix(), spec.q_u.as_slice())
                        .unwrap();
                    let b = true_effect(&spec, x, y).unwrap();
                    assert!((a - b).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn identification_matches_truth_on_random_specs() {
        let mut rng = seeded(5);
        for _ in 0..50 {
            let dims = CategorySpec::new(3, 2, 2, 2, 2).unwrap();
            let spec = sample_scm_spec(&dims, &mut rng).unwrap();
            let views = population_views(&spec, 1, 0).unwrap();
            let effect = identify_effect(&views.p_y_given_ex, &views.p_w_given_ex, &views.q_w).unwrap();
            assert!((effect - true_effect(&spec, 1, 0).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn full_rank_input_maps_to_identity() {
        let m = DMatrix::from_row_slice(2, 2, &[0.3, 0.6, 0.7, 0.4]);
        let mapping = reduce_proxy(&m, DEFAULT_RANK_TOL);
        assert!(mapping.is_identity());
        assert_eq!(mapping, ProxyMapping::identity(2));
    }

    #[test]
    fn dependent_row_is_absorbed_into_first_row() {
        let m = DMatrix::from_row_slice(3, 2, &[0.2, 0.4, 0.4, 0.2, 0.4, 0.4]);
        // Oracle: solve 0.2 a + 0.4 b = 0.4, 0.4 a + 0.2 b = 0.4 by Cramer's rule.
        let det: f64 = 0.2 * 0.2 - 0.4 * 0.4;
        let a = (0.4 * 0.2 - 0.4 * 0.4) / det;
        let b = (0.2 * 0.4 - 0.4 * 0.4) / det;
        assert!((a - 2.0 / 3.0).abs() < 1e-12 && (b - 2.0 / 3.0).abs() < 1e-12);

        let mapping = reduce_proxy(&m, DEFAULT_RANK_TOL);
        assert_eq!(mapping.assignment, vec![0, 1, 0]);
        assert_eq!(mapping.merges.len(), 1);
        assert_eq!(mapping.merges[0].merged, 2);
        assert_eq!(mapping.merges[0].absorbed_into, 0);
        assert!((mapping.merges[0].coefficient - a).abs() < 1e-10);
        let merged = mapping.apply_matrix(&m);
        let expected = DMatrix::from_row_slice(2, 2, &[0.6, 0.8, 0.4, 0.2]);
        assert!((merged - expected).abs().max() < 1e-12);
        assert_eq!(mapping.replay(), mapping.assignment);
    }

    #[test]
    fn counterexample_structure_reduces_to_two_levels() {
        let p_w_u = counterexample(CounterexampleVariant::First).p_w_given_u.into_matrix();
        let p_u_e = DMatrix::from_row_slice(3, 4, &[0.5, 0.2, 0.1, 0.3, 0.3, 0.3, 0.6, 0.3, 0.2, 0.5, 0.3, 0.4]);
        let p_w_e = &p_w_u * &p_u_e;
        assert_eq!(numeric_row_rank(&p_w_e, DEFAULT_RANK_TOL), 2);
        let mapping = reduce_proxy(&p_w_e, DEFAULT_RANK_TOL);
        assert_eq!(mapping.target_cardinality(), 2);
        assert_eq!(numeric_row_rank(&mapping.apply_matrix(&p_w_e), DEFAULT_RANK_TOL), 2);
    }

    #[test]
    fn zero_row_is_absorbed() {
        let m = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.5, 0.2, 0.5, 0.8]);
        let mapping = reduce_proxy(&m, DEFAULT_RANK_TOL);
        assert_eq!(mapping.target_cardinality(), 2);
        assert_eq!(mapping.replay(), mapping.assignment);
        let merged = mapping.apply_matrix(&m);
        assert_eq!(numeric_row_rank(&merged, DEFAULT_RANK_TOL), 2);
    }

    fn rank_deficient_stochastic() -> impl Strategy<Value = DMatrix<f64>> {
        (2usize..=4, 2usize..=4, 1usize..=3, any::<u64>()).prop_map(|(base_rows, cols, extra, seed)| {
            let mut rng = seeded(seed);
            let base: Vec<Vec<f64>> = (0..base_rows)
                .map(|_| (0..cols).map(|_| rng.random_range(0.05..1.0)).collect())
                .collect();
            let mut rows = base.clone();
            for _ in 0..extra {
                let a = rng.random_range(0..base_rows);
                let b = rng.random_range(0..base_rows);
                let t: f64 = rng.random_range(0.0..1.0);
                rows.push((0..cols).map(|c| t * base[a][c] + (1.0 - t) * base[b][c]).collect());
            }
            let mut m = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
            for mut col in m.column_iter_mut() {
                let s = col.sum();
                col /= s;
            }
            m
        })
    }

    proptest! {
        #[test]
        fn reduction_preserves_rank_and_column_sums(m in rank_deficient_stochastic()) {
            let rank = numeric_row_rank(&m, DEFAULT_RANK_TOL);
            let mapping = reduce_proxy(&m, DEFAULT_RANK_TOL);
            let merged = mapping.apply_matrix(&m);
            prop_assert_eq!(merged.nrows(), rank);
            prop_assert_eq!(numeric_row_rank(&merged, DEFAULT_RANK_TOL), rank);
            prop_assert!(validate_stochastic(&merged, 1e-12, false).is_ok());
            prop_assert_eq!(mapping.replay(), mapping.assignment.clone());
        }

        #[test]
        fn identification_is_permutation_equivariant(seed in any::<u64>(), shift in 1usize..3) {
            let mut rng = seeded(seed);
            let dims = CategorySpec::new(3, 3, 3, 2, 2).unwrap();
            let spec = sample_scm_spec(&dims, &mut rng).unwrap();
            let views = population_views(&spec, 0, 1).unwrap();
            if let Ok(base) = identify_effect(&views.p_y_given_ex, &views.p_w_given_ex, &views.q_w) {
                if condition_number(&views.p_w_given_ex) < 1e4 {
                    let perm: Vec<usize> = (0..3).map(|i| (i + shift) % 3).collect();
                    let p_w = DMatrix::from_fn(3, 3, |i, j| views.p_w_given_ex[(perm[i], j)]);
                    let q_w: Vec<f64> = perm.iter().map(|&i| views.q_w[i]).collect();
                    let permuted = identify_effect(&views.p_y_given_ex, &p_w, &q_w).unwrap();
                    prop_assert!((permuted - base).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn discretize_examples() {
        let price = Partition::Cuts {
            cuts: vec![75.0, 125.0, 175.0, 225.0],
            lower: Some(0.0),
            upper: None,
        };
        let codes = discretize_proxy(&[50.0, 100.0, 300.0], &price).unwrap();
        assert_eq!(codes.iter().map(|c| c + 1).collect::<Vec<_>>(), vec![1, 2, 5]);
        assert_eq!(discretize_proxy(&[75.0, 225.0, 225.5], &price).unwrap(), vec![0, 3, 4]);
        assert!(matches!(
            discretize_proxy(&[-1.0], &price),
            Err(Error::OutOfSupport { value }) if value == -1.0
        ));

        let one_bin = Partition::cuts(vec![]).unwrap();
        assert_eq!(discretize_proxy(&[-3.0, 0.0, 1e9], &one_bin).unwrap(), vec![0, 0, 0]);

        let levels = Partition::Levels(vec![1.0, 2.0, 3.0]);
        assert_eq!(discretize_proxy(&[3.0, 1.0, 2.0], &levels).unwrap(), vec![2, 0, 1]);
        assert!(discretize_proxy(&[2.5], &levels).is_err());
    }

    #[test]
    fn invalid_partitions_are_rejected() {
        assert!(Partition::cuts(vec![2.0, 1.0]).is_err());
        assert!(Partition::Levels(vec![1.0, 1.0]).validate().is_err());
    }

    fn readings_from(values: impl Fn(usize, usize, usize) -> f64, per_cell: usize) -> Vec<ProxyReading> {
        let mut out = Vec::new();
        for x in 0..2 {
            for domain in 0..2 {
                for i in 0..per_cell {
                    out.push(ProxyReading {
                        value: values(x, domain, i),
                        x,
                        domain,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn discrete_proxy_keeps_its_levels() {
        // Domain 0 favours level 1, domain 1 favours level 2.
        let readings = readings_from(|_, d, i| if (i % 10 < 7) == (d == 0) { 1.0 } else { 2.0 }, 100);
        let choice = search_partition(&readings, 2, 2, 2, 4, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(choice.partition, Partition::Levels(vec![1.0, 2.0]));
        assert_eq!(choice.rank, 2);
    }

    #[test]
    fn noisy_confounder_proxy_is_split_in_two() {
        // U in {0, 1} with P(U=1|e) = 0.2 or 0.8; the proxy is U plus small noise.
        let mut rng = seeded(3);
        let mut readings = Vec::new();
        for x in 0..2 {
            for domain in 0..2 {
                for _ in 0..2000 {
                    let p1 = if domain == 0 { 0.2 } else { 0.8 };
                    let u = if rng.random::<f64>() < p1 { 1.0 } else { 0.0 };
                    readings.push(ProxyReading {
                        value: u + rng.random_range(-0.1..0.1),
                        x,
                        domain,
                    });
                }
            }
        }
        let choice = search_partition(&readings, 2, 2, 2, 4, DEFAULT_RANK_TOL).unwrap();
        match &choice.partition {
            Partition::Cuts { cuts, .. } => {
                assert_eq!(cuts.len(), 1);
                assert!(cuts[0] > -0.1 && cuts[0] < 1.1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(choice.rank, 2);
        // The binned population matrix is exactly [[0.8, 0.2], [0.2, 0.8]] up to
        // the split location; its rank is 2.
        let exact = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.2, 0.8]);
        assert_eq!(numeric_row_rank(&exact, DEFAULT_RANK_TOL), 2);
    }

    #[test]
    fn uninformative_proxy_has_no_valid_partition() {
        // Same readings in every domain: every binned matrix has equal columns.
        let readings = readings_from(|_, _, i| i as f64 / 10.0, 40);
        let err = search_partition(&readings, 2, 2, 2, 4, DEFAULT_RANK_TOL).unwrap_err();
        assert!(matches!(err, Error::NoValidPartition { k_u: 2, best_rank: 1 }), "{err}");
    }

    #[test]
    fn covariate_strata_reduce_to_plain_identification() {
        let mut rng = seeded(19);
        let dims = CategorySpec::new(2, 2, 2, 2, 2).unwrap();
        let spec = sample_scm_spec(&dims, &mut rng).unwrap();
        let views = population_views(&spec, 0, 0).unwrap();
        let plain = identify_effect(&views.p_y_given_ex, &views.p_w_given_ex, &views.q_w).unwrap();
        let stratum = CovariateStratum {
            p_y_given_exz: views.p_y_given_ex.clone(),
            p_w_given_exz: views.p_w_given_ex.clone(),
            q_w_given_z: views.q_w.clone(),
        };
        let total = identify_total_effect_with_covariate(&[stratum], &[1.0]).unwrap();
        assert_eq!(total, plain);
    }

    #[test]
    fn rank_deficient_stratum_is_named() {
        let good = CovariateStratum {
            p_y_given_exz: vec![0.5, 0.5],
            p_w_given_exz: DMatrix::identity(2, 2),
            q_w_given_z: vec![0.5, 0.5],
        };
        let bad = CovariateStratum {
            p_w_given_exz: DMatrix::from_element(2, 2, 0.5),
            ..good.clone()
        };
        let err = identify_total_effect_with_covariate(&[good, bad], &[0.5, 0.5]).unwrap_err();
        assert!(matches!(err, Error::StratumRankDeficient { z: 1, .. }));
    }
}
