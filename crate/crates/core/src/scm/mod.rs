//! Discrete structural causal model `E -> U -> {W, X}`, `{U, W, X} -> Y`:
//! random model generation, ancestral sampling, and exact population
//! quantities.

pub mod covariate;
pub mod fixtures;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Exp1;

use crate::data::{ContingencyCounts, Dataset, Record, TargetOutcomes};
use crate::error::{Error, Result};
use crate::linalg::{validate_stochastic, CategorySpec, ProbVector, StochasticMatrix, PMF_TOL};

/// A family of pmfs over `k_out` outcomes indexed by a flat parent index.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfTable {
    k_out: usize,
    data: Vec<f64>,
}

impl PmfTable {
    pub fn new(k_out: usize, data: Vec<f64>, strict_positive: bool, what: &str) -> Result<Self> {
        if k_out == 0 || !data.len().is_multiple_of(k_out) {
            return Err(Error::Shape(format!("{what}: {} entries is not a multiple of {k_out}", data.len())));
        }
        let m = DMatrix::from_column_slice(k_out, data.len() / k_out, &data);
        validate_stochastic(&m, PMF_TOL, strict_positive).map_err(|violation| Error::Stochastic {
            what: what.to_string(),
            violation,
        })?;
        Ok(PmfTable { k_out, data })
    }

    pub fn k_out(&self) -> usize {
        self.k_out
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.k_out
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pmf(&self, parent: usize) -> &[f64] {
        &self.data[parent * self.k_out..(parent + 1) * self.k_out]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// The full generative model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmSpec {
    pub dims: CategorySpec,
    /// `P(U|E)`, `k_U x k_E`.
    pub p_u_given_e: StochasticMatrix,
    /// Target-domain confounder law `Q(U)`.
    pub q_u: ProbVector,
    /// `P(W|U)`, `k_W x k_U`.
    pub p_w_given_u: StochasticMatrix,
    /// `P(X|U)`, `k_X x k_U`.
    pub p_x_given_u: StochasticMatrix,
    /// `p(y | u, w, x)`, parent index `(u * k_W + w) * k_X + x`.
    pub p_y_given_uwx: PmfTable,
    /// Law of `E` over `{e_1, ..., e_kE, e_T}`; the target is the last entry.
    pub domain_prior: ProbVector,
}

/// Raw components handed to [`ScmSpec::new`].
#[derive(Debug, Clone)]
pub struct ScmParts {
    pub p_u_given_e: Vec<Vec<f64>>,
    pub q_u: Vec<f64>,
    pub p_w_given_u: Vec<Vec<f64>>,
    pub p_x_given_u: Vec<Vec<f64>>,
    /// `[u][w][x]` -> pmf over Y.
    pub p_y_given_uwx: Vec<Vec<Vec<Vec<f64>>>>,
    pub domain_prior: Vec<f64>,
}

fn stochastic(what: &str, cols: &[Vec<f64>], rows: usize, ncols: usize, strict: bool) -> Result<StochasticMatrix> {
    if cols.len() != ncols || cols.iter().any(|c| c.len() != rows) {
        return Err(Error::Shape(format!("{what} must be {rows}x{ncols} (given as {ncols} columns)")));
    }
    StochasticMatrix::from_columns(cols, strict).map_err(|violation| Error::Stochastic {
        what: what.to_string(),
        violation,
    })
}

fn prob_vector(what: &str, v: &[f64], len: usize, strict: bool) -> Result<ProbVector> {
    if v.len() != len {
        return Err(Error::Shape(format!("{what} must have length {len}")));
    }
    ProbVector::new(v.to_vec(), strict).map_err(|violation| Error::Stochastic {
        what: what.to_string(),
        violation,
    })
}

impl ScmSpec {
    /// Validates dimensions and requires full support.
    pub fn new(dims: CategorySpec, parts: ScmParts) -> Result<Self> {
        Self::build(dims, parts, true)
    }

    /// As [`ScmSpec::new`] but accepts zero probabilities, for degenerate
    /// fixtures. Population identities that divide by marginals may then
    /// produce NaN.
    pub fn new_allowing_zeros(dims: CategorySpec, parts: ScmParts) -> Result<Self> {
        Self::build(dims, parts, false)
    }

    fn build(dims: CategorySpec, parts: ScmParts, strict: bool) -> Result<Self> {
        dims.validate()?;
        let d = &dims;
        let p_u_given_e = stochastic("P(U|E)", &parts.p_u_given_e, d.k_u, d.k_e, strict)?;
        let q_u = prob_vector("Q(U)", &parts.q_u, d.k_u, strict)?;
        let p_w_given_u = stochastic("P(W|U)", &parts.p_w_given_u, d.k_w, d.k_u, strict)?;
        let p_x_given_u = stochastic("P(X|U)", &parts.p_x_given_u, d.k_x, d.k_u, strict)?;
        let mut flat = Vec::with_capacity(d.k_u * d.k_w * d.k_x * d.k_y);
        if parts.p_y_given_uwx.len() != d.k_u {
            return Err(Error::Shape("P(Y|U,W,X) must be indexed [u][w][x]".into()));
        }
        for by_w in &parts.p_y_given_uwx {
            if by_w.len() != d.k_w {
                return Err(Error::Shape("P(Y|U,W,X) must be indexed [u][w][x]".into()));
            }
            for by_x in by_w {
                if by_x.len() != d.k_x || by_x.iter().any(|p| p.len() != d.k_y) {
                    return Err(Error::Shape("P(Y|U,W,X) must be indexed [u][w][x]".into()));
                }
                for pmf in by_x {
                    flat.extend_from_slice(pmf);
                }
            }
        }
        let p_y_given_uwx = PmfTable::new(d.k_y, flat, strict, "P(Y|U,W,X)")?;
        let domain_prior = prob_vector("P(E)", &parts.domain_prior, d.k_e + 1, strict)?;
        Ok(ScmSpec {
            dims,
            p_u_given_e,
            q_u,
            p_w_given_u,
            p_x_given_u,
            p_y_given_uwx,
            domain_prior,
        })
    }

    /// Inverse of [`ScmSpec::new`].
    pub fn parts(&self) -> ScmParts {
        let d = &self.dims;
        let p_y_given_uwx = (0..d.k_u)
            .map(|u| {
                (0..d.k_w)
                    .map(|w| (0..d.k_x).map(|x| self.p_y(u, w, x).to_vec()).collect())
                    .collect()
            })
            .collect();
        ScmParts {
            p_u_given_e: self.p_u_given_e.columns(),
            q_u: self.q_u.as_slice().to_vec(),
            p_w_given_u: self.p_w_given_u.columns(),
            p_x_given_u: self.p_x_given_u.columns(),
            p_y_given_uwx,
            domain_prior: self.domain_prior.as_slice().to_vec(),
        }
    }

    /// Replaces the domain prior (length `k_E + 1`, target last).
    pub fn with_domain_prior(mut self, prior: Vec<f64>) -> Result<Self> {
        self.domain_prior = prob_vector("P(E)", &prior, self.dims.k_e + 1, false)?;
        Ok(self)
    }

    /// `p(y | u, w, x)` as a pmf over Y.
    pub fn p_y(&self, u: usize, w: usize, x: usize) -> &[f64] {
        let d = &self.dims;
        self.p_y_given_uwx.pmf((u * d.k_w + w) * d.k_x + x)
    }

    /// `p(y | u, x) = sum_w p(y|u,w,x) p(w|u)`.
    pub fn p_y_given_ux(&self, u: usize, x: usize, y: usize) -> f64 {
        (0..self.dims.k_w)
            .map(|w| self.p_y(u, w, x)[y] * self.p_w_given_u.get(w, u))
            .sum()
    }

    pub(crate) fn check_xy(&self, x: usize, y: usize) -> Result<()> {
        if x >= self.dims.k_x || y >= self.dims.k_y {
            return Err(Error::InvalidArgument(format!(
                "(x, y) = ({}, {}) outside supp(X) x supp(Y)",
                x + 1,
                y + 1
            )));
        }
        Ok(())
    }
}

/// Flat Dirichlet(1, ..., 1) draw via normalised unit-rate exponentials.
fn flat_dirichlet<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    loop {
        let draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && draws.iter().all(|&g| g > 0.0) {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

/// Draws every conditional column independently and uniformly from its
/// simplex; the domain prior is uniform over the sources and the target.
pub fn sample_scm_spec<R: Rng + ?Sized>(dims: &CategorySpec, rng: &mut R) -> Result<ScmSpec> {
    dims.validate()?;
    let d = dims;
    let p_u_given_e = (0..d.k_e).map(|_| flat_dirichlet(d.k_u, rng)).collect();
    let q_u = flat_dirichlet(d.k_u, rng);
    let p_w_given_u = (0..d.k_u).map(|_| flat_dirichlet(d.k_w, rng)).collect();
    let p_x_given_u = (0..d.k_u).map(|_| flat_dirichlet(d.k_x, rng)).collect();
    let p_y_given_uwx = (0..d.k_u)
        .map(|_| {
            (0..d.k_w)
                .map(|_| (0..d.k_x).map(|_| flat_dirichlet(d.k_y, rng)).collect())
                .collect()
        })
        .collect();
    let parts = ScmParts {
        p_u_given_e,
        q_u,
        p_w_given_u,
        p_x_given_u,
        p_y_given_uwx,
        domain_prior: vec![1.0 / (d.k_e + 1) as f64; d.k_e + 1],
    };
    ScmSpec::new(dims.clone(), parts)
}

/// Inverse-CDF sampler for a family of pmfs.
#[derive(Debug, Clone)]
struct CategoricalTable {
    k: usize,
    cumulative: Vec<f64>,
    last_positive: Vec<usize>,
}

impl CategoricalTable {
    fn from_pmfs<'a>(k: usize, pmfs: impl Iterator<Item = Vec<f64>> + 'a) -> Self {
        let mut cumulative = Vec::new();
        let mut last_positive = Vec::new();
        for pmf in pmfs {
            let mut acc = 0.0;
            let mut last = 0;
            for (i, &p) in pmf.iter().enumerate() {
                acc += p;
                cumulative.push(acc);
                if p > 0.0 {
                    last = i;
                }
            }
            last_positive.push(last);
        }
        CategoricalTable {
            k,
            cumulative,
            last_positive,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, parent: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = &self.cumulative[parent * self.k..(parent + 1) * self.k];
        row.iter()
            .position(|&c| u < c)
            .unwrap_or(self.last_positive[parent])
    }
}

/// Ancestral samplers for every structural assignment of a spec.
struct Sampler {
    domain: CategoricalTable,
    u_given_e: CategoricalTable,
    q_u: CategoricalTable,
    w_given_u: CategoricalTable,
    x_given_u: CategoricalTable,
    y_given_uwx: CategoricalTable,
}

impl Sampler {
    fn new(spec: &ScmSpec) -> Self {
        let d = &spec.dims;
        Sampler {
            domain: CategoricalTable::from_pmfs(d.k_e + 1, std::iter::once(spec.domain_prior.as_slice().to_vec())),
            u_given_e: CategoricalTable::from_pmfs(d.k_u, spec.p_u_given_e.columns().into_iter()),
            q_u: CategoricalTable::from_pmfs(d.k_u, std::iter::once(spec.q_u.as_slice().to_vec())),
            w_given_u: CategoricalTable::from_pmfs(d.k_w, spec.p_w_given_u.columns().into_iter()),
            x_given_u: CategoricalTable::from_pmfs(d.k_x, spec.p_x_given_u.columns().into_iter()),
            y_given_uwx: CategoricalTable::from_pmfs(
                d.k_y,
                (0..spec.p_y_given_uwx.len()).map(|i| spec.p_y_given_uwx.pmf(i).to_vec()),
            ),
        }
    }
}

/// Draws `(E, U, W, X, Y)` in causal order; `U` is discarded. Target
/// records keep their `(x, y)` in the second output.
pub fn simulate_with_target_outcomes<R: Rng + ?Sized>(
    spec: &ScmSpec,
    n: usize,
    rng: &mut R,
) -> (Dataset, TargetOutcomes) {
    let d = &spec.dims;
    let s = Sampler::new(spec);
    let mut records = Vec::with_capacity(n);
    let mut hidden = TargetOutcomes::default();
    for _ in 0..n {
        let e = s.domain.sample(0, rng);
        let target = e == d.k_e;
        let u = if target {
            s.q_u.sample(0, rng)
        } else {
            s.u_given_e.sample(e, rng)
        };
        let w = s.w_given_u.sample(u, rng);
        let x = s.x_given_u.sample(u, rng);
        let y = s.y_given_uwx.sample((u * d.k_w + w) * d.k_x + x, rng);
        if target {
            records.push(Record::target(w));
            hidden.records.push((w, x, y));
        } else {
            records.push(Record::source(e, w, x, y));
        }
    }
    let ds = Dataset::new(d.clone(), records).expect("sampled indices are in range");
    (ds, hidden)
}

/// An i.i.d. multi-domain sample of size `n`; `X` and `Y` are missing in
/// target records.
pub fn simulate_dataset<R: Rng + ?Sized>(spec: &ScmSpec, n: usize, rng: &mut R) -> Dataset {
    simulate_with_target_outcomes(spec, n, rng).0
}

/// Draws of `Y` under `do(X := x)` in the target domain.
pub fn interventional_sample<R: Rng + ?Sized>(spec: &ScmSpec, x: usize, n: usize, rng: &mut R) -> Vec<usize> {
    let d = &spec.dims;
    let s = Sampler::new(spec);
    (0..n)
        .map(|_| {
            let u = s.q_u.sample(0, rng);
            let w = s.w_given_u.sample(u, rng);
            s.y_given_uwx.sample((u * d.k_w + w) * d.k_x + x, rng)
        })
        .collect()
}

/// Target interventional probability `q(y | do(x)) = sum_u p(y|u,x) q(u)`.
pub fn true_effect(spec: &ScmSpec, x: usize, y: usize) -> Result<f64> {
    spec.check_xy(x, y)?;
    Ok((0..spec.dims.k_u)
        .map(|u| spec.p_y_given_ux(u, x, y) * spec.q_u[u])
        .sum())
}

/// Observational target conditional `q(y | x)`.
pub fn target_conditional(spec: &ScmSpec, x: usize, y: usize) -> Result<f64> {
    spec.check_xy(x, y)?;
    let mut joint = 0.0;
    let mut marginal = 0.0;
    for u in 0..spec.dims.k_u {
        let px = spec.q_u[u] * spec.p_x_given_u.get(x, u);
        marginal += px;
        joint += px * spec.p_y_given_ux(u, x, y);
    }
    Ok(joint / marginal)
}

/// Exact population quantities entering the identification formula for a
/// fixed `(x, y)`.
#[derive(Debug, Clone)]
pub struct PopulationViews {
    /// `P(y | E, x)`, one entry per source domain.
    pub p_y_given_ex: Vec<f64>,
    /// `P(W | E, x)`, `k_W x k_E`.
    pub p_w_given_ex: DMatrix<f64>,
    /// `P(U | E, x)`, `k_U x k_E`.
    pub p_u_given_ex: DMatrix<f64>,
    /// Target proxy law `Q(W)`.
    pub q_w: Vec<f64>,
    pub cells: CellProbabilities,
}

/// `p(y, x, w | e)` for every source cell and `q(w)` for the target.
#[derive(Debug, Clone)]
pub struct CellProbabilities {
    /// Indexed like [`ContingencyCounts::cell_index`].
    pub p_yxw_given_e: Vec<f64>,
    pub q_w: Vec<f64>,
}

impl CellProbabilities {
    pub fn get(&self, dims: &CategorySpec, y: usize, x: usize, w: usize, e: usize) -> f64 {
        self.p_yxw_given_e[((y * dims.k_x + x) * dims.k_w + w) * dims.k_e + e]
    }
}

pub fn cell_probabilities(spec: &ScmSpec) -> CellProbabilities {
    let d = &spec.dims;
    let template = ContingencyCounts::zeros(d);
    let mut p = vec![0.0; d.k_y * d.k_x * d.k_w * d.k_e];
    for y in 0..d.k_y {
        for x in 0..d.k_x {
            for w in 0..d.k_w {
                for e in 0..d.k_e {
                    p[template.cell_index(y, x, w, e)] = (0..d.k_u)
                        .map(|u| {
                            spec.p_y(u, w, x)[y]
                                * spec.p_w_given_u.get(w, u)
                                * spec.p_x_given_u.get(x, u)
                                * spec.p_u_given_e.get(u, e)
                        })
                        .sum();
                }
            }
        }
    }
    CellProbabilities {
        p_yxw_given_e: p,
        q_w: target_proxy_law(spec),
    }
}

/// `Q(W) = P(W|U) Q(U)`.
pub fn target_proxy_law(spec: &ScmSpec) -> Vec<f64> {
    let d = &spec.dims;
    (0..d.k_w)
        .map(|w| (0..d.k_u).map(|u| spec.p_w_given_u.get(w, u) * spec.q_u[u]).sum())
        .collect()
}

pub fn population_views(spec: &ScmSpec, x: usize, y: usize) -> Result<PopulationViews> {
    spec.check_xy(x, y)?;
    let d = &spec.dims;
    // p(u | e, x) is proportional to p(x | u) p(u | e).
    let mut p_u_given_ex = DMatrix::zeros(d.k_u, d.k_e);
    for e in 0..d.k_e {
        let norm: f64 = (0..d.k_u)
            .map(|u| spec.p_x_given_u.get(x, u) * spec.p_u_given_e.get(u, e))
            .sum();
        for u in 0..d.k_u {
            p_u_given_ex[(u, e)] = spec.p_x_given_u.get(x, u) * spec.p_u_given_e.get(u, e) / norm;
        }
    }
    let p_w_given_ex = spec.p_w_given_u.as_matrix() * &p_u_given_ex;
    let p_y_given_ux: Vec<f64> = (0..d.k_u).map(|u| spec.p_y_given_ux(u, x, y)).collect();
    let p_y_given_ex = (0..d.k_e)
        .map(|e| (0..d.k_u).map(|u| p_y_given_ux[u] * p_u_given_ex[(u, e)]).sum())
        .collect();
    Ok(PopulationViews {
        p_y_given_ex,
        p_w_given_ex,
        p_u_given_ex,
        q_w: target_proxy_law(spec),
        cells: cell_probabilities(spec),
    })
}
