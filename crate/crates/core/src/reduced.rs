//! Plug-in estimator over the observable probabilities that enter the
//! identification formula, with delta-method and bootstrap intervals.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::data::{ContingencyCounts, Dataset, Domain};
use crate::error::{EmptyCell, Error, Result};
use crate::identify::apply_formula;
use crate::linalg::{condition_number, numeric_row_rank, pseudoinverse, DEFAULT_RANK_TOL};
use crate::rng::stream;
use crate::scm::{cell_probabilities, ScmSpec};
use crate::stats::{sample_sd, z_two_sided};

/// Positions of the components of `eta` for given `k_W`, `k_E`.
///
/// In order: `q(w_j, e_T)` for `j < k_W - 1`; `q(e_T)`; `p(w_j, x, e_l)` for
/// `j < k_W - 1` (domain-major, `j` fastest); `p(y, x, e_l)`; `p(x, e_l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EtaLayout {
    pub k_w: usize,
    pub k_e: usize,
}

impl EtaLayout {
    pub fn len(&self) -> usize {
        self.k_w + (self.k_w + 1) * self.k_e
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn q_w(&self, j: usize) -> usize {
        j
    }

    pub fn q_target(&self) -> usize {
        self.k_w - 1
    }

    pub fn p_w(&self, j: usize, l: usize) -> usize {
        self.k_w + l * (self.k_w - 1) + j
    }

    pub fn p_y(&self, l: usize) -> usize {
        self.k_w + self.k_e * (self.k_w - 1) + l
    }

    pub fn p_x(&self, l: usize) -> usize {
        self.k_w + self.k_e * self.k_w + l
    }
}

/// Sample means of the per-record indicator vectors for a fixed `(x, y)`,
/// with their sample covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaVector {
    pub layout: EtaLayout,
    pub x: usize,
    pub y: usize,
    pub values: Vec<f64>,
    /// Unbiased sample covariance; zero when `n < 2`.
    pub covariance: DMatrix<f64>,
    pub n: u64,
}

/// Indicator positions that fire for one record.
fn active_components(layout: EtaLayout, x: usize, y: usize, cell: (Domain, usize, Option<usize>, Option<usize>)) -> Vec<usize> {
    let (domain, w, xi, yi) = cell;
    let mut out = Vec::with_capacity(3);
    match domain {
        Domain::Target => {
            if w + 1 < layout.k_w {
                out.push(layout.q_w(w));
            }
            out.push(layout.q_target());
        }
        Domain::Source(l) => {
            if xi == Some(x) {
                if w + 1 < layout.k_w {
                    out.push(layout.p_w(w, l));
                }
                if yi == Some(y) {
                    out.push(layout.p_y(l));
                }
                out.push(layout.p_x(l));
            }
        }
    }
    out
}

pub fn eta_from_counts(counts: &ContingencyCounts, x: usize, y: usize) -> Result<EtaVector> {
    let d = counts.dims();
    if x >= d.k_x || y >= d.k_y {
        return Err(Error::InvalidArgument(format!("x={} or y={} out of range", x + 1, y + 1)));
    }
    let layout = EtaLayout { k_w: d.k_w, k_e: d.k_e };
    let k = layout.len();
    let n = counts.n();
    if n == 0 {
        return Err(Error::EmptyInput("dataset has no records".into()));
    }
    let mut sums = vec![0.0; k];
    let mut cross = DMatrix::<f64>::zeros(k, k);
    counts.for_each_cell(|domain, w, xi, yi, c| {
        let active = active_components(layout, x, y, (domain, w, xi, yi));
        let c = c as f64;
        for &a in &active {
            sums[a] += c;
            for &b in &active {
                cross[(a, b)] += c;
            }
        }
    });
    let nf = n as f64;
    let values: Vec<f64> = sums.iter().map(|s| s / nf).collect();
    let covariance = if n < 2 {
        DMatrix::zeros(k, k)
    } else {
        let factor = nf / (nf - 1.0);
        DMatrix::from_fn(k, k, |a, b| (cross[(a, b)] / nf - values[a] * values[b]) * factor)
    };
    Ok(EtaVector {
        layout,
        x,
        y,
        values,
        covariance,
        n,
    })
}

pub fn eta_from_dataset(ds: &Dataset, x: usize, y: usize) -> Result<EtaVector> {
    eta_from_counts(&ds.counts(), x, y)
}

/// `eta` at the exact population probabilities of `spec`; the covariance is
/// zero and `n = 0`.
pub fn population_eta(spec: &ScmSpec, x: usize, y: usize) -> Result<EtaVector> {
    spec.check_xy(x, y)?;
    let d = &spec.dims;
    let layout = EtaLayout { k_w: d.k_w, k_e: d.k_e };
    let cells = cell_probabilities(spec);
    let prior = spec.domain_prior.as_slice();
    let pi_t = prior[d.k_e];
    let mut values = vec![0.0; layout.len()];
    for j in 0..d.k_w - 1 {
        values[layout.q_w(j)] = pi_t * cells.q_w[j];
    }
    values[layout.q_target()] = pi_t;
    for l in 0..d.k_e {
        for w in 0..d.k_w {
            for yi in 0..d.k_y {
                let p = prior[l] * cells.get(d, yi, x, w, l);
                if w + 1 < d.k_w {
                    values[layout.p_w(w, l)] += p;
                }
                if yi == y {
                    values[layout.p_y(l)] += p;
                }
                values[layout.p_x(l)] += p;
            }
        }
    }
    let k = layout.len();
    Ok(EtaVector {
        layout,
        x,
        y,
        values,
        covariance: DMatrix::zeros(k, k),
        n: 0,
    })
}

/// `(P(y|E,x), P(W|E,x), Q(W))` reconstructed from `eta` by ratios, with
/// each last proxy level obtained by complement.
pub fn views_from_eta(layout: EtaLayout, x: usize, values: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>, Vec<f64>)> {
    let EtaLayout { k_w, k_e } = layout;
    if values.len() != layout.len() {
        return Err(Error::Shape(format!("eta has {} entries, expected {}", values.len(), layout.len())));
    }
    let q_t = values[layout.q_target()];
    if !(q_t > 0.0) {
        return Err(Error::EmptyCell(EmptyCell::Target));
    }
    let mut q_w: Vec<f64> = (0..k_w - 1).map(|j| values[layout.q_w(j)] / q_t).collect();
    q_w.push(1.0 - q_w.iter().sum::<f64>());

    let mut p_w = DMatrix::zeros(k_w, k_e);
    let mut p_y = vec![0.0; k_e];
    for l in 0..k_e {
        let p_x = values[layout.p_x(l)];
        if !(p_x > 0.0) {
            return Err(Error::EmptyCell(EmptyCell::SourceTreatment { x, domain: l }));
        }
        let mut rest = 1.0;
        for j in 0..k_w - 1 {
            let v = values[layout.p_w(j, l)] / p_x;
            p_w[(j, l)] = v;
            rest -= v;
        }
        p_w[(k_w - 1, l)] = rest;
        p_y[l] = values[layout.p_y(l)] / p_x;
    }
    Ok((p_y, p_w, q_w))
}

fn h_values(layout: EtaLayout, x: usize, values: &[f64], rank_tol: f64) -> Result<f64> {
    let (p_y, p_w, q_w) = views_from_eta(layout, x, values)?;
    Ok(apply_formula(&p_y, &pseudoinverse(&p_w, rank_tol), &q_w))
}

/// `h(eta) = P_eta(y|E,x) P_eta(W|E,x)^+ Q_eta(W)`, using the Moore–Penrose
/// inverse so that the map is defined at every `eta` with nonzero
/// denominators.
pub fn h_of_eta(eta: &EtaVector, rank_tol: f64) -> Result<f64> {
    h_values(eta.layout, eta.x, &eta.values, rank_tol)
}

fn fd_gradient(eta: &EtaVector, values: &[f64], rank_tol: f64, step_scale: f64) -> Result<Vec<f64>> {
    let mut probe = values.to_vec();
    let mut grad = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let step = step_scale * (1e-6f64).max(1e-6 * values[i].abs());
        probe[i] = values[i] + step;
        let up = h_values(eta.layout, eta.x, &probe, rank_tol)?;
        probe[i] = values[i] - step;
        let down = h_values(eta.layout, eta.x, &probe, rank_tol)?;
        probe[i] = values[i];
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Central finite-difference gradient of [`h_of_eta`] with per-coordinate
/// step `max(1e-6, 1e-6 |eta_i|)`.
pub fn grad_h(eta: &EtaVector, rank_tol: f64) -> Result<Vec<f64>> {
    fd_gradient(eta, &eta.values, rank_tol, 1.0)
}

/// [`grad_h`] with every step multiplied by `step_scale`.
pub fn grad_h_scaled(eta: &EtaVector, rank_tol: f64, step_scale: f64) -> Result<Vec<f64>> {
    fd_gradient(eta, &eta.values, rank_tol, step_scale)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateFlags {
    /// `eta` was perturbed to make `P(W|E,x)` full rank.
    pub rank_perturbed: bool,
    pub clipped_point: bool,
    pub clipped_ci: bool,
    /// Some `(x, e)` source cell or the target sample was empty.
    pub empty_cell: bool,
    /// The causal fit used a confounder cardinality other than the model's.
    pub k_u_override: bool,
}

/// A point estimate of `q(y | do(x))` with optional interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub point: f64,
    pub point_unclipped: f64,
    pub sigma_hat: Option<f64>,
    pub n: u64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub ci_lower_unclipped: Option<f64>,
    pub ci_upper_unclipped: Option<f64>,
    pub alpha: Option<f64>,
    pub kappa_hat: Option<f64>,
    pub flags: EstimateFlags,
}

fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

impl EffectEstimate {
    /// A point-only estimate, clipped to `[0, 1]`.
    pub fn point_only(point_unclipped: f64, n: u64) -> Self {
        let point = clip01(point_unclipped);
        EffectEstimate {
            point,
            point_unclipped,
            sigma_hat: None,
            n,
            ci_lower: None,
            ci_upper: None,
            ci_lower_unclipped: None,
            ci_upper_unclipped: None,
            alpha: None,
            kappa_hat: None,
            flags: EstimateFlags {
                clipped_point: point != point_unclipped,
                ..Default::default()
            },
        }
    }

    /// Estimate with the interval `point +- z_{1-alpha/2} sigma / sqrt(n)`;
    /// point and interval are clipped to `[0, 1]`.
    pub fn with_normal_interval(point_unclipped: f64, sigma_hat: f64, n: u64, alpha: f64) -> Self {
        let half = if n > 0 {
            z_two_sided(alpha) * sigma_hat / (n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        let mut est = Self::point_only(point_unclipped, n);
        est.sigma_hat = Some(sigma_hat);
        est.alpha = Some(alpha);
        est.set_interval(point_unclipped - half, point_unclipped + half);
        est
    }

    pub fn set_interval(&mut self, lower_unclipped: f64, upper_unclipped: f64) {
        let lower = clip01(lower_unclipped);
        let upper = clip01(upper_unclipped);
        self.ci_lower_unclipped = Some(lower_unclipped);
        self.ci_upper_unclipped = Some(upper_unclipped);
        self.ci_lower = Some(lower);
        self.ci_upper = Some(upper);
        self.flags.clipped_ci = lower != lower_unclipped || upper != upper_unclipped;
    }

    /// Whether the unclipped interval contains `truth`.
    pub fn covers_unclipped(&self, truth: f64) -> Option<bool> {
        Some(self.ci_lower_unclipped? <= truth && truth <= self.ci_upper_unclipped?)
    }

    pub fn covers(&self, truth: f64) -> Option<bool> {
        Some(self.ci_lower? <= truth && truth <= self.ci_upper?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedOptions {
    pub alpha: f64,
    pub rank_tol: f64,
}

impl Default for ReducedOptions {
    fn default() -> Self {
        ReducedOptions {
            alpha: 0.05,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

/// Perturbation sizes tried, in order, when the estimated proxy matrix is
/// rank deficient.
const PERTURBATIONS: [f64; 7] = [1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3];

/// Returns `eta` itself or a minimally perturbed copy whose reconstructed
/// `P(W|E,x)` has full row rank, plus whether it was perturbed.
///
/// First every `p(w_j, x, e_l)` gets `+eps`; if that is not enough, only
/// the diagonal components `j == l` do. `eps` grows until one works.
fn ensure_full_rank(eta: &EtaVector, rank_tol: f64) -> Result<(Vec<f64>, bool, f64)> {
    let layout = eta.layout;
    let (_, p_w, _) = views_from_eta(layout, eta.x, &eta.values)?;
    let kappa = condition_number(&p_w);
    if numeric_row_rank(&p_w, rank_tol) == layout.k_w {
        return Ok((eta.values.clone(), false, kappa));
    }
    if layout.k_w <= layout.k_e {
        for eps in PERTURBATIONS {
            for diagonal in [false, true] {
                let mut v = eta.values.clone();
                for l in 0..layout.k_e {
                    for j in 0..layout.k_w - 1 {
                        if !diagonal || j == l {
                            v[layout.p_w(j, l)] += eps;
                        }
                    }
                }
                let (_, p, _) = views_from_eta(layout, eta.x, &v)?;
                if numeric_row_rank(&p, rank_tol) == layout.k_w {
                    return Ok((v, true, kappa));
                }
            }
        }
    }
    Err(Error::RankDeficient {
        rank: numeric_row_rank(&p_w, rank_tol),
        rows: layout.k_w,
        condition_number: kappa,
    })
}

/// Point value used by both the main estimate and the bootstrap resamples.
fn reduced_point(eta: &EtaVector, rank_tol: f64) -> Result<(f64, Vec<f64>, bool, f64)> {
    let (values, perturbed, kappa) = ensure_full_rank(eta, rank_tol)?;
    let point = h_values(eta.layout, eta.x, &values, rank_tol)?;
    Ok((point, values, perturbed, kappa))
}

pub fn reduced_estimate_from_counts(
    counts: &ContingencyCounts,
    x: usize,
    y: usize,
    opts: ReducedOptions,
) -> Result<EffectEstimate> {
    let eta = eta_from_counts(counts, x, y)?;
    let (point, values, perturbed, kappa) = reduced_point(&eta, opts.rank_tol)?;
    let grad = fd_gradient(&eta, &values, opts.rank_tol, 1.0)?;
    let g = nalgebra::DVector::from_vec(grad);
    let variance = (g.transpose() * &eta.covariance * &g)[(0, 0)];
    let sigma = variance.max(0.0).sqrt();
    let mut est = EffectEstimate::with_normal_interval(point, sigma, eta.n, opts.alpha);
    est.kappa_hat = Some(kappa);
    est.flags.rank_perturbed = perturbed;
    Ok(est)
}

/// Reduced estimator of `q(y | do(x))` with a delta-method interval.
pub fn reduced_estimate(ds: &Dataset, x: usize, y: usize, opts: ReducedOptions) -> Result<EffectEstimate> {
    reduced_estimate_from_counts(&ds.counts(), x, y, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub ci_lower_unclipped: f64,
    pub ci_upper_unclipped: f64,
    pub sigma_boot: f64,
    /// Resamples on which the estimate was undefined.
    pub failures: usize,
}

/// Draws a multinomial resample of the cell counts: the same law as
/// resampling `n` records with replacement.
pub fn resample_counts<R: Rng + ?Sized>(counts: &ContingencyCounts, rng: &mut R) -> ContingencyCounts {
    let n = counts.n();
    let mut remaining = n;
    let mut remaining_mass = n;
    let mut draw = |c: u64, rng: &mut R| -> u64 {
        if remaining == 0 || c == 0 {
            return 0;
        }
        let k = if c == remaining_mass {
            remaining
        } else {
            let p = c as f64 / remaining_mass as f64;
            Binomial::new(remaining, p).expect("valid binomial").sample(rng)
        };
        remaining -= k;
        remaining_mass -= c;
        k
    };
    let target: Vec<u64> = counts.target_vector().iter().map(|&c| draw(c, rng)).collect();
    let source: Vec<u64> = counts.source_tensor().iter().map(|&c| draw(c, rng)).collect();
    ContingencyCounts::from_parts(counts.dims(), source, target).expect("same shape")
}

/// Normal-approximation bootstrap interval around the full-sample reduced
/// estimate. Resample `b` uses the stream `(seed, b)`.
pub fn bootstrap_ci_from_counts(
    counts: &ContingencyCounts,
    x: usize,
    y: usize,
    resamples: usize,
    opts: ReducedOptions,
    seed: u64,
) -> Result<BootstrapInterval> {
    if resamples < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 resamples".into()));
    }
    let eta = eta_from_counts(counts, x, y)?;
    let (center, ..) = reduced_point(&eta, opts.rank_tol)?;
    let mut estimates = Vec::with_capacity(resamples);
    let mut failures = 0;
    let mut last_error = None;
    for b in 0..resamples {
        let mut rng = stream(seed, &[b as u64]);
        let resampled = resample_counts(counts, &mut rng);
        match eta_from_counts(&resampled, x, y).and_then(|e| reduced_point(&e, opts.rank_tol)) {
            Ok((p, ..)) => estimates.push(p),
            Err(e) => {
                failures += 1;
                last_error = Some(e.to_string());
            }
        }
    }
    if failures * 10 > resamples {
        return Err(Error::BootstrapFailures {
            failed: failures,
            total: resamples,
            last: last_error.unwrap_or_default(),
        });
    }
    let sigma_boot = sample_sd(&estimates);
    let half = z_two_sided(opts.alpha) * sigma_boot;
    let (lo, hi) = (center - half, center + half);
    Ok(BootstrapInterval {
        ci_lower: clip01(lo),
        ci_upper: clip01(hi),
        ci_lower_unclipped: lo,
        ci_upper_unclipped: hi,
        sigma_boot,
        failures,
    })
}

pub fn bootstrap_ci(
    ds: &Dataset,
    x: usize,
    y: usize,
    resamples: usize,
    opts: ReducedOptions,
    seed: u64,
) -> Result<BootstrapInterval> {
    bootstrap_ci_from_counts(&ds.counts(), x, y, resamples, opts, seed)
}
