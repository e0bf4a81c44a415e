//! Maximum-likelihood fit of the latent model and the plug-in effect
//! `diag(P(y|U,W,x) P(W|U)) Q(U)`.
//!
//! All conditionals are parametrised by unconstrained logits mapped through a
//! softmax per conditional pmf, so the fit is an unconstrained problem solved
//! with L-BFGS.

use std::sync::{Arc, Mutex};

use argmin::core::observers::{Observe, ObserverMode};
use argmin::core::{CostFunction, Error as ArgminError, Executor, Gradient, IterState, State, TerminationReason, KV};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ContingencyCounts, Dataset, Domain};
use crate::error::{Error, Result};
use crate::linalg::CategorySpec;
use crate::reduced::EffectEstimate;
use crate::rng::stream;
use crate::scm::ScmSpec;

/// Offsets of the five parameter blocks in the flat parameter vector.
///
/// Every block is a sequence of fibres, one conditional pmf each: `U|e`
/// (fibre `e`), `Q(U)`, `W|u` (fibre `u`), `X|u` (fibre `u`) and `Y|u,w,x`
/// (fibre `(u * k_W + w) * k_X + x`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaLayout {
    pub k_e: usize,
    pub k_u: usize,
    pub k_w: usize,
    pub k_x: usize,
    pub k_y: usize,
}

impl ThetaLayout {
    pub fn new(dims: &CategorySpec, k_u: usize) -> Self {
        ThetaLayout {
            k_e: dims.k_e,
            k_u,
            k_w: dims.k_w,
            k_x: dims.k_x,
            k_y: dims.k_y,
        }
    }

    fn off_q(&self) -> usize {
        self.k_u * self.k_e
    }

    fn off_w(&self) -> usize {
        self.off_q() + self.k_u
    }

    fn off_x(&self) -> usize {
        self.off_w() + self.k_u * self.k_w
    }

    fn off_y(&self) -> usize {
        self.off_x() + self.k_u * self.k_x
    }

    pub fn len(&self) -> usize {
        self.off_y() + self.k_u * self.k_w * self.k_x * self.k_y
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn u_given_e(&self, u: usize, e: usize) -> usize {
        e * self.k_u + u
    }

    pub fn q_u(&self, u: usize) -> usize {
        self.off_q() + u
    }

    pub fn w_given_u(&self, w: usize, u: usize) -> usize {
        self.off_w() + u * self.k_w + w
    }

    pub fn x_given_u(&self, x: usize, u: usize) -> usize {
        self.off_x() + u * self.k_x + x
    }

    pub fn y_given_uwx(&self, y: usize, u: usize, w: usize, x: usize) -> usize {
        self.off_y() + ((u * self.k_w + w) * self.k_x + x) * self.k_y + y
    }

    /// `(start, length)` of every fibre.
    fn fibres(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for e in 0..self.k_e {
            out.push((self.u_given_e(0, e), self.k_u));
        }
        out.push((self.q_u(0), self.k_u));
        for u in 0..self.k_u {
            out.push((self.w_given_u(0, u), self.k_w));
        }
        for u in 0..self.k_u {
            out.push((self.x_given_u(0, u), self.k_x));
        }
        for u in 0..self.k_u {
            for w in 0..self.k_w {
                for x in 0..self.k_x {
                    out.push((self.y_given_uwx(0, u, w, x), self.k_y));
                }
            }
        }
        out
    }
}

/// Probability view of the parameter: every fibre is a strictly positive pmf.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParams {
    pub layout: ThetaLayout,
    pub probs: Vec<f64>,
}

impl ThetaParams {
    pub fn p_u_given_e(&self, u: usize, e: usize) -> f64 {
        self.probs[self.layout.u_given_e(u, e)]
    }

    pub fn q_u(&self, u: usize) -> f64 {
        self.probs[self.layout.q_u(u)]
    }

    pub fn p_w_given_u(&self, w: usize, u: usize) -> f64 {
        self.probs[self.layout.w_given_u(w, u)]
    }

    pub fn p_x_given_u(&self, x: usize, u: usize) -> f64 {
        self.probs[self.layout.x_given_u(x, u)]
    }

    pub fn p_y(&self, y: usize, u: usize, w: usize, x: usize) -> f64 {
        self.probs[self.layout.y_given_uwx(y, u, w, x)]
    }

    /// The parameter of a model, at its own `k_U`.
    pub fn from_spec(spec: &ScmSpec) -> Self {
        let d = &spec.dims;
        let layout = ThetaLayout::new(d, d.k_u);
        let mut probs = vec![0.0; layout.len()];
        for u in 0..d.k_u {
            for e in 0..d.k_e {
                probs[layout.u_given_e(u, e)] = spec.p_u_given_e.get(u, e);
            }
            probs[layout.q_u(u)] = spec.q_u[u];
            for w in 0..d.k_w {
                probs[layout.w_given_u(w, u)] = spec.p_w_given_u.get(w, u);
                for x in 0..d.k_x {
                    for y in 0..d.k_y {
                        probs[layout.y_given_uwx(y, u, w, x)] = spec.p_y(u, w, x)[y];
                    }
                }
            }
            for x in 0..d.k_x {
                probs[layout.x_given_u(x, u)] = spec.p_x_given_u.get(x, u);
            }
        }
        ThetaParams { layout, probs }
    }

    /// Logits that map back to these probabilities (natural logarithms).
    pub fn to_logits(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.ln()).collect()
    }

    /// Relabels the confounder: new label `i` is old label `perm[i]`.
    pub fn permute_confounder(&self, perm: &[usize]) -> Self {
        let l = self.layout;
        let mut probs = self.probs.clone();
        for (new, &old) in perm.iter().enumerate() {
            for e in 0..l.k_e {
                probs[l.u_given_e(new, e)] = self.probs[l.u_given_e(old, e)];
            }
            probs[l.q_u(new)] = self.probs[l.q_u(old)];
            for w in 0..l.k_w {
                probs[l.w_given_u(w, new)] = self.probs[l.w_given_u(w, old)];
                for x in 0..l.k_x {
                    for y in 0..l.k_y {
                        probs[l.y_given_uwx(y, new, w, x)] = self.probs[l.y_given_uwx(y, old, w, x)];
                    }
                }
            }
            for x in 0..l.k_x {
                probs[l.x_given_u(x, new)] = self.probs[l.x_given_u(x, old)];
            }
        }
        ThetaParams { layout: l, probs }
    }
}

/// Softmax of every fibre.
pub fn logits_to_theta(layout: ThetaLayout, logits: &[f64]) -> Result<ThetaParams> {
    if logits.len() != layout.len() {
        return Err(Error::Shape(format!("{} logits, expected {}", logits.len(), layout.len())));
    }
    if let Some(index) = logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::NonFiniteLogit { index });
    }
    let mut probs = vec![0.0; logits.len()];
    for (start, len) in layout.fibres() {
        let fibre = &logits[start..start + len];
        let max = fibre.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..len {
            let v = (fibre[i] - max).exp();
            probs[start + i] = v;
            total += v;
        }
        for p in &mut probs[start..start + len] {
            *p /= total;
        }
    }
    Ok(ThetaParams { layout, probs })
}

fn check_counts(layout: &ThetaLayout, counts: &ContingencyCounts) -> Result<()> {
    let d = counts.dims();
    if (d.k_e, d.k_w, d.k_x, d.k_y) != (layout.k_e, layout.k_w, layout.k_x, layout.k_y) {
        return Err(Error::Shape("parameter and count dimensions differ".into()));
    }
    Ok(())
}

/// `sum n(y,x,w,e) log p(y,x,w|e) + sum n(w) log q(w)`, with empty cells
/// contributing nothing.
pub fn log_likelihood(theta: &ThetaParams, counts: &ContingencyCounts) -> Result<f64> {
    check_counts(&theta.layout, counts)?;
    Ok(likelihood_and_gradient(theta, counts, None))
}

/// Log-likelihood and, if requested, its gradient with respect to the
/// probabilities (not the logits).
fn likelihood_and_gradient(theta: &ThetaParams, counts: &ContingencyCounts, mut grad: Option<&mut [f64]>) -> f64 {
    let l = theta.layout;
    let mut ll = 0.0;
    let mut terms = vec![0.0; l.k_u];
    counts.for_each_cell(|domain, w, x, y, n| {
        let n = n as f64;
        match (domain, x, y) {
            (Domain::Source(e), Some(x), Some(y)) => {
                for (u, t) in terms.iter_mut().enumerate() {
                    *t = theta.p_y(y, u, w, x) * theta.p_w_given_u(w, u) * theta.p_x_given_u(x, u) * theta.p_u_given_e(u, e);
                }
                let p: f64 = terms.iter().sum();
                ll += n * p.ln();
                if let Some(g) = grad.as_deref_mut() {
                    let scale = n / p;
                    for (u, &t) in terms.iter().enumerate() {
                        let c = scale * t;
                        g[l.y_given_uwx(y, u, w, x)] += c / theta.p_y(y, u, w, x);
                        g[l.w_given_u(w, u)] += c / theta.p_w_given_u(w, u);
                        g[l.x_given_u(x, u)] += c / theta.p_x_given_u(x, u);
                        g[l.u_given_e(u, e)] += c / theta.p_u_given_e(u, e);
                    }
                }
            }
            _ => {
                let q: f64 = (0..l.k_u).map(|u| theta.p_w_given_u(w, u) * theta.q_u(u)).sum();
                ll += n * q.ln();
                if let Some(g) = grad.as_deref_mut() {
                    let scale = n / q;
                    for u in 0..l.k_u {
                        g[l.w_given_u(w, u)] += scale * theta.q_u(u);
                        g[l.q_u(u)] += scale * theta.p_w_given_u(w, u);
                    }
                }
            }
        }
    });
    ll
}

/// Gradient of [`log_likelihood`] with respect to the logits.
pub fn log_likelihood_gradient(theta: &ThetaParams, counts: &ContingencyCounts) -> Result<Vec<f64>> {
    check_counts(&theta.layout, counts)?;
    let mut g = vec![0.0; theta.layout.len()];
    likelihood_and_gradient(theta, counts, Some(&mut g));
    Ok(chain_softmax(theta, g))
}

/// `d/dz_k = p_k (g_k - sum_j p_j g_j)` per fibre.
fn chain_softmax(theta: &ThetaParams, mut g: Vec<f64>) -> Vec<f64> {
    for (start, len) in theta.layout.fibres() {
        let p = &theta.probs[start..start + len];
        let mean: f64 = (0..len).map(|i| p[i] * g[start + i]).sum();
        for i in 0..len {
            g[start + i] = p[i] * (g[start + i] - mean);
        }
    }
    g
}

/// `g_{x,y}(theta) = sum_u sum_w p(y|u,w,x) p(w|u) q(u)`.
pub fn g_of_theta(theta: &ThetaParams, x: usize, y: usize) -> f64 {
    let l = theta.layout;
    let mut total = 0.0;
    for u in 0..l.k_u {
        let inner: f64 = (0..l.k_w).map(|w| theta.p_y(y, u, w, x) * theta.p_w_given_u(w, u)).sum();
        total += inner * theta.q_u(u);
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: u64,
    pub restarts: usize,
    /// Stop once the Euclidean norm of the gradient of the mean negative
    /// log-likelihood drops below this.
    pub grad_tol: f64,
    /// Stop once an iteration lowers the mean negative log-likelihood by
    /// less than this.
    pub cost_tol: f64,
    /// L-BFGS memory.
    pub memory: usize,
    pub seed: u64,
    /// Fit with this many confounder levels instead of the data's `k_U`.
    pub k_u: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 50_000,
            restarts: 1,
            grad_tol: 1e-8,
            cost_tol: 1e7 * f64::EPSILON,
            memory: 10,
            seed: 0,
            k_u: None,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.restarts == 0 || self.memory == 0 {
            return Err(Error::InvalidArgument(
                "max_iterations, restarts and memory must be at least 1".into(),
            ));
        }
        if self.k_u == Some(0) {
            return Err(Error::InvalidArgument("k_U must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalFit {
    pub theta: ThetaParams,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub iterations: u64,
    pub converged: bool,
    /// Index of the restart that produced `theta`.
    pub restart: usize,
    /// Log-likelihood after every accepted step of the winning restart.
    pub trace: Vec<f64>,
    /// Set when no restart improved on its starting point.
    pub diagnostic: Option<String>,
}

/// Mean negative log-likelihood over the logits.
struct Objective<'a> {
    counts: &'a ContingencyCounts,
    layout: ThetaLayout,
    n: f64,
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, z: &Vec<f64>) -> std::result::Result<f64, ArgminError> {
        let theta = logits_to_theta(self.layout, z)?;
        Ok(-likelihood_and_gradient(&theta, self.counts, None) / self.n)
    }
}

impl Gradient for Objective<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, z: &Vec<f64>) -> std::result::Result<Vec<f64>, ArgminError> {
        let theta = logits_to_theta(self.layout, z)?;
        let mut g = vec![0.0; self.layout.len()];
        likelihood_and_gradient(&theta, self.counts, Some(&mut g));
        Ok(chain_softmax(&theta, g).into_iter().map(|v| -v / self.n).collect())
    }
}

/// Records the cost after every iteration.
struct CostTrace(Arc<Mutex<Vec<f64>>>);

impl<I: State<Float = f64>> Observe<I> for CostTrace {
    fn observe_iter(&mut self, state: &I, _kv: &KV) -> std::result::Result<(), ArgminError> {
        self.0.lock().expect("trace lock").push(state.get_cost());
        Ok(())
    }
}

struct SingleFit {
    logits: Vec<f64>,
    cost: f64,
    initial_cost: f64,
    iterations: u64,
    converged: bool,
    trace: Vec<f64>,
}

fn fit_once(objective: Objective<'_>, init: Vec<f64>, opts: &FitOptions) -> Result<SingleFit> {
    let initial_cost = objective.cost(&init).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let n = objective.n;
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), opts.memory)
        .with_tolerance_grad(opts.grad_tol)
        .and_then(|s| s.with_tolerance_cost(opts.cost_tol))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let trace = Arc::new(Mutex::new(Vec::new()));
    let run = Executor::new(objective, solver)
        .configure(|s: IterState<Vec<f64>, Vec<f64>, (), (), (), f64>| {
            s.param(init.clone()).max_iters(opts.max_iterations)
        })
        .add_observer(CostTrace(Arc::clone(&trace)), ObserverMode::Always)
        .timer(false)
        .run();
    let trace: Vec<f64> = trace.lock().expect("trace lock").iter().map(|c| -c * n).collect();
    let fit = match run {
        Ok(result) => {
            let state = result.state;
            let converged = matches!(state.get_termination_reason(), Some(TerminationReason::SolverConverged));
            let (logits, cost) = match state.best_param {
                Some(p) if state.best_cost <= initial_cost => (p, state.best_cost),
                _ => (init, initial_cost),
            };
            SingleFit {
                logits,
                cost,
                initial_cost,
                iterations: state.iter,
                converged,
                trace,
            }
        }
        Err(_) => SingleFit {
            logits: init,
            cost: initial_cost,
            initial_cost,
            iterations: 0,
            converged: false,
            trace,
        },
    };
    Ok(fit)
}

/// Maximises the log-likelihood over the logits from `opts.restarts`
/// independent uniform `[0, 1]` starting points; restart `r` draws from the
/// stream `(opts.seed, r)`.
pub fn fit_causal(counts: &ContingencyCounts, opts: &FitOptions) -> Result<CausalFit> {
    opts.validate()?;
    if counts.n() == 0 {
        return Err(Error::EmptyInput("no records to fit".into()));
    }
    let k_u = opts.k_u.unwrap_or(counts.dims().k_u);
    let layout = ThetaLayout::new(counts.dims(), k_u);
    let n = counts.n() as f64;
    let mut best: Option<(usize, SingleFit)> = None;
    let mut any_improved = false;
    for r in 0..opts.restarts {
        let mut rng = stream(opts.seed, &[r as u64]);
        let init: Vec<f64> = (0..layout.len()).map(|_| rng.random::<f64>()).collect();
        let objective = Objective { counts, layout, n };
        let fit = fit_once(objective, init, opts)?;
        any_improved |= fit.cost < fit.initial_cost;
        if best.as_ref().is_none_or(|(_, b)| fit.cost < b.cost) {
            best = Some((r, fit));
        }
    }
    let (restart, fit) = best.expect("at least one restart");
    let theta = logits_to_theta(layout, &fit.logits)?;
    let log_likelihood = likelihood_and_gradient(&theta, counts, None);
    Ok(CausalFit {
        theta,
        log_likelihood,
        initial_log_likelihood: -fit.initial_cost * n,
        iterations: fit.iterations,
        converged: fit.converged,
        restart,
        trace: fit.trace,
        diagnostic: (!any_improved).then(|| "no restart improved the likelihood over its starting point".to_string()),
    })
}

/// Causal-parametrisation estimate `g_{x,y}(theta_hat)`; point only.
pub fn causal_estimate_from_counts(
    counts: &ContingencyCounts,
    x: usize,
    y: usize,
    opts: &FitOptions,
) -> Result<(EffectEstimate, CausalFit)> {
    let d = counts.dims();
    if x >= d.k_x || y >= d.k_y {
        return Err(Error::InvalidArgument(format!("x={} or y={} out of range", x + 1, y + 1)));
    }
    let fit = fit_causal(counts, opts)?;
    let mut est = EffectEstimate::point_only(g_of_theta(&fit.theta, x, y), counts.n());
    est.flags.k_u_override = opts.k_u.is_some_and(|k| k != d.k_u);
    est.flags.empty_cell = counts.n_tgt() == 0 || (0..d.k_e).any(|e| source_x_count(counts, x, e) == 0);
    Ok((est, fit))
}

pub fn causal_estimate(ds: &Dataset, x: usize, y: usize, opts: &FitOptions) -> Result<EffectEstimate> {
    causal_estimate_from_counts(&ds.counts(), x, y, opts).map(|(est, _)| est)
}

fn source_x_count(counts: &ContingencyCounts, x: usize, e: usize) -> u64 {
    let d = counts.dims();
    let mut total = 0;
    for y in 0..d.k_y {
        for w in 0..d.k_w {
            total += counts.source(y, x, w, e);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;
    use crate::identify::causal_decomposition_effect;
    use crate::rng::seeded;
    use crate::scm::fixtures::{counterexample, CounterexampleVariant};
    use crate::scm::{sample_scm_spec, simulate_dataset};
    use nalgebra::DMatrix;

    fn layout(k: [usize; 5]) -> ThetaLayout {
        ThetaLayout::new(&CategorySpec::new(k[0], k[1], k[2], k[3], k[4]).unwrap(), k[1])
    }

    #[test]
    fn parameter_count() {
        let l = layout([3, 2, 4, 2, 3]);
        assert_eq!(l.len(), 2 * (3 + 1 + 4 + 2 + 4 * 2 * 3));
        let covered: usize = l.fibres().iter().map(|f| f.1).sum();
        assert_eq!(covered, l.len());
    }

    #[test]
    fn softmax_examples() {
        let l = layout([1, 3, 1, 1, 1]);
        let theta = logits_to_theta(l, &vec![0.0; l.len()]).unwrap();
        for u in 0..3 {
            assert!((theta.q_u(u) - 1.0 / 3.0).abs() < 1e-15);
        }
        let l = layout([1, 2, 1, 1, 1]);
        let mut z = vec![0.0; l.len()];
        z[l.q_u(0)] = 2f64.ln();
        let theta = logits_to_theta(l, &z).unwrap();
        assert!((theta.q_u(0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((theta.q_u(1) - 1.0 / 3.0).abs() < 1e-15);

        let mut rng = seeded(1);
        let z: Vec<f64> = (0..l.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut shifted = z.clone();
        shifted[l.q_u(0)] += 5.0;
        shifted[l.q_u(1)] += 5.0;
        let a = logits_to_theta(l, &z).unwrap();
        let b = logits_to_theta(l, &shifted).unwrap();
        for (p, q) in a.probs.iter().zip(&b.probs) {
            assert!((p - q).abs() < 1e-14);
        }
        let mut bad = z.clone();
        bad[2] = f64::NAN;
        assert!(matches!(logits_to_theta(l, &bad), Err(Error::NonFiniteLogit { index: 2 })));
    }

    #[test]
    fn likelihood_examples() {
        let dims = CategorySpec::new(1, 2, 2, 2, 2).unwrap();
        let l = ThetaLayout::new(&dims, 2);
        let uniform = logits_to_theta(l, &vec![0.0; l.len()]).unwrap();
        let empty = ContingencyCounts::zeros(&dims);
        assert_eq!(log_likelihood(&uniform, &empty).unwrap(), 0.0);

        let mut one = ContingencyCounts::zeros(&dims);
        one.add_source(1, 0, 1, 0, 1);
        // sum_u (1/2)^4 over two levels of U = 1/8.
        assert!((log_likelihood(&uniform, &one).unwrap() - (1.0f64 / 8.0).ln()).abs() < 1e-14);

        let unit = CategorySpec::new(1, 1, 1, 1, 1).unwrap();
        let lu = ThetaLayout::new(&unit, 1);
        let theta = logits_to_theta(lu, &vec![0.3; lu.len()]).unwrap();
        let ds = Dataset::new(unit, vec![Record::source(0, 0, 0, 0), Record::target(0)]).unwrap();
        assert_eq!(log_likelihood(&theta, &ds.counts()).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded(17);
        for _ in 0..5 {
            let dims = CategorySpec::new(2, 2, 3, 2, 2).unwrap();
            let spec = sample_scm_spec(&dims, &mut rng).unwrap();
            let counts = simulate_dataset(&spec, 300, &mut rng).counts();
            let l = ThetaLayout::new(&dims, 2);
            let z: Vec<f64> = (0..l.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let theta = logits_to_theta(l, &z).unwrap();
            let g = log_likelihood_gradient(&theta, &counts).unwrap();
            for i in 0..l.len() {
                let h = 1e-6;
                let mut zp = z.clone();
                zp[i] += h;
                let mut zm = z.clone();
                zm[i] -= h;
                let fd = (log_likelihood(&logits_to_theta(l, &zp).unwrap(), &counts).unwrap()
                    - log_likelihood(&logits_to_theta(l, &zm).unwrap(), &counts).unwrap())
                    / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(1.0), "{i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn plug_in_matches_counterexample_and_decomposition() {
        let spec = counterexample(CounterexampleVariant::First);
        let theta = ThetaParams::from_spec(&spec);
        assert!((g_of_theta(&theta, 0, 0) - 0.39).abs() < 1e-14);
        let roundtrip = logits_to_theta(theta.layout, &theta.to_logits()).unwrap();
        for (a, b) in theta.probs.iter().zip(&roundtrip.probs) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut rng = seeded(3);
        for _ in 0..20 {
            let dims = CategorySpec::new(2, 3, 2, 2, 3).unwrap();
            let spec = sample_scm_spec(&dims, &mut rng).unwrap();
            let theta = ThetaParams::from_spec(&spec);
            let p_y_uw = DMatrix::from_fn(3, 2, |u, w| theta.p_y(1, u, w, 0));
            let p_w_u = DMatrix::from_fn(2, 3, |w, u| theta.p_w_given_u(w, u));
            let q: Vec<f64> = (0..3).map(|u| theta.q_u(u)).collect();
            let reference = causal_decomposition_effect(&p_y_uw, &p_w_u, &q).unwrap();
            let value = g_of_theta(&theta, 0, 1);
            assert!((value - reference).abs() < 1e-14);
            assert!((0.0..=1.0).contains(&value));
        }
    }

    #[test]
    fn constant_outcome_gives_constant() {
        let l = layout([2, 2, 2, 2, 2]);
        let mut rng = seeded(9);
        let mut z: Vec<f64> = (0..l.len()).map(|_| rng.random::<f64>()).collect();
        for u in 0..2 {
            for w in 0..2 {
                for x in 0..2 {
                    z[l.y_given_uwx(0, u, w, x)] = 0.7f64.ln();
                    z[l.y_given_uwx(1, u, w, x)] = 0.3f64.ln();
                }
            }
        }
        let theta = logits_to_theta(l, &z).unwrap();
        assert!((g_of_theta(&theta, 1, 0) - 0.7).abs() < 1e-14);
    }

    #[test]
    fn confounder_relabelling_changes_nothing() {
        let mut rng = seeded(12);
        let dims = CategorySpec::new(3, 3, 3, 2, 2).unwrap();
        let spec = sample_scm_spec(&dims, &mut rng).unwrap();
        let counts = simulate_dataset(&spec, 500, &mut rng).counts();
        let theta = ThetaParams::from_spec(&spec);
        let permuted = theta.permute_confounder(&[2, 0, 1]);
        let a = log_likelihood(&theta, &counts).unwrap();
        let b = log_likelihood(&permuted, &counts).unwrap();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        assert!((g_of_theta(&theta, 0, 0) - g_of_theta(&permuted, 0, 0)).abs() < 1e-12);
    }

    #[test]
    fn fit_is_deterministic_and_monotone() {
        let mut rng = seeded(21);
        let dims = CategorySpec::new(2, 2, 2, 2, 2).unwrap();
        let spec = sample_scm_spec(&dims, &mut rng).unwrap();
        let counts = simulate_dataset(&spec, 2000, &mut rng).counts();
        let opts = FitOptions {
            seed: 5,
            ..Default::default()
        };
        let a = fit_causal(&counts, &opts).unwrap();
        let b = fit_causal(&counts, &opts).unwrap();
        assert_eq!(a.theta.probs, b.theta.probs);
        assert!(a.log_likelihood >= a.initial_log_likelihood);
        assert!(a.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
        assert!(a.diagnostic.is_none());
    }

    #[test]
    fn more_restarts_never_hurt() {
        let mut rng = seeded(22);
        let dims = CategorySpec::new(2, 2, 2, 2, 2).unwrap();
        let spec = sample_scm_spec(&dims, &mut rng).unwrap();
        let counts = simulate_dataset(&spec, 1000, &mut rng).counts();
        let one = fit_causal(&counts, &FitOptions::default()).unwrap();
        let three = fit_causal(
            &counts,
            &FitOptions {
                restarts: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(three.log_likelihood >= one.log_likelihood);
    }

    #[test]
    fn options_are_validated() {
        let counts = ContingencyCounts::zeros(&CategorySpec::new(1, 1, 1, 1, 1).unwrap());
        assert!(fit_causal(&counts, &FitOptions::default()).is_err());
        let bad = FitOptions {
            restarts: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
