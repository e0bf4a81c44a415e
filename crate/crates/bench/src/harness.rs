//! The simulation studies. Every random quantity is drawn from a stream
//! keyed by the master seed and the model and dataset indices, so results do
//! not depend on the worker count or on scheduling.

use std::time::Instant;

use proxy_transfer::baselines::{no_adjustment, oracle_estimate, w_adjustment, wald_interval, Scope};
use proxy_transfer::causal::{causal_estimate, FitOptions};
use proxy_transfer::linalg::condition_number;
use proxy_transfer::reduced::{bootstrap_ci, eta_from_dataset, reduced_estimate, views_from_eta, ReducedOptions};
use proxy_transfer::rng::{derive_seed, stream};
use proxy_transfer::scm::{interventional_sample, simulate_with_target_outcomes, target_conditional};
use proxy_transfer::{population_views, sample_scm_spec, true_effect, Dataset, ScmSpec, TargetOutcomes};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Estimator, ExperimentConfig};
use crate::error::{BenchError, Result};
use crate::record::ReplicateRecord;
use crate::stats::median;

const MODEL_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;
const CAUSAL_STREAM: u64 = 2;
const BOOTSTRAP_STREAM: u64 = 3;
const ORACLE_STREAM: u64 = 4;

/// A model draw that passed the study's filters.
#[derive(Debug, Clone)]
pub struct ModelDraw {
    pub index: usize,
    pub spec: ScmSpec,
    pub truth: f64,
    pub kappa_true: f64,
    /// Draws rejected before this one.
    pub rejected: usize,
}

/// Draws model `index`: attempt `a` uses the stream `(seed, model, index, a)`
/// and the first attempt passing the `max_kappa` filter (and, when
/// `confounded` is set, the confounding filter) is kept.
pub fn draw_model(cfg: &ExperimentConfig, index: usize, confounded: bool) -> Result<ModelDraw> {
    let (x, y) = (cfg.x - 1, cfg.y - 1);
    for attempt in 0..cfg.draw_budget {
        let mut rng = stream(cfg.seed, &[MODEL_STREAM, index as u64, attempt as u64]);
        let spec = sample_scm_spec(&cfg.dims, &mut rng)?;
        let views = population_views(&spec, x, y)?;
        let kappa_true = condition_number(&views.p_w_given_ex);
        if cfg.max_kappa.is_some_and(|k| !(kappa_true < k)) {
            continue;
        }
        let truth = true_effect(&spec, x, y)?;
        if confounded && !((truth - target_conditional(&spec, x, y)?).abs() > cfg.confounding_threshold) {
            continue;
        }
        return Ok(ModelDraw {
            index,
            spec,
            truth,
            kappa_true,
            rejected: attempt,
        });
    }
    Err(BenchError::FilterExhausted {
        model: index,
        draws: cfg.draw_budget,
    })
}

/// Everything an estimator call may read, generated before any timing.
pub struct DatasetContext<'a> {
    cfg: &'a ExperimentConfig,
    pub model: &'a ModelDraw,
    pub dataset: usize,
    pub n: usize,
    pub data: Dataset,
    pub target_outcomes: TargetOutcomes,
    /// Interventional draws for the oracle; empty unless requested.
    pub oracle_draws: Vec<usize>,
}

impl<'a> DatasetContext<'a> {
    pub fn new(cfg: &'a ExperimentConfig, model: &'a ModelDraw, dataset: usize, n: usize, oracle: bool) -> Self {
        let path = [DATA_STREAM, model.index as u64, dataset as u64];
        let (data, target_outcomes) = simulate_with_target_outcomes(&model.spec, n, &mut stream(cfg.seed, &path));
        let oracle_draws = if oracle {
            let path = [ORACLE_STREAM, model.index as u64, dataset as u64];
            interventional_sample(&model.spec, cfg.x - 1, n, &mut stream(cfg.seed, &path))
        } else {
            Vec::new()
        };
        DatasetContext {
            cfg,
            model,
            dataset,
            n,
            data,
            target_outcomes,
            oracle_draws,
        }
    }

    fn path(&self, tag: u64) -> u64 {
        derive_seed(self.cfg.seed, &[tag, self.model.index as u64, self.dataset as u64])
    }

    /// `kappa` of the empirical `P(W|E,x)`.
    pub fn kappa_hat(&self) -> Option<f64> {
        let eta = eta_from_dataset(&self.data, self.cfg.x - 1, self.cfg.y - 1).ok()?;
        let (_, p_w, _) = views_from_eta(eta.layout, eta.x, &eta.values).ok()?;
        Some(condition_number(&p_w))
    }

    pub fn evaluate(&self, est: Estimator) -> proxy_transfer::Result<Outcome> {
        let (x, y) = (self.cfg.x - 1, self.cfg.y - 1);
        let reduced_opts = ReducedOptions {
            alpha: self.cfg.alpha,
            ..Default::default()
        };
        let ds = &self.data;
        let point = Outcome::point;
        match est {
            Estimator::Oracle => {
                let p = oracle_estimate(&self.oracle_draws, y)?;
                let (lo, hi) = wald_interval(p, self.oracle_draws.len(), self.cfg.alpha);
                Ok(Outcome {
                    ci: Some((lo, hi)),
                    ..point(p)
                })
            }
            Estimator::Reduced => {
                let e = reduced_estimate(ds, x, y, reduced_opts)?;
                Ok(Outcome {
                    estimate: e.point,
                    unclipped: e.point_unclipped,
                    sigma: e.sigma_hat,
                    ci: e.ci_lower.zip(e.ci_upper),
                })
            }
            Estimator::ReducedBootstrap => {
                let e = reduced_estimate(ds, x, y, reduced_opts)?;
                let b = bootstrap_ci(ds, x, y, self.cfg.bootstrap, reduced_opts, self.path(BOOTSTRAP_STREAM))?;
                Ok(Outcome {
                    estimate: e.point,
                    unclipped: e.point_unclipped,
                    sigma: Some(b.sigma_boot * (e.n as f64).sqrt()),
                    ci: Some((b.ci_lower, b.ci_upper)),
                })
            }
            Estimator::Causal => {
                let opts = FitOptions {
                    restarts: self.cfg.restarts,
                    max_iterations: self.cfg.max_iterations,
                    seed: self.path(CAUSAL_STREAM),
                    ..Default::default()
                };
                let e = causal_estimate(ds, x, y, &opts)?;
                Ok(Outcome {
                    unclipped: e.point_unclipped,
                    ..point(e.point)
                })
            }
            Estimator::Noadj => no_adjustment(ds, x, y, Scope::PooledSource).map(point),
            Estimator::NoadjTarget => no_adjustment(ds, x, y, Scope::Target(&self.target_outcomes)).map(point),
            Estimator::Wadj => w_adjustment(ds, x, y, Scope::PooledSource).map(point),
            Estimator::WadjTarget => w_adjustment(ds, x, y, Scope::Target(&self.target_outcomes)).map(point),
        }
    }

    /// Runs and times one estimator.
    pub fn record(&self, est: Estimator, kappa_hat: Option<f64>) -> ReplicateRecord {
        let start = Instant::now();
        let outcome = self.evaluate(est);
        let wall_time_s = start.elapsed().as_secs_f64();
        let truth = self.model.truth;
        let mut r = ReplicateRecord {
            model: self.model.index,
            dataset: self.dataset,
            n: self.n,
            estimator: est,
            x: self.cfg.x,
            y: self.cfg.y,
            estimate: None,
            estimate_unclipped: None,
            truth,
            abs_error: None,
            kappa_true: self.model.kappa_true,
            kappa_hat,
            sigma_hat: None,
            ci_lower: None,
            ci_upper: None,
            covered: None,
            wall_time_s,
            error: None,
        };
        match outcome {
            Ok(o) => {
                r.estimate = Some(o.estimate);
                r.estimate_unclipped = Some(o.unclipped);
                r.abs_error = Some((o.estimate - truth).abs());
                r.sigma_hat = o.sigma;
                if let Some((lo, hi)) = o.ci {
                    r.ci_lower = Some(lo);
                    r.ci_upper = Some(hi);
                    r.covered = Some(lo <= truth && truth <= hi);
                }
            }
            Err(e) => r.error = Some(e.to_string()),
        }
        r
    }
}

/// Output of one estimator call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    /// Clipped to `[0, 1]`.
    pub estimate: f64,
    pub unclipped: f64,
    /// Standard deviation of `sqrt(n) (estimate - truth)`.
    pub sigma: Option<f64>,
    /// Clipped interval.
    pub ci: Option<(f64, f64)>,
}

impl Outcome {
    fn point(p: f64) -> Self {
        Outcome {
            estimate: p,
            unclipped: p,
            sigma: None,
            ci: None,
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

fn draw_models(cfg: &ExperimentConfig, pool: &rayon::ThreadPool, confounded: bool) -> Result<Vec<ModelDraw>> {
    pool.install(|| {
        (0..cfg.models)
            .into_par_iter()
            .map(|m| draw_model(cfg, m, confounded))
            .collect()
    })
}

/// Runs `estimators` on every `(n, model, dataset)` triple; records are
/// sorted by `(n, model, dataset, estimator)`.
fn run_replicates(cfg: &ExperimentConfig, estimators: &[Estimator], confounded: bool) -> Result<Vec<ReplicateRecord>> {
    cfg.validate()?;
    let pool = pool(cfg.workers)?;
    let models = draw_models(cfg, &pool, confounded)?;
    let oracle = estimators.contains(&Estimator::Oracle);
    let tasks: Vec<(usize, usize, usize)> = cfg
        .sizes()
        .into_iter()
        .flat_map(|n| (0..cfg.models).flat_map(move |m| (0..cfg.datasets).map(move |d| (n, m, d))))
        .collect();
    let mut records: Vec<ReplicateRecord> = pool.install(|| {
        tasks
            .par_iter()
            .flat_map_iter(|&(n, m, d)| {
                let ctx = DatasetContext::new(cfg, &models[m], d, n, oracle);
                let kappa_hat = ctx.kappa_hat();
                estimators.iter().map(move |&e| ctx.record(e, kappa_hat)).collect::<Vec<_>>()
            })
            .collect()
    });
    records.sort_by_key(|r| (r.n, r.model, r.dataset, r.estimator));
    Ok(records)
}

/// Absolute error of the reduced and causal estimators (by default) against
/// the population condition number, over `M` models and `N` datasets each.
pub fn run_point_error(cfg: &ExperimentConfig) -> Result<Vec<ReplicateRecord>> {
    run_replicates(cfg, &cfg.estimators_or(&[Estimator::Reduced, Estimator::Causal]), false)
}

/// The seven-estimator comparison on models whose target effect differs
/// from the target conditional by more than the confounding threshold.
pub fn run_baseline_comparison(cfg: &ExperimentConfig) -> Result<Vec<ReplicateRecord>> {
    run_replicates(cfg, &cfg.estimators_or(&Estimator::COMPARISON), true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub n: usize,
    pub estimator: Estimator,
    pub replicates: usize,
    pub failures: usize,
    /// Fraction of successful replicates whose interval contains the truth.
    pub coverage: f64,
    pub median_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStudy {
    pub rows: Vec<CoverageRow>,
    pub records: Vec<ReplicateRecord>,
}

impl CoverageStudy {
    pub fn row(&self, n: usize, estimator: Estimator) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.n == n && r.estimator == estimator)
    }
}

/// Coverage and median length of the asymptotic and (when `bootstrap >= 2`)
/// bootstrap intervals at every sample size; both interval types are built
/// on the same datasets.
pub fn run_coverage(cfg: &ExperimentConfig) -> Result<CoverageStudy> {
    let default: &[Estimator] = if cfg.bootstrap >= 2 {
        &[Estimator::Reduced, Estimator::ReducedBootstrap]
    } else {
        &[Estimator::Reduced]
    };
    let estimators = cfg.estimators_or(default);
    let records = run_replicates(cfg, &estimators, false)?;
    let mut rows = Vec::new();
    for n in cfg.sizes() {
        for &e in &estimators {
            let group: Vec<&ReplicateRecord> = records.iter().filter(|r| r.n == n && r.estimator == e).collect();
            let ok: Vec<&ReplicateRecord> = group.iter().copied().filter(|r| r.covered.is_some()).collect();
            let covered = ok.iter().filter(|r| r.covered == Some(true)).count();
            let lengths: Vec<f64> = ok.iter().filter_map(|r| r.ci_length()).collect();
            rows.push(CoverageRow {
                n,
                estimator: e,
                replicates: group.len(),
                failures: group.len() - ok.len(),
                coverage: if ok.is_empty() { f64::NAN } else { covered as f64 / ok.len() as f64 },
                median_length: median(&lengths),
            });
        }
    }
    Ok(CoverageStudy { rows, records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub n: usize,
    pub estimator: Estimator,
    pub repetitions: usize,
    pub total_s: f64,
    /// The value every repetition returned.
    pub estimate: Option<f64>,
    pub error: Option<String>,
}

/// Total wall time of `repetitions` calls per estimator and sample size, on
/// dataset 0 of model 0. Calls run one at a time whatever the worker count,
/// so timings do not compete for cores.
pub fn run_runtime(cfg: &ExperimentConfig) -> Result<Vec<RuntimeRow>> {
    cfg.validate()?;
    let estimators = cfg.estimators_or(&Estimator::COMPARISON);
    let model = draw_model(cfg, 0, false)?;
    let mut rows = Vec::new();
    for n in cfg.sizes() {
        let ctx = DatasetContext::new(cfg, &model, 0, n, estimators.contains(&Estimator::Oracle));
        for &e in &estimators {
            let mut total = 0.0;
            let mut last = None;
            for _ in 0..cfg.repetitions {
                let start = Instant::now();
                let out = ctx.evaluate(e);
                total += start.elapsed().as_secs_f64();
                last = Some(out);
            }
            let last = last.expect("at least one repetition");
            rows.push(RuntimeRow {
                n,
                estimator: e,
                repetitions: cfg.repetitions,
                total_s: total,
                estimate: last.as_ref().ok().map(|o| o.estimate),
                error: last.err().map(|e| e.to_string()),
            });
        }
    }
    Ok(rows)
}

/// Per `(n, estimator)` error summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub n: usize,
    pub estimator: Estimator,
    pub records: usize,
    pub failures: usize,
    pub median_abs_error: f64,
    pub mean_abs_error: f64,
}

pub fn summarize(records: &[ReplicateRecord]) -> Vec<EstimatorSummary> {
    let mut keys: Vec<(usize, Estimator)> = records.iter().map(|r| (r.n, r.estimator)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(n, estimator)| {
            let group: Vec<&ReplicateRecord> = records.iter().filter(|r| r.n == n && r.estimator == estimator).collect();
            let errors: Vec<f64> = group.iter().filter_map(|r| r.abs_error).collect();
            EstimatorSummary {
                n,
                estimator,
                records: group.len(),
                failures: group.iter().filter(|r| r.failed()).count(),
                median_abs_error: median(&errors),
                mean_abs_error: if errors.is_empty() {
                    f64::NAN
                } else {
                    errors.iter().sum::<f64>() / errors.len() as f64
                },
            }
        })
        .collect()
}

/// Median absolute error of one estimator at one sample size.
pub fn median_abs_error(records: &[ReplicateRecord], n: usize, estimator: Estimator) -> f64 {
    let errors: Vec<f64> = records
        .iter()
        .filter(|r| r.n == n && r.estimator == estimator)
        .filter_map(|r| r.abs_error)
        .collect();
    median(&errors)
}
