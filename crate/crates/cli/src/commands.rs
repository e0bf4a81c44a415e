use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use proxy_transfer::baselines::{no_adjustment, w_adjustment, Scope};
use proxy_transfer::causal::{causal_estimate_from_counts, FitOptions};
use proxy_transfer::identify::{discretize_proxy, search_partition, IdentifyOptions, Merge, ProxyReading};
use proxy_transfer::io::{
    dataset_to_string, load_dataset, load_dims, load_model, model_to_string, save_dims, to_json_string, write_atomic,
};
use proxy_transfer::linalg::{condition_number, numeric_row_rank, DEFAULT_RANK_TOL};
use proxy_transfer::reduced::{
    bootstrap_ci_from_counts, eta_from_dataset, reduced_estimate_from_counts, views_from_eta, BootstrapInterval,
    ReducedOptions,
};
use proxy_transfer::rng::stream;
use proxy_transfer::{
    identify::identify_effect_with, population_views, reduce_proxy, sample_scm_spec, simulate_dataset, true_effect,
    CategorySpec, Dataset, EffectEstimate, Partition, Record,
};
use proxy_transfer_bench::{
    run_baseline_comparison, run_coverage, run_point_error, run_runtime, save_records, summarize, records_to_string,
    ExperimentConfig,
};
use serde::Serialize;

use crate::args::*;

/// A command line that parses but is not usable.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Writes `text` to `path` atomically, or to standard output.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn resolve_dims(args: &DimsArgs) -> Result<CategorySpec> {
    if let Some(path) = &args.dims {
        return load_dims(path).with_context(|| format!("reading dims from {}", path.display()));
    }
    match (args.k_e, args.k_u, args.k_w, args.k_x, args.k_y) {
        (Some(e), Some(u), Some(w), Some(x), Some(y)) => Ok(CategorySpec::new(e, u, w, x, y)?),
        _ => Err(usage("give --dims or all of --k-e, --k-u, --k-w, --k-x, --k-y")),
    }
}

fn to_index(v: usize, k: usize, name: &str) -> Result<usize> {
    if v == 0 || v > k {
        return Err(usage(format!("--{name} must be a 1-based index in 1..={k}, got {v}")));
    }
    Ok(v - 1)
}

fn load_data(path: &Path, dims: &CategorySpec) -> Result<Dataset> {
    load_dataset(path, dims).with_context(|| format!("reading {}", path.display()))
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut rng = stream(args.seed, &[]);
    let spec = match &args.model {
        Some(path) => load_model(path).with_context(|| format!("reading {}", path.display()))?,
        None => sample_scm_spec(&resolve_dims(&args.dims)?, &mut rng)?,
    };
    let ds = simulate_dataset(&spec, args.n, &mut rng);
    if let Some(p) = &args.model_out {
        write_atomic(p, model_to_string(&spec)?.as_bytes())?;
    }
    if let Some(p) = &args.dims_out {
        save_dims(p, &spec.dims)?;
    }
    emit(args.out.as_deref(), &dataset_to_string(&ds)?)
}

#[derive(Serialize)]
struct FitSummary {
    log_likelihood: f64,
    initial_log_likelihood: f64,
    iterations: u64,
    converged: bool,
    restart: usize,
    diagnostic: Option<String>,
}

#[derive(Serialize)]
struct EstimateOutput {
    method: &'static str,
    x: usize,
    y: usize,
    #[serde(flatten)]
    estimate: EffectEstimate,
    bootstrap: Option<BootstrapInterval>,
    fit: Option<FitSummary>,
}

pub fn estimate(args: &EstimateArgs) -> Result<()> {
    let dims = resolve_dims(&args.dims)?;
    let x = to_index(args.x, dims.k_x, "x")?;
    let y = to_index(args.y, dims.k_y, "y")?;
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(usage("--alpha must lie in (0, 1)"));
    }
    if args.bootstrap.is_some() && args.method != Method::Reduced {
        return Err(usage("--bootstrap applies to --method reduced only"));
    }
    let ds = load_data(&args.data, &dims)?;
    let counts = ds.counts();
    let opts = ReducedOptions {
        alpha: args.alpha,
        rank_tol: DEFAULT_RANK_TOL,
    };
    let mut bootstrap = None;
    let mut fit = None;
    let (method, estimate) = match args.method {
        Method::Reduced => {
            let est = reduced_estimate_from_counts(&counts, x, y, opts)?;
            if let Some(b) = args.bootstrap {
                bootstrap = Some(bootstrap_ci_from_counts(&counts, x, y, b, opts, args.seed)?);
            }
            ("reduced", est)
        }
        Method::Causal => {
            let fit_opts = FitOptions {
                restarts: args.restarts,
                seed: args.seed,
                k_u: args.fit_k_u,
                ..Default::default()
            };
            let (est, f) = causal_estimate_from_counts(&counts, x, y, &fit_opts)?;
            fit = Some(FitSummary {
                log_likelihood: f.log_likelihood,
                initial_log_likelihood: f.initial_log_likelihood,
                iterations: f.iterations,
                converged: f.converged,
                restart: f.restart,
                diagnostic: f.diagnostic,
            });
            ("causal", est)
        }
        Method::Noadj => (
            "noadj",
            EffectEstimate::point_only(no_adjustment(&ds, x, y, Scope::PooledSource)?, counts.n_src()),
        ),
        Method::Wadj => (
            "wadj",
            EffectEstimate::point_only(w_adjustment(&ds, x, y, Scope::PooledSource)?, counts.n_src()),
        ),
    };
    let out = EstimateOutput {
        method,
        x: args.x,
        y: args.y,
        estimate,
        bootstrap,
        fit,
    };
    emit(args.out.as_deref(), &to_json_string(&out)?)
}

#[derive(Serialize)]
struct IdentifyOutput {
    x: usize,
    y: usize,
    effect: f64,
    /// From the model's own confounder law.
    true_effect: f64,
    rank: usize,
    rows: usize,
    condition_number: f64,
    ridge: Option<f64>,
}

pub fn identify(args: &IdentifyArgs) -> Result<()> {
    let spec = load_model(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let x = to_index(args.x, spec.dims.k_x, "x")?;
    let y = to_index(args.y, spec.dims.k_y, "y")?;
    let v = population_views(&spec, x, y)?;
    let opts = IdentifyOptions {
        ridge: args.ridge,
        ..Default::default()
    };
    let effect = identify_effect_with(&v.p_y_given_ex, &v.p_w_given_ex, &v.q_w, opts)?;
    let out = IdentifyOutput {
        x: args.x,
        y: args.y,
        effect,
        true_effect: true_effect(&spec, x, y)?,
        rank: numeric_row_rank(&v.p_w_given_ex, opts.rank_tol),
        rows: v.p_w_given_ex.nrows(),
        condition_number: condition_number(&v.p_w_given_ex),
        ridge: args.ridge,
    };
    emit(args.out.as_deref(), &to_json_string(&out)?)
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(usage("--workers must be at least 1"));
        }
        cfg.workers = w;
    }
    let summary = |value: &dyn erased::Json| -> Result<()> {
        if let Some(p) = &args.summary {
            write_atomic(p, value.json()?.as_bytes())?;
        }
        Ok(())
    };
    let records = match args.study {
        Study::PointError | Study::Baselines => {
            let records = if args.study == Study::PointError {
                run_point_error(&cfg)?
            } else {
                run_baseline_comparison(&cfg)?
            };
            summary(&summarize(&records))?;
            records
        }
        Study::Coverage => {
            let study = run_coverage(&cfg)?;
            summary(&study.rows)?;
            study.records
        }
        Study::Runtime => {
            let rows = run_runtime(&cfg)?;
            summary(&rows)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r)?;
            }
            let text = String::from_utf8(w.into_inner().context("flushing csv")?)?;
            return emit(args.out.as_deref(), &text);
        }
    };
    match &args.out {
        Some(p) => Ok(save_records(p, &records)?),
        None => emit(None, &records_to_string(&records)?),
    }
}

/// Type-erased JSON serialisation for summaries of different types.
mod erased {
    pub trait Json {
        fn json(&self) -> anyhow::Result<String>;
    }

    impl<T: serde::Serialize> Json for T {
        fn json(&self) -> anyhow::Result<String> {
            Ok(proxy_transfer::io::to_json_string(self)?)
        }
    }
}

#[derive(Serialize)]
struct MergeOutput {
    merged: usize,
    absorbed_into: usize,
    coefficient: f64,
}

#[derive(Serialize)]
struct ReduceOutput {
    source_cardinality: usize,
    target_cardinality: usize,
    /// Numeric rank of the input matrix.
    rank: usize,
    /// 1-based coarse level of each proxy level.
    assignment: Vec<usize>,
    merges: Vec<MergeOutput>,
}

pub fn reduce(args: &ReduceProxyArgs) -> Result<()> {
    let (p_w, data) = match (&args.model, &args.data) {
        (Some(path), _) => {
            let spec = load_model(path).with_context(|| format!("reading {}", path.display()))?;
            let x = to_index(args.x, spec.dims.k_x, "x")?;
            (population_views(&spec, x, 0)?.p_w_given_ex, None)
        }
        (None, Some(path)) => {
            let dims = resolve_dims(&args.dims)?;
            let x = to_index(args.x, dims.k_x, "x")?;
            let ds = load_data(path, &dims)?;
            let eta = eta_from_dataset(&ds, x, 0)?;
            (views_from_eta(eta.layout, eta.x, &eta.values)?.1, Some(ds))
        }
        (None, None) => return Err(usage("give --model or --data")),
    };
    let mapping = reduce_proxy(&p_w, args.rel_tol);
    let out = ReduceOutput {
        source_cardinality: mapping.source_cardinality,
        target_cardinality: mapping.target_cardinality(),
        rank: numeric_row_rank(&p_w, args.rel_tol),
        assignment: mapping.assignment.iter().map(|a| a + 1).collect(),
        merges: mapping
            .merges
            .iter()
            .map(|&Merge { merged, absorbed_into, coefficient }| MergeOutput {
                merged: merged + 1,
                absorbed_into: absorbed_into + 1,
                coefficient,
            })
            .collect(),
    };
    if let Some(ds) = data {
        let mut dims = ds.dims().clone();
        dims.k_w = mapping.target_cardinality();
        dims.labels.w = None;
        let records = ds
            .records()
            .iter()
            .map(|r| Record {
                w: mapping.map(r.w),
                ..*r
            })
            .collect();
        let merged = Dataset::new(dims.clone(), records)?;
        if let Some(p) = &args.data_out {
            write_atomic(p, dataset_to_string(&merged)?.as_bytes())?;
        }
        if let Some(p) = &args.dims_out {
            save_dims(p, &dims)?;
        }
    }
    emit(args.out.as_deref(), &to_json_string(&out)?)
}

/// One row of a continuous-proxy file.
struct Reading {
    /// 1-based source domain, or `None` for the target.
    domain: Option<usize>,
    value: f64,
    x: String,
    y: String,
}

fn read_readings(path: &Path) -> Result<Vec<Reading>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["domain", "value", "x", "y"] {
        bail!("{}: line 1: expected header \"domain,value,x,y\"", path.display());
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let fail = |m: String| anyhow::anyhow!("{}: line {line}: {m}", path.display());
        let value: f64 = field(1).parse().map_err(|_| fail(format!("value {:?} is not a number", field(1))))?;
        let domain = match field(0).as_str() {
            "T" => None,
            d => Some(
                d.parse::<usize>()
                    .ok()
                    .filter(|&d| d > 0)
                    .ok_or_else(|| fail(format!("domain must be a positive integer or T, got {d:?}")))?,
            ),
        };
        let (x, y) = (field(2), field(3));
        if domain.is_none() && (!x.is_empty() || !y.is_empty()) {
            return Err(fail("target row carries x/y".into()));
        }
        if domain.is_some() {
            for (name, v) in [("x", &x), ("y", &y)] {
                if !v.parse::<usize>().is_ok_and(|v| v > 0) {
                    return Err(fail(format!("{name} must be a positive integer, got {v:?}")));
                }
            }
        }
        out.push(Reading { domain, value, x, y });
    }
    Ok(out)
}

pub fn discretize(args: &DiscretizeArgs) -> Result<()> {
    let readings = read_readings(&args.input)?;
    let partition = if let Some(path) = &args.partition {
        let p: Partition = serde_json::from_str(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
            .with_context(|| format!("parsing {}", path.display()))?;
        p.validate()?;
        p
    } else if let Some(cuts) = &args.edges {
        let p = Partition::Cuts {
            cuts: cuts.clone(),
            lower: args.lower,
            upper: args.upper,
        };
        p.validate()?;
        p
    } else if let Some(k_u) = args.search {
        let (max_bins, k_x, k_e) = (args.max_bins.unwrap(), args.k_x.unwrap(), args.k_e.unwrap());
        let sources: Vec<ProxyReading> = readings
            .iter()
            .filter_map(|r| {
                Some(ProxyReading {
                    value: r.value,
                    x: r.x.parse::<usize>().ok()? - 1,
                    domain: r.domain? - 1,
                })
            })
            .collect();
        let choice = search_partition(&sources, k_x, k_e, k_u, max_bins, args.rel_tol)?;
        eprintln!(
            "chosen partition: {} bins, rank {}, score {:e}",
            choice.partition.bins(),
            choice.rank,
            choice.score
        );
        choice.partition
    } else {
        return Err(usage("give --partition, --edges or --search"));
    };
    let values: Vec<f64> = readings.iter().map(|r| r.value).collect();
    let codes = discretize_proxy(&values, &partition)?;
    if let Some(p) = &args.partition_out {
        write_atomic(p, to_json_string(&partition)?.as_bytes())?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["domain", "w", "x", "y"])?;
    for (r, c) in readings.iter().zip(codes) {
        let domain = r.domain.map_or("T".to_string(), |d| d.to_string());
        w.write_record([domain, (c + 1).to_string(), r.x.clone(), r.y.clone()])?;
    }
    let text = String::from_utf8(w.into_inner().context("flushing csv")?)?;
    emit(args.out.as_deref(), &text)
}
