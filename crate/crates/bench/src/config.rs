use std::fmt;
use std::path::Path;

use proxy_transfer::CategorySpec;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Estimators the harness can run. The `*_target` baselines read target
/// treatments and outcomes, which only a simulation can supply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Oracle,
    Reduced,
    /// The reduced point estimate with a bootstrap interval.
    ReducedBootstrap,
    Causal,
    Noadj,
    NoadjTarget,
    Wadj,
    WadjTarget,
}

impl Estimator {
    pub const ALL: [Estimator; 8] = [
        Estimator::Oracle,
        Estimator::Reduced,
        Estimator::ReducedBootstrap,
        Estimator::Causal,
        Estimator::Noadj,
        Estimator::NoadjTarget,
        Estimator::Wadj,
        Estimator::WadjTarget,
    ];

    /// The seven estimators of the baseline comparison.
    pub const COMPARISON: [Estimator; 7] = [
        Estimator::Oracle,
        Estimator::Reduced,
        Estimator::Causal,
        Estimator::Noadj,
        Estimator::NoadjTarget,
        Estimator::Wadj,
        Estimator::WadjTarget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Oracle => "oracle",
            Estimator::Reduced => "reduced",
            Estimator::ReducedBootstrap => "reduced_bootstrap",
            Estimator::Causal => "causal",
            Estimator::Noadj => "noadj",
            Estimator::NoadjTarget => "noadj_target",
            Estimator::Wadj => "wadj",
            Estimator::WadjTarget => "wadj_target",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }

    pub fn is_baseline(self) -> bool {
        matches!(
            self,
            Estimator::Noadj | Estimator::NoadjTarget | Estimator::Wadj | Estimator::WadjTarget
        )
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_one() -> usize {
    1
}
fn default_alpha() -> f64 {
    0.05
}
fn default_threshold() -> f64 {
    0.1
}
fn default_budget() -> usize {
    10_000
}
fn default_repetitions() -> usize {
    50
}
fn default_max_iterations() -> u64 {
    50_000
}

/// One simulation study. `x` and `y` are 1-based, like every index in the
/// files the harness reads and writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dims: CategorySpec,
    /// Model draws (M).
    pub models: usize,
    /// Datasets per model (N).
    pub datasets: usize,
    /// Sample size of every dataset.
    pub n: usize,
    /// Sample sizes for sweeps; empty means `[n]`.
    #[serde(default)]
    pub sample_sizes: Vec<usize>,
    /// Empty means the default set of the study being run.
    #[serde(default)]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Bootstrap resamples (B) for `reduced_bootstrap`.
    #[serde(default)]
    pub bootstrap: usize,
    /// Minimum `|q(y|do(x)) - q(y|x)|` for a model draw in the baseline
    /// comparison.
    #[serde(default = "default_threshold")]
    pub confounding_threshold: f64,
    /// Reject model draws whose population `kappa(P(W|E,x))` is not below
    /// this.
    #[serde(default)]
    pub max_kappa: Option<f64>,
    /// Model draws tried per model index before giving up.
    #[serde(default = "default_budget")]
    pub draw_budget: usize,
    pub seed: u64,
    #[serde(default = "default_one")]
    pub workers: usize,
    #[serde(default = "default_one")]
    pub x: usize,
    #[serde(default = "default_one")]
    pub y: usize,
    /// Restarts of the causal fit.
    #[serde(default = "default_one")]
    pub restarts: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u64,
    /// Timed calls per estimator in the runtime study.
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(dims: CategorySpec, models: usize, datasets: usize, n: usize, seed: u64) -> Self {
        ExperimentConfig {
            dims,
            models,
            datasets,
            n,
            sample_sizes: Vec::new(),
            estimators: Vec::new(),
            alpha: default_alpha(),
            bootstrap: 0,
            confounding_threshold: default_threshold(),
            max_kappa: None,
            draw_budget: default_budget(),
            seed,
            workers: 1,
            x: 1,
            y: 1,
            restarts: 1,
            max_iterations: default_max_iterations(),
            repetitions: default_repetitions(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BenchError::Config(m.to_string()));
        self.dims.validate()?;
        if self.models == 0 || self.datasets == 0 || self.n == 0 {
            return bad("models, datasets and n must be at least 1");
        }
        if self.sample_sizes.contains(&0) {
            return bad("sample sizes must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.confounding_threshold >= 0.0) {
            return bad("confounding_threshold must be non-negative");
        }
        if self.max_kappa.is_some_and(|k| !(k > 1.0)) {
            return bad("max_kappa must exceed 1");
        }
        if self.draw_budget == 0 || self.workers == 0 || self.restarts == 0 || self.repetitions == 0 {
            return bad("draw_budget, workers, restarts and repetitions must be at least 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if self.x == 0 || self.x > self.dims.k_x || self.y == 0 || self.y > self.dims.k_y {
            return bad("x and y must be 1-based indices within dims");
        }
        if self.estimators.contains(&Estimator::ReducedBootstrap) && self.bootstrap < 2 {
            return bad("reduced_bootstrap needs bootstrap >= 2");
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        if self.sample_sizes.is_empty() {
            vec![self.n]
        } else {
            self.sample_sizes.clone()
        }
    }

    pub(crate) fn estimators_or(&self, default: &[Estimator]) -> Vec<Estimator> {
        let mut v = if self.estimators.is_empty() {
            default.to_vec()
        } else {
            self.estimators.clone()
        };
        v.sort();
        v.dedup();
        v
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"dims":{"k_e":2,"k_u":2,"k_w":2,"k_x":2,"k_y":2},"models":1,"datasets":1,"n":10,"seed":3}"#,
        )
        .unwrap();
        let dims = CategorySpec::new(2, 2, 2, 2, 2).unwrap();
        assert_eq!(cfg, ExperimentConfig::new(dims, 1, 1, 10, 3));
        cfg.validate().unwrap();
        assert_eq!(cfg.sizes(), vec![10]);
    }

    #[test]
    fn rejects_bad_values() {
        let dims = CategorySpec::new(2, 2, 2, 2, 2).unwrap();
        let good = ExperimentConfig::new(dims, 1, 1, 10, 3);
        let mut c = good.clone();
        c.models = 0;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.confounding_threshold = -0.1;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.x = 3;
        assert!(c.validate().is_err());
        let mut c = good;
        c.estimators = vec![Estimator::ReducedBootstrap];
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(Estimator::from_name(e.name()), Some(e));
            assert_eq!(serde_json::to_string(&e).unwrap(), format!("\"{}\"", e.name()));
        }
    }
}
