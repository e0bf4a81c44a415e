//! Estimation of interventional distributions `q(y | do(x))` in a target
//! domain where only a proxy `W` of a hidden discrete confounder `U` is
//! observed, using fully observed data from several source domains.
//!
//! The crate covers population-level identification ([`identify`]), two
//! estimators ([`reduced`] with delta-method and bootstrap intervals,
//! [`causal`] by maximum likelihood), comparison [`baselines`], a discrete
//! model simulator ([`scm`]) and file formats ([`io`]).

pub mod baselines;
pub mod causal;
pub mod data;
pub mod error;
pub mod identify;
pub mod io;
pub mod linalg;
pub mod reduced;
pub mod rng;
pub mod scm;
pub mod stats;

pub use data::{ContingencyCounts, Dataset, Domain, Record, TargetOutcomes};
pub use error::{EmptyCell, Error, Result};
pub use identify::{identify_effect, reduce_proxy, IdentifyOptions, Partition, ProxyMapping};
pub use linalg::{CategorySpec, ProbVector, StochasticMatrix};
pub use reduced::{reduced_estimate, EffectEstimate, EstimateFlags, EtaVector};
pub use scm::{population_views, sample_scm_spec, simulate_dataset, true_effect, ScmSpec};
