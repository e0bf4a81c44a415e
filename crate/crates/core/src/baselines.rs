//! Comparison estimators: an oracle on interventional draws, the plain
//! conditional `Y | x`, and adjustment for `W` as if it were the confounder.

use crate::data::{Dataset, TargetOutcomes};
use crate::error::{Error, Result};
use crate::stats::z_two_sided;

/// Which records a baseline reads.
#[derive(Debug, Clone, Copy)]
pub enum Scope<'a> {
    /// All source records, pooled across domains.
    PooledSource,
    /// Target records with their treatment and outcome. This information is
    /// unavailable outside simulations.
    Target(&'a TargetOutcomes),
}

/// Stand-in for the missing treatment and outcome of target records; never
/// equal to a category index.
const MISSING: usize = usize::MAX;

/// Calls `f(w, x, y, weight)` for every record, with `weight` 1 for in-scope
/// records and 0 otherwise. Out-of-scope records carry `x = MISSING`. The
/// loops avoid data-dependent branches.
fn for_each_in_scope(ds: &Dataset, scope: Scope<'_>, mut f: impl FnMut(usize, usize, usize, u64)) {
    match scope {
        Scope::PooledSource => {
            for r in ds.records() {
                f(r.w, r.x.unwrap_or(MISSING), r.y.unwrap_or(MISSING), u64::from(r.x.is_some()));
            }
        }
        Scope::Target(t) => t.records.iter().for_each(|&(w, x, y)| f(w, x, y, 1)),
    }
}

/// Empirical frequency of `y` among interventional draws.
pub fn oracle_estimate(draws: &[usize], y: usize) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::EmptyInput("no interventional draws".into()));
    }
    Ok(draws.iter().filter(|&&d| d == y).count() as f64 / draws.len() as f64)
}

/// `count(Y=y, X=x) / count(X=x)` over the in-scope records.
pub fn no_adjustment(ds: &Dataset, x: usize, y: usize, scope: Scope<'_>) -> Result<f64> {
    let (mut n_x, mut n_xy) = (0u64, 0u64);
    for_each_in_scope(ds, scope, |_, xi, yi, _| {
        let hit = u64::from(xi == x);
        n_x += hit;
        n_xy += hit & u64::from(yi == y);
    });
    if n_x == 0 {
        return Err(Error::ZeroDenominator(format!("no in-scope record with x={}", x + 1)));
    }
    Ok(n_xy as f64 / n_x as f64)
}

/// `sum_j count(y, x, w_j) / count(x, w_j) * count(w_j) / n` over the
/// in-scope records. Proxy levels that never occur get weight zero and are
/// skipped.
pub fn w_adjustment(ds: &Dataset, x: usize, y: usize, scope: Scope<'_>) -> Result<f64> {
    let k_w = ds.dims().k_w;
    let mut n_w = vec![0u64; k_w];
    let mut n_xw = vec![0u64; k_w];
    let mut n_yxw = vec![0u64; k_w];
    for_each_in_scope(ds, scope, |w, xi, yi, weight| {
        let hit = u64::from(xi == x);
        n_w[w] += weight;
        n_xw[w] += hit;
        n_yxw[w] += hit & u64::from(yi == y);
    });
    let total: u64 = n_w.iter().sum();
    if total == 0 {
        return Err(Error::ZeroDenominator("no in-scope records".into()));
    }
    let n = total as f64;
    let mut total = 0.0;
    for w in 0..k_w {
        if n_w[w] == 0 {
            continue;
        }
        if n_xw[w] == 0 {
            return Err(Error::ZeroDenominator(format!("no in-scope record with x={} and w={}", x + 1, w + 1)));
        }
        total += n_yxw[w] as f64 / n_xw[w] as f64 * (n_w[w] as f64 / n);
    }
    Ok(total)
}

/// Normal-approximation interval `p +- z sqrt(p (1 - p) / n)`, clipped to
/// `[0, 1]`.
pub fn wald_interval(p: f64, n: usize, alpha: f64) -> (f64, f64) {
    let half = z_two_sided(alpha) * (p * (1.0 - p) / n as f64).sqrt();
    ((p - half).max(0.0), (p + half).min(1.0))
}
