//! Hand-built models with known answers.

use super::{ScmParts, ScmSpec};
use crate::linalg::CategorySpec;

/// Proxy law whose first column is `0.3 * c2 + 0.7 * c3`, so it has rank 2.
pub const COUNTEREXAMPLE_P_W_GIVEN_U: [[f64; 3]; 3] = [
    [0.23, 0.46, 0.31],
    [0.3, 0.6, 0.1],
    [0.2, 0.4, 0.4],
];

/// `p(y_1 | u, w, x_1)`, identical for every `w`.
pub const COUNTEREXAMPLE_P_Y_GIVEN_UX: [f64; 3] = [0.5, 0.2, 0.3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterexampleVariant {
    /// `Q(U) = (0.6, 0.3, 0.1)`, effect 0.39.
    First,
    /// `Q(U) = (0.5, 0.33, 0.17)`, effect 0.367.
    Second,
}

/// Two models that agree on every observable law but differ in
/// `q(y_1 | do(x_1))` because the proxy matrix is rank deficient.
pub fn counterexample(variant: CounterexampleVariant) -> ScmSpec {
    let dims = CategorySpec::new(2, 3, 3, 2, 2).expect("static dims");
    let q_u = match variant {
        CounterexampleVariant::First => vec![0.6, 0.3, 0.1],
        CounterexampleVariant::Second => vec![0.5, 0.33, 0.17],
    };
    let p_y_given_uwx = (0..3)
        .map(|u| {
            (0..3)
                .map(|_| {
                    let p0 = COUNTEREXAMPLE_P_Y_GIVEN_UX[u];
                    vec![vec![p0, 1.0 - p0], vec![0.4 + 0.1 * u as f64, 0.6 - 0.1 * u as f64]]
                })
                .collect()
        })
        .collect();
    let parts = ScmParts {
        p_u_given_e: vec![vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5]],
        q_u,
        p_w_given_u: COUNTEREXAMPLE_P_W_GIVEN_U.iter().map(|c| c.to_vec()).collect(),
        p_x_given_u: vec![vec![0.6, 0.4], vec![0.3, 0.7], vec![0.5, 0.5]],
        p_y_given_uwx,
        domain_prior: vec![1.0 / 3.0; 3],
    };
    ScmSpec::new(dims, parts).expect("counterexample is a valid model")
}

/// Every conditional is a point mass: sources come from `e_2` with
/// `(w, x, y) = (w_1, x_2, y_2)`, target proxies are `w_3`, and `Y = y_2`
/// under any intervention.
pub fn point_mass_spec() -> ScmSpec {
    let dims = CategorySpec::new(2, 2, 3, 2, 2).expect("static dims");
    let parts = ScmParts {
        p_u_given_e: vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        q_u: vec![0.0, 1.0],
        p_w_given_u: vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
        p_x_given_u: vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        p_y_given_uwx: vec![vec![vec![vec![0.0, 1.0]; 2]; 3]; 2],
        domain_prior: vec![0.0, 0.5, 0.5],
    };
    ScmSpec::new_allowing_zeros(dims, parts).expect("point-mass model is well formed")
}
