//! Models with an additional observed confounder `Z`:
//! `E -> {U, Z, X}`, `U -> {Z, W, X, Y}`, `Z -> {W, X, Y}`, `W -> Y`,
//! `X -> Y`. Used to exercise covariate-stratified identification.

use nalgebra::DMatrix;
use rand::Rng;

use super::{flat_dirichlet, PmfTable, ScmSpec};
use crate::error::{Error, Result};
use crate::linalg::CategorySpec;

#[derive(Debug, Clone)]
pub struct CovariateScm {
    pub dims: CategorySpec,
    pub k_z: usize,
    /// Parent index `e`.
    pub p_u_given_e: PmfTable,
    pub q_u: Vec<f64>,
    /// Parent index `u * (k_E + 1) + e`; `e = k_E` is the target domain.
    pub p_z_given_ue: PmfTable,
    /// Parent index `u * k_Z + z`.
    pub p_w_given_uz: PmfTable,
    /// Parent index `(u * k_Z + z) * (k_E + 1) + e`.
    pub p_x_given_uze: PmfTable,
    /// Parent index `((u * k_W + w) * k_X + x) * k_Z + z`.
    pub p_y_given_uwxz: PmfTable,
}

fn draw_table<R: Rng + ?Sized>(k_out: usize, parents: usize, rng: &mut R, what: &str) -> Result<PmfTable> {
    let data = (0..parents).flat_map(|_| flat_dirichlet(k_out, rng)).collect();
    PmfTable::new(k_out, data, true, what)
}

impl CovariateScm {
    /// Every conditional drawn from a flat Dirichlet.
    pub fn sample<R: Rng + ?Sized>(dims: &CategorySpec, k_z: usize, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        if k_z == 0 {
            return Err(Error::InvalidDims("k_Z must be at least 1".into()));
        }
        let d = dims;
        let t = d.k_e + 1;
        Ok(CovariateScm {
            dims: d.clone(),
            k_z,
            p_u_given_e: draw_table(d.k_u, d.k_e, rng, "P(U|E)")?,
            q_u: flat_dirichlet(d.k_u, rng),
            p_z_given_ue: draw_table(k_z, d.k_u * t, rng, "P(Z|U,E)")?,
            p_w_given_uz: draw_table(d.k_w, d.k_u * k_z, rng, "P(W|U,Z)")?,
            p_x_given_uze: draw_table(d.k_x, d.k_u * k_z * t, rng, "P(X|U,Z,E)")?,
            p_y_given_uwxz: draw_table(d.k_y, d.k_u * d.k_w * d.k_x * k_z, rng, "P(Y|U,W,X,Z)")?,
        })
    }

    /// Embeds `spec` with a covariate independent of everything else.
    pub fn with_independent_covariate(spec: &ScmSpec, q_z: &[f64]) -> Result<Self> {
        let d = &spec.dims;
        let k_z = q_z.len();
        let t = d.k_e + 1;
        let p_u_given_e = PmfTable::new(d.k_u, spec.p_u_given_e.columns().concat(), true, "P(U|E)")?;
        let p_z = PmfTable::new(k_z, q_z.repeat(d.k_u * t), true, "P(Z|U,E)")?;
        let mut w = Vec::new();
        for u in 0..d.k_u {
            for _ in 0..k_z {
                w.extend(spec.p_w_given_u.column(u));
            }
        }
        let mut x = Vec::new();
        for u in 0..d.k_u {
            for _ in 0..k_z * t {
                x.extend(spec.p_x_given_u.column(u));
            }
        }
        let mut y = Vec::new();
        for u in 0..d.k_u {
            for wi in 0..d.k_w {
                for xi in 0..d.k_x {
                    for _ in 0..k_z {
                        y.extend_from_slice(spec.p_y(u, wi, xi));
                    }
                }
            }
        }
        Ok(CovariateScm {
            dims: d.clone(),
            k_z,
            p_u_given_e,
            q_u: spec.q_u.as_slice().to_vec(),
            p_z_given_ue: p_z,
            p_w_given_uz: PmfTable::new(d.k_w, w, true, "P(W|U,Z)")?,
            p_x_given_uze: PmfTable::new(d.k_x, x, true, "P(X|U,Z,E)")?,
            p_y_given_uwxz: PmfTable::new(d.k_y, y, true, "P(Y|U,W,X,Z)")?,
        })
    }

    fn p_z(&self, z: usize, u: usize, e: usize) -> f64 {
        self.p_z_given_ue.pmf(u * (self.dims.k_e + 1) + e)[z]
    }

    fn p_w(&self, w: usize, u: usize, z: usize) -> f64 {
        self.p_w_given_uz.pmf(u * self.k_z + z)[w]
    }

    fn p_x(&self, x: usize, u: usize, z: usize, e: usize) -> f64 {
        self.p_x_given_uze.pmf((u * self.k_z + z) * (self.dims.k_e + 1) + e)[x]
    }

    fn p_y(&self, y: usize, u: usize, w: usize, x: usize, z: usize) -> f64 {
        let d = &self.dims;
        self.p_y_given_uwxz.pmf(((u * d.k_w + w) * d.k_x + x) * self.k_z + z)[y]
    }

    /// `P(y | E, x, z)` and `P(W | E, x, z)` over the source domains.
    pub fn source_views(&self, x: usize, y: usize, z: usize) -> (Vec<f64>, DMatrix<f64>) {
        let d = &self.dims;
        let mut p_y = vec![0.0; d.k_e];
        let mut p_w = DMatrix::zeros(d.k_w, d.k_e);
        for e in 0..d.k_e {
            let weights: Vec<f64> = (0..d.k_u)
                .map(|u| self.p_x(x, u, z, e) * self.p_z(z, u, e) * self.p_u_given_e.pmf(e)[u])
                .collect();
            let norm: f64 = weights.iter().sum();
            for (u, wt) in weights.iter().enumerate() {
                let p_u = wt / norm;
                for w in 0..d.k_w {
                    let pw = self.p_w(w, u, z);
                    p_w[(w, e)] += pw * p_u;
                    p_y[e] += self.p_y(y, u, w, x, z) * pw * p_u;
                }
            }
        }
        (p_y, p_w)
    }

    /// Target law of the covariate, `q(z)`.
    pub fn target_covariate_law(&self) -> Vec<f64> {
        let t = self.dims.k_e;
        (0..self.k_z)
            .map(|z| (0..self.dims.k_u).map(|u| self.p_z(z, u, t) * self.q_u[u]).sum())
            .collect()
    }

    /// Target proxy law given the covariate, `Q(W | z)`.
    pub fn target_proxy_given_covariate(&self, z: usize) -> Vec<f64> {
        let d = &self.dims;
        let t = d.k_e;
        let weights: Vec<f64> = (0..d.k_u).map(|u| self.p_z(z, u, t) * self.q_u[u]).collect();
        let norm: f64 = weights.iter().sum();
        (0..d.k_w)
            .map(|w| (0..d.k_u).map(|u| self.p_w(w, u, z) * weights[u] / norm).sum())
            .collect()
    }

    /// `q(y, z | do(x))` by enumerating the intervened target model.
    fn intervened_joint(&self, x: usize, y: usize, z: usize) -> f64 {
        let d = &self.dims;
        let t = d.k_e;
        let mut total = 0.0;
        for u in 0..d.k_u {
            for w in 0..d.k_w {
                total += self.q_u[u] * self.p_z(z, u, t) * self.p_w(w, u, z) * self.p_y(y, u, w, x, z);
            }
        }
        total
    }

    /// `q(y | do(x), z)`.
    pub fn true_conditional_effect(&self, x: usize, y: usize, z: usize) -> f64 {
        self.intervened_joint(x, y, z) / self.target_covariate_law()[z]
    }

    /// `q(y | do(x))`.
    pub fn true_total_effect(&self, x: usize, y: usize) -> f64 {
        (0..self.k_z).map(|z| self.intervened_joint(x, y, z)).sum()
    }
}
