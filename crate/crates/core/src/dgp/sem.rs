use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident_gauss::{DoLawMethod, GaussianDoLaw, ProxyRegressionFit};
use crate::tabular::NumericDataset;

/// Linear Gaussian structural model
///
/// ```text
/// U ~ N(mu_u, tau_sq)
/// Z = a0 + a1 U + e_z
/// X = b0 + b1 U + b2 Z + e_x
/// W = c0 + c1 U + e_w
/// Y = d0 + d1 U + d2 X + d3 W + e_y
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianSEM {
    pub mu_u: f64,
    pub tau_sq: f64,
    pub a0: f64,
    pub a1: f64,
    pub var_z: f64,
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub var_x: f64,
    pub c0: f64,
    pub c1: f64,
    pub var_w: f64,
    pub d0: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub var_y: f64,
}

/// Variable order of [`LinearGaussianSEM::moments`].
pub const SEM_ORDER: [&str; 5] = ["u", "z", "x", "w", "y"];

impl LinearGaussianSEM {
    pub fn validate(&self) -> Result<()> {
        let vars = [self.tau_sq, self.var_z, self.var_x, self.var_w, self.var_y];
        if vars.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidModel("SEM variances must be positive and finite".into()));
        }
        if self.a1 == 0.0 || self.c1 == 0.0 {
            return Err(Error::InvalidModel("proxies must depend on U (a1 and c1 nonzero)".into()));
        }
        Ok(())
    }

    /// Mean vector and covariance of `(U, Z, X, W, Y)`:
    /// `V = (I − B)⁻¹ Ω (I − B)⁻ᵀ`.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let mut b = DMatrix::zeros(5, 5);
        b[(1, 0)] = self.a1;
        b[(2, 0)] = self.b1;
        b[(2, 1)] = self.b2;
        b[(3, 0)] = self.c1;
        b[(4, 0)] = self.d1;
        b[(4, 2)] = self.d2;
        b[(4, 3)] = self.d3;
        let inv = (DMatrix::identity(5, 5) - b)
            .try_inverse()
            .expect("lower-triangular structural matrix is invertible");
        let omega = DMatrix::from_diagonal(&DVector::from_vec(vec![self.tau_sq, self.var_z, self.var_x, self.var_w, self.var_y]));
        let intercepts = DVector::from_vec(vec![self.mu_u, self.a0, self.b0, self.c0, self.d0]);
        let mean = &inv * intercepts;
        let cov = &inv * omega * inv.transpose();
        (mean, (&cov + cov.transpose()) * 0.5)
    }

    /// Marginal mean and variance of W.
    pub fn w_marginal(&self) -> (f64, f64) {
        (self.c0 + self.c1 * self.mu_u, self.c1 * self.c1 * self.tau_sq + self.var_w)
    }

    /// Mean and variance of Z given `X = x`.
    pub fn z_given_x(&self, x: f64) -> (f64, f64) {
        let (mean, cov) = self.moments();
        let slope = cov[(1, 2)] / cov[(2, 2)];
        (mean[1] + slope * (x - mean[2]), cov[(1, 1)] - slope * cov[(1, 2)])
    }

    /// `E(Y | u, x)`.
    pub fn outcome_mean(&self, u: f64, x: f64) -> f64 {
        self.d0 + self.d1 * u + self.d2 * x + self.d3 * (self.c0 + self.c1 * u)
    }

    /// Population regressions of Y and W on `(1, Z, X)` by covariance algebra.
    pub fn population_fit(&self) -> Result<ProxyRegressionFit> {
        self.validate()?;
        let (mean, cov) = self.moments();
        let sub = DMatrix::from_fn(2, 2, |r, c| cov[(1 + r, 1 + c)]);
        let sub_inv = sub
            .try_inverse()
            .ok_or_else(|| Error::Numeric("Cov(Z, X) is singular".into()))?;
        let regress = |target: usize| -> (f64, f64, f64, f64) {
            let cross = DVector::from_vec(vec![cov[(1, target)], cov[(2, target)]]);
            let coef = &sub_inv * &cross;
            let intercept = mean[target] - coef[0] * mean[1] - coef[1] * mean[2];
            let resid = cov[(target, target)] - cross.dot(&coef);
            (intercept, coef[0], coef[1], resid)
        };
        let (alpha0, alpha1, alpha2, sigma1_sq) = regress(4);
        let (beta0, beta1, beta2, sigma2_sq) = regress(3);
        Ok(ProxyRegressionFit {
            alpha0,
            alpha1,
            alpha2,
            sigma1_sq,
            beta0,
            beta1,
            beta2,
            sigma2_sq,
            n: None,
            std_errors: None,
            warnings: Vec::new(),
        })
    }
}

/// Exact `pr{y | do(x)} = N(γ₀ + γ₁x, σ²)` of the SEM, integrating
/// `E(Y | u, x, w)` over U and W given U.
pub fn oracle_do_gaussian(sem: &LinearGaussianSEM) -> GaussianDoLaw {
    let load = sem.d1 + sem.d3 * sem.c1;
    GaussianDoLaw {
        gamma0: sem.d0 + sem.d3 * sem.c0 + load * sem.mu_u,
        gamma1: sem.d2,
        sigma_sq: load * load * sem.tau_sq + sem.d3 * sem.d3 * sem.var_w + sem.var_y,
        method: DoLawMethod::Closed,
        normalization_error: 0.0,
    }
}

/// Slope of Y on X adjusted by the normal-model covariance formula
/// `(σxy σzw − σxw σzy) / (σxx σzw − σxw σzx)`.
pub fn kuroki_pearl_effect(cov: &DMatrix<f64>) -> f64 {
    let (z, x, w, y) = (1, 2, 3, 4);
    (cov[(x, y)] * cov[(z, w)] - cov[(x, w)] * cov[(z, y)]) / (cov[(x, x)] * cov[(z, w)] - cov[(x, w)] * cov[(z, x)])
}

/// Ancestral sampling of the SEM; the U column is retained.
pub fn sample_gaussian_sem(sem: &LinearGaussianSEM, n: usize, seed: u64) -> Result<NumericDataset> {
    let vars = [sem.tau_sq, sem.var_z, sem.var_x, sem.var_w, sem.var_y];
    if vars.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidModel("SEM variances must be non-negative".into()));
    }
    let [su, sz, sx, sw, sy] = vars.map(f64::sqrt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = || -> f64 { rng.sample(StandardNormal) };
    let (mut us, mut zs, mut xs, mut ws, mut ys) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let u = sem.mu_u + su * e();
        let z = sem.a0 + sem.a1 * u + sz * e();
        let x = sem.b0 + sem.b1 * u + sem.b2 * z + sx * e();
        let w = sem.c0 + sem.c1 * u + sw * e();
        let y = sem.d0 + sem.d1 * u + sem.d2 * x + sem.d3 * w + sy * e();
        us.push(u);
        zs.push(z);
        xs.push(x);
        ws.push(w);
        ys.push(y);
    }
    NumericDataset::new(xs, zs, ws, ys, Some(us))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> LinearGaussianSEM {
        LinearGaussianSEM {
            mu_u: 0.0,
            tau_sq: 1.0,
            a0: 0.0,
            a1: 0.0,
            var_z: 1.0,
            b0: 0.0,
            b1: 0.0,
            b2: 0.0,
            var_x: 1.0,
            c0: 0.0,
            c1: 0.0,
            var_w: 1.0,
            d0: 0.0,
            d1: 0.0,
            d2: 0.0,
            d3: 0.0,
            var_y: 1.0,
        }
    }

    #[test]
    fn null_sem_is_independent_normals() {
        let (mean, cov) = unit().moments();
        assert!(mean.iter().all(|v| *v == 0.0));
        assert_eq!(cov, DMatrix::identity(5, 5));
    }

    #[test]
    fn no_confounding_oracle() {
        let mut s = unit();
        s.d0 = 1.0;
        s.d2 = 0.5;
        s.var_y = 2.0;
        let law = oracle_do_gaussian(&s);
        assert_eq!((law.gamma0, law.gamma1, law.sigma_sq), (1.0, 0.5, 2.0));
    }

    #[test]
    fn sampler_is_deterministic() {
        let a = sample_gaussian_sem(&unit(), 100, 9).unwrap();
        let b = sample_gaussian_sem(&unit(), 100, 9).unwrap();
        assert_eq!(a, b);
    }
}
