//! Quadrature rules: trapezoid and Gauss–Legendre grids on finite intervals,
//! Gauss–Hermite for expectations under a normal law, and adaptive Simpson.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureRule {
    #[default]
    Trapezoid,
    GaussLegendre,
}

/// Nodes on the real line together with their quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Grid {
    pub fn new(rule: QuadratureRule, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::InvalidConfig(format!("grid bounds [{lo}, {hi}] are not increasing")));
        }
        match rule {
            QuadratureRule::Trapezoid => trapezoid(lo, hi, n),
            QuadratureRule::GaussLegendre => gauss_legendre(lo, hi, n),
        }
    }

    /// Grid spanning `mean ± half_width_sds · sd`.
    pub fn centered(rule: QuadratureRule, mean: f64, sd: f64, half_width_sds: f64, n: usize) -> Result<Self> {
        if sd <= 0.0 || half_width_sds <= 0.0 {
            return Err(Error::InvalidConfig("grid scale must be positive".into()));
        }
        Self::new(rule, mean - half_width_sds * sd, mean + half_width_sds * sd, n)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    pub fn hi(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&p, &w)| w * f(p)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 || self.points.len() != self.weights.len() {
            return Err(Error::InvalidConfig("grid needs at least two points and one weight per point".into()));
        }
        if self.points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("grid points must be strictly increasing".into()));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidConfig("quadrature weights must be positive".into()));
        }
        Ok(())
    }
}

fn trapezoid(lo: f64, hi: f64, n: usize) -> Result<Grid> {
    if n < 2 {
        return Err(Error::InvalidConfig("trapezoid rule needs at least 2 points".into()));
    }
    let h = (hi - lo) / (n - 1) as f64;
    let points = (0..n).map(|i| lo + h * i as f64).collect();
    let mut weights = vec![h; n];
    weights[0] *= 0.5;
    weights[n - 1] *= 0.5;
    Ok(Grid { points, weights })
}

fn gauss_legendre(lo: f64, hi: f64, n: usize) -> Result<Grid> {
    if n < 2 {
        return Err(Error::InvalidConfig("Gauss-Legendre rule needs at least 2 points".into()));
    }
    let (nodes, weights) = golub_welsch(n, |k| {
        let k = k as f64;
        k / (4.0 * k * k - 1.0).sqrt()
    }, 2.0);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    Ok(Grid {
        points: nodes.iter().map(|t| mid + half * t).collect(),
        weights: weights.iter().map(|w| w * half).collect(),
    })
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule for the standard
/// normal measure: `E f(Z) ≈ Σ wᵢ f(tᵢ)`, weights summing to one.
pub fn gauss_hermite_normal(n: usize) -> (Vec<f64>, Vec<f64>) {
    golub_welsch(n, |k| (k as f64).sqrt(), 1.0)
}

/// Expectation of `f` under `N(mean, var)` by Gauss–Hermite quadrature.
pub fn normal_expectation(mean: f64, var: f64, nodes: &(Vec<f64>, Vec<f64>), f: impl Fn(f64) -> f64) -> f64 {
    let sd = var.sqrt();
    nodes.0.iter().zip(&nodes.1).map(|(&t, &w)| w * f(mean + sd * t)).sum()
}

/// Symmetric Jacobi-matrix eigen-solve for a zero-mean recurrence with
/// off-diagonal entries `offdiag(k)`, k = 1..n-1, and total mass `mu0`.
fn golub_welsch(n: usize, offdiag: impl Fn(usize) -> f64, mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = offdiag(k);
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: u32) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut converged = true;
    let v = simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth, &mut converged);
    if !converged || !v.is_finite() {
        return Err(Error::Numeric(format!(
            "adaptive Simpson on [{a}, {b}] did not reach tolerance {tol:e} within depth {max_depth}"
        )));
    }
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    converged: &mut bool,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        *converged = false;
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, converged)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, converged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        let gh = gauss_hermite_normal(20);
        let m2 = normal_expectation(0.0, 1.0, &gh, |t| t * t);
        let m4 = normal_expectation(0.0, 1.0, &gh, |t| t.powi(4));
        let shifted = normal_expectation(1.5, 4.0, &gh, |t| t);
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-11);
        assert!((shifted - 1.5).abs() < 1e-12);
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let g = Grid::new(QuadratureRule::GaussLegendre, -1.0, 2.0, 6).unwrap();
        let v = g.integrate(|t| t.powi(5) - t);
        let exact = (2f64.powi(6) - 1.0) / 6.0 - (4.0 - 1.0) / 2.0;
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_weights_sum_to_length() {
        let g = Grid::new(QuadratureRule::Trapezoid, 0.0, 3.0, 31).unwrap();
        assert!((g.weights.iter().sum::<f64>() - 3.0).abs() < 1e-12);
        g.validate().unwrap();
    }

    #[test]
    fn simpson_gaussian_mass() {
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let v = adaptive_simpson(&f, -10.0, 10.0, 1e-12, 40).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
    }
}
