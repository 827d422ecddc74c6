//! Identification with a continuous confounder in the normal model: proxy
//! regressions, the closed-form bridge function and the interventional law.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident_cat::rank_diagnostics;
use crate::quadrature::{adaptive_simpson, gauss_hermite_normal, normal_expectation, Grid, QuadratureRule};
use crate::tabular::NumericDataset;

pub fn normal_pdf(t: f64, mean: f64, var: f64) -> f64 {
    (-(t - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionStdErrors {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Delta-method standard error of `α₂ − α₁β₂/β₁`.
    pub gamma1: f64,
}

/// `E(Y|z,x) = α₀ + α₁z + α₂x` with residual variance `σ₁²`, and
/// `E(W|z,x) = β₀ + β₁z + β₂x` with residual variance `σ₂²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyRegressionFit {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub sigma1_sq: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub sigma2_sq: f64,
    /// Sample size; absent for population fits.
    pub n: Option<usize>,
    pub std_errors: Option<RegressionStdErrors>,
    pub warnings: Vec<String>,
}

impl ProxyRegressionFit {
    pub fn outcome_family(&self) -> GaussianLinear {
        GaussianLinear {
            intercept: self.alpha0,
            z_coef: self.alpha1,
            x_coef: self.alpha2,
            var: self.sigma1_sq,
        }
    }

    pub fn proxy_family(&self) -> GaussianLinear {
        GaussianLinear {
            intercept: self.beta0,
            z_coef: self.beta1,
            x_coef: self.beta2,
            var: self.sigma2_sq,
        }
    }
}

/// Normal law with mean `intercept + z_coef·z + x_coef·x` and variance `var`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLinear {
    pub intercept: f64,
    pub z_coef: f64,
    pub x_coef: f64,
    pub var: f64,
}

impl GaussianLinear {
    pub fn mean(&self, z: f64, x: f64) -> f64 {
        self.intercept + self.z_coef * z + self.x_coef * x
    }

    pub fn density(&self, t: f64, z: f64, x: f64) -> f64 {
        normal_pdf(t, self.mean(z, x), self.var)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoLawMethod {
    Quadrature,
    Closed,
}

/// `pr{y | do(x)} = N(γ₀ + γ₁x, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDoLaw {
    pub gamma0: f64,
    pub gamma1: f64,
    pub sigma_sq: f64,
    pub method: DoLawMethod,
    /// `|∫ density dy − 1|` at the evaluated treatment levels.
    pub normalization_error: f64,
}

impl GaussianDoLaw {
    pub fn mean(&self, x: f64) -> f64 {
        self.gamma0 + self.gamma1 * x
    }

    pub fn density(&self, y: f64, x: f64) -> f64 {
        normal_pdf(y, self.mean(x), self.sigma_sq)
    }
}

struct Ols {
    coef: DVector<f64>,
    resid_var: f64,
    std_errors: DVector<f64>,
    resid: DVector<f64>,
    xtx_inv: DMatrix<f64>,
}

fn ols(design: &DMatrix<f64>, target: &[f64]) -> Result<Ols> {
    let (n, p) = design.shape();
    let rank = rank_diagnostics(design, 1e-10);
    if !rank.invertible {
        return Err(Error::RankCondition {
            context: "regression design (1, Z, X) is collinear".into(),
            diagnostics: rank,
        });
    }
    let xtx = design.transpose() * design;
    let xtx_inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::Numeric("normal equations are singular".into()))?;
    let y = DVector::from_column_slice(target);
    let coef = &xtx_inv * (design.transpose() * &y);
    let resid = &y - design * &coef;
    let resid_var = resid.norm_squared() / (n - p) as f64;
    let std_errors = DVector::from_fn(p, |j, _| (resid_var * xtx_inv[(j, j)]).sqrt());
    Ok(Ols {
        coef,
        resid_var,
        std_errors,
        resid,
        xtx_inv,
    })
}

/// OLS of Y and W on `(1, Z, X)`.
pub fn fit_proxy_regressions(data: &NumericDataset) -> Result<ProxyRegressionFit> {
    let n = data.n();
    if n < 10 {
        return Err(Error::InvalidConfig(format!("proxy regressions need at least 10 rows, got {n}")));
    }
    let design = DMatrix::from_fn(n, 3, |r, c| match c {
        0 => 1.0,
        1 => data.z[r],
        _ => data.x[r],
    });
    let fy = ols(&design, &data.y)?;
    let fw = ols(&design, &data.w)?;
    // Joint covariance of (α̂, β̂) is Σ_e ⊗ (XᵀX)⁻¹ since both share the design.
    let dof = (n - 3) as f64;
    let cross = fy.resid.dot(&fw.resid) / dof;
    let sigma_e = [[fy.resid_var, cross], [cross, fw.resid_var]];
    let (a1, b1, b2) = (fy.coef[1], fw.coef[1], fw.coef[2]);
    let grad = [(0, 2, 1.0), (0, 1, -b2 / b1), (1, 2, -a1 / b1), (1, 1, a1 * b2 / (b1 * b1))];
    let mut gamma1_var = 0.0;
    for &(ea, ia, ga) in &grad {
        for &(eb, ib, gb) in &grad {
            gamma1_var += ga * gb * sigma_e[ea][eb] * fy.xtx_inv[(ia, ib)];
        }
    }
    let mut warnings = Vec::new();
    if fw.coef[1].abs() < 2.0 * fw.std_errors[1] {
        warnings.push(format!(
            "weak proxy: |beta1| = {:.3e} is below twice its standard error {:.3e}",
            fw.coef[1].abs(),
            fw.std_errors[1]
        ));
    }
    Ok(ProxyRegressionFit {
        alpha0: fy.coef[0],
        alpha1: fy.coef[1],
        alpha2: fy.coef[2],
        sigma1_sq: fy.resid_var,
        beta0: fw.coef[0],
        beta1: fw.coef[1],
        beta2: fw.coef[2],
        sigma2_sq: fw.resid_var,
        n: Some(n),
        std_errors: Some(RegressionStdErrors {
            alpha0: fy.std_errors[0],
            alpha1: fy.std_errors[1],
            alpha2: fy.std_errors[2],
            beta0: fw.std_errors[0],
            beta1: fw.std_errors[1],
            beta2: fw.std_errors[2],
            gamma1: gamma1_var.sqrt(),
        }),
        warnings,
    })
}

/// Regressions of Y and W on `(1, Z)` within one treatment level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumFit {
    pub x: f64,
    pub n: usize,
    pub alpha0: f64,
    pub alpha1: f64,
    pub sigma1_sq: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub sigma2_sq: f64,
    pub beta1_se: f64,
    /// `pr{y | do(x)}` mean and variance given the W marginal.
    pub do_mean: Option<f64>,
    pub do_var: Option<f64>,
    pub warnings: Vec<String>,
}

/// Separate fits for every distinct X value, allowing coefficients and
/// variances to change with x. With a W marginal, the do-law mean and
/// variance of each level are filled in.
pub fn fit_proxy_regressions_by_x(data: &NumericDataset, w_marginal: Option<(f64, f64)>) -> Result<Vec<StratumFit>> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (r, x) in data.x.iter().enumerate() {
        groups.entry(x.to_bits()).or_default().push(r);
    }
    if groups.len() > 50 {
        return Err(Error::InvalidConfig(format!(
            "per-level fits need a discrete treatment; found {} distinct X values",
            groups.len()
        )));
    }
    let mut levels: Vec<(f64, Vec<usize>)> = groups.into_iter().map(|(k, v)| (f64::from_bits(k), v)).collect();
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));
    levels
        .into_iter()
        .map(|(x, rows)| {
            if rows.len() < 10 {
                return Err(Error::InvalidConfig(format!("X = {x} has only {} rows", rows.len())));
            }
            let design = DMatrix::from_fn(rows.len(), 2, |r, c| if c == 0 { 1.0 } else { data.z[rows[r]] });
            let ys: Vec<f64> = rows.iter().map(|&r| data.y[r]).collect();
            let ws: Vec<f64> = rows.iter().map(|&r| data.w[r]).collect();
            let fy = ols(&design, &ys)?;
            let fw = ols(&design, &ws)?;
            let mut warnings = Vec::new();
            if fw.coef[1].abs() < 2.0 * fw.std_errors[1] {
                warnings.push(format!("weak proxy at X = {x}"));
            }
            let (do_mean, do_var) = match w_marginal {
                Some((mw, vw)) if fw.coef[1] != 0.0 => {
                    let m1 = fy.coef[1] / fw.coef[1];
                    let s_sq = fy.resid_var - m1 * m1 * fw.resid_var;
                    (Some(fy.coef[0] - m1 * fw.coef[0] + m1 * mw), Some(s_sq + m1 * m1 * vw))
                }
                _ => (None, None),
            };
            Ok(StratumFit {
                x,
                n: rows.len(),
                alpha0: fy.coef[0],
                alpha1: fy.coef[1],
                sigma1_sq: fy.resid_var,
                beta0: fw.coef[0],
                beta1: fw.coef[1],
                sigma2_sq: fw.resid_var,
                beta1_se: fw.std_errors[1],
                do_mean,
                do_var,
                warnings,
            })
        })
        .collect()
}

/// `γ₁ = α₂ − α₁β₂/β₁`.
pub fn gamma1(fit: &ProxyRegressionFit) -> Result<f64> {
    if fit.beta1 == 0.0 || !fit.beta1.is_finite() {
        return Err(Error::Identification("beta1 = 0: W does not depend on Z given X, so the effect is not identified".into()));
    }
    Ok(fit.alpha2 - fit.alpha1 * fit.beta2 / fit.beta1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HMethod {
    /// Gaussian in y with mean affine in (w, x).
    Ansatz,
    /// Numerical Fourier inversion.
    Fourier,
}

/// Solution `h(w, x, y) = N(y; m0 + m1·w + m2·x, s²)` of
/// `p(y|z,x) = ∫ h(w,x,y) f(w|z,x) dw`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHSolution {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
    pub s_sq: f64,
    pub method: HMethod,
    /// Largest absolute residual over the verification grid.
    pub max_residual: f64,
    #[serde(skip)]
    fourier: Option<FourierH>,
}

impl GaussianHSolution {
    pub fn value(&self, w: f64, x: f64, y: f64) -> f64 {
        match (&self.fourier, self.method) {
            (Some(f), HMethod::Fourier) => f.value(w, x, y),
            _ => normal_pdf(y, self.m0 + self.m1 * w + self.m2 * x, self.s_sq),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HSolveConfig {
    pub z_points: Vec<f64>,
    pub x_points: Vec<f64>,
    /// Outcome points per (z, x), spread over the conditional mean ± 3 sd.
    pub y_points: usize,
    pub tolerance: f64,
    pub hermite_nodes: usize,
    /// Points of the frequency grid for the Fourier fallback.
    pub fourier_points: usize,
    /// Skip the ansatz and use Fourier inversion directly.
    pub force_fourier: bool,
}

impl Default for HSolveConfig {
    fn default() -> Self {
        Self {
            z_points: (0..21).map(|i| -3.0 + 0.3 * i as f64).collect(),
            x_points: vec![-1.0, 0.0, 1.0],
            y_points: 11,
            tolerance: 1e-6,
            hermite_nodes: 80,
            fourier_points: 4001,
            force_fourier: false,
        }
    }
}

/// Inverse Fourier representation of h for fixed coefficients.
#[derive(Debug, Clone, PartialEq)]
struct FourierH {
    f_w: GaussianLinear,
    p_y: GaussianLinear,
    grid: Grid,
}

impl FourierH {
    /// With `t = E(W|z,x)`, `p(y|z,x)` is a Gaussian bump in t and Eq. (6)
    /// is a convolution of h with the `N(0, σ₂²)` kernel. Dividing Fourier
    /// transforms and inverting gives h.
    fn value(&self, w: f64, x: f64, y: f64) -> f64 {
        let m1 = self.p_y.z_coef / self.f_w.z_coef;
        if m1 == 0.0 {
            return normal_pdf(y, self.p_y.intercept + self.p_y.x_coef * x, self.p_y.var);
        }
        let a = self.p_y.intercept + self.p_y.x_coef * x - m1 * (self.f_w.intercept + self.f_w.x_coef * x);
        let center = (y - a) / m1;
        let kappa = self.p_y.var / (m1 * m1) - self.f_w.var;
        let d = w - center;
        self.grid.integrate(|v| (v * d).cos() * (-0.5 * kappa * v * v).exp()) / (2.0 * PI * m1.abs())
    }
}

fn verify(h: &GaussianHSolution, f_w: &GaussianLinear, p_y: &GaussianLinear, config: &HSolveConfig) -> f64 {
    let gh = gauss_hermite_normal(config.hermite_nodes);
    let sd = p_y.var.sqrt();
    let ny = config.y_points.max(2);
    let mut worst: f64 = 0.0;
    for &x in &config.x_points {
        for &z in &config.z_points {
            let mu = p_y.mean(z, x);
            for k in 0..ny {
                let y = mu - 3.0 * sd + 6.0 * sd * k as f64 / (ny - 1) as f64;
                let lhs = normal_expectation(f_w.mean(z, x), f_w.var, &gh, |w| h.value(w, x, y));
                worst = worst.max((lhs - p_y.density(y, z, x)).abs());
            }
        }
    }
    worst
}

/// Solves the bridge equation in the Gaussian-linear class and verifies the
/// solution by Gauss–Hermite quadrature over a `(z, x, y)` grid. When the
/// ansatz residual exceeds the tolerance, numerical Fourier inversion is
/// tried before failing.
pub fn solve_h_gaussian(f_w: &GaussianLinear, p_y: &GaussianLinear, config: &HSolveConfig) -> Result<GaussianHSolution> {
    if f_w.z_coef == 0.0 {
        return Err(Error::Identification("beta1 = 0: W does not depend on Z given X".into()));
    }
    if !(f_w.var > 0.0 && p_y.var > 0.0) {
        return Err(Error::InvalidModel("conditional variances must be positive".into()));
    }
    let m1 = p_y.z_coef / f_w.z_coef;
    let m0 = p_y.intercept - m1 * f_w.intercept;
    let m2 = p_y.x_coef - m1 * f_w.x_coef;
    let s_sq = p_y.var - m1 * m1 * f_w.var;
    if s_sq <= 0.0 {
        return Err(Error::Numeric(format!(
            "no square-integrable solution: residual outcome variance {s_sq:.3e} is not positive"
        )));
    }
    let mut sol = GaussianHSolution {
        m0,
        m1,
        m2,
        s_sq,
        method: HMethod::Ansatz,
        max_residual: f64::INFINITY,
        fourier: None,
    };
    if !config.force_fourier {
        sol.max_residual = verify(&sol, f_w, p_y, config);
        if sol.max_residual < config.tolerance {
            return Ok(sol);
        }
    }
    let kappa = (s_sq / (m1 * m1)).max(f64::MIN_POSITIVE);
    let vmax = if m1 == 0.0 { 1.0 } else { 10.0 / kappa.sqrt() };
    sol.fourier = Some(FourierH {
        f_w: *f_w,
        p_y: *p_y,
        grid: Grid::new(QuadratureRule::Trapezoid, -vmax, vmax, config.fourier_points)?,
    });
    sol.method = HMethod::Fourier;
    sol.max_residual = verify(&sol, f_w, p_y, config);
    if sol.max_residual < config.tolerance {
        return Ok(sol);
    }
    Err(Error::Numeric(format!(
        "bridge solution residual {:.3e} exceeds tolerance {:.1e}",
        sol.max_residual, config.tolerance
    )))
}

/// Panels of the W range for the do-law quadrature.
const DO_LAW_PANELS: usize = 96;

/// Interventional law from a fit and the marginal `(mean, variance)` of W.
/// The bridge function is integrated against the W marginal by adaptive
/// quadrature at `x = 0` and `x = 1`, and `(γ₀, γ₁, σ²)` are read off the
/// resulting moments. When the fit admits no square-integrable bridge
/// function the law is composed in closed form instead.
pub fn gaussian_do_law(fit: &ProxyRegressionFit, w_marginal: (f64, f64)) -> Result<GaussianDoLaw> {
    let g1 = gamma1(fit)?;
    let (mw, vw) = w_marginal;
    if !(vw > 0.0 && fit.sigma1_sq > 0.0 && fit.sigma2_sq > 0.0) {
        return Err(Error::InvalidModel("variances must be positive".into()));
    }
    let m1 = fit.alpha1 / fit.beta1;
    let m0 = fit.alpha0 - m1 * fit.beta0;
    let s_sq = fit.sigma1_sq - m1 * m1 * fit.sigma2_sq;
    if s_sq <= 0.0 {
        let sigma_sq = s_sq + m1 * m1 * vw;
        if sigma_sq <= 0.0 {
            return Err(Error::Numeric(format!("implied interventional variance {sigma_sq:.3e} is not positive")));
        }
        return Ok(GaussianDoLaw {
            gamma0: m0 + m1 * mw,
            gamma1: g1,
            sigma_sq,
            method: DoLawMethod::Closed,
            normalization_error: 0.0,
        });
    }

    let h = GaussianHSolution {
        m0,
        m1,
        m2: g1,
        s_sq,
        method: HMethod::Ansatz,
        max_residual: 0.0,
        fourier: None,
    };
    let sw = vw.sqrt();
    let density = |y: f64, x: f64| -> Result<f64> {
        let f = |w: f64| h.value(w, x, y) * normal_pdf(w, mw, vw);
        let panel = 24.0 * sw / DO_LAW_PANELS as f64;
        let lo = mw - 12.0 * sw;
        (0..DO_LAW_PANELS).try_fold(0.0, |acc, p| {
            let a = lo + p as f64 * panel;
            Ok(acc + adaptive_simpson(&f, a, a + panel, 1e-14, 40)?)
        })
    };
    let moments_at = |x: f64| -> Result<(f64, f64, f64)> {
        let center = m0 + m1 * mw + g1 * x;
        let spread = (s_sq + m1 * m1 * vw).sqrt();
        let (lo, hi) = (center - 12.0 * spread, center + 12.0 * spread);
        let grid = Grid::new(QuadratureRule::GaussLegendre, lo, hi, 400)?;
        let mut mass = 0.0;
        let mut first = 0.0;
        let mut second = 0.0;
        for (&y, &wt) in grid.points.iter().zip(&grid.weights) {
            let d = density(y, x)?;
            mass += wt * d;
            first += wt * y * d;
            second += wt * y * y * d;
        }
        let mean = first / mass;
        Ok((mass, mean, second / mass - mean * mean))
    };
    let (mass0, mean0, var0) = moments_at(0.0)?;
    let (mass1, mean1, _) = moments_at(1.0)?;
    let slope = mean1 - mean0;
    if (slope - g1).abs() > 1e-6 {
        return Err(Error::Numeric(format!("quadrature slope {slope} disagrees with closed form {g1}")));
    }
    Ok(GaussianDoLaw {
        gamma0: mean0,
        gamma1: slope,
        sigma_sq: var0,
        method: DoLawMethod::Quadrature,
        normalization_error: (mass0 - 1.0).abs().max((mass1 - 1.0).abs()),
    })
}
