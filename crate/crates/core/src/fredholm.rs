//! Discretized first-kind integral equation
//! `p(y|z,x) = ∫ h(w,x,y) f(w|z,x) dw`, solved by Tikhonov regularization,
//! with singular-value diagnostics for the existence of a solution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident_cat::{rank_diagnostics, POPULATION_TOL};
use crate::ident_gauss::{normal_pdf, ProxyRegressionFit};
use crate::linalg::SortedSvd;
use crate::quadrature::{Grid, QuadratureRule};
use crate::tabular::serialize_matrix;

/// Allowed deviation of a discretized kernel row from unit mass.
pub const ROW_SUM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretizedEquation {
    pub x: f64,
    pub y: f64,
    pub z_grid: Grid,
    pub w_grid: Grid,
    /// `a[(r, c)] = f(w_c | z_r, x) · weight_c`.
    #[serde(serialize_with = "serialize_matrix")]
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub row_sums: Vec<f64>,
}

impl DiscretizedEquation {
    /// Right-hand side `A h` for a known h on the w grid.
    pub fn forward(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.w_grid.len() {
            return Err(Error::Shape("h does not match the w grid".into()));
        }
        Ok((&self.a * DVector::from_column_slice(h)).iter().copied().collect())
    }

    /// Copy with a replaced right-hand side.
    pub fn with_rhs(&self, b: Vec<f64>) -> Result<Self> {
        if b.len() != self.z_grid.len() {
            return Err(Error::Shape("rhs does not match the z grid".into()));
        }
        Ok(Self { b, ..self.clone() })
    }
}

/// Assembles `A` and `b` for fixed `(x, y)`. Every row of `A` must integrate
/// the kernel to one within [`ROW_SUM_TOL`].
pub fn discretize(
    kernel: impl Fn(f64, f64) -> f64,
    rhs: impl Fn(f64) -> f64,
    z_grid: &Grid,
    w_grid: &Grid,
    x: f64,
    y: f64,
) -> Result<DiscretizedEquation> {
    z_grid.validate()?;
    w_grid.validate()?;
    let a = DMatrix::from_fn(z_grid.len(), w_grid.len(), |r, c| kernel(w_grid.points[c], z_grid.points[r]) * w_grid.weights[c]);
    if a.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidModel("kernel must be non-negative and finite".into()));
    }
    let row_sums: Vec<f64> = a.row_iter().map(|r| r.sum()).collect();
    let (lo, hi) = row_sums
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if (lo - 1.0).abs() > ROW_SUM_TOL || (hi - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::GridCoverage {
            min_row_sum: lo,
            max_row_sum: hi,
        });
    }
    let b = z_grid.points.iter().map(|&z| rhs(z)).collect();
    Ok(DiscretizedEquation {
        x,
        y,
        z_grid: z_grid.clone(),
        w_grid: w_grid.clone(),
        a,
        b,
        row_sums,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub rule: QuadratureRule,
    pub n_z: usize,
    pub n_w: usize,
    pub half_width_sds: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            rule: QuadratureRule::Trapezoid,
            n_z: 201,
            n_w: 201,
            half_width_sds: 6.0,
        }
    }
}

/// Normal-model instance: kernel `N(w; β₀+β₁z+β₂x, σ₂²)` and right-hand side
/// `N(y; α₀+α₁z+α₂x, σ₁²)`. The z grid spans the law of Z given x, the w grid
/// the marginal law of W.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianInstance {
    pub fit: ProxyRegressionFit,
    /// Mean and variance of Z given x.
    pub z_law: (f64, f64),
    /// Mean and variance of W.
    pub w_law: (f64, f64),
    pub x: f64,
    pub y: f64,
}

impl GaussianInstance {
    pub fn discretize(&self, grids: &GridConfig) -> Result<DiscretizedEquation> {
        let z_grid = Grid::centered(grids.rule, self.z_law.0, self.z_law.1.sqrt(), grids.half_width_sds, grids.n_z)?;
        let w_grid = Grid::centered(grids.rule, self.w_law.0, self.w_law.1.sqrt(), grids.half_width_sds, grids.n_w)?;
        let f = self.fit.proxy_family();
        let p = self.fit.outcome_family();
        let x = self.x;
        let y = self.y;
        discretize(|w, z| f.density(w, z, x), |z| p.density(y, z, x), &z_grid, &w_grid, x, y)
    }

    pub fn w_density(&self, w: f64) -> f64 {
        normal_pdf(w, self.w_law.0, self.w_law.1)
    }

    pub fn z_density(&self, z: f64) -> f64 {
        normal_pdf(z, self.z_law.0, self.z_law.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TikhonovSolution {
    pub lambda: f64,
    pub h: Vec<f64>,
    pub residual_norm: f64,
    pub solution_norm: f64,
}

fn tikhonov_from_svd(svd: &SortedSvd, a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> TikhonovSolution {
    let coef = svd.u.transpose() * b;
    let mut h = DVector::zeros(svd.v.nrows());
    for (n, &s) in svd.singular_values.iter().enumerate() {
        let denom = s * s + lambda;
        if denom > 0.0 {
            h += svd.v.column(n) * (s * coef[n] / denom);
        }
    }
    let residual_norm = (a * &h - b).norm();
    TikhonovSolution {
        lambda,
        solution_norm: h.norm(),
        residual_norm,
        h: h.iter().copied().collect(),
    }
}

/// Minimizer of `‖A h − b‖² + λ‖h‖²`.
pub fn solve_tikhonov(eq: &DiscretizedEquation, lambda: f64) -> Result<TikhonovSolution> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("lambda {lambda} must be non-negative")));
    }
    if lambda == 0.0 {
        let d = rank_diagnostics(&eq.a, POPULATION_TOL);
        if !d.invertible {
            return Err(Error::RankCondition {
                context: "discretized kernel is numerically rank deficient; use lambda > 0".into(),
                diagnostics: d,
            });
        }
    }
    let svd = SortedSvd::new(&eq.a)?;
    Ok(tikhonov_from_svd(&svd, &eq.a, &DVector::from_column_slice(&eq.b), lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LCurvePoint {
    pub lambda: f64,
    pub residual_norm: f64,
    pub solution_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LCurve {
    pub points: Vec<LCurvePoint>,
    pub corner: usize,
    pub lambda: f64,
}

/// Number of λ values on the default L-curve grid.
pub const LCURVE_POINTS: usize = 25;

/// λ at the point of largest curvature of `(log ‖Ah − b‖, log ‖h‖)` over
/// [`LCURVE_POINTS`] log-spaced values in `[1e-14, 1e-4] · σ₁²`.
pub fn l_curve(eq: &DiscretizedEquation) -> Result<LCurve> {
    let svd = SortedSvd::new(&eq.a)?;
    let b = DVector::from_column_slice(&eq.b);
    let scale = svd.max().powi(2);
    let points: Vec<LCurvePoint> = (0..LCURVE_POINTS)
        .map(|k| {
            let lambda = scale * 10f64.powf(-14.0 + 10.0 * k as f64 / (LCURVE_POINTS - 1) as f64);
            let s = tikhonov_from_svd(&svd, &eq.a, &b, lambda);
            LCurvePoint {
                lambda,
                residual_norm: s.residual_norm,
                solution_norm: s.solution_norm,
            }
        })
        .collect();
    let tiny = f64::MIN_POSITIVE;
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.residual_norm.max(tiny).ln(), p.solution_norm.max(tiny).ln()))
        .collect();
    let mut corner = LCURVE_POINTS / 2;
    let mut best = f64::NEG_INFINITY;
    for k in 1..LCURVE_POINTS - 1 {
        let c = menger_curvature(xy[k - 1], xy[k], xy[k + 1]);
        if c > best {
            best = c;
            corner = k;
        }
    }
    Ok(LCurve {
        lambda: points[corner].lambda,
        points,
        corner,
    })
}

/// Curvature of the circle through three points; zero for collinear points.
fn menger_curvature(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> f64 {
    let area2 = (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
    let d = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let denom = d(p, q) * d(q, r) * d(p, r);
    if denom == 0.0 {
        0.0
    } else {
        2.0 * area2.abs() / denom
    }
}

/// `∫ h(w) f(w) dw` on the w grid. Passing `f(w|u)` instead of `f(w)`
/// gives `pr(y | u, x)`.
pub fn integrate_do(h: &[f64], w_grid: &Grid, density: impl Fn(f64) -> f64) -> Result<f64> {
    if h.len() != w_grid.len() {
        return Err(Error::Shape(format!("h has {} values but the w grid has {} points", h.len(), w_grid.len())));
    }
    Ok(h.iter()
        .zip(&w_grid.points)
        .zip(&w_grid.weights)
        .map(|((hv, &w), &wt)| hv * density(w) * wt)
        .sum())
}

/// Singular-value diagnostics of the weighted operator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardDiagnostics {
    pub singular_values: Vec<f64>,
    /// `|⟨b, ψ_n⟩|` for the left singular vectors `ψ_n`.
    pub coefficients: Vec<f64>,
    /// `Σ_{n≤N} λ_n⁻² |⟨b, ψ_n⟩|²`.
    pub picard_partial_sums: Vec<f64>,
    /// Grid approximation of the squared Hilbert–Schmidt norm of the operator.
    pub hilbert_schmidt_norm_sq: f64,
    /// `‖b‖²` in the weighted space.
    pub b_norm_sq: f64,
    /// Indices with `λ_n > ε^{1/2} λ_1` carry signal above rounding noise.
    pub trusted: usize,
    pub blow_up: bool,
    pub warning: Option<String>,
    /// Left singular vectors of the weighted operator, as columns.
    #[serde(skip)]
    pub left_vectors: DMatrix<f64>,
    /// Quadrature weights of the z side of the weighted operator.
    #[serde(skip)]
    pub z_measure: Vec<f64>,
}

impl PicardDiagnostics {
    /// Right-hand side on the z grid whose weighted form is the `n`-th left
    /// singular vector.
    pub fn rhs_along(&self, n: usize) -> Vec<f64> {
        self.z_measure
            .iter()
            .enumerate()
            .map(|(r, m)| self.left_vectors[(r, n)] / m.sqrt())
            .collect()
    }
}

/// SVD diagnostics for existence of a square-integrable solution. With
/// `z_density = f(z|x)`, the operator acts between `L²(f(w|x))` and
/// `L²(f(z|x))` (the marginal of W given x is computed on the grid);
/// otherwise Lebesgue measure is used on both sides. A blow-up is flagged
/// when the Picard sum over trusted indices exceeds ten times its value
/// over the first half of them.
pub fn picard_diagnostics(eq: &DiscretizedEquation, z_density: Option<&dyn Fn(f64) -> f64>) -> Result<PicardDiagnostics> {
    let (nz, nw) = eq.a.shape();
    let zw: Vec<f64> = match z_density {
        Some(f) => eq.z_grid.points.iter().zip(&eq.z_grid.weights).map(|(&z, &wt)| wt * f(z)).collect(),
        None => eq.z_grid.weights.clone(),
    };
    // Kernel values f(w|z) without quadrature weights.
    let kernel = DMatrix::from_fn(nz, nw, |r, c| eq.a[(r, c)] / eq.w_grid.weights[c]);
    let (w_measure, k_weighted): (Vec<f64>, DMatrix<f64>) = if z_density.is_some() {
        let f_w: Vec<f64> = (0..nw).map(|c| (0..nz).map(|r| zw[r] * kernel[(r, c)]).sum()).collect();
        if f_w.iter().any(|v| *v <= 0.0) {
            return Err(Error::Numeric("marginal density of W vanishes on the grid".into()));
        }
        let measure: Vec<f64> = (0..nw).map(|c| eq.w_grid.weights[c] * f_w[c]).collect();
        (measure, DMatrix::from_fn(nz, nw, |r, c| kernel[(r, c)] / f_w[c]))
    } else {
        (eq.w_grid.weights.clone(), kernel)
    };
    let a_tilde = DMatrix::from_fn(nz, nw, |r, c| zw[r].sqrt() * k_weighted[(r, c)] * w_measure[c].sqrt());
    let b_tilde = DVector::from_fn(nz, |r, _| zw[r].sqrt() * eq.b[r]);
    let hs = a_tilde.norm_squared();
    let svd = SortedSvd::new(&a_tilde)?;
    let coef = svd.u.transpose() * &b_tilde;
    let s1 = svd.max();
    let floor = f64::EPSILON.sqrt() * s1;
    let mut partial = Vec::with_capacity(svd.singular_values.len());
    let mut acc = 0.0;
    for (n, &s) in svd.singular_values.iter().enumerate() {
        if s > 0.0 {
            acc += (coef[n] / s).powi(2);
        } else if coef[n] != 0.0 {
            acc = f64::INFINITY;
        }
        partial.push(acc);
    }
    let trusted = svd.singular_values.iter().take_while(|&&s| s > floor).count();
    let (blow_up, warning) = if trusted >= 2 {
        let head = partial[trusted.div_ceil(2) - 1];
        let last = partial[trusted - 1];
        let flagged = last > 10.0 * head;
        (
            flagged,
            flagged.then(|| {
                format!("Picard sums grow from {head:.3e} to {last:.3e} over the trusted spectrum; a square-integrable solution likely does not exist")
            }),
        )
    } else {
        (false, None)
    };
    Ok(PicardDiagnostics {
        singular_values: svd.singular_values.clone(),
        coefficients: coef.iter().map(|c| c.abs()).collect(),
        picard_partial_sums: partial,
        hilbert_schmidt_norm_sq: hs,
        b_norm_sq: b_tilde.norm_squared(),
        trusted,
        blow_up,
        warning,
        left_vectors: svd.u,
        z_measure: zw,
    })
}
