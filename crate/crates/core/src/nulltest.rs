//! Test of the causal null hypothesis `X ⫫ Y | U` from two proxies.
//!
//! Cells `(z, x)` are stacked with the z index fastest: cell `x·j + z`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dgp::{population_matrices, Diagram, LatentClassModel};
use crate::error::{Error, Result};
use crate::ident_cat::{empirical_tolerance, rank_diagnostics, search_coarsening, RankDiagnostics, POPULATION_TOL};
use crate::linalg::{inv_sqrt_spd, max_abs, SortedSvd};
use crate::tabular::{bootstrap_covariance, CategoricalDataset, CovEstimate, StratifiedCounts, Var, DEFAULT_COV_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Probability,
    Mean,
}

/// Covariance estimator for `n^{1/2} q̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CovMethod {
    /// Diagonal `Var(outcome | z, x) / p̂(z, x)`.
    Plugin,
    /// Diagonal `Var(outcome − ĉ_W | z, x) / p̂(z, x)` with `ĉ` the first-stage
    /// weighted least-squares coefficients. Accounts for the sampling noise
    /// of `Q̂` as well as of `q̂`.
    #[default]
    Residual,
    /// Bootstrap covariance of the contrast `q̂ − Q̂ᵀĉ`.
    Bootstrap,
}

impl std::str::FromStr for CovMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plugin" => Ok(CovMethod::Plugin),
            "residual" => Ok(CovMethod::Residual),
            "bootstrap" => Ok(CovMethod::Bootstrap),
            other => Err(Error::InvalidConfig(format!("unknown covariance method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NullTestConfig {
    pub cov: CovMethod,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    /// Floor on covariance eigenvalues.
    pub floor: f64,
    /// Relative rank tolerance; `(k_w/n)^{1/2}` when unset.
    pub tolerance: Option<f64>,
    /// Coarsen W to this many levels before testing.
    pub coarsen_w: Option<usize>,
    /// Number of latent classes for single-proxy diagrams; defaults to the
    /// number of Z levels.
    pub latent_levels: Option<usize>,
}

impl Default for NullTestConfig {
    fn default() -> Self {
        Self {
            cov: CovMethod::Residual,
            bootstrap_resamples: 500,
            bootstrap_seed: 0,
            floor: DEFAULT_COV_FLOOR,
            tolerance: None,
            coarsen_w: None,
            latent_levels: None,
        }
    }
}

/// `q` stacks `P(y|Z,x)` (or `E(Y|Z,x)`) over strata; the columns of `Q` are
/// the matching `P(W|z,x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedMoments {
    pub q: DVector<f64>,
    /// `k_w × ij`.
    pub q_matrix: DMatrix<f64>,
    pub n: usize,
    pub i: usize,
    pub j: usize,
    pub k_w: usize,
    pub y_level: Option<usize>,
    pub scale: Scale,
    /// `p(z, x)` per cell.
    pub cell_shares: Vec<f64>,
    pub population: bool,
}

impl StackedMoments {
    pub fn dof(&self) -> usize {
        self.i * self.j - self.k_w
    }

    /// Exact moments of a model, reported with nominal sample size `n`.
    pub fn from_population(model: &LatentClassModel, y_level: usize, n: usize) -> Result<Self> {
        let d = model.dims();
        check_dims(d.i, d.j, d.k_w)?;
        if y_level >= d.m {
            return Err(Error::Shape(format!("y level {y_level} out of range")));
        }
        let cells = d.i * d.j;
        let mut q = DVector::zeros(cells);
        let mut qm = DMatrix::zeros(d.k_w, cells);
        let mut shares = vec![0.0; cells];
        for x in 0..d.i {
            let pop = population_matrices(model, x)?;
            for z in 0..d.j {
                let c = x * d.j + z;
                q[c] = pop.p_y_given_zx[(y_level, z)];
                qm.set_column(c, &pop.p_w_given_zx.column(z));
                shares[c] = pop.p_zx[z];
            }
        }
        Ok(Self {
            q,
            q_matrix: qm,
            n,
            i: d.i,
            j: d.j,
            k_w: d.k_w,
            y_level: Some(y_level),
            scale: Scale::Probability,
            cell_shares: shares,
            population: true,
        })
    }

    /// Diagonal covariance `p(1 − p) / p(z, x)` of population moments.
    pub fn population_covariance(&self, floor: f64) -> Result<CovEstimate> {
        let diag: Vec<f64> = self
            .q
            .iter()
            .zip(&self.cell_shares)
            .map(|(p, s)| p * (1.0 - p) / s)
            .collect();
        CovEstimate::diagonal(&diag, floor)
    }
}

fn check_dims(i: usize, j: usize, k_w: usize) -> Result<()> {
    if i * j <= k_w {
        return Err(Error::Dimension(format!(
            "ij = {} must exceed the number of W levels k_w = {k_w} (full row rank of Q needs ij >= k_w + 1)",
            i * j
        )));
    }
    Ok(())
}

/// Outcome scores per Y level: the indicator of `y_level`, or numeric labels.
fn outcome_scores(data: &CategoricalDataset, y_level: Option<usize>) -> Result<Vec<f64>> {
    let m = data.cardinalities().y;
    match y_level {
        Some(l) if l >= m => Err(Error::Shape(format!("y level {l} out of range"))),
        Some(l) => Ok((0..m).map(|y| if y == l { 1.0 } else { 0.0 }).collect()),
        None => data.numeric_scores(Var::Y),
    }
}

fn moments_from_counts(counts: &StratifiedCounts, scores: &[f64], y_level: Option<usize>, scale: Scale) -> Result<StackedMoments> {
    counts.require_populated()?;
    let cells = counts.cells();
    let mut q = DVector::zeros(cells);
    let mut qm = DMatrix::zeros(counts.k_w, cells);
    let mut shares = vec![0.0; cells];
    for c in 0..cells {
        let tot = counts.cell_total(c);
        q[c] = (0..counts.m).map(|y| scores[y] * counts.y_count(c, y)).sum::<f64>() / tot;
        for w in 0..counts.k_w {
            qm[(w, c)] = counts.w_count(c, w) / tot;
        }
        shares[c] = tot / counts.n as f64;
    }
    Ok(StackedMoments {
        q,
        q_matrix: qm,
        n: counts.n,
        i: counts.i,
        j: counts.j,
        k_w: counts.k_w,
        y_level,
        scale,
        cell_shares: shares,
        population: false,
    })
}

/// Empirical stacked moments for the indicator of `y_level`.
pub fn build_stacked_moments(data: &CategoricalDataset, y_level: usize) -> Result<StackedMoments> {
    let c = data.cardinalities();
    check_dims(c.x, c.z, c.w)?;
    let scores = outcome_scores(data, Some(y_level))?;
    moments_from_counts(&StratifiedCounts::new(data), &scores, Some(y_level), Scale::Probability)
}

/// Empirical stacked cell means of the numeric Y labels.
pub fn build_mean_moments(data: &CategoricalDataset) -> Result<StackedMoments> {
    let c = data.cardinalities();
    check_dims(c.x, c.z, c.w)?;
    let scores = outcome_scores(data, None)?;
    moments_from_counts(&StratifiedCounts::new(data), &scores, None, Scale::Mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualProjection {
    pub xi: DVector<f64>,
    pub projector_defect: f64,
    pub rank: RankDiagnostics,
}

/// Residual of the weighted regression of `Σ^{-1/2}q` on `Σ^{-1/2}Qᵀ`:
/// `ξ = (I − UUᵀ) Σ^{-1/2} q` with U the left singular vectors of `Σ^{-1/2}Qᵀ`.
pub fn residual_xi(moments: &StackedMoments, cov: &CovEstimate, tol: f64) -> Result<ResidualProjection> {
    let cells = moments.q.len();
    if cov.dim() != cells || moments.q_matrix.ncols() != cells {
        return Err(Error::Shape("moments and covariance dimensions differ".into()));
    }
    let s = inv_sqrt_spd(cov.values())?;
    let a = &s * moments.q_matrix.transpose();
    let rank = rank_diagnostics(&a, tol);
    if !rank.invertible {
        return Err(Error::RankCondition {
            context: "Q Σ^{-1/2} is not of full row rank".into(),
            diagnostics: rank,
        });
    }
    let svd = SortedSvd::new(&a)?;
    let u = svd.u.columns(0, moments.k_w);
    let m = DMatrix::identity(cells, cells) - &u * u.transpose();
    let projector_defect = max_abs(&(&m * &m - &m));
    if projector_defect >= 1e-10 {
        return Err(Error::Numeric(format!("residual projector is not idempotent (defect {projector_defect:e})")));
    }
    let xi = &m * (&s * &moments.q);
    Ok(ResidualProjection {
        xi,
        projector_defect,
        rank,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestDiagnostics {
    pub n: usize,
    pub cov_method: Option<CovMethod>,
    pub floor_applied: bool,
    pub projector_defect: f64,
    pub rank: RankDiagnostics,
    /// W level → merged group, when W was coarsened.
    pub w_groups: Option<Vec<usize>>,
    pub diagram: Diagram,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullTestResult {
    pub y_level: Option<usize>,
    pub xi: Vec<f64>,
    #[serde(rename = "T")]
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub scale: Scale,
    pub diagnostics: TestDiagnostics,
}

impl NullTestResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// `T = n ξᵀξ` referred to `χ²` with `ij − k_w` degrees of freedom.
pub fn test_from_moments(moments: &StackedMoments, cov: &CovEstimate, tol: f64) -> Result<NullTestResult> {
    check_dims(moments.i, moments.j, moments.k_w)?;
    let proj = residual_xi(moments, cov, tol)?;
    let statistic = moments.n as f64 * proj.xi.norm_squared();
    let dof = moments.dof();
    let chi = ChiSquared::new(dof as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    let p_value = if statistic <= 0.0 { 1.0 } else { chi.sf(statistic).clamp(0.0, 1.0) };
    Ok(NullTestResult {
        y_level: moments.y_level,
        xi: proj.xi.iter().copied().collect(),
        statistic,
        dof,
        p_value,
        scale: moments.scale,
        diagnostics: TestDiagnostics {
            n: moments.n,
            cov_method: None,
            floor_applied: cov.floor_applied,
            projector_defect: proj.projector_defect,
            rank: proj.rank,
            w_groups: None,
            diagram: Diagram::F,
        },
    })
}

/// Weighted least-squares coefficients of `q` on `Qᵀ` with weights `Σ₀^{-1}`.
fn first_stage(moments: &StackedMoments, sigma0: &CovEstimate) -> Result<DVector<f64>> {
    let s = inv_sqrt_spd(sigma0.values())?;
    let a = &s * moments.q_matrix.transpose();
    let b = &s * &moments.q;
    a.svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Numeric(e.to_string()))
}

/// Per-cell variance of `score(y) − shift[w]` divided by the cell share.
fn cell_variances(counts: &StratifiedCounts, scores: &[f64], shift: &[f64]) -> Vec<f64> {
    (0..counts.cells())
        .map(|c| {
            let tot = counts.cell_total(c);
            let (mut s1, mut s2) = (0.0, 0.0);
            for w in 0..counts.k_w {
                for (y, &sy) in scores.iter().enumerate() {
                    let p = counts.joint(c, w, y) / tot;
                    let d = sy - shift[w];
                    s1 += p * d;
                    s2 += p * d * d;
                }
            }
            (s2 - s1 * s1).max(0.0) / (tot / counts.n as f64)
        })
        .collect()
}

fn run_test(data: &CategoricalDataset, y_level: Option<usize>, config: &NullTestConfig) -> Result<NullTestResult> {
    let (data, w_groups) = match config.coarsen_w {
        Some(k) => {
            let tol = config.tolerance.unwrap_or_else(|| empirical_tolerance(k, data.n()));
            let (d, g) = coarsen_w_for_test(data, k, tol)?;
            (d, Some(g))
        }
        None => (data.clone(), None),
    };
    let c = data.cardinalities();
    check_dims(c.x, c.z, c.w)?;
    let scale = if y_level.is_some() { Scale::Probability } else { Scale::Mean };
    let scores = outcome_scores(&data, y_level)?;
    let counts = StratifiedCounts::new(&data);
    let moments = moments_from_counts(&counts, &scores, y_level, scale)?;

    let zero_shift = vec![0.0; c.w];
    let plain = cell_variances(&counts, &scores, &zero_shift);
    if scale == Scale::Mean {
        if let Some(cell) = plain.iter().position(|&v| v <= 0.0) {
            return Err(Error::DegenerateVariance(format!(
                "Y has zero variance within cell Z={}, X={}",
                cell % c.z,
                cell / c.z
            )));
        }
    }
    let plugin = CovEstimate::diagonal(&plain, config.floor)?;
    let cov = match config.cov {
        CovMethod::Plugin => plugin,
        CovMethod::Residual => {
            let coef = first_stage(&moments, &plugin)?;
            let shift: Vec<f64> = coef.iter().copied().collect();
            CovEstimate::diagonal(&cell_variances(&counts, &scores, &shift), config.floor)?
        }
        CovMethod::Bootstrap => {
            let coef = first_stage(&moments, &plugin)?;
            bootstrap_covariance(&data, config.bootstrap_resamples, config.bootstrap_seed, config.floor, |d| {
                let m = moments_from_counts(&StratifiedCounts::new(d), &scores, y_level, scale)?;
                Ok(&m.q - m.q_matrix.transpose() * &coef)
            })?
        }
    };
    let tol = config.tolerance.unwrap_or_else(|| empirical_tolerance(c.w, data.n()));
    let mut result = test_from_moments(&moments, &cov, tol)?;
    result.diagnostics.cov_method = Some(config.cov);
    result.diagnostics.w_groups = w_groups;
    Ok(result)
}

/// Test of `X ⫫ Y | U` for the indicator of outcome level `y_level`.
pub fn null_test(data: &CategoricalDataset, y_level: usize, config: &NullTestConfig) -> Result<NullTestResult> {
    run_test(data, Some(y_level), config)
}

/// Test on the mean scale using the numeric Y labels as scores.
pub fn null_test_mean_scale(data: &CategoricalDataset, config: &NullTestConfig) -> Result<NullTestResult> {
    run_test(data, None, config)
}

/// Merges W levels (Z left intact) down to `k` maximizing the k-th singular
/// value of the stacked `Q̂`. Returns the coarsened data and the level map.
pub fn coarsen_w_for_test(data: &CategoricalDataset, k: usize, tol: f64) -> Result<(CategoricalDataset, Vec<usize>)> {
    let k_w = data.cardinalities().w;
    if k == 0 || k > k_w {
        return Err(Error::Dimension(format!("cannot coarsen {k_w} W levels to {k}")));
    }
    if k == k_w {
        return Ok((data.clone(), (0..k_w).collect()));
    }
    let counts = StratifiedCounts::new(data);
    let moments = moments_from_counts(&counts, &vec![0.0; counts.m], None, Scale::Probability)?;
    let cells = moments.q_matrix.ncols();
    let weights = vec![1.0 / cells as f64; cells];
    let (groups, _, merged) = search_coarsening(&moments.q_matrix, k, true, false, &weights)?;
    let diagnostics = rank_diagnostics(&merged, tol);
    if !diagnostics.invertible {
        return Err(Error::CoarseningFailure { best: diagnostics });
    }
    Ok((data.map_levels(Var::W, &groups, k)?, groups))
}

/// Bonferroni combination `min(1, m · min p)`.
pub fn combine_levels(results: &[NullTestResult]) -> Result<f64> {
    let min_p = results
        .iter()
        .map(|r| r.p_value)
        .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.min(p))))
        .ok_or_else(|| Error::Empty("no per-level results to combine".into()))?;
    Ok((results.len() as f64 * min_p).min(1.0))
}

/// Proxy built from Y for single-Z diagrams: `k` groups of Y levels in which
/// `y_level` shares its group with other levels, so the indicator of
/// `y_level` is not a function of the proxy.
fn outcome_proxy_groups(m: usize, k: usize, y_level: usize) -> Vec<usize> {
    let mut groups = vec![0; m];
    let mut next = 1;
    for (y, g) in groups.iter_mut().enumerate() {
        if y == y_level {
            continue;
        }
        if next < k {
            *g = next;
            next += 1;
        }
    }
    groups
}

/// Dispatches the null test for each diagram. Diagrams (d)-(f) use both
/// proxies. Diagram (c) treats Z as constant, so X must have more levels
/// than W. Diagrams (a) and (b) treat W as constant and use a coarsening of Y
/// into `k` levels as the outcome-side proxy, so Y must have more than `k`
/// levels.
pub fn test_other_diagrams(data: &CategoricalDataset, diagram: Diagram, y_level: usize, config: &NullTestConfig) -> Result<NullTestResult> {
    let c = data.cardinalities();
    let data = match diagram {
        Diagram::D | Diagram::E | Diagram::F => data.clone(),
        Diagram::C => {
            let d = data.constant(Var::Z)?;
            if c.x < c.w + 1 {
                return Err(Error::Dimension(format!(
                    "diagram (c) treats Z as constant and needs more X levels than the {} levels of W; X has {}",
                    c.w, c.x
                )));
            }
            d
        }
        Diagram::A | Diagram::B => {
            let k = config.latent_levels.unwrap_or(c.z);
            if c.y < k + 1 {
                return Err(Error::Dimension(format!(
                    "diagram ({}) treats W as constant and needs more than k = {k} levels of Y; Y has {}",
                    if diagram == Diagram::A { "a" } else { "b" },
                    c.y
                )));
            }
            if y_level >= c.y {
                return Err(Error::Shape(format!("y level {y_level} out of range")));
            }
            let groups = outcome_proxy_groups(c.y, k, y_level);
            let w: Vec<usize> = data.column(Var::Y).expect("y column").iter().map(|&y| groups[y]).collect();
            data.replace_column(Var::W, w, k)?
        }
    };
    let mut result = null_test(&data, y_level, config)?;
    result.diagnostics.diagram = diagram;
    Ok(result)
}

/// Test computed on exact population moments with nominal sample size `n`.
pub fn population_null_test(model: &LatentClassModel, y_level: usize, n: usize) -> Result<NullTestResult> {
    let moments = StackedMoments::from_population(model, y_level, n)?;
    let cov = moments.population_covariance(DEFAULT_COV_FLOOR)?;
    test_from_moments(&moments, &cov, POPULATION_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{random_model, ModelDims, RandomModelConstraints};
    use crate::tabular::Cardinalities;

    fn moments(q: &[f64], qm: DMatrix<f64>, i: usize, j: usize) -> StackedMoments {
        StackedMoments {
            q: DVector::from_column_slice(q),
            k_w: qm.nrows(),
            q_matrix: qm,
            n: 100,
            i,
            j,
            y_level: Some(1),
            scale: Scale::Probability,
            cell_shares: vec![0.25; q.len()],
            population: true,
        }
    }

    fn identity_cov(d: usize) -> CovEstimate {
        CovEstimate::new(DMatrix::identity(d, d), false).unwrap()
    }

    #[test]
    fn single_row_of_ones_centers() {
        let m = moments(&[0.1, 0.2, 0.3, 0.6], DMatrix::from_element(1, 4, 1.0), 2, 2);
        let r = residual_xi(&m, &identity_cov(4), POPULATION_TOL).unwrap();
        let expect = [-0.2, -0.1, 0.0, 0.3];
        for (a, b) in r.xi.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn row_space_vector_is_annihilated() {
        let qm = DMatrix::from_row_slice(2, 4, &[0.8, 0.3, 0.6, 0.1, 0.2, 0.7, 0.4, 0.9]);
        let coef = DVector::from_vec(vec![0.25, 0.6]);
        let q = qm.transpose() * coef;
        let m = moments(q.as_slice(), qm, 2, 2);
        let r = test_from_moments(&m, &identity_cov(4), POPULATION_TOL).unwrap();
        assert!(r.xi.iter().all(|v| v.abs() < 1e-14));
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.dof, 2);
    }

    #[test]
    fn dimension_requirement() {
        let cards = Cardinalities { x: 2, z: 2, w: 4, y: 2, u: None };
        let d = CategoricalDataset::new(vec![0, 1, 0, 1], vec![0, 0, 1, 1], vec![0, 1, 2, 3], vec![0, 1, 1, 0], None, cards).unwrap();
        assert!(matches!(build_stacked_moments(&d, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn population_null_is_exact() {
        let dims = ModelDims { i: 2, j: 3, k_w: 2, m: 2, k: 2 };
        let cons = RandomModelConstraints { h0: true, ..Default::default() };
        for seed in 0..10 {
            let model = random_model(dims, Diagram::F, seed, cons).unwrap();
            let r = population_null_test(&model, 1, 1000).unwrap();
            assert!(r.xi.iter().all(|v| v.abs() < 1e-10), "seed {seed}");
            assert_eq!(r.dof, 4);
        }
    }

    #[test]
    fn combine_examples() {
        let base = population_null_test(
            &random_model(ModelDims { i: 2, j: 2, k_w: 2, m: 2, k: 2 }, Diagram::F, 1, RandomModelConstraints { h0: true, ..Default::default() }).unwrap(),
            1,
            100,
        )
        .unwrap();
        let with_p = |p: f64| NullTestResult { p_value: p, ..base.clone() };
        assert!((combine_levels(&[with_p(0.04)]).unwrap() - 0.04).abs() < 1e-15);
        assert!((combine_levels(&[with_p(0.03), with_p(0.5)]).unwrap() - 0.06).abs() < 1e-15);
        assert_eq!(combine_levels(&[with_p(1.0), with_p(1.0)]).unwrap(), 1.0);
        assert!(matches!(combine_levels(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn outcome_proxy_keeps_tested_level_shared() {
        assert_eq!(outcome_proxy_groups(3, 2, 1), vec![1, 0, 0]);
        assert_eq!(outcome_proxy_groups(4, 2, 0), vec![0, 1, 0, 0]);
        assert_eq!(outcome_proxy_groups(4, 3, 3), vec![1, 2, 0, 0]);
    }
}
