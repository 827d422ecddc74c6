//! Identification of `pr{y | do(x)}` with two categorical proxies.
//!
//! With `P(W|Z,x)` invertible the effect is
//! `P(y|Z,x) · P(W|Z,x)⁻¹ · P(W)`, which never needs the error mechanism
//! `P(W|U)`. The row-vector product is evaluated by solving the transposed
//! system `P(W|Z,x)ᵀ r = P(y|Z,x)ᵀ`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::singular_values;
use crate::tabular::{cond_prob_matrix_with, marginal_pmf, CategoricalDataset, CondProbMatrix, EstimationOptions, MarginalPMF, Var};

/// Relative singular-value tolerance for exact (population) matrices.
pub const POPULATION_TOL: f64 = 1e-8;

/// Exhaustive coarsening search is used up to this many candidate partitions.
pub const EXHAUSTIVE_LIMIT: f64 = 1e4;

/// Data-driven relative tolerance `(k_w / n)^{1/2}` for empirical matrices.
pub fn empirical_tolerance(k_w: usize, n: usize) -> f64 {
    (k_w as f64 / n.max(1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiagnostics {
    pub condition_number: f64,
    pub min_singular_value: f64,
    pub max_singular_value: f64,
    pub invertible: bool,
    pub tolerance_used: f64,
    /// For 2×2 stochastic matrices, `pr(w₁|z₁,x) − pr(w₁|z₂,x)`: condition (i)
    /// holds exactly when Z and W are associated within the stratum, i.e. this
    /// difference is nonzero.
    pub binary_association: Option<f64>,
}

/// Singular-value diagnostics of a (possibly rectangular) matrix. The matrix
/// counts as invertible (full rank) when
/// `min_singular_value > tol · max_singular_value`.
pub fn rank_diagnostics(matrix: &DMatrix<f64>, tol: f64) -> RankDiagnostics {
    let s = singular_values(matrix);
    let max = s.first().copied().unwrap_or(0.0);
    let min = s.last().copied().unwrap_or(0.0);
    let binary_association = (matrix.nrows() == 2 && matrix.ncols() == 2).then(|| matrix[(0, 0)] - matrix[(0, 1)]);
    RankDiagnostics {
        condition_number: if min > 0.0 { max / min } else { f64::INFINITY },
        min_singular_value: min,
        max_singular_value: max,
        invertible: max > 0.0 && min > tol * max,
        tolerance_used: tol,
        binary_association,
    }
}

fn require_invertible(m: &DMatrix<f64>, tol: f64, context: &str) -> Result<RankDiagnostics> {
    let d = rank_diagnostics(m, tol);
    if !d.invertible {
        return Err(Error::RankCondition {
            context: context.to_string(),
            diagnostics: d,
        });
    }
    Ok(d)
}

/// `r = P(y|Z,x) P(W|Z,x)⁻¹` as a solve of the transposed system.
fn left_solve(p_y: &[f64], p_wzx: &DMatrix<f64>, tol: f64) -> Result<DVector<f64>> {
    if !p_wzx.is_square() {
        return Err(Error::Shape(format!(
            "P(W|Z,x) is {}x{}; a square matrix is required (coarsen first)",
            p_wzx.nrows(),
            p_wzx.ncols()
        )));
    }
    if p_y.len() != p_wzx.ncols() {
        return Err(Error::Shape(format!(
            "P(y|Z,x) has {} entries but P(W|Z,x) has {} columns",
            p_y.len(),
            p_wzx.ncols()
        )));
    }
    let diagnostics = require_invertible(p_wzx, tol, "P(W|Z,x) must be invertible")?;
    let rhs = DVector::from_column_slice(p_y);
    p_wzx
        .transpose()
        .lu()
        .solve(&rhs)
        .ok_or(Error::RankCondition {
            context: "LU solve of P(W|Z,x)ᵀ failed".into(),
            diagnostics,
        })
}

/// `pr{y | do(x)} = P(y|Z,x) · P(W|Z,x)⁻¹ · P(W)` for one outcome level.
pub fn causal_effect_categorical(p_y: &[f64], p_wzx: &CondProbMatrix, p_w: &MarginalPMF, tol: f64) -> Result<f64> {
    if p_w.values().len() != p_wzx.nrows() {
        return Err(Error::Shape(format!(
            "P(W) has {} levels but P(W|Z,x) has {} rows",
            p_w.values().len(),
            p_wzx.nrows()
        )));
    }
    let r = left_solve(p_y, p_wzx.values(), tol)?;
    Ok(r.iter().zip(p_w.values()).map(|(a, b)| a * b).sum())
}

/// Effects for every outcome level of `P(Y|Z,x)` together with the deviation
/// of their sum from one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectVector {
    pub values: Vec<f64>,
    pub normalization_error: f64,
    pub warning: Option<String>,
}

pub fn causal_effects(p_yzx: &CondProbMatrix, p_wzx: &CondProbMatrix, p_w: &MarginalPMF, tol: f64) -> Result<EffectVector> {
    let values = (0..p_yzx.nrows())
        .map(|y| causal_effect_categorical(&p_yzx.row(y), p_wzx, p_w, tol))
        .collect::<Result<Vec<f64>>>()?;
    let normalization_error = values.iter().sum::<f64>() - 1.0;
    let warning = (normalization_error.abs() > 1e-8)
        .then(|| format!("effects sum to 1{normalization_error:+.3e}; left unnormalized"));
    Ok(EffectVector {
        values,
        normalization_error,
        warning,
    })
}

/// Two-level form of the matrix formula: a weighted average of
/// `pr(y|z₁,x)` and `pr(y|z₂,x)` with weights built from `pr(w₁)` and
/// `pr(w₁|z,x)`.
pub fn causal_effect_binary(pw1: f64, pw1_z1x: f64, pw1_z2x: f64, py_z1x: f64, py_z2x: f64) -> Result<f64> {
    let denom = pw1_z1x - pw1_z2x;
    if denom == 0.0 {
        let m = DMatrix::from_row_slice(2, 2, &[pw1_z1x, pw1_z2x, 1.0 - pw1_z1x, 1.0 - pw1_z2x]);
        return Err(Error::RankCondition {
            context: "pr(w1|z1,x) = pr(w1|z2,x): Z and W are not associated given x".into(),
            diagnostics: rank_diagnostics(&m, POPULATION_TOL),
        });
    }
    Ok((pw1 - pw1_z2x) * py_z1x / denom + (pw1_z1x - pw1) * py_z2x / denom)
}

/// `P(y|U,x) = P(y|Z,x) · P(W|Z,x)⁻¹ · P(W|U)`. Depends on the error
/// mechanism, which is not identified in general; used for oracle checks.
pub fn conditional_outcome_given_u(p_y: &[f64], p_wzx: &CondProbMatrix, p_wu: &CondProbMatrix, tol: f64) -> Result<Vec<f64>> {
    if p_wu.nrows() != p_wzx.nrows() {
        return Err(Error::Shape("P(W|U) and P(W|Z,x) must have the same rows".into()));
    }
    let r = left_solve(p_y, p_wzx.values(), tol)?;
    Ok((r.transpose() * p_wu.values()).iter().copied().collect())
}

/// Assignment of source levels of W and Z to merged levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseningMap {
    /// `w_groups[w]` is the merged level of source level `w`.
    pub w_groups: Vec<usize>,
    pub z_groups: Vec<usize>,
    /// Number of merged levels for each of W and Z.
    pub k: usize,
}

impl CoarseningMap {
    pub fn identity(k_w: usize, j_z: usize) -> Self {
        Self {
            w_groups: (0..k_w).collect(),
            z_groups: (0..j_z).collect(),
            k: k_w.max(j_z),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.w_groups.iter().enumerate().all(|(i, &g)| i == g) && self.z_groups.iter().enumerate().all(|(i, &g)| i == g)
    }

    pub fn w_levels(&self) -> usize {
        self.w_groups.iter().max().map_or(0, |m| m + 1)
    }

    pub fn z_levels(&self) -> usize {
        self.z_groups.iter().max().map_or(0, |m| m + 1)
    }

    /// Coarsened `P(W'|Z',x)`: rows summed over W groups, columns averaged
    /// over Z groups with weights `pr(z|x)`.
    pub fn apply(&self, p_wzx: &DMatrix<f64>, z_weights: &[f64]) -> Result<DMatrix<f64>> {
        let rows = merge_rows(p_wzx, &self.w_groups, self.w_levels());
        merge_columns(&rows, &self.z_groups, self.z_levels(), z_weights)
    }

    /// Coarsened outcome row `P(y|Z',x)`.
    pub fn apply_outcome_row(&self, p_y: &[f64], z_weights: &[f64]) -> Result<Vec<f64>> {
        let row = DMatrix::from_row_slice(1, p_y.len(), p_y);
        Ok(merge_columns(&row, &self.z_groups, self.z_levels(), z_weights)?
            .iter()
            .copied()
            .collect())
    }

    /// Coarsened `P(W')`.
    pub fn apply_marginal(&self, p_w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.w_levels()];
        for (w, &g) in self.w_groups.iter().enumerate() {
            out[g] += p_w[w];
        }
        out
    }
}

pub(crate) fn merge_rows(m: &DMatrix<f64>, groups: &[usize], k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(k, m.ncols());
    for (r, &g) in groups.iter().enumerate() {
        for c in 0..m.ncols() {
            out[(g, c)] += m[(r, c)];
        }
    }
    out
}

fn merge_columns(m: &DMatrix<f64>, groups: &[usize], k: usize, weights: &[f64]) -> Result<DMatrix<f64>> {
    if weights.len() != m.ncols() {
        return Err(Error::Shape("one Z weight per column is required".into()));
    }
    let mut out = DMatrix::zeros(m.nrows(), k);
    let mut mass = vec![0.0; k];
    for (c, &g) in groups.iter().enumerate() {
        mass[g] += weights[c];
        for r in 0..m.nrows() {
            out[(r, g)] += weights[c] * m[(r, c)];
        }
    }
    for (g, &w) in mass.iter().enumerate() {
        if w <= 0.0 {
            return Err(Error::Shape(format!("merged Z level {g} carries no probability mass")));
        }
        for r in 0..m.nrows() {
            out[(r, g)] /= w;
        }
    }
    Ok(out)
}

/// Stirling number of the second kind as a float (exact for the small
/// arguments the search budget allows).
pub(crate) fn stirling2(n: usize, k: usize) -> f64 {
    if k == 0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if k > n {
        return 0.0;
    }
    let mut row = vec![0.0; k + 1];
    row[0] = 1.0;
    for i in 1..=n {
        for j in (1..=k.min(i)).rev() {
            row[j] = j as f64 * row[j] + row[j - 1];
        }
        row[0] = 0.0;
    }
    row[k]
}

/// All partitions of `0..n` into exactly `k` non-empty blocks, as restricted
/// growth strings.
pub(crate) fn set_partitions(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(pos: usize, n: usize, k: usize, used: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == n {
            if used == k {
                out.push(cur.clone());
            }
            return;
        }
        if k - used > n - pos {
            return;
        }
        for g in 0..=used.min(k - 1) {
            cur.push(g);
            rec(pos + 1, n, k, used.max(g + 1), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k >= 1 && k <= n {
        rec(0, n, k, 0, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

/// k-th largest singular value (0 when the matrix has fewer than k).
fn kth_singular_value(m: &DMatrix<f64>, k: usize) -> f64 {
    singular_values(m).get(k - 1).copied().unwrap_or(0.0)
}

/// Searches merges of W levels (rows) and/or Z levels (columns) down to `k`
/// groups maximizing the k-th singular value of the coarsened matrix.
/// `None` for a side leaves it intact.
pub(crate) fn search_coarsening(
    m: &DMatrix<f64>,
    k: usize,
    merge_w: bool,
    merge_z: bool,
    z_weights: &[f64],
) -> Result<(Vec<usize>, Vec<usize>, DMatrix<f64>)> {
    let k_w = m.nrows();
    let j_z = m.ncols();
    let w_parts = if merge_w { stirling2(k_w, k) } else { 1.0 };
    let z_parts = if merge_z { stirling2(j_z, k) } else { 1.0 };
    let identity_w: Vec<usize> = (0..k_w).collect();
    let identity_z: Vec<usize> = (0..j_z).collect();

    let evaluate = |wg: &[usize], zg: &[usize]| -> Result<(f64, DMatrix<f64>)> {
        let wl = wg.iter().max().map_or(0, |v| v + 1);
        let zl = zg.iter().max().map_or(0, |v| v + 1);
        let merged = merge_columns(&merge_rows(m, wg, wl), zg, zl, z_weights)?;
        Ok((kth_singular_value(&merged, k), merged))
    };

    if w_parts * z_parts <= EXHAUSTIVE_LIMIT {
        let ws = if merge_w { set_partitions(k_w, k) } else { vec![identity_w.clone()] };
        let zs = if merge_z { set_partitions(j_z, k) } else { vec![identity_z.clone()] };
        let mut best: Option<(f64, Vec<usize>, Vec<usize>, DMatrix<f64>)> = None;
        for wg in &ws {
            for zg in &zs {
                let (score, merged) = evaluate(wg, zg)?;
                if best.as_ref().is_none_or(|b| score > b.0) {
                    best = Some((score, wg.clone(), zg.clone(), merged));
                }
            }
        }
        let (_, wg, zg, merged) = best.ok_or_else(|| Error::Dimension("no admissible coarsening".into()))?;
        return Ok((wg, zg, merged));
    }

    // Greedy agglomeration: repeatedly apply the single pairwise merge that
    // keeps the k-th singular value largest.
    let mut wg = identity_w;
    let mut zg = identity_z;
    loop {
        let wl = wg.iter().max().map_or(0, |v| v + 1);
        let zl = zg.iter().max().map_or(0, |v| v + 1);
        let need_w = merge_w && wl > k;
        let need_z = merge_z && zl > k;
        if !need_w && !need_z {
            break;
        }
        let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
        let mut consider = |cand_w: Vec<usize>, cand_z: Vec<usize>| -> Result<()> {
            let (score, _) = evaluate(&cand_w, &cand_z)?;
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, cand_w, cand_z));
            }
            Ok(())
        };
        if need_w {
            for a in 0..wl {
                for b in (a + 1)..wl {
                    consider(merge_pair(&wg, a, b), zg.clone())?;
                }
            }
        }
        if need_z {
            for a in 0..zl {
                for b in (a + 1)..zl {
                    consider(wg.clone(), merge_pair(&zg, a, b))?;
                }
            }
        }
        let (_, nw, nz) = best.expect("at least one candidate merge");
        wg = nw;
        zg = nz;
    }
    let (_, merged) = evaluate(&wg, &zg)?;
    Ok((wg, zg, merged))
}

/// Merges group `b` into group `a` and renumbers groups densely.
fn merge_pair(groups: &[usize], a: usize, b: usize) -> Vec<usize> {
    groups
        .iter()
        .map(|&g| match g {
            g if g == b => a,
            g if g > b => g - 1,
            g => g,
        })
        .collect()
}

/// Merges W and Z levels of `P(W|Z,x)` into `k` groups each so that the
/// coarsened `k × k` matrix has the largest attainable minimum singular
/// value. `z_weights` are `pr(z|x)` (uniform when `None`).
pub fn coarsen(
    p_wzx_full: &CondProbMatrix,
    z_weights: Option<&[f64]>,
    k: usize,
    tol: f64,
) -> Result<(CoarseningMap, CondProbMatrix)> {
    let (k_w, j_z) = (p_wzx_full.nrows(), p_wzx_full.ncols());
    if k == 0 || k_w < k || j_z < k {
        return Err(Error::Dimension(format!(
            "cannot coarsen a {k_w}x{j_z} matrix to {k} levels; both W and Z need at least {k} levels"
        )));
    }
    let uniform = vec![1.0 / j_z as f64; j_z];
    let weights = z_weights.unwrap_or(&uniform);
    let (wg, zg, merged) = search_coarsening(p_wzx_full.values(), k, true, true, weights)?;
    let map = CoarseningMap {
        w_groups: wg,
        z_groups: zg,
        k,
    };
    let diagnostics = rank_diagnostics(&merged, tol);
    if !diagnostics.invertible {
        return Err(Error::CoarseningFailure { best: diagnostics });
    }
    let stratum = p_wzx_full.stratum().to_vec();
    let matrix = CondProbMatrix::new(renormalize_columns(merged), Var::W, vec![Var::Z], stratum)?;
    Ok((map, matrix))
}

/// Removes rounding drift so merged columns sum to one within the
/// stochastic tolerance.
pub(crate) fn renormalize_columns(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in m.column_iter_mut() {
        let s: f64 = col.iter().sum();
        if s > 0.0 {
            col /= s;
        }
    }
    m.apply(|v| *v = v.clamp(0.0, 1.0));
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct IdentifyConfig {
    /// Relative singular-value tolerance; defaults to `(k/n)^{1/2}`.
    pub tolerance: Option<f64>,
    /// Coarsen W and Z to this many levels. Non-square `P(W|Z,x)` is always
    /// coarsened to `min(|W|, |Z|)` when unset.
    pub coarsen_to: Option<usize>,
    pub smoothing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectRow {
    pub x: String,
    pub y: String,
    pub x_level: usize,
    pub y_level: usize,
    /// Estimate clipped to `[0, 1]`.
    pub estimate: f64,
    pub raw_estimate: f64,
    /// Adjustment for Z alone: `Σ_z p̂(y|z,x) p̂(z)`.
    pub naive_estimate: f64,
    pub condition_number: f64,
    pub clipped: bool,
    pub coarsening_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumDiagnostics {
    pub x_level: usize,
    pub rank: RankDiagnostics,
    pub coarsening: Option<CoarseningMap>,
    pub normalization_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectTable {
    pub n: usize,
    pub tolerance: f64,
    pub smoothing: Option<f64>,
    pub rows: Vec<EffectRow>,
    pub strata: Vec<StratumDiagnostics>,
    pub warnings: Vec<String>,
}

impl EffectTable {
    pub fn estimate(&self, x_level: usize, y_level: usize) -> Option<&EffectRow> {
        self.rows.iter().find(|r| r.x_level == x_level && r.y_level == y_level)
    }

    /// CSV with columns `x, y, estimate, naive_estimate, condition_number, clipped, coarsening_used`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["x", "y", "estimate", "naive_estimate", "condition_number", "clipped", "coarsening_used"])?;
        for r in &self.rows {
            wtr.write_record([
                r.x.clone(),
                r.y.clone(),
                format!("{}", r.estimate),
                format!("{}", r.naive_estimate),
                format!("{}", r.condition_number),
                r.clipped.to_string(),
                r.coarsening_used.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Plug-in estimate of `pr{y | do(x)}` for every `(x, y)`.
pub fn identify_from_data(data: &CategoricalDataset, config: &IdentifyConfig) -> Result<EffectTable> {
    let cards = data.cardinalities();
    let opts = EstimationOptions {
        smoothing: config.smoothing,
    };
    let p_w = marginal_pmf(data, Var::W)?;
    let p_z = marginal_pmf(data, Var::Z)?;
    let k = config.coarsen_to.unwrap_or(cards.w.min(cards.z));
    let tol = config.tolerance.unwrap_or_else(|| empirical_tolerance(k, data.n()));
    let mut rows = Vec::new();
    let mut strata = Vec::new();
    let mut warnings = Vec::new();
    if config.smoothing.is_some() {
        warnings.push("Laplace smoothing applied to conditional tables".to_string());
    }

    for x in 0..cards.x {
        let stratum = [(Var::X, x)];
        let p_wzx = cond_prob_matrix_with(data, Var::W, Var::Z, &stratum, &opts)?;
        let p_yzx = cond_prob_matrix_with(data, Var::Y, Var::Z, &stratum, &opts)?;
        let z_given_x = cond_prob_matrix_with(data, Var::Z, Var::X, &[], &opts)?;
        let z_weights: Vec<f64> = z_given_x.values().column(x).iter().copied().collect();

        let needs_coarsening = config.coarsen_to.is_some() || cards.w != cards.z;
        let (map, p_wzx_used, p_yzx_used, p_w_used) = if needs_coarsening {
            let (map, coarse) = coarsen(&p_wzx, Some(&z_weights), k, tol)?;
            let mut yrows = DMatrix::zeros(cards.y, k);
            for y in 0..cards.y {
                let r = map.apply_outcome_row(&p_yzx.row(y), &z_weights)?;
                yrows.set_row(y, &DVector::from_vec(r).transpose());
            }
            let p_y = CondProbMatrix::new(renormalize_columns(yrows), Var::Y, vec![Var::Z], stratum.to_vec())?;
            let pw = MarginalPMF::new(Var::W, normalize(map.apply_marginal(p_w.values())))?;
            (Some(map), coarse, p_y, pw)
        } else {
            (None, p_wzx, p_yzx, p_w.clone())
        };

        let rank = rank_diagnostics(p_wzx_used.values(), tol);
        if !rank.invertible {
            return Err(Error::RankCondition {
                context: format!("P(W|Z,x) at X={}", data.labels(Var::X)[x]),
                diagnostics: rank,
            });
        }
        let effects = causal_effects(&p_yzx_used, &p_wzx_used, &p_w_used, tol)?;
        if let Some(w) = &effects.warning {
            warnings.push(format!("X={}: {w}", data.labels(Var::X)[x]));
        }
        let p_yzx_full = cond_prob_matrix_with(data, Var::Y, Var::Z, &stratum, &opts)?;
        for (y, &raw) in effects.values.iter().enumerate() {
            let naive: f64 = p_yzx_full
                .row(y)
                .iter()
                .zip(p_z.values())
                .map(|(a, b)| a * b)
                .sum();
            let clipped = !(0.0..=1.0).contains(&raw);
            rows.push(EffectRow {
                x: data.labels(Var::X)[x].clone(),
                y: data.labels(Var::Y)[y].clone(),
                x_level: x,
                y_level: y,
                estimate: raw.clamp(0.0, 1.0),
                raw_estimate: raw,
                naive_estimate: naive,
                condition_number: rank.condition_number,
                clipped,
                coarsening_used: map.as_ref().is_some_and(|m| !m.is_identity()),
            });
        }
        strata.push(StratumDiagnostics {
            x_level: x,
            rank,
            coarsening: map,
            normalization_error: effects.normalization_error,
        });
    }
    if rows.iter().any(|r| r.clipped) {
        warnings.push("some estimates fell outside [0, 1] and were clipped".to_string());
    }
    Ok(EffectTable {
        n: data.n(),
        tolerance: tol,
        smoothing: config.smoothing,
        rows,
        strata,
        warnings,
    })
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x = (*x / s).clamp(0.0, 1.0));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cpm(rows: usize, cols: usize, data: &[f64]) -> CondProbMatrix {
        CondProbMatrix::from_values(DMatrix::from_row_slice(rows, cols, data)).unwrap()
    }

    #[test]
    fn identity_reduces_to_adjustment() {
        let p_w = MarginalPMF::new(Var::W, vec![0.3, 0.7]).unwrap();
        let v = causal_effect_categorical(&[0.5, 0.5], &cpm(2, 2, &[1.0, 0.0, 0.0, 1.0]), &p_w, POPULATION_TOL).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_outcome_row_passes_through() {
        let m = cpm(3, 3, &[0.6, 0.2, 0.1, 0.3, 0.5, 0.2, 0.1, 0.3, 0.7]);
        let p_w = MarginalPMF::new(Var::W, vec![0.2, 0.5, 0.3]).unwrap();
        let v = causal_effect_categorical(&[0.37; 3], &m, &p_w, POPULATION_TOL).unwrap();
        assert!((v - 0.37).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_rejected_with_diagnostics() {
        let m = cpm(2, 2, &[0.4, 0.4, 0.6, 0.6]);
        let p_w = MarginalPMF::new(Var::W, vec![0.4, 0.6]).unwrap();
        match causal_effect_categorical(&[0.2, 0.3], &m, &p_w, POPULATION_TOL) {
            Err(Error::RankCondition { diagnostics, .. }) => {
                assert!(!diagnostics.invertible);
                assert_eq!(diagnostics.binary_association, Some(0.0));
            }
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch() {
        let m = cpm(2, 2, &[0.9, 0.2, 0.1, 0.8]);
        let p_w = MarginalPMF::new(Var::W, vec![0.4, 0.6]).unwrap();
        assert!(matches!(
            causal_effect_categorical(&[0.2, 0.3, 0.1], &m, &p_w, POPULATION_TOL),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn binary_examples() {
        assert!((causal_effect_binary(1.0, 1.0, 0.0, 0.8, 0.2).unwrap() - 0.8).abs() < 1e-15);
        assert!((causal_effect_binary(0.55, 0.7, 0.3, 0.42, 0.42).unwrap() - 0.42).abs() < 1e-15);
        assert!(matches!(
            causal_effect_binary(0.5, 0.3, 0.3, 0.1, 0.2),
            Err(Error::RankCondition { .. })
        ));
    }

    #[test]
    fn diagnostics_of_identity_and_rank_one() {
        let d = rank_diagnostics(&DMatrix::identity(2, 2), POPULATION_TOL);
        assert!(d.invertible);
        assert!((d.condition_number - 1.0).abs() < 1e-15);
        let d = rank_diagnostics(&DMatrix::from_row_slice(2, 2, &[0.3, 0.3, 0.7, 0.7]), POPULATION_TOL);
        assert!(!d.invertible);
        assert!(d.min_singular_value < 1e-15);
    }

    #[test]
    fn stirling_and_partitions_agree() {
        for n in 1..=7 {
            for k in 1..=n {
                assert_eq!(set_partitions(n, k).len() as f64, stirling2(n, k), "S({n},{k})");
            }
        }
        assert_eq!(stirling2(10, 3), 9330.0);
    }

    #[test]
    fn square_coarsening_is_identity() {
        let m = cpm(2, 2, &[0.8, 0.3, 0.2, 0.7]);
        let (map, coarse) = coarsen(&m, None, 2, POPULATION_TOL).unwrap();
        assert!(map.is_identity());
        assert_eq!(coarse.values(), m.values());
    }

    #[test]
    fn duplicate_rows_are_merged() {
        // Rows 1 and 2 are identical.
        let m = cpm(3, 2, &[0.8, 0.2, 0.1, 0.4, 0.1, 0.4]);
        let (map, coarse) = coarsen(&m, Some(&[0.5, 0.5]), 2, POPULATION_TOL).unwrap();
        assert_eq!(map.w_groups, vec![0, 1, 1]);
        assert_eq!(map.z_groups, vec![0, 1]);
        assert!((coarse.values()[(1, 0)] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn coarsening_failure_reports_best() {
        let m = cpm(3, 3, &[0.3, 0.3, 0.3, 0.2, 0.2, 0.2, 0.5, 0.5, 0.5]);
        match coarsen(&m, None, 2, POPULATION_TOL) {
            Err(Error::CoarseningFailure { best }) => assert!(!best.invertible),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn merge_pair_renumbers() {
        assert_eq!(merge_pair(&[0, 1, 2, 3], 1, 2), vec![0, 1, 1, 2]);
        assert_eq!(merge_pair(&[0, 1, 2, 1], 0, 1), vec![0, 0, 1, 0]);
    }
}
