use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::tabular::{CategoricalDataset, Var};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndependenceTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn combined(data: &CategoricalDataset, vars: &[Var]) -> Result<Vec<usize>> {
    let mut out = vec![0usize; data.n()];
    for &v in vars {
        let col = data
            .column(v)
            .ok_or_else(|| Error::Schema(format!("dataset has no {v} column")))?;
        let k = data.card(v).unwrap_or(1);
        for (o, &c) in out.iter_mut().zip(col) {
            *o = *o * k + c;
        }
    }
    Ok(out)
}

/// Pearson χ² test of `left ⫫ right | given`, summing the per-stratum
/// statistics and degrees of freedom. Empty rows and columns within a
/// stratum do not count towards the degrees of freedom.
pub fn conditional_independence_test(data: &CategoricalDataset, left: &[Var], right: &[Var], given: &[Var]) -> Result<IndependenceTest> {
    let a = combined(data, left)?;
    let b = combined(data, right)?;
    let g = combined(data, given)?;
    let mut tables: BTreeMap<usize, BTreeMap<(usize, usize), f64>> = BTreeMap::new();
    for r in 0..data.n() {
        *tables.entry(g[r]).or_default().entry((a[r], b[r])).or_insert(0.0) += 1.0;
    }
    let mut statistic = 0.0;
    let mut dof = 0usize;
    for cells in tables.values() {
        let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
        let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
        let mut total = 0.0;
        for (&(ra, cb), &c) in cells {
            *rows.entry(ra).or_insert(0.0) += c;
            *cols.entry(cb).or_insert(0.0) += c;
            total += c;
        }
        if rows.len() < 2 || cols.len() < 2 {
            continue;
        }
        for (&ra, &rn) in &rows {
            for (&cb, &cn) in &cols {
                let expected = rn * cn / total;
                let observed = cells.get(&(ra, cb)).copied().unwrap_or(0.0);
                statistic += (observed - expected).powi(2) / expected;
            }
        }
        dof += (rows.len() - 1) * (cols.len() - 1);
    }
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64)
            .map_err(|e| Error::Numeric(e.to_string()))?
            .sf(statistic)
    };
    Ok(IndependenceTest { statistic, dof, p_value })
}

/// Kolmogorov–Smirnov distance between a sample and a continuous cdf.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            ((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_uniform_grid() {
        let s: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_distance(&s, |t| t) - 0.005).abs() < 1e-12);
    }
}
