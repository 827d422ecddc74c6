use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::independence::ks_distance;
use super::latent::{oracle_do_categorical, sample_latent_class, LatentClassModel};
use crate::error::{Error, Result};
use crate::ident_cat::{identify_from_data, IdentifyConfig};
use crate::nulltest::{test_other_diagrams, NullTestConfig};

/// Which estimators each replicate runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Estimators {
    pub effect: bool,
    pub null_test: bool,
}

impl Default for Estimators {
    fn default() -> Self {
        Self {
            effect: true,
            null_test: true,
        }
    }
}

fn default_y_level() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub model: LatentClassModel,
    pub n: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub estimators: Estimators,
    /// Outcome level whose indicator is tested.
    #[serde(default = "default_y_level")]
    pub y_level: usize,
    #[serde(default)]
    pub test: NullTestConfig,
    #[serde(default)]
    pub identify: IdentifyConfig,
    /// Keep every replicate's test statistic in the report.
    #[serde(default)]
    pub keep_statistics: bool,
    /// Worker threads; the global pool when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {} is not in (0, 1)", self.alpha)));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("sample size must be positive".into()));
        }
        self.model.validate()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `index`: `splitmix64(splitmix64(master) ^ index)`.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestSummary {
    pub y_level: usize,
    pub dof: Option<usize>,
    pub completed: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub mean_statistic: f64,
    /// KS distance between the statistics and their χ² reference.
    pub ks_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistics: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectCell {
    pub x: usize,
    pub y: usize,
    pub oracle: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub rmse: f64,
    pub mean_abs_error: f64,
    pub mc_se: f64,
    pub naive_mean: f64,
    pub naive_bias: f64,
    pub naive_rmse: f64,
    pub naive_mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectSummary {
    pub completed: usize,
    pub cells: Vec<EffectCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub n: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub failures: usize,
    pub failure_rate: f64,
    pub failure_messages: Vec<String>,
    pub null_test: Option<TestSummary>,
    pub effect: Option<EffectSummary>,
}

impl StudyReport {
    /// CSV with columns `x, y, oracle, mean_estimate, bias, rmse,
    /// mean_abs_error, mc_se, naive_mean, naive_bias, naive_rmse,
    /// naive_mean_abs_error`.
    pub fn write_effect_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "x",
            "y",
            "oracle",
            "mean_estimate",
            "bias",
            "rmse",
            "mean_abs_error",
            "mc_se",
            "naive_mean",
            "naive_bias",
            "naive_rmse",
            "naive_mean_abs_error",
        ])?;
        for c in self.effect.iter().flat_map(|e| &e.cells) {
            let nums = [
                c.oracle,
                c.mean_estimate,
                c.bias,
                c.rmse,
                c.mean_abs_error,
                c.mc_se,
                c.naive_mean,
                c.naive_bias,
                c.naive_rmse,
                c.naive_mean_abs_error,
            ];
            let mut rec = vec![c.x.to_string(), c.y.to_string()];
            rec.extend(nums.iter().map(|v| v.to_string()));
            wtr.write_record(rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

struct Replicate {
    failure: Option<String>,
    statistic: Option<(f64, usize, f64)>,
    effects: Option<Vec<(f64, f64)>>,
}

fn run_replicate(config: &StudyConfig, index: usize) -> Replicate {
    let seed = replicate_seed(config.seed, index as u64);
    let mut out = Replicate {
        failure: None,
        statistic: None,
        effects: None,
    };
    let data = match sample_latent_class(&config.model, config.n, seed) {
        Ok(d) => d.without_u(),
        Err(e) => {
            out.failure = Some(e.to_string());
            return out;
        }
    };
    if config.estimators.null_test {
        let mut tc = config.test.clone();
        tc.bootstrap_seed = splitmix64(seed);
        match test_other_diagrams(&data, config.model.diagram, config.y_level, &tc) {
            Ok(r) => out.statistic = Some((r.statistic, r.dof, r.p_value)),
            Err(e) => out.failure = Some(e.to_string()),
        }
    }
    if config.estimators.effect {
        match identify_from_data(&data, &config.identify) {
            Ok(t) => out.effects = Some(t.rows.iter().map(|r| (r.raw_estimate, r.naive_estimate)).collect()),
            Err(e) => out.failure = Some(e.to_string()),
        }
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs `config.replicates` independent replicates in parallel. Results are
/// aggregated in replicate order, so the report does not depend on the
/// number of threads.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let work = || -> Vec<Replicate> { (0..config.replicates).into_par_iter().map(|r| run_replicate(config, r)).collect() };
    let reps = match config.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(work),
        None => work(),
    };

    let failure_messages: Vec<String> = reps.iter().filter_map(|r| r.failure.clone()).collect();
    let failures = failure_messages.len();
    let mut distinct = failure_messages.clone();
    distinct.sort();
    distinct.dedup();

    let null_test = config.estimators.null_test.then(|| {
        let stats: Vec<(f64, usize, f64)> = reps.iter().filter_map(|r| r.statistic).collect();
        let completed = stats.len();
        let rejections = stats.iter().filter(|s| s.2 < config.alpha).count();
        let rate = if completed > 0 { rejections as f64 / completed as f64 } else { f64::NAN };
        let dof = stats.first().map(|s| s.1);
        let values: Vec<f64> = stats.iter().map(|s| s.0).collect();
        let ks = dof.and_then(|d| ChiSquared::new(d as f64).ok()).map(|chi| ks_distance(&values, |t| chi.cdf(t)));
        TestSummary {
            y_level: config.y_level,
            dof,
            completed,
            rejections,
            rejection_rate: rate,
            mc_se: (rate * (1.0 - rate) / completed.max(1) as f64).sqrt(),
            mean_statistic: if completed > 0 { mean(&values) } else { f64::NAN },
            ks_distance: ks,
            statistics: config.keep_statistics.then_some(values),
        }
    });

    let effect = config.estimators.effect.then(|| {
        let oracle = oracle_do_categorical(&config.model);
        let runs: Vec<&Vec<(f64, f64)>> = reps.iter().filter_map(|r| r.effects.as_ref()).collect();
        let m = config.model.dims().m;
        let mut cells = Vec::new();
        for (x, row) in oracle.values.iter().enumerate() {
            for (y, &truth) in row.iter().enumerate() {
                let idx = x * m + y;
                let est: Vec<f64> = runs.iter().map(|r| r[idx].0).collect();
                let naive: Vec<f64> = runs.iter().map(|r| r[idx].1).collect();
                let stats = |v: &[f64]| -> (f64, f64, f64, f64) {
                    if v.is_empty() {
                        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
                    }
                    let mu = mean(v);
                    let rmse = (v.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
                    let mae = v.iter().map(|e| (e - truth).abs()).sum::<f64>() / v.len() as f64;
                    let sd = if v.len() > 1 {
                        (v.iter().map(|e| (e - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
                    } else {
                        0.0
                    };
                    (mu, rmse, mae, sd / (v.len() as f64).sqrt())
                };
                let (mu, rmse, mae, se) = stats(&est);
                let (nmu, nrmse, nmae, _) = stats(&naive);
                cells.push(EffectCell {
                    x,
                    y,
                    oracle: truth,
                    mean_estimate: mu,
                    bias: mu - truth,
                    rmse,
                    mean_abs_error: mae,
                    mc_se: se,
                    naive_mean: nmu,
                    naive_bias: nmu - truth,
                    naive_rmse: nrmse,
                    naive_mean_abs_error: nmae,
                });
            }
        }
        EffectSummary {
            completed: runs.len(),
            cells,
        }
    });

    Ok(StudyReport {
        n: config.n,
        replicates: config.replicates,
        alpha: config.alpha,
        seed: config.seed,
        failures,
        failure_rate: failures as f64 / config.replicates as f64,
        failure_messages: distinct,
        null_test,
        effect,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    pub delta: f64,
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub completed: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerReport {
    pub n: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub rows: Vec<PowerRow>,
}

impl PowerReport {
    /// CSV with columns `delta, rejection_rate, mc_se, completed, failures`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["delta", "rejection_rate", "mc_se", "completed", "failures"])?;
        for r in &self.rows {
            wtr.write_record([
                r.delta.to_string(),
                r.rejection_rate.to_string(),
                r.mc_se.to_string(),
                r.completed.to_string(),
                r.failures.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Null-test rejection rates for the family `model.add_direct_effect(δ)`.
/// Every δ reuses the same replicate seeds.
pub fn run_power(config: &StudyConfig, deltas: &[f64]) -> Result<PowerReport> {
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut c = config.clone();
        c.model = config.model.add_direct_effect(delta)?;
        c.estimators = Estimators {
            effect: false,
            null_test: true,
        };
        let rep = run_study(&c)?;
        let t = rep.null_test.expect("null test enabled");
        rows.push(PowerRow {
            delta,
            rejection_rate: t.rejection_rate,
            mc_se: t.mc_se,
            completed: t.completed,
            failures: rep.failures,
        });
    }
    Ok(PowerReport {
        n: config.n,
        replicates: config.replicates,
        alpha: config.alpha,
        seed: config.seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_and_repeat() {
        assert_eq!(replicate_seed(7, 3), replicate_seed(7, 3));
        assert_ne!(replicate_seed(7, 3), replicate_seed(7, 4));
        assert_ne!(replicate_seed(7, 3), replicate_seed(8, 3));
    }
}
