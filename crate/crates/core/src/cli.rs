//! Command-line front end. Every command writes a JSON envelope
//! `{schema_version, command, generated_at_unix, result}`; with
//! `--no-timestamp` the timestamp is omitted so repeated runs are
//! byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::dgp::{oracle_do_gaussian, run_power, run_study, sample_latent_class, Diagram, LatentClassModel, LinearGaussianSEM, StudyConfig};
use crate::error::{Error, Result};
use crate::fredholm::{integrate_do, l_curve, picard_diagnostics, solve_tikhonov, GaussianInstance, GridConfig};
use crate::ident_cat::{identify_from_data, IdentifyConfig};
use crate::ident_gauss::{fit_proxy_regressions, fit_proxy_regressions_by_x, gamma1, gaussian_do_law};
use crate::nulltest::{combine_levels, null_test_mean_scale, test_other_diagrams, CovMethod, NullTestConfig};
use crate::quadrature::QuadratureRule;
use crate::tabular::{load_csv, load_numeric_csv, write_csv, CsvSchema, Var};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "proxycausal", version, about = "Causal effects and effect tests with two confounder proxies")]
pub struct Cli {
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Omit the generation timestamp so outputs can be compared byte for byte.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate pr{y | do(x)} for every (x, y) from categorical data.
    Identify(IdentifyArgs),
    /// Test for no effect of X on Y within confounder strata.
    Test(TestArgs),
    /// Normal-model identification from proxy regressions.
    Gauss(GaussArgs),
    /// Solve the discretized bridge equation for a Gaussian SEM.
    Fredholm(FredholmArgs),
    /// Draw a categorical dataset from a latent-class model.
    Sample(SampleArgs),
    /// Monte Carlo study of the estimator and the test.
    Simulate(StudyArgs),
    /// Rejection rates over a family of direct effects.
    Power(PowerArgs),
}

#[derive(Debug, Args)]
pub struct ColumnArgs {
    #[arg(long, default_value = "x")]
    pub x_col: String,
    /// Proxy Z column; "none" treats Z as absent.
    #[arg(long, default_value = "z")]
    pub z_col: String,
    /// Proxy W column; "none" treats W as absent.
    #[arg(long, default_value = "w")]
    pub w_col: String,
    #[arg(long, default_value = "y")]
    pub y_col: String,
}

impl ColumnArgs {
    fn schema(&self) -> CsvSchema {
        let opt = |s: &str| (s != "none").then(|| s.to_string());
        CsvSchema {
            x: self.x_col.clone(),
            z: opt(&self.z_col),
            w: opt(&self.w_col),
            y: self.y_col.clone(),
            u: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub columns: ColumnArgs,
    /// Merge W and Z levels down to this many before inverting.
    #[arg(long)]
    pub coarsen: Option<usize>,
    /// Laplace pseudo-count.
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Relative singular-value tolerance.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Also write the effect table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub columns: ColumnArgs,
    /// Outcome level label to test; every level when omitted.
    #[arg(long)]
    pub y_level: Option<String>,
    /// Test on the mean scale using numeric Y labels.
    #[arg(long)]
    pub mean_scale: bool,
    #[arg(long, default_value = "residual", value_parser = parse_cov)]
    pub cov: CovMethod,
    #[arg(long, default_value = "f", value_parser = parse_diagram)]
    pub diagram: Diagram,
    /// Level used only for the reported decision.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub resamples: usize,
    /// Coarsen W to this many levels first.
    #[arg(long)]
    pub coarsen_w: Option<usize>,
    /// Number of latent classes for single-proxy diagrams.
    #[arg(long)]
    pub latent_levels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GaussArgs {
    /// Numeric CSV with columns x, z, w, y.
    #[arg(long, conflicts_with = "sem", required_unless_present = "sem")]
    pub input: Option<PathBuf>,
    /// SEM JSON; population regressions are used.
    #[arg(long)]
    pub sem: Option<PathBuf>,
    /// Separate regressions for each treatment level.
    #[arg(long)]
    pub per_x: bool,
}

#[derive(Debug, Args)]
pub struct FredholmArgs {
    #[arg(long)]
    pub sem: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub x: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub y: f64,
    /// Tikhonov parameter; chosen by the L-curve when omitted.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 201)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 6.0)]
    pub half_width: f64,
    #[arg(long)]
    pub gauss_legendre: bool,
    /// Also write the L-curve table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    /// Keep the latent column.
    #[arg(long)]
    pub include_u: bool,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_parser = parse_cov)]
    pub cov: Option<CovMethod>,
    /// Also write per-cell effect summaries as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3")]
    pub deltas: Vec<f64>,
}

fn parse_cov(s: &str) -> Result<CovMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_diagram(s: &str) -> Result<Diagram, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn emit(cli: &Cli, command: &str, result: impl Serialize) -> Result<()> {
    let mut env = serde_json::Map::new();
    env.insert("schema_version".into(), json!(SCHEMA_VERSION));
    env.insert("command".into(), json!(command));
    if !cli.no_timestamp {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        env.insert("generated_at_unix".into(), json!(secs));
    }
    env.insert("result".into(), serde_json::to_value(result)?);
    let mut out = open_output(cli.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &env)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn study_config(args: &StudyArgs) -> Result<StudyConfig> {
    let mut config: StudyConfig = read_json(&args.config)?;
    config.seed = args.seed;
    if let Some(a) = args.alpha {
        config.alpha = a;
    }
    if let Some(j) = args.jobs {
        config.jobs = Some(j);
    }
    if let Some(c) = args.cov {
        config.test.cov = c;
    }
    Ok(config)
}

fn level_index(labels: &[String], label: &str) -> Result<usize> {
    labels
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| Error::InvalidConfig(format!("Y has no level {label:?}")))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Identify(a) => {
            let data = load_csv(&a.input, &a.columns.schema())?;
            let config = IdentifyConfig {
                tolerance: a.tolerance,
                coarsen_to: a.coarsen,
                smoothing: a.smoothing,
            };
            let table = identify_from_data(&data, &config)?;
            if let Some(p) = &a.csv {
                table.write_csv(File::create(p)?)?;
            }
            emit(cli, "identify", &table)
        }
        Command::Test(a) => {
            let data = load_csv(&a.input, &a.columns.schema())?;
            let config = NullTestConfig {
                cov: a.cov,
                bootstrap_resamples: a.resamples,
                bootstrap_seed: a.seed,
                coarsen_w: a.coarsen_w,
                latent_levels: a.latent_levels,
                ..Default::default()
            };
            if a.mean_scale {
                let r = null_test_mean_scale(&data, &config)?;
                let reject = r.rejects(a.alpha);
                return emit(cli, "test", json!({ "alpha": a.alpha, "results": [r], "reject": reject }));
            }
            let labels = data.labels(Var::Y).to_vec();
            let levels: Vec<usize> = match &a.y_level {
                Some(l) => vec![level_index(&labels, l)?],
                None => (0..labels.len()).collect(),
            };
            let results = levels
                .iter()
                .map(|&l| test_other_diagrams(&data, a.diagram, l, &config))
                .collect::<Result<Vec<_>>>()?;
            let combined = combine_levels(&results)?;
            emit(
                cli,
                "test",
                json!({
                    "alpha": a.alpha,
                    "y_labels": levels.iter().map(|&l| labels[l].clone()).collect::<Vec<_>>(),
                    "results": results,
                    "combined_p_value": combined,
                    "reject": combined < a.alpha,
                }),
            )
        }
        Command::Gauss(a) => {
            if let Some(path) = &a.sem {
                let sem: LinearGaussianSEM = read_json(path)?;
                let fit = sem.population_fit()?;
                let law = gaussian_do_law(&fit, sem.w_marginal())?;
                return emit(
                    cli,
                    "gauss",
                    json!({ "gamma1": gamma1(&fit)?, "fit": fit, "do_law": law, "oracle": oracle_do_gaussian(&sem) }),
                );
            }
            let path = a.input.as_ref().expect("clap enforces --input or --sem");
            let data = load_numeric_csv(path, &CsvSchema::default())?;
            let n = data.n() as f64;
            let mw = data.w.iter().sum::<f64>() / n;
            let vw = data.w.iter().map(|w| (w - mw).powi(2)).sum::<f64>() / (n - 1.0);
            if a.per_x {
                let strata = fit_proxy_regressions_by_x(&data, Some((mw, vw)))?;
                return emit(cli, "gauss", json!({ "w_marginal": [mw, vw], "strata": strata }));
            }
            let fit = fit_proxy_regressions(&data)?;
            let law = gaussian_do_law(&fit, (mw, vw))?;
            emit(cli, "gauss", json!({ "gamma1": gamma1(&fit)?, "fit": fit, "w_marginal": [mw, vw], "do_law": law }))
        }
        Command::Fredholm(a) => {
            let sem: LinearGaussianSEM = read_json(&a.sem)?;
            let inst = GaussianInstance {
                fit: sem.population_fit()?,
                z_law: sem.z_given_x(a.x),
                w_law: sem.w_marginal(),
                x: a.x,
                y: a.y,
            };
            let grids = GridConfig {
                rule: if a.gauss_legendre { QuadratureRule::GaussLegendre } else { QuadratureRule::Trapezoid },
                n_z: a.grid_points,
                n_w: a.grid_points,
                half_width_sds: a.half_width,
            };
            let eq = inst.discretize(&grids)?;
            let curve = l_curve(&eq)?;
            let lambda = a.lambda.unwrap_or(curve.lambda);
            let sol = solve_tikhonov(&eq, lambda)?;
            let do_value = integrate_do(&sol.h, &eq.w_grid, |w| inst.w_density(w))?;
            let closed = oracle_do_gaussian(&sem).density(a.y, a.x);
            let zd = |z: f64| inst.z_density(z);
            let picard = picard_diagnostics(&eq, Some(&zd))?;
            let mut table = Vec::with_capacity(curve.points.len());
            for p in &curve.points {
                let s = solve_tikhonov(&eq, p.lambda)?;
                table.push((p.lambda, p.residual_norm, p.solution_norm, integrate_do(&s.h, &eq.w_grid, |w| inst.w_density(w))?));
            }
            if let Some(path) = &a.csv {
                let mut wtr = csv::Writer::from_path(path)?;
                wtr.write_record(["lambda", "residual_norm", "solution_norm", "do_value"])?;
                for (l, r, s, d) in &table {
                    wtr.write_record([l.to_string(), r.to_string(), s.to_string(), d.to_string()])?;
                }
                wtr.flush()?;
            }
            emit(
                cli,
                "fredholm",
                json!({
                    "x": a.x,
                    "y": a.y,
                    "lambda": lambda,
                    "lambda_from_l_curve": a.lambda.is_none(),
                    "residual_norm": sol.residual_norm,
                    "do_value": do_value,
                    "closed_form": closed,
                    "abs_error": (do_value - closed).abs(),
                    "row_sum_range": [
                        eq.row_sums.iter().copied().fold(f64::INFINITY, f64::min),
                        eq.row_sums.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    ],
                    "picard": {
                        "blow_up": picard.blow_up,
                        "warning": picard.warning,
                        "trusted": picard.trusted,
                        "hilbert_schmidt_norm_sq": picard.hilbert_schmidt_norm_sq,
                        "b_norm_sq": picard.b_norm_sq,
                        "singular_values": picard.singular_values.iter().take(picard.trusted).collect::<Vec<_>>(),
                        "picard_partial_sums": picard.picard_partial_sums.iter().take(picard.trusted).collect::<Vec<_>>(),
                    },
                    "l_curve": table.iter().map(|(l, r, s, d)| json!({"lambda": l, "residual_norm": r, "solution_norm": s, "do_value": d})).collect::<Vec<_>>(),
                }),
            )
        }
        Command::Sample(a) => {
            let model: LatentClassModel = read_json(&a.model)?;
            let data = sample_latent_class(&model, a.n, a.seed)?;
            let mut out = open_output(cli.output.as_deref())?;
            write_csv(&data, &mut out, a.include_u)?;
            out.flush()?;
            Ok(())
        }
        Command::Simulate(a) => {
            let config = study_config(a)?;
            let report = run_study(&config)?;
            if let Some(p) = &a.csv {
                report.write_effect_csv(File::create(p)?)?;
            }
            emit(cli, "simulate", &report)
        }
        Command::Power(a) => {
            let config = study_config(&a.study)?;
            let report = run_power(&config, &a.deltas)?;
            if let Some(p) = &a.study.csv {
                report.write_csv(File::create(p)?)?;
            }
            emit(cli, "power", &report)
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 on success, 2 for invalid input or configuration, 3 for numeric or
/// rank failures.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
