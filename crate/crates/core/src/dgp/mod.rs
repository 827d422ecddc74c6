//! Synthetic data for the six proxy diagrams, exact oracles and Monte Carlo
//! studies.

pub mod fixtures;
mod independence;
mod latent;
mod sem;
mod study;

pub use independence::{conditional_independence_test, ks_distance, IndependenceTest};
pub use latent::{
    alternative_error_mechanism, observed_joint, oracle_do_categorical, population_matrices, random_model, sample_latent_class, Diagram,
    DoTable, LatentClassModel, ModelDims, PopulationMatrices, RandomModelConstraints,
};
pub use sem::{kuroki_pearl_effect, oracle_do_gaussian, sample_gaussian_sem, LinearGaussianSEM, SEM_ORDER};
pub use study::{replicate_seed, run_power, run_study, EffectCell, EffectSummary, Estimators, PowerReport, PowerRow, StudyConfig, StudyReport, TestSummary};
