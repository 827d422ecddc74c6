use thiserror::Error;

use crate::ident_cat::RankDiagnostics;
use crate::tabular::Var;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("variable {variable} has a single observed level; it cannot participate in an analysis")]
    DegenerateVariable { variable: Var },

    #[error("empty conditioning cell: {cell}")]
    SparseCell { cell: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("rank condition fails ({context}): min singular value {:.3e}, condition number {:.3e}, relative tolerance {:.3e}",
        .diagnostics.min_singular_value, .diagnostics.condition_number, .diagnostics.tolerance_used)]
    RankCondition {
        context: String,
        diagnostics: RankDiagnostics,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("no coarsening reaches invertibility; best min singular value {:.3e}", .best.min_singular_value)]
    CoarseningFailure { best: RankDiagnostics },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("not identified: {0}")]
    Identification(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("quadrature grid does not cover the kernel: row sums in [{min_row_sum:.6}, {max_row_sum:.6}]")]
    GridCoverage { min_row_sum: f64, max_row_sum: f64 },

    #[error("constraints infeasible after {draws} draws: {reason}")]
    ConstraintInfeasible { draws: usize, reason: String },

    #[error("zero-probability cell in population: {0}")]
    Support(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end: 2 for invalid
    /// input or configuration, 3 for numeric and rank failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::RankCondition { .. }
            | Error::CoarseningFailure { .. }
            | Error::DegenerateVariance(_)
            | Error::Identification(_)
            | Error::Numeric(_)
            | Error::GridCoverage { .. }
            | Error::ConstraintInfeasible { .. } => 3,
            _ => 2,
        }
    }
}
