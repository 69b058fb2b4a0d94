use thiserror::Error;

/// Errors produced by fitting, estimation and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: {reason}")]
    InvalidValue {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("rank-deficient design (condition number estimate {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("perfect separation detected (coefficient norm {coef_norm:.3e}); use an L1 penalty or truncation")]
    Separation { coef_norm: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("augmented Lagrangian budget exhausted after {iterations} inner iterations (constraint residual {residual:.3e})")]
    BudgetExhausted {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("degenerate constraint direction (KKT denominator {denominator:.3e})")]
    DegenerateDirection { denominator: f64 },

    #[error("no treated rows in {0}")]
    NoTreated(String),

    #[error("zero denominator in {0}")]
    ZeroDenominator(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
