use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("operator is not Hermitian (max asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("eigensolver did not converge within {iterations} iterations")]
    EigenNonConvergence { iterations: usize },

    #[error("state is rank deficient (smallest eigenvalue {min_eigenvalue:.3e})")]
    RankDeficient { min_eigenvalue: f64 },

    #[error("moments are not attainable (max residual {max_residual:.3e})")]
    InfeasibleMoments { max_residual: f64 },

    #[error("Lagrange solver diverged after {iterations} iterations (last residuals {residuals:?})")]
    SolverDiverged {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("level '{label}' is not linearly independent (Gram condition number {condition:.3e})")]
    DependentLevel { label: String, condition: f64 },

    #[error("level '{label}' is not contained in the span of the measured observables (residual {residual:.3e})")]
    NotSubspace { label: String, residual: f64 },

    #[error("levels '{smaller}' and '{larger}' are not nested")]
    NotNested { smaller: String, larger: String },

    #[error("correlation metric is singular (min eigenvalue {min_eigenvalue:.3e})")]
    SingularMetric { min_eigenvalue: f64 },

    #[error("evidence condition has no finite root: alpha is unbounded")]
    AlphaUnbounded,

    #[error("evidence condition has no sign change on the search interval")]
    NoRoot,

    #[error("optimizer did not converge (residual {residual:.3e})")]
    NonConvergence { residual: f64 },

    #[error("covariance spread is degenerate (trace {trace:.3e})")]
    DegenerateSpread { trace: f64 },

    #[error("closed-form inverse temperature requires a uniform reference state")]
    NonUniformReference,

    #[error("inverse temperature bracket search failed for target energy {target}")]
    BisectionFailed { target: f64 },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Validation failures (as opposed to numerical failures).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::NotHermitian { .. }
                | Error::NotSquare { .. }
                | Error::DimensionTooSmall(_)
                | Error::DimMismatch { .. }
                | Error::InvalidState(_)
                | Error::InfeasibleMoments { .. }
                | Error::DependentLevel { .. }
                | Error::NotSubspace { .. }
                | Error::NotNested { .. }
                | Error::InvalidDataset(_)
                | Error::InvalidArgument(_)
        )
    }
}
