use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is singular to working precision")]
    SingularMatrix,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("state norm {norm} leaves the admissible ball of radius {radius}")]
    DomainViolation { norm: f64, radius: f64 },
    #[error("(A, B) is not controllable (rank {rank} < {dim})")]
    NotControllable { rank: usize, dim: usize },
    #[error("closed-loop matrix is not Hurwitz")]
    NotHurwitz,
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("certificate failed: {0}")]
    CertificateFailed(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error(
        "output dynamics cannot be matched to the linear model at this state (residual {0:e})"
    )]
    InconsistentLinearization(f64),
    #[error("decrease constraint is infeasible")]
    Infeasible,
    #[error("root finding did not converge within {0} iterations")]
    IterationLimit(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
