//! Affine maps and the least-squares / Lasso solvers that fit them.

mod affine;
mod eigen;
mod lasso;
mod lstsq;

pub use affine::{AffineMap, MapFile};
pub use lasso::{
    alpha_max, fit_lasso, soft_threshold, ColumnDiagnostics, CoordinateDescent, LassoConfig, LassoFit,
};
pub use lstsq::{fit_least_squares, mean_column_energy, ridge_gradient_norm};
pub use eigen::{condition_number, symmetric_eigenvalues};
pub(crate) use lstsq::{cholesky, cholesky_solve};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("design matrix is singular; retry with ridge > 0")]
    SingularDesign,
    #[error("every design column is constant")]
    DegenerateDesign,
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("need at least 2 samples, got {n}")]
    TooFewSamples { n: usize },
    #[error("non-finite value in solver input")]
    NonFinite,
    #[error("{0}")]
    InvalidParameter(String),
}
