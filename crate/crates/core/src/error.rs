use nalgebra::DMatrix;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, GraffError>;

/// Everything that can go wrong in this crate.
///
/// Numerical routines distinguish between caller mistakes (`InvalidInput`,
/// `BasePointMismatch`), genuine rank/conditioning failures (`SingularMatrix`,
/// `RankDeficient`, `GeodesicSingular`), and points that left the feasible
/// set (`InfeasiblePoint`, `NotAProjection`). Solvers report soft failures
/// through their run reports; errors here are hard stops.
#[derive(Debug, thiserror::Error)]
pub enum GraffError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is singular or numerically singular: {0}")]
    SingularMatrix(String),

    #[error("vector has norm below the zero threshold")]
    ZeroVector,

    #[error("matrix is rank deficient: {0}")]
    RankDeficient(String),

    /// The point's last-row scale `gamma` fell at or below the feasibility
    /// floor, so it does not represent an affine subspace. Carries the raw
    /// matrix so callers can inspect or correct it.
    #[error("infeasible point: |gamma| = {gamma:.3e} is below the feasibility floor")]
    InfeasiblePoint { gamma: f64, raw: Box<DMatrix<f64>> },

    #[error("matrix is not an orthogonal projection: {0}")]
    NotAProjection(String),

    #[error("tangent vectors are attached to different base points")]
    BasePointMismatch,

    /// Two subspaces with an orthogonal pair of directions have no unique
    /// minimizing geodesic; carries the smallest singular value of Y1^T Y2.
    #[error("geodesic is not unique: smallest singular value {0:.3e}")]
    GeodesicSingular(f64),

    #[error("line search failed: {0}")]
    LineSearchFailed(String),

    /// A closed-form solution exists but does not lie on Graff(k,n).
    #[error("closed-form solution is infeasible: {0}")]
    OracleInfeasible(String),

    /// A formula evaluated verbatim failed its own self-check; the message
    /// records the residuals that exposed it.
    #[error("formula self-check failed: {0}")]
    FormulaInconsistent(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
