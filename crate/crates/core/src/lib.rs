//! Numerical optimization on the affine Grassmannian Graff(k,n), the manifold
//! of k-dimensional affine subspaces A + b of R^n.
//!
//! Points are represented in one of two coordinate systems: Stiefel
//! coordinates, an orthonormal (n+1) x (k+1) frame with a fixed last-row
//! form, or projection coordinates, a symmetric idempotent (n+1) x (n+1)
//! matrix of trace k+1. [`coords`] builds, validates, and interchanges them.
//! [`geom_stiefel`] and [`geom_projection`] provide the Riemannian toolkit
//! on each side (tangent projections, exponential, transport, distance,
//! gradients, Hessians), [`optimize`] the iterative solvers, [`problems`]
//! two benchmark objectives with closed-form solutions, and [`checks`] the
//! self-test suites behind `graffopt check`.

pub mod checks;
pub mod coords;
pub mod error;
pub mod geom_projection;
pub mod geom_stiefel;
pub mod io;
pub mod numerics;
pub mod optimize;
pub mod problems;

pub use error::{GraffError, Result};

/// Library version, stamped into serialized reports so outputs are
/// traceable to the code that produced them.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
