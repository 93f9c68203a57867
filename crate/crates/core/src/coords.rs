//! Coordinate systems for points of Graff(k,n) and the maps between them.
//!
//! An affine subspace A + b with dim A = k is carried in one of three forms:
//!
//! * orthogonal affine coordinates `[A, b0]`, an orthonormal basis of the
//!   linear part plus the displacement component orthogonal to it;
//! * Stiefel coordinates, the (n+1) x (k+1) orthonormal frame
//!   `[A, b0/s; 0, 1/s]` with `s = sqrt(1 + ||b0||^2)`, unique up to an
//!   orthogonal rotation of the first k columns;
//! * projection coordinates, the (n+1) x (n+1) orthogonal projection onto
//!   the column span of the Stiefel frame, which is unique outright.
//!
//! The last row of a canonical Stiefel frame is (0,...,0,gamma) with
//! gamma > 0. Frames whose last row (nearly) vanishes represent ideal
//! points at infinity rather than affine subspaces; they are rejected with
//! `InfeasiblePoint` and the offending scale is reported as `gamma`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{GraffError, Result};
use crate::numerics::{householder_align, sym_eig, thin_qr_orthonormalize};

/// Feasibility floor for the last-row scale gamma. Points with
/// |gamma| below this are treated as lying in the measure-zero complement
/// of Graff(k,n) inside the ambient Grassmannian.
pub const GAMMA_MIN: f64 = 1e-8;

/// Residual tolerance used by the feasibility reports.
pub const FEAS_TOL: f64 = 1e-8;

/// Orthonormality drift up to this (times 1 + matrix scale) is accepted
/// as-is; drift in (that, REORTH_MAX] is silently reorthonormalized;
/// anything beyond is rejected.
pub(crate) const DRIFT_ACCEPT: f64 = 1e-10;
const REORTH_MAX: f64 = 1e-6;

fn check_finite(m: &DMatrix<f64>, who: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(GraffError::InvalidInput(format!(
            "{who}: matrix has non-finite entries"
        )))
    }
}

fn orthonormality_drift(m: &DMatrix<f64>) -> f64 {
    let k = m.ncols();
    (m.transpose() * m - DMatrix::identity(k, k)).amax()
}

/// Orthogonal affine coordinates: an orthonormal basis `a` of the linear
/// part (n x k, possibly k = 0) and the displacement `b0` orthogonal to it.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthAffine {
    a: DMatrix<f64>,
    b0: DVector<f64>,
}

impl OrthAffine {
    /// Validates and wraps already-orthogonal coordinates.
    pub fn new(a: DMatrix<f64>, b0: DVector<f64>) -> Result<Self> {
        let (n, k) = a.shape();
        if k >= n || b0.len() != n {
            return Err(GraffError::InvalidInput(format!(
                "OrthAffine: need 0 <= k < n and |b0| = n, got A {n}x{k}, b0 of length {}",
                b0.len()
            )));
        }
        check_finite(&a, "OrthAffine")?;
        if !b0.iter().all(|x| x.is_finite()) {
            return Err(GraffError::InvalidInput(
                "OrthAffine: b0 has non-finite entries".into(),
            ));
        }
        if k > 0 {
            if orthonormality_drift(&a) > 1e-10 {
                return Err(GraffError::InvalidInput(
                    "OrthAffine: columns of A are not orthonormal to 1e-10".into(),
                ));
            }
            if (a.transpose() * &b0).amax() > 1e-10 {
                return Err(GraffError::InvalidInput(
                    "OrthAffine: b0 is not orthogonal to span(A) to 1e-10".into(),
                ));
            }
        }
        Ok(Self { a, b0 })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn k(&self) -> usize {
        self.a.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b0(&self) -> &DVector<f64> {
        &self.b0
    }
}

/// Canonical Stiefel coordinates of a point of Graff(k,n): an orthonormal
/// (n+1) x (k+1) frame whose last row is (0,...,0,gamma), gamma > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    y: DMatrix<f64>,
}

impl StiefelPoint {
    /// Validates a matrix already in canonical form. Use
    /// [`canonicalize_stiefel`] to bring a general orthonormal frame into
    /// canonical form instead.
    pub fn try_new(y: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = y.shape();
        if rows < 2 || cols < 1 || cols >= rows {
            return Err(GraffError::InvalidInput(format!(
                "StiefelPoint: need (n+1) x (k+1) with 0 <= k < n, got {rows}x{cols}"
            )));
        }
        check_finite(&y, "StiefelPoint")?;
        let drift = orthonormality_drift(&y);
        if drift > DRIFT_ACCEPT * (1.0 + y.amax()) {
            return Err(GraffError::InvalidInput(format!(
                "StiefelPoint: orthonormality drift {drift:.3e} exceeds tolerance"
            )));
        }
        let gamma = y[(rows - 1, cols - 1)];
        let off = (0..cols - 1)
            .map(|j| y[(rows - 1, j)].abs())
            .fold(0.0f64, f64::max);
        if off > 1e-10 {
            return Err(GraffError::InvalidInput(format!(
                "StiefelPoint: last row is not (0,...,0,gamma), off-entry {off:.3e}"
            )));
        }
        if gamma < GAMMA_MIN {
            return Err(GraffError::InfeasiblePoint {
                gamma,
                raw: Box::new(y),
            });
        }
        Ok(Self { y })
    }

    pub fn n(&self) -> usize {
        self.y.nrows() - 1
    }

    pub fn k(&self) -> usize {
        self.y.ncols() - 1
    }

    pub fn gamma(&self) -> f64 {
        self.y[(self.y.nrows() - 1, self.y.ncols() - 1)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.y
    }
}

/// Projection coordinates of a point of Graff(k,n): the symmetric idempotent
/// (n+1) x (n+1) matrix of rank k+1 projecting onto the embedded subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPoint {
    p: DMatrix<f64>,
    k: usize,
}

impl ProjectionPoint {
    /// Validates a raw symmetric idempotent matrix; k is inferred from the
    /// trace.
    pub fn try_new(p: DMatrix<f64>) -> Result<Self> {
        if !p.is_square() || p.nrows() < 2 {
            return Err(GraffError::InvalidInput(format!(
                "ProjectionPoint: need square (n+1) x (n+1) with n >= 1, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        check_finite(&p, "ProjectionPoint")?;
        let scale = 1.0 + p.amax();
        let sym = (&p - p.transpose()).amax();
        if sym > 1e-10 * scale {
            return Err(GraffError::NotAProjection(format!(
                "symmetry residual {sym:.3e}"
            )));
        }
        let idem = (&p * &p - &p).amax();
        if idem > 1e-10 * scale {
            return Err(GraffError::NotAProjection(format!(
                "idempotency residual {idem:.3e}"
            )));
        }
        let t = p.trace();
        let r = t.round();
        if (t - r).abs() > 1e-8 || r < 1.0 || r >= p.nrows() as f64 {
            return Err(GraffError::NotAProjection(format!(
                "trace {t} is not an integer in [1, n]"
            )));
        }
        let gamma = p[(p.nrows() - 1, p.ncols() - 1)];
        if gamma < GAMMA_MIN {
            return Err(GraffError::InfeasiblePoint {
                gamma,
                raw: Box::new(p),
            });
        }
        let k = r as usize - 1;
        Ok(Self { p, k })
    }

    pub fn n(&self) -> usize {
        self.p.nrows() - 1
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Bottom-right entry, the squared cosine scale of the point.
    pub fn gamma(&self) -> f64 {
        self.p[(self.p.nrows() - 1, self.p.ncols() - 1)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.p
    }
}

/// Outcome of a feasibility check: named constraint residuals plus the
/// last-row (or bottom-right) scale gamma. `feasible` holds exactly when
/// every residual is within tolerance and |gamma| >= GAMMA_MIN.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub gamma: f64,
    pub residuals: BTreeMap<String, f64>,
}

/// Orthonormalizes a spanning set: the output basis spans the same linear
/// part, and b0 is the component of b_raw orthogonal to it. Inputs that are
/// already orthogonal coordinates pass through unchanged.
pub fn orthogonalize_affine(a_raw: &DMatrix<f64>, b_raw: &DVector<f64>) -> Result<OrthAffine> {
    let (n, k) = a_raw.shape();
    if k >= n || b_raw.len() != n {
        return Err(GraffError::InvalidInput(format!(
            "orthogonalize_affine: need 0 <= k < n and |b| = n, got A {n}x{k}, b of length {}",
            b_raw.len()
        )));
    }
    check_finite(a_raw, "orthogonalize_affine")?;
    if !b_raw.iter().all(|x| x.is_finite()) {
        return Err(GraffError::InvalidInput(
            "orthogonalize_affine: b has non-finite entries".into(),
        ));
    }
    if k == 0 {
        return OrthAffine::new(a_raw.clone(), b_raw.clone());
    }
    let a = if orthonormality_drift(a_raw) <= 1e-12 {
        a_raw.clone()
    } else {
        thin_qr_orthonormalize(a_raw)?
    };
    // Two projection passes: the second removes the rounding left by the
    // first, keeping A^T b0 at working precision.
    let mut b0 = b_raw - &a * (a.transpose() * b_raw);
    b0 -= &a * (a.transpose() * &b0);
    OrthAffine::new(a, b0)
}

/// Builds the canonical Stiefel frame [A, b0/s; 0, 1/s], s = sqrt(1+||b0||^2).
pub fn stiefel_from_affine(c: &OrthAffine) -> StiefelPoint {
    let (n, k) = (c.n(), c.k());
    let gamma = 1.0 / (1.0 + c.b0().norm_squared()).sqrt();
    let mut y = DMatrix::zeros(n + 1, k + 1);
    y.view_mut((0, 0), (n, k)).copy_from(c.a());
    for i in 0..n {
        y[(i, k)] = c.b0()[i] * gamma;
    }
    y[(n, k)] = gamma;
    StiefelPoint { y }
}

/// Builds projection coordinates directly from affine data:
/// P = [AA^T + b0 b0^T/(1+beta), b0/(1+beta); b0^T/(1+beta), 1/(1+beta)]
/// with beta = ||b0||^2.
pub fn projection_from_affine(c: &OrthAffine) -> ProjectionPoint {
    let (n, k) = (c.n(), c.k());
    let denom = 1.0 + c.b0().norm_squared();
    let mut p = DMatrix::zeros(n + 1, n + 1);
    let mut s = c.a() * c.a().transpose();
    s.ger(1.0 / denom, c.b0(), c.b0(), 1.0);
    p.view_mut((0, 0), (n, n)).copy_from(&s);
    for i in 0..n {
        p[(i, n)] = c.b0()[i] / denom;
        p[(n, i)] = c.b0()[i] / denom;
    }
    p[(n, n)] = 1.0 / denom;
    ProjectionPoint { p, k }
}

/// P = Y Y^T; invariant under the right O(k+1) action on Y, so this is the
/// unique representation of the point.
pub fn stiefel_to_projection(y: &StiefelPoint) -> ProjectionPoint {
    ProjectionPoint {
        p: y.matrix() * y.matrix().transpose(),
        k: y.k(),
    }
}

/// Recovers canonical Stiefel coordinates as an orthonormal basis of the
/// 1-eigenspace of P, rotated into canonical form.
pub fn projection_to_stiefel(p: &ProjectionPoint) -> Result<StiefelPoint> {
    let n = p.n();
    let k = p.k();
    let e = sym_eig(p.matrix())?;
    // A projection's spectrum clusters at {0,1}; anything else means the
    // input strayed too far from the manifold to interpret.
    for i in 0..=n {
        let lam = e.lambda[i];
        if lam.abs().min((lam - 1.0).abs()) > 1e-6 {
            return Err(GraffError::NotAProjection(format!(
                "eigenvalue {lam} is not near 0 or 1"
            )));
        }
    }
    let ones = (0..=n).filter(|&i| e.lambda[i] > 0.5).count();
    if ones != k + 1 {
        return Err(GraffError::NotAProjection(format!(
            "1-eigenspace has dimension {ones}, expected {}",
            k + 1
        )));
    }
    // Eigenvalues ascend, so the 1-eigenspace is the trailing block.
    let v1 = e.v.columns(n - k, k + 1).into_owned();
    canonicalize_stiefel(&v1)
}

/// Rotates a column-orthonormal frame into canonical form, returning the
/// applied orthogonal factor Q (result = input * Q, up to the accepted
/// reorthogonalization drift).
///
/// Frames whose orthonormality drift falls in (1e-10, 1e-6] (relative to the
/// matrix scale) are reorthonormalized first; larger drift is rejected.
pub fn canonicalize_stiefel_with_rotation(
    y_raw: &DMatrix<f64>,
) -> Result<(StiefelPoint, DMatrix<f64>)> {
    let (rows, cols) = y_raw.shape();
    if rows < 2 || cols < 1 || cols >= rows {
        return Err(GraffError::InvalidInput(format!(
            "canonicalize_stiefel: need (n+1) x (k+1) with 0 <= k < n, got {rows}x{cols}"
        )));
    }
    check_finite(y_raw, "canonicalize_stiefel")?;
    let drift = orthonormality_drift(y_raw);
    let y = if drift <= DRIFT_ACCEPT * (1.0 + y_raw.amax()) {
        y_raw.clone()
    } else if drift <= REORTH_MAX {
        thin_qr_orthonormalize(y_raw)?
    } else {
        return Err(GraffError::InvalidInput(format!(
            "canonicalize_stiefel: orthonormality drift {drift:.3e} is beyond repair"
        )));
    };
    let last = y.row(rows - 1).transpose();
    let gamma = last.norm();
    if gamma <= 1e-10 {
        return Err(GraffError::InfeasiblePoint {
            gamma,
            raw: Box::new(y_raw.clone()),
        });
    }
    let q = householder_align(&last)?;
    let mut yc = &y * &q;
    // The rotation sends the last row to (0,...,0,gamma) exactly in exact
    // arithmetic; snap the rounding so downstream block reads are clean.
    for j in 0..cols - 1 {
        yc[(rows - 1, j)] = 0.0;
    }
    yc[(rows - 1, cols - 1)] = gamma;
    Ok((StiefelPoint { y: yc }, q))
}

/// [`canonicalize_stiefel_with_rotation`] without the rotation factor.
pub fn canonicalize_stiefel(y_raw: &DMatrix<f64>) -> Result<StiefelPoint> {
    canonicalize_stiefel_with_rotation(y_raw).map(|(p, _)| p)
}

/// Extracts orthogonal affine coordinates from a canonical frame:
/// A is the top-left block and b0 the last column rescaled by 1/gamma.
pub fn affine_from_stiefel(y: &StiefelPoint) -> OrthAffine {
    let (n, k) = (y.n(), y.k());
    let gamma = y.gamma();
    let a = y.matrix().view((0, 0), (n, k)).into_owned();
    let b0 = DVector::from_fn(n, |i, _| y.matrix()[(i, k)] / gamma);
    OrthAffine { a, b0 }
}

/// Affine coordinates of a projection point, via its Stiefel frame.
pub fn affine_from_projection(p: &ProjectionPoint) -> Result<OrthAffine> {
    Ok(affine_from_stiefel(&projection_to_stiefel(p)?))
}

/// Checks a raw matrix against the canonical Stiefel form. Never errors;
/// violations land in the residual map. `gamma` is the signed last-row
/// corner entry.
pub fn feasible_stiefel(y_raw: &DMatrix<f64>) -> FeasibilityReport {
    let mut residuals = BTreeMap::new();
    let (rows, cols) = y_raw.shape();
    if rows < 2 || cols < 1 || cols >= rows || !y_raw.iter().all(|x| x.is_finite()) {
        residuals.insert("shape".into(), f64::INFINITY);
        return FeasibilityReport {
            feasible: false,
            gamma: 0.0,
            residuals,
        };
    }
    let orth = orthonormality_drift(y_raw);
    let last_off = (0..cols - 1)
        .map(|j| y_raw[(rows - 1, j)].abs())
        .fold(0.0f64, f64::max);
    let gamma = y_raw[(rows - 1, cols - 1)];
    residuals.insert("orthonormality".into(), orth);
    residuals.insert("last_row".into(), last_off);
    residuals.insert("gamma_deficit".into(), (GAMMA_MIN - gamma.abs()).max(0.0));
    let feasible = orth <= FEAS_TOL && last_off <= FEAS_TOL && gamma.abs() >= GAMMA_MIN;
    FeasibilityReport {
        feasible,
        gamma,
        residuals,
    }
}

/// Checks a raw matrix against the projection-coordinate feasibility
/// conditions: symmetric, idempotent, integer trace, gamma above the floor,
/// and the linear-part conditions on the blocks S (n x n) and d (n vector):
/// L = S - dd^T/gamma must be an orthogonal projection with L d = 0.
pub fn feasible_projection(p_raw: &DMatrix<f64>) -> FeasibilityReport {
    let mut residuals = BTreeMap::new();
    let rows = p_raw.nrows();
    if !p_raw.is_square() || rows < 2 || !p_raw.iter().all(|x| x.is_finite()) {
        residuals.insert("shape".into(), f64::INFINITY);
        return FeasibilityReport {
            feasible: false,
            gamma: 0.0,
            residuals,
        };
    }
    let n = rows - 1;
    let sym = (p_raw - p_raw.transpose()).amax();
    let idem = (p_raw * p_raw - p_raw).amax();
    let t = p_raw.trace();
    let r = t.round();
    let trace_resid = if r >= 1.0 && r <= n as f64 {
        (t - r).abs()
    } else {
        f64::INFINITY
    };
    let gamma = p_raw[(n, n)];
    residuals.insert("symmetry".into(), sym);
    residuals.insert("idempotency".into(), idem);
    residuals.insert("trace".into(), trace_resid);
    residuals.insert("gamma_deficit".into(), (GAMMA_MIN - gamma).max(0.0));
    let mut feasible =
        sym <= FEAS_TOL && idem <= FEAS_TOL && trace_resid <= FEAS_TOL && gamma >= GAMMA_MIN;
    if gamma >= GAMMA_MIN {
        let s = p_raw.view((0, 0), (n, n)).into_owned();
        let d = DVector::from_fn(n, |i, _| p_raw[(i, n)]);
        let mut l = s;
        l.ger(-1.0 / gamma, &d, &d, 1.0);
        let lin_idem = (&l * &l - &l).amax();
        let lin_ann = (&l * &d).amax();
        residuals.insert("linear_idempotency".into(), lin_idem);
        residuals.insert("linear_annihilation".into(), lin_ann);
        feasible = feasible && lin_idem <= FEAS_TOL && lin_ann <= FEAS_TOL;
    }
    FeasibilityReport {
        feasible,
        gamma,
        residuals,
    }
}

/// Draws a point of Graff(k,n) by orthonormalizing an (n+1) x (k+1)
/// standard-normal matrix and canonicalizing. Deterministic per seed.
/// The measure-zero infeasible draw retries on the generator's next stream,
/// bounded at 16 attempts.
pub fn random_point(n: usize, k: usize, seed: u64) -> Result<StiefelPoint> {
    if k >= n {
        return Err(GraffError::InvalidInput(format!(
            "random_point: need 0 <= k < n, got k={k}, n={n}"
        )));
    }
    let mut last_err = None;
    for attempt in 0..16u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let g = DMatrix::from_fn(n + 1, k + 1, |_, _| rng.sample(StandardNormal));
        let frame = match thin_qr_orthonormalize(&g) {
            Ok(f) => f,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        match canonicalize_stiefel(&frame) {
            Ok(p) => return Ok(p),
            Err(e @ GraffError::InfeasiblePoint { .. }) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt ran"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pairs() -> [(usize, usize); 5] {
        // (k, n)
        [(0, 1), (1, 2), (2, 5), (3, 6), (7, 19)]
    }

    #[test]
    fn orthogonalize_passthrough_and_projection() {
        // e1 in R^2 with b = (3,1): the basis stays, b drops its span
        // component.
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let b = DVector::from_vec(vec![3.0, 1.0]);
        let c = orthogonalize_affine(&a, &b).unwrap();
        assert_eq!(c.a(), &a);
        assert_abs_diff_eq!(c.b0()[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.b0()[1], 1.0, epsilon = 1e-14);

        // 2*e1 with b = 0 just normalizes.
        let a2 = DMatrix::from_column_slice(2, 1, &[2.0, 0.0]);
        let c2 = orthogonalize_affine(&a2, &DVector::zeros(2)).unwrap();
        assert!((c2.a() - &a).amax() < 1e-14);
        assert_eq!(c2.b0().amax(), 0.0);

        // Already-orthogonal input is returned untouched.
        let a3 = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let b3 = DVector::from_vec(vec![2.0, 0.0, 0.0]);
        let c3 = orthogonalize_affine(&a3, &b3).unwrap();
        assert_eq!(c3.a(), &a3);
        assert_eq!(c3.b0(), &b3);

        let rank_def = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(matches!(
            orthogonalize_affine(&rank_def, &DVector::zeros(3)),
            Err(GraffError::RankDeficient(_))
        ));
    }

    #[test]
    fn stiefel_from_affine_examples() {
        // Linear subspace: b0 = 0 gives gamma = 1.
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let c = OrthAffine::new(a.clone(), DVector::zeros(2)).unwrap();
        let y = stiefel_from_affine(&c);
        assert_eq!(y.gamma(), 1.0);
        assert_eq!(y.matrix()[(0, 0)], 1.0);
        assert_eq!(y.matrix()[(2, 0)], 0.0);

        // n=2, k=1, A=e1, b0=e2.
        let c2 = OrthAffine::new(a, DVector::from_vec(vec![0.0, 1.0])).unwrap();
        let y2 = stiefel_from_affine(&c2);
        let s = 1.0 / 2f64.sqrt();
        let expect = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, s, 0.0, s]);
        assert!((y2.matrix() - expect).amax() < 1e-15);

        // Graff(0,1) with b0 = (1).
        let c3 = OrthAffine::new(DMatrix::zeros(1, 0), DVector::from_vec(vec![1.0])).unwrap();
        let y3 = stiefel_from_affine(&c3);
        assert_abs_diff_eq!(y3.matrix()[(0, 0)], s, epsilon = 1e-15);
        assert_abs_diff_eq!(y3.matrix()[(1, 0)], s, epsilon = 1e-15);
    }

    #[test]
    fn projection_from_affine_examples() {
        // Graff(0,1), b0 = (1): the rank-one averaging projection.
        let c = OrthAffine::new(DMatrix::zeros(1, 0), DVector::from_vec(vec![1.0])).unwrap();
        let p = projection_from_affine(&c);
        let expect = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert!((p.matrix() - &expect).amax() < 1e-15);

        // n=2, k=1, A=e1, b0=e2.
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let c2 = OrthAffine::new(a, DVector::from_vec(vec![0.0, 1.0])).unwrap();
        let p2 = projection_from_affine(&c2);
        let expect2 = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.5, 0.5]);
        assert!((p2.matrix() - &expect2).amax() < 1e-15);

        // b0 = 0: block diag(AA^T, 1).
        let a3 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let c3 = OrthAffine::new(a3.clone(), DVector::zeros(2)).unwrap();
        let p3 = projection_from_affine(&c3);
        assert_eq!(p3.matrix()[(2, 2)], 1.0);
        assert!((p3.matrix().view((0, 0), (2, 2)) - &a3 * a3.transpose()).amax() < 1e-15);

        // Agrees with the Stiefel route.
        let via = stiefel_to_projection(&stiefel_from_affine(&c2));
        assert!((p2.matrix() - via.matrix()).amax() < 1e-12);
    }

    #[test]
    fn projection_is_unique_under_frame_rotation() {
        for (k, n) in pairs() {
            let y = random_point(n, k, 31).unwrap();
            // Rotate the first k columns by a random orthogonal block; the
            // last column is fixed so the frame stays canonical.
            let mut q = DMatrix::identity(k + 1, k + 1);
            if k > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(77);
                let g = DMatrix::from_fn(k, k, |_, _| rng.sample(StandardNormal));
                let qk = thin_qr_orthonormalize(&g).unwrap();
                q.view_mut((0, 0), (k, k)).copy_from(&qk);
            }
            let yq = StiefelPoint::try_new(y.matrix() * &q).unwrap();
            let p1 = stiefel_to_projection(&y);
            let p2 = stiefel_to_projection(&yq);
            assert!((p1.matrix() - p2.matrix()).amax() < 1e-12);
            assert_abs_diff_eq!(p1.matrix().trace(), (k + 1) as f64, epsilon = 1e-10);
        }
    }

    #[test]
    fn projection_to_stiefel_examples() {
        // P = e_{n+1} e_{n+1}^T is the origin of Graff(0,n).
        let mut p = DMatrix::zeros(3, 3);
        p[(2, 2)] = 1.0;
        let pt = ProjectionPoint::try_new(p).unwrap();
        let y = projection_to_stiefel(&pt).unwrap();
        assert_eq!(y.k(), 0);
        assert_abs_diff_eq!(y.matrix()[(2, 0)], 1.0, epsilon = 1e-12);
        assert!(y.matrix()[(0, 0)].abs() < 1e-12);

        // The averaging projection recovers (1/sqrt2, 1/sqrt2).
        let p2 = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let y2 = projection_to_stiefel(&ProjectionPoint::try_new(p2).unwrap()).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(y2.matrix()[(0, 0)], s, epsilon = 1e-12);
        assert_abs_diff_eq!(y2.matrix()[(1, 0)], s, epsilon = 1e-12);

        // Not a projection: eigenvalues away from {0,1}.
        let bad = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]);
        assert!(matches!(
            ProjectionPoint::try_new(bad),
            Err(GraffError::NotAProjection(_))
        ));
    }

    #[test]
    fn canonicalize_fixes_last_row() {
        // Frame with last row (1, 0): a rotation must produce (0, gamma).
        let y_raw = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let (y, q) = canonicalize_stiefel_with_rotation(&y_raw).unwrap();
        assert!(y.gamma() > 0.0);
        assert_eq!(y.matrix()[(2, 0)], 0.0);
        assert!((y_raw * &q - y.matrix()).amax() < 1e-12);

        // Already canonical: unchanged.
        let c = OrthAffine::new(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DVector::from_vec(vec![0.0, 2.0]),
        )
        .unwrap();
        let y0 = stiefel_from_affine(&c);
        let y1 = canonicalize_stiefel(y0.matrix()).unwrap();
        assert!((y0.matrix() - y1.matrix()).amax() < 1e-14);

        // Vanishing last row: the ideal case.
        let inf = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        match canonicalize_stiefel(&inf) {
            Err(GraffError::InfeasiblePoint { gamma, raw }) => {
                assert_eq!(gamma, 0.0);
                assert_eq!(*raw, inf);
            }
            other => panic!("expected InfeasiblePoint, got {other:?}"),
        }
    }

    #[test]
    fn canonicalize_repairs_small_drift_only() {
        let y = random_point(5, 2, 3).unwrap();
        let mut drifted = y.matrix().clone();
        drifted[(0, 0)] += 1e-8;
        let fixed = canonicalize_stiefel(&drifted).unwrap();
        assert!(orthonormality_drift(fixed.matrix()) < 1e-13);

        let mut broken = y.matrix().clone();
        broken[(0, 0)] += 0.1;
        assert!(matches!(
            canonicalize_stiefel(&broken),
            Err(GraffError::InvalidInput(_))
        ));
    }

    #[test]
    fn feasibility_reports_stiefel() {
        let y = random_point(6, 3, 1).unwrap();
        let rep = feasible_stiefel(y.matrix());
        assert!(rep.feasible);
        assert!(rep.residuals["orthonormality"] < 1e-12);
        assert!(rep.residuals["last_row"] == 0.0);
        assert!(rep.gamma > 0.0);

        // gamma = 0: infeasible.
        let inf = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let rep2 = feasible_stiefel(&inf);
        assert!(!rep2.feasible);
        assert_eq!(rep2.gamma, 0.0);
        assert!(rep2.residuals["gamma_deficit"] > 0.0);

        // A^T b = 0.1 shows up as an orthonormality residual of 0.1.
        let z = (0.99f64 / 2.0).sqrt();
        let bad = DMatrix::from_row_slice(3, 2, &[1.0, 0.1, 0.0, z, 0.0, z]);
        let rep3 = feasible_stiefel(&bad);
        assert!(!rep3.feasible);
        assert_abs_diff_eq!(rep3.residuals["orthonormality"], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn feasibility_reports_projection() {
        let c = OrthAffine::new(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        )
        .unwrap();
        let p = projection_from_affine(&c);
        let rep = feasible_projection(p.matrix());
        assert!(rep.feasible, "residuals: {:?}", rep.residuals);
        assert!(rep.residuals["linear_annihilation"] < 1e-12);

        // gamma = 0: a linear-subspace projection is not a Graff point.
        let mut pl = DMatrix::zeros(3, 3);
        pl[(0, 0)] = 1.0;
        let rep2 = feasible_projection(&pl);
        assert!(!rep2.feasible);
        assert!(rep2.residuals["gamma_deficit"] > 0.0);

        // Symmetric but not idempotent.
        let half = DMatrix::from_diagonal_element(3, 3, 0.5);
        let rep3 = feasible_projection(&half);
        assert!(!rep3.feasible);
        assert_abs_diff_eq!(rep3.residuals["idempotency"], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn roundtrips_preserve_projection_matrix() {
        for (k, n) in pairs() {
            for seed in 0..20 {
                let y = random_point(n, k, seed).unwrap();
                // affine -> stiefel
                let c = affine_from_stiefel(&y);
                let y2 = stiefel_from_affine(&c);
                let p = stiefel_to_projection(&y);
                let p2 = stiefel_to_projection(&y2);
                assert!(
                    (p.matrix() - p2.matrix()).amax() < 1e-10,
                    "affine roundtrip failed for k={k}, n={n}, seed={seed}"
                );
                // stiefel -> projection -> stiefel
                let y3 = projection_to_stiefel(&p).unwrap();
                let p3 = stiefel_to_projection(&y3);
                assert!(
                    (p.matrix() - p3.matrix()).amax() < 1e-10,
                    "projection roundtrip failed for k={k}, n={n}, seed={seed}"
                );
                assert!(feasible_stiefel(y3.matrix()).feasible);
            }
        }
    }

    #[test]
    fn random_point_is_deterministic_and_feasible() {
        let a = random_point(6, 3, 42).unwrap();
        let b = random_point(6, 3, 42).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        let c = random_point(6, 3, 43).unwrap();
        assert_ne!(a.matrix(), c.matrix());
        for seed in 0..50 {
            let y = random_point(6, 3, seed).unwrap();
            assert!(feasible_stiefel(y.matrix()).feasible);
        }
        assert!(matches!(
            random_point(3, 3, 0),
            Err(GraffError::InvalidInput(_))
        ));
    }

    #[test]
    fn graff_0_1_works() {
        // Graff(0,n) is R^n itself; the smallest case exercises all the
        // k = 0 edge paths.
        let y = random_point(1, 0, 5).unwrap();
        assert_eq!(y.matrix().shape(), (2, 1));
        assert!(y.gamma() > 0.0);
        let c = affine_from_stiefel(&y);
        assert_eq!(c.k(), 0);
        let p = stiefel_to_projection(&y);
        let back = projection_to_stiefel(&p).unwrap();
        assert!((y.matrix() - back.matrix()).amax() < 1e-10);
    }
}
