//! Riemannian geometry in projection coordinates.
//!
//! A tangent vector at a projection point P is a symmetric matrix of the
//! form [P, Omega] with Omega skew; equivalently any symmetric Delta with
//! P Delta + Delta P = Delta. The double bracket W -> [P, [P, sym(W)]] is
//! the orthogonal projector onto that space under the trace inner product.
//!
//! Exponential map and parallel transport go through Stiefel coordinates:
//! convert, move, convert back. The correspondence between the two tangent
//! representations is Delta_S = Delta_P Y and Delta_P = Delta_S Y^T +
//! Y Delta_S^T; note it scales norms, ||Delta_P||^2 = 2 ||Delta_S||^2, so
//! the two coordinate systems carry genuinely different metrics. A native
//! closed-form transport in projection coordinates is deliberately out of
//! scope, and the closed-form exponential kept in [`exp_p_literal`] fails
//! its own consistency check (see there); the conversion route is the
//! default for both.

use nalgebra::DMatrix;

use crate::coords::{
    projection_to_stiefel, stiefel_to_projection, ProjectionPoint, StiefelPoint, GAMMA_MIN,
};
use crate::error::{GraffError, Result};
use crate::geom_stiefel::{self, TangentStiefel};
use crate::numerics::sym_eig;

/// Frobenius-scale tolerance for exact structural identities.
const STRUCT_TOL: f64 = 1e-10;
/// Looser tolerance for derived identities (tangency under PΔ + ΔP = Δ).
const TANGENT_TOL: f64 = 1e-8;

fn sym(w: &DMatrix<f64>) -> DMatrix<f64> {
    (w + w.transpose()) * 0.5
}

fn commutator(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b - b * a
}

/// Shared base check; projection points are unique representatives, so
/// entrywise agreement is the right notion.
pub fn same_base_p(a: &ProjectionPoint, b: &ProjectionPoint) -> bool {
    a.matrix().shape() == b.matrix().shape() && (a.matrix() - b.matrix()).amax() <= 1e-12
}

/// Tangent vector at a projection point: symmetric Delta with
/// P Delta + Delta P = Delta, optionally carrying the skew generator Omega
/// it was built from (Delta = [P, Omega]).
#[derive(Debug, Clone)]
pub struct TangentProjection {
    base: ProjectionPoint,
    delta: DMatrix<f64>,
    omega: Option<DMatrix<f64>>,
}

impl TangentProjection {
    pub fn try_new(base: ProjectionPoint, delta: DMatrix<f64>) -> Result<Self> {
        let np1 = base.matrix().nrows();
        if delta.shape() != (np1, np1) {
            return Err(GraffError::InvalidInput(format!(
                "tangent shape {:?} does not match base {np1}x{np1}",
                delta.shape()
            )));
        }
        let scale = 1.0 + delta.amax();
        let asym = (&delta - delta.transpose()).amax();
        if asym > STRUCT_TOL * scale {
            return Err(GraffError::InvalidInput(format!(
                "projection tangent not symmetric: residual {asym:.3e}"
            )));
        }
        let p = base.matrix();
        let resid = (p * &delta + &delta * p - &delta).amax();
        if resid > TANGENT_TOL * scale {
            return Err(GraffError::InvalidInput(format!(
                "not tangent at base: |P*D + D*P - D| = {resid:.3e}"
            )));
        }
        Ok(Self {
            base,
            delta,
            omega: None,
        })
    }

    pub(crate) fn from_parts_unchecked(base: ProjectionPoint, delta: DMatrix<f64>) -> Self {
        Self {
            base,
            delta,
            omega: None,
        }
    }

    pub fn base(&self) -> &ProjectionPoint {
        &self.base
    }

    pub fn delta(&self) -> &DMatrix<f64> {
        &self.delta
    }

    pub fn norm(&self) -> f64 {
        self.delta.norm()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            base: self.base.clone(),
            delta: &self.delta * c,
            omega: self.omega.as_ref().map(|w| w * c),
        }
    }

    /// A skew generator for this tangent: the stored Omega if the vector
    /// was built from one, otherwise [P, Delta], which always satisfies
    /// [P, [P, Delta]] = Delta on tangent vectors.
    pub fn generator(&self) -> DMatrix<f64> {
        match &self.omega {
            Some(w) => w.clone(),
            None => commutator(self.base.matrix(), &self.delta),
        }
    }
}

/// Tangent vector from a skew generator: Delta = P Omega - Omega P.
pub fn tangent_from_skew(p: &ProjectionPoint, omega: &DMatrix<f64>) -> Result<TangentProjection> {
    let np1 = p.matrix().nrows();
    if omega.shape() != (np1, np1) {
        return Err(GraffError::InvalidInput(format!(
            "generator shape {:?} does not match base {np1}x{np1}",
            omega.shape()
        )));
    }
    let skew_resid = (omega + omega.transpose()).amax();
    if skew_resid > STRUCT_TOL * (1.0 + omega.amax()) {
        return Err(GraffError::InvalidInput(format!(
            "generator not skew-symmetric: residual {skew_resid:.3e}"
        )));
    }
    let delta = commutator(p.matrix(), omega);
    Ok(TangentProjection {
        base: p.clone(),
        delta,
        omega: Some(omega.clone()),
    })
}

/// Orthogonal projection of an arbitrary matrix onto the tangent space at
/// P: the double bracket [P, [P, sym(W)]]. In the frame where P is
/// diag(I, 0) this keeps exactly the off-diagonal blocks of sym(W).
pub fn tangent_project_p(p: &ProjectionPoint, w: &DMatrix<f64>) -> TangentProjection {
    let np1 = p.matrix().nrows();
    assert_eq!(
        w.shape(),
        (np1, np1),
        "tangent_project_p: shape mismatch {:?} vs {np1}x{np1}",
        w.shape()
    );
    let s = sym(w);
    let inner = commutator(p.matrix(), &s);
    let delta = commutator(p.matrix(), &inner);
    TangentProjection {
        base: p.clone(),
        delta,
        omega: Some(inner),
    }
}

/// Deterministic pseudo-random tangent from seeded normal entries of a
/// skew generator.
pub fn random_tangent_p(
    p: &ProjectionPoint,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> TangentProjection {
    use rand::Rng;
    let np1 = p.matrix().nrows();
    let mut omega = DMatrix::zeros(np1, np1);
    for i in 0..np1 {
        for j in (i + 1)..np1 {
            let x: f64 = rng.sample(rand_distr::StandardNormal);
            omega[(i, j)] = x;
            omega[(j, i)] = -x;
        }
    }
    tangent_from_skew(p, &omega).expect("constructed generator is skew")
}

/// Riemannian metric g(D1, D2) = tr(D1^T D2).
pub fn metric_p(t1: &TangentProjection, t2: &TangentProjection) -> Result<f64> {
    if !same_base_p(&t1.base, &t2.base) {
        return Err(GraffError::BasePointMismatch);
    }
    Ok(t1.delta.dot(&t2.delta))
}

/// Riemannian gradient: the double bracket [P, [P, f_P]] of the Euclidean
/// derivative. f_P is symmetrized first; for derivatives of functions of a
/// symmetric argument this is a no-op.
pub fn rgrad_p(p: &ProjectionPoint, fp: &DMatrix<f64>) -> TangentProjection {
    tangent_project_p(p, fp)
}

/// Converts a projection tangent to Stiefel form: Y from the base point
/// and Delta_S = Delta_P Y. This is the differential of P = Y Y^T; note it
/// halves squared norms (see module docs).
pub fn tangent_to_stiefel(t: &TangentProjection) -> Result<(StiefelPoint, TangentStiefel)> {
    let y = projection_to_stiefel(&t.base)?;
    let delta_s = &t.delta * y.matrix();
    let h = TangentStiefel::try_new(y.clone(), delta_s)?;
    Ok((y, h))
}

/// Converts a Stiefel tangent to projection form: Delta_P = Delta Y^T +
/// Y Delta^T at P = Y Y^T.
pub fn tangent_from_stiefel(t: &TangentStiefel) -> TangentProjection {
    let p = stiefel_to_projection(t.base());
    let y = t.base().matrix();
    let delta_p = t.delta() * y.transpose() + y * t.delta().transpose();
    TangentProjection {
        base: p,
        delta: sym(&delta_p),
        omega: None,
    }
}

/// Exponential map at time `t` along the tangent: convert to Stiefel
/// coordinates, run the Stiefel geodesic, convert back. The result agrees
/// with the curve P(t) = Y(t) Y(t)^T exactly, and in particular has the
/// tangent's Delta as initial velocity.
pub fn exp_p(tangent: &TangentProjection, t: f64) -> Result<ProjectionPoint> {
    if t == 0.0 {
        return Ok(tangent.base.clone());
    }
    let (y, h) = tangent_to_stiefel(tangent)?;
    let endpoint = geom_stiefel::exp(&y, &h, t)?;
    Ok(stiefel_to_projection(&endpoint))
}

/// Rotation to the block frame of P: an orthogonal Theta with
/// Theta P Theta^T = diag(I_{k+1}, 0), rows of the 1-eigenspace first.
/// Built from the symmetric eigendecomposition, so it is deterministic for
/// a given P.
pub(crate) fn rotation_to_block_frame(p: &ProjectionPoint) -> Result<DMatrix<f64>> {
    let eig = sym_eig(p.matrix())?;
    let np1 = p.matrix().nrows();
    let kp1 = p.k() + 1;
    let mut theta = DMatrix::zeros(np1, np1);
    // Eigenvalues come back ascending: the trailing k+1 columns span the
    // 1-eigenspace and become the leading rows of Theta.
    for i in 0..kp1 {
        theta
            .row_mut(i)
            .copy_from(&eig.v.column(np1 - kp1 + i).transpose());
    }
    for i in kp1..np1 {
        theta
            .row_mut(i)
            .copy_from(&eig.v.column(i - kp1).transpose());
    }
    Ok(theta)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0 + x.powi(4) / 120.0
    } else {
        x.sin() / x
    }
}

/// Applies s -> f(sqrt(lambda)) to a symmetric positive semidefinite Gram
/// matrix via its eigendecomposition, clamping rounding-negative
/// eigenvalues to zero.
fn gram_fun(g: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let eig = sym_eig(&sym(g))?;
    let dim = g.nrows();
    let mut out = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let s = eig.lambda[j].max(0.0).sqrt();
        let col = eig.v.column(j);
        out.ger(f(s), &col, &col, 1.0);
    }
    Ok(out)
}

/// Closed-form exponential evaluated verbatim in the rotated block frame:
/// with Theta P Theta^T = diag(I, 0) and Z the top-right block of
/// Theta [Delta, P] Theta^T,
///
///   P+ = 1/2 I + Theta^T [ 1/2 cos(2 sqrt(Z Z^T)),  -sinc(2 sqrt(Z Z^T)) Z ;
///                          -Z^T sinc(2 sqrt(Z Z^T)), -1/2 sin(2 sqrt(Z^T Z)) ] Theta.
///
/// As written this does not reduce to P at Delta = 0 (the complement block
/// evaluates to 1/2 rather than 0 and the trace comes out (n+k)/2 + 1
/// instead of k+1), so the result is checked for symmetry, idempotency,
/// trace, and feasibility, and the expected failure surfaces as
/// `FormulaInconsistent`. Use [`exp_p`] for actual geodesics; this entry
/// point exists so the diagnostic suite can document the discrepancy.
pub fn exp_p_literal(tangent: &TangentProjection, t: f64) -> Result<ProjectionPoint> {
    let p = &tangent.base;
    let np1 = p.matrix().nrows();
    let kp1 = p.k() + 1;
    let theta = rotation_to_block_frame(p)?;
    let scaled = &tangent.delta * t;
    let bracket = commutator(&scaled, p.matrix());
    let rotated = &theta * bracket * theta.transpose();
    let z = rotated.view((0, kp1), (kp1, np1 - kp1)).into_owned();

    let zzt = &z * z.transpose();
    let ztz = z.transpose() * &z;
    let cos_block = gram_fun(&zzt, |s| (2.0 * s).cos())? * 0.5;
    let sinc_z = gram_fun(&zzt, |s| sinc(2.0 * s))? * &z;
    let sin_block = gram_fun(&ztz, |s| (2.0 * s).sin())? * 0.5;

    let mut inner = DMatrix::zeros(np1, np1);
    inner.view_mut((0, 0), (kp1, kp1)).copy_from(&cos_block);
    inner
        .view_mut((0, kp1), (kp1, np1 - kp1))
        .copy_from(&(-&sinc_z));
    inner
        .view_mut((kp1, 0), (np1 - kp1, kp1))
        .copy_from(&(-sinc_z.transpose()));
    inner
        .view_mut((kp1, kp1), (np1 - kp1, np1 - kp1))
        .copy_from(&(-sin_block));

    let candidate = DMatrix::identity(np1, np1) * 0.5 + theta.transpose() * inner * theta;

    let scale = 1.0 + candidate.amax();
    let sym_resid = (&candidate - candidate.transpose()).amax();
    let idem_resid = (&candidate * &candidate - &candidate).norm();
    let trace_resid = (candidate.trace() - kp1 as f64).abs();
    let gamma = candidate[(np1 - 1, np1 - 1)].max(0.0).sqrt();
    if sym_resid > STRUCT_TOL * scale
        || idem_resid > 1e-9 * scale
        || trace_resid > 1e-8
        || gamma < GAMMA_MIN
    {
        return Err(GraffError::FormulaInconsistent(format!(
            "block-form exponential self-check failed: symmetry {sym_resid:.3e}, \
             idempotency {idem_resid:.3e}, trace deviation {trace_resid:.3e}, gamma {gamma:.3e}"
        )));
    }
    ProjectionPoint::try_new(candidate)
}

/// Riemannian Hessian as a linear map on the tangent space:
///
///   H(Delta) = Pi_P( f_PP(Delta) + S~ Delta + Delta S~ ),
///   S~ = sym(f_P) - 2 P sym(f_P) P,
///
/// the tangential derivative of the gradient field [P, [P, f_P]] along
/// Delta. The S~ terms carry the curvature contribution of the diagonal
/// blocks of f_P, which a bracket of the projected gradient alone cannot
/// see; [`hess_p_literal`] keeps the bracket-only variant for diagnostics.
/// Validated against second finite differences along exp_p curves.
pub fn hess_p(
    p: &ProjectionPoint,
    fp: &DMatrix<f64>,
    fpp_action: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    delta: &TangentProjection,
) -> Result<TangentProjection> {
    if !same_base_p(p, &delta.base) {
        return Err(GraffError::BasePointMismatch);
    }
    let s = sym(fp);
    let stilde = &s - (p.matrix() * &s * p.matrix()) * 2.0;
    let second = sym(&fpp_action(&delta.delta));
    let ambient = second + &stilde * &delta.delta + &delta.delta * stilde;
    Ok(tangent_project_p(p, &ambient))
}

/// Hessian as a bilinear form: g(H(Delta), Delta').
pub fn hess_p_bilinear(
    p: &ProjectionPoint,
    fp: &DMatrix<f64>,
    fpp_action: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    d1: &TangentProjection,
    d2: &TangentProjection,
) -> Result<f64> {
    let h = hess_p(p, fp, fpp_action, d1)?;
    metric_p(&h, d2)
}

/// Bracket-only Hessian variant,
///
///   Pi_P(f_PP(Delta)) - 1/2 [P, [G, Delta]] - 1/2 [G, [P, Delta]],
///
/// with G the Riemannian gradient. Both correction terms evaluate to
/// block-diagonal matrices in the frame of P, so the map does not land in
/// the tangent space and vanishes there under projection; it disagrees
/// with [`hess_p`] away from critical points and fails finite-difference
/// checks. Kept for the diagnostic suite; returns the raw matrix.
pub fn hess_p_literal(
    p: &ProjectionPoint,
    fp: &DMatrix<f64>,
    fpp_action: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    delta: &TangentProjection,
) -> Result<DMatrix<f64>> {
    if !same_base_p(p, &delta.base) {
        return Err(GraffError::BasePointMismatch);
    }
    let g = rgrad_p(p, fp);
    let projected_second = tangent_project_p(p, &fpp_action(&delta.delta));
    let term1 = commutator(p.matrix(), &commutator(&g.delta, &delta.delta));
    let term2 = commutator(&g.delta, &commutator(p.matrix(), &delta.delta));
    Ok(projected_second.delta - term1 * 0.5 - term2 * 0.5)
}

/// Parallel transport of `delta` along the geodesic from the shared base
/// with velocity `along`, carried out in Stiefel coordinates and converted
/// back. Isometric with respect to the projection metric because both
/// conversion legs scale norms by the same constant.
pub fn transport_p(
    along: &TangentProjection,
    t: f64,
    delta: &TangentProjection,
) -> Result<TangentProjection> {
    if !same_base_p(&along.base, &delta.base) {
        return Err(GraffError::BasePointMismatch);
    }
    if t == 0.0 {
        return Ok(delta.clone());
    }
    let (y, h) = tangent_to_stiefel(along)?;
    let d = TangentStiefel::try_new(y.clone(), &delta.delta * y.matrix())?;
    let moved = geom_stiefel::transport(&y, &h, t, &d)?;
    Ok(tangent_from_stiefel(&moved))
}
