//! Riemannian geometry of Graff(k,n) in Stiefel coordinates.
//!
//! Points are canonical frames Y (see [`crate::coords`]); tangent vectors at
//! Y are (n+1) x (k+1) matrices with Y^T Delta = 0 under the trace metric
//! g(D1, D2) = tr(D1^T D2). Geodesics, parallel transport, and distance all
//! reduce to small SVDs:
//!
//! * the geodesic through Y with velocity H = U Sigma V^T is
//!   Y(t) = Y V cos(t Sigma) V^T + U sin(t Sigma) V^T;
//! * transport along it of any tangent D is
//!   D + (-Y V sin(t Sigma) + U (cos(t Sigma) - I)) U^T D;
//! * the distance between two points is the 2-norm of the affine principal
//!   angles theta_i = arccos sigma_i(Y1^T Y2).
//!
//! Everything is deterministic: the factors come from [`crate::numerics`]
//! with its pinned ordering and sign conventions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::coords::{canonicalize_stiefel, canonicalize_stiefel_with_rotation, StiefelPoint};
use crate::error::{GraffError, Result};
use crate::numerics::condensed_svd;

/// Cross-Gram singular values above this switch the principal-angle
/// computation from arccos to the sine-residual branch, which stays
/// accurate for tiny angles (arccos loses half the digits near 1).
const COS_BRANCH_MAX: f64 = 0.99;

fn same_base(a: &StiefelPoint, b: &StiefelPoint) -> bool {
    a.matrix().shape() == b.matrix().shape() && (a.matrix() - b.matrix()).amax() <= 1e-12
}

/// A tangent vector Delta at a base point, Y^T Delta = 0.
#[derive(Debug, Clone)]
pub struct TangentStiefel {
    base: StiefelPoint,
    delta: DMatrix<f64>,
}

impl TangentStiefel {
    /// Wraps a matrix that is already tangent at `base` (residual checked
    /// to 1e-8 relative). Prefer [`tangent_project`] for arbitrary input.
    pub fn try_new(base: StiefelPoint, delta: DMatrix<f64>) -> Result<Self> {
        if delta.shape() != base.matrix().shape() {
            return Err(GraffError::InvalidInput(format!(
                "TangentStiefel: shape {:?} does not match base {:?}",
                delta.shape(),
                base.matrix().shape()
            )));
        }
        let resid = (base.matrix().transpose() * &delta).amax();
        if resid > 1e-8 * (1.0 + delta.amax()) {
            return Err(GraffError::InvalidInput(format!(
                "TangentStiefel: tangency residual {resid:.3e}"
            )));
        }
        Ok(Self { base, delta })
    }

    pub(crate) fn from_parts_unchecked(base: StiefelPoint, delta: DMatrix<f64>) -> Self {
        Self { base, delta }
    }

    pub fn base(&self) -> &StiefelPoint {
        &self.base
    }

    pub fn delta(&self) -> &DMatrix<f64> {
        &self.delta
    }

    pub fn norm(&self) -> f64 {
        self.delta.norm()
    }

    /// Same base, delta scaled by c.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            base: self.base.clone(),
            delta: self.delta.scale(c),
        }
    }
}

/// Projects an arbitrary ambient matrix onto the tangent space at Y:
/// Delta = Z - Y (Y^T Z).
///
/// The projector is applied twice. Frames are accepted with orthonormality
/// drift up to 1e-10, and a single pass leaves a normal residue of order
/// drift * |Z|; near a minimizer, where the projected gradient is many
/// orders smaller than |Z|, that residue would dominate the direction and
/// stall the line search. The second pass shrinks it to order drift^2 * |Z|.
pub fn tangent_project(y: &StiefelPoint, z: &DMatrix<f64>) -> TangentStiefel {
    assert_eq!(
        z.shape(),
        y.matrix().shape(),
        "tangent_project: shape mismatch"
    );
    let mut delta = z - y.matrix() * (y.matrix().transpose() * z);
    delta -= y.matrix() * (y.matrix().transpose() * &delta);
    TangentStiefel {
        base: y.clone(),
        delta,
    }
}

/// A standard-normal ambient matrix projected to the tangent space at y.
pub fn random_tangent(y: &StiefelPoint, rng: &mut ChaCha8Rng) -> TangentStiefel {
    let (rows, cols) = y.matrix().shape();
    let z = DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
    tangent_project(y, &z)
}

/// The trace inner product tr(D1^T D2) of two tangents at the same point.
pub fn metric(t1: &TangentStiefel, t2: &TangentStiefel) -> Result<f64> {
    if !same_base(&t1.base, &t2.base) {
        return Err(GraffError::BasePointMismatch);
    }
    Ok(t1.delta.dot(&t2.delta))
}

/// The geodesic t -> Y V cos(t Sigma) V^T + U sin(t Sigma) V^T through
/// `base` with initial velocity U Sigma V^T.
///
/// Sigma is descending and padded with exact zeros where the velocity is
/// rank deficient; the matching columns of U are a deterministic orthonormal
/// completion (orthogonal to the base's span whenever dimensions permit) and
/// never contribute, since they only ever enter scaled by sin(t*0) or
/// cos(t*0) - 1.
#[derive(Debug, Clone)]
pub struct GeodesicStiefel {
    base: StiefelPoint,
    yv: DMatrix<f64>,
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v: DMatrix<f64>,
}

/// Replaces columns `r..` of `u` with unit vectors orthogonal to the kept
/// columns, preferring directions also orthogonal to span(y) while the
/// ambient dimension allows it. Greedy over coordinate vectors, so the
/// result is deterministic.
fn complete_columns(y: &DMatrix<f64>, u: &mut DMatrix<f64>, r: usize) {
    let dim = u.nrows();
    for col in r..u.ncols() {
        let mut chosen: Option<(f64, DVector<f64>)> = None;
        for avoid_y in [true, false] {
            for j in 0..dim {
                let mut v = DVector::zeros(dim);
                v[j] = 1.0;
                for _ in 0..2 {
                    if avoid_y {
                        v -= y * (y.transpose() * &v);
                    }
                    for prev in 0..col {
                        let c = u.column(prev).dot(&v);
                        v.axpy(-c, &u.column(prev).into_owned(), 1.0);
                    }
                }
                let nrm = v.norm();
                if chosen.as_ref().is_none_or(|(best, _)| nrm > best + 1e-12) {
                    chosen = Some((nrm, v));
                }
            }
            if chosen.as_ref().is_some_and(|(nrm, _)| *nrm > 1e-6) {
                break;
            }
            // No room orthogonal to span(y): k+1 exceeds the codimension
            // n-k, so the padding must overlap the span. Retry without
            // avoiding it.
            chosen = None;
        }
        let (nrm, v) = chosen.expect("completion always finds a direction");
        u.set_column(col, &v.unscale(nrm));
    }
}

impl GeodesicStiefel {
    /// Geodesic with initial point y and initial velocity h.
    pub fn new(y: &StiefelPoint, h: &TangentStiefel) -> Result<Self> {
        if !same_base(y, &h.base) {
            return Err(GraffError::BasePointMismatch);
        }
        let f = condensed_svd(&h.delta)?;
        Ok(Self::from_velocity_factors(y.clone(), f.u, f.s, f.v))
    }

    /// Assembles a geodesic from precomputed velocity factors U, Sigma, V
    /// (velocity = U diag(Sigma) V^T, Sigma descending).
    pub(crate) fn from_velocity_factors(
        base: StiefelPoint,
        mut u: DMatrix<f64>,
        mut sigma: DVector<f64>,
        v: DMatrix<f64>,
    ) -> Self {
        let tol = 1e-12 * sigma[0].max(1.0);
        let r = (0..sigma.len()).take_while(|&i| sigma[i] > tol).count();
        for i in r..sigma.len() {
            sigma[i] = 0.0;
        }
        complete_columns(base.matrix(), &mut u, r);
        let yv = base.matrix() * &v;
        Self {
            base,
            yv,
            u,
            sigma,
            v,
        }
    }

    pub fn base(&self) -> &StiefelPoint {
        &self.base
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Largest rotation rate; the curve first leaves the coordinate chart
    /// no earlier than t = pi / (2 sigma_max).
    pub fn sigma_max(&self) -> f64 {
        self.sigma[0]
    }

    /// The raw orthonormal frame at parameter t (not canonicalized, may
    /// represent a point outside Graff).
    pub fn point_raw(&self, t: f64) -> DMatrix<f64> {
        if t == 0.0 {
            return self.base.matrix().clone();
        }
        let kp1 = self.sigma.len();
        let mut left = self.yv.clone();
        let mut right = self.u.clone();
        for j in 0..kp1 {
            let a = t * self.sigma[j];
            left.column_mut(j).scale_mut(a.cos());
            right.column_mut(j).scale_mut(a.sin());
        }
        (left + right) * self.v.transpose()
    }

    /// The frame at t, canonicalized; errors with `InfeasiblePoint`
    /// (carrying the raw frame) when the curve has left Graff(k,n).
    pub fn point(&self, t: f64) -> Result<StiefelPoint> {
        if t == 0.0 {
            return Ok(self.base.clone());
        }
        canonicalize_stiefel(&self.point_raw(t))
    }

    /// Velocity of the curve at t, expressed in the raw frame at t.
    pub fn velocity_raw(&self, t: f64) -> DMatrix<f64> {
        let kp1 = self.sigma.len();
        let mut left = self.yv.clone();
        let mut right = self.u.clone();
        for j in 0..kp1 {
            let a = t * self.sigma[j];
            left.column_mut(j).scale_mut(-a.sin() * self.sigma[j]);
            right.column_mut(j).scale_mut(a.cos() * self.sigma[j]);
        }
        (left + right) * self.v.transpose()
    }

    /// Parallel transport of a tangent matrix from t = 0 to t, expressed in
    /// the raw frame at t.
    pub fn transport_raw(&self, t: f64, delta: &DMatrix<f64>) -> DMatrix<f64> {
        if t == 0.0 {
            return delta.clone();
        }
        let kp1 = self.sigma.len();
        let w = self.u.transpose() * delta;
        let mut left = self.yv.clone();
        let mut right = self.u.clone();
        for j in 0..kp1 {
            let a = t * self.sigma[j];
            left.column_mut(j).scale_mut(-a.sin());
            right.column_mut(j).scale_mut(a.cos() - 1.0);
        }
        delta + (left + right) * w
    }
}

/// Exponential map: the point at parameter t of the geodesic from Y with
/// velocity H. The result is canonical; leaving the chart surfaces as
/// `InfeasiblePoint` with the raw frame attached.
pub fn exp(y: &StiefelPoint, h: &TangentStiefel, t: f64) -> Result<StiefelPoint> {
    if t == 0.0 {
        if !same_base(y, &h.base) {
            return Err(GraffError::BasePointMismatch);
        }
        return Ok(y.clone());
    }
    GeodesicStiefel::new(y, h)?.point(t)
}

/// Parallel transport of `delta` along the geodesic from Y with velocity H,
/// re-expressed at the canonicalized endpoint.
pub fn transport(
    y: &StiefelPoint,
    h: &TangentStiefel,
    t: f64,
    delta: &TangentStiefel,
) -> Result<TangentStiefel> {
    if !same_base(y, &delta.base) {
        return Err(GraffError::BasePointMismatch);
    }
    if t == 0.0 {
        if !same_base(y, &h.base) {
            return Err(GraffError::BasePointMismatch);
        }
        return Ok(delta.clone());
    }
    let geo = GeodesicStiefel::new(y, h)?;
    let raw_pt = geo.point_raw(t);
    let moved = geo.transport_raw(t, &delta.delta);
    // The canonicalizing rotation acts on the whole frame, so it must act
    // on transported tangents too.
    let (endpoint, q) = canonicalize_stiefel_with_rotation(&raw_pt)?;
    Ok(TangentStiefel {
        base: endpoint,
        delta: moved * q,
    })
}

/// Affine principal angles and vectors of a pair of points, from the SVD
/// Y1^T Y2 = U diag(sigma) V^T: theta_i = arccos(sigma_i) ascending,
/// Pvecs = Y1 U, Qvecs = Y2 V.
#[derive(Debug, Clone)]
pub struct PrincipalDecomposition {
    pub theta: DVector<f64>,
    pub pvecs: DMatrix<f64>,
    pub qvecs: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

/// Principal angles between the column spans of two orthonormal frames.
/// The angle for sigma close to 1 comes from the sine of the residual
/// (I - Y1 Y1^T) Y2 v_i instead of arccos, keeping tiny angles accurate;
/// both branches agree to working precision at the switch.
fn angles(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(DVector<f64>, crate::numerics::CondensedSvd)> {
    let m = a.transpose() * b;
    let f = condensed_svd(&m)?;
    let kp1 = f.s.len();
    let mut theta = DVector::zeros(kp1);
    let mut resid: Option<DMatrix<f64>> = None;
    for i in 0..kp1 {
        let sigma = f.s[i].clamp(0.0, 1.0);
        theta[i] = if sigma <= COS_BRANCH_MAX {
            sigma.acos()
        } else {
            let r = resid.get_or_insert_with(|| b * &f.v - a * (&m * &f.v));
            r.column(i).norm().clamp(0.0, 1.0).asin()
        };
    }
    Ok((theta, f))
}

pub(crate) fn distance_raw(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    angles(a, b).map(|(theta, _)| theta.norm())
}

/// Geodesic distance d = sqrt(sum theta_i^2) together with the principal
/// decomposition that produced it.
pub fn distance(y1: &StiefelPoint, y2: &StiefelPoint) -> Result<(f64, PrincipalDecomposition)> {
    if y1.matrix().shape() != y2.matrix().shape() {
        return Err(GraffError::InvalidInput(
            "distance: points live on different Graff(k,n)".into(),
        ));
    }
    let (theta, f) = angles(y1.matrix(), y2.matrix())?;
    let d = theta.norm();
    let pvecs = y1.matrix() * &f.u;
    let qvecs = y2.matrix() * &f.v;
    Ok((
        d,
        PrincipalDecomposition {
            theta,
            pvecs,
            qvecs,
            u: f.u,
            v: f.v,
        },
    ))
}

/// Velocity factors (U, Theta, V) of the minimizing geodesic from frame `a`
/// to frame `b`: (I - a a^T) b (a^T b)^{-1} = U tan(Theta) V^T.
fn connecting_factors(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let m = a.transpose() * b;
    let fm = condensed_svd(&m)?;
    let kp1 = fm.s.len();
    let sigma_min = fm.s[kp1 - 1];
    if sigma_min <= 1e-10 {
        return Err(GraffError::GeodesicSingular(sigma_min));
    }
    // m^{-1} from the same factorization keeps the computation deterministic.
    let mut minv = fm.v.clone();
    for j in 0..kp1 {
        minv.column_mut(j).scale_mut(1.0 / fm.s[j]);
    }
    let minv = minv * fm.u.transpose();
    let t = (b - a * &m) * minv;
    let ft = condensed_svd(&t)?;
    let theta = DVector::from_fn(kp1, |i, _| ft.s[i].atan());
    Ok((ft.u, theta, ft.v))
}

/// The minimizing geodesic from Y1 to Y2: gamma(0) = Y1, gamma(1) spans Y2,
/// and its length equals distance(Y1, Y2). Errors with `GeodesicSingular`
/// when an angle reaches pi/2 and the minimizer stops being unique.
pub fn geodesic_between(y1: &StiefelPoint, y2: &StiefelPoint) -> Result<GeodesicStiefel> {
    if y1.matrix().shape() != y2.matrix().shape() {
        return Err(GraffError::InvalidInput(
            "geodesic_between: points live on different Graff(k,n)".into(),
        ));
    }
    let (u, theta, v) = connecting_factors(y1.matrix(), y2.matrix())?;
    Ok(GeodesicStiefel::from_velocity_factors(
        y1.clone(),
        u,
        theta,
        v,
    ))
}

pub(crate) fn log_raw(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (u, theta, v) = connecting_factors(a, b)?;
    let mut ut = u;
    for j in 0..theta.len() {
        ut.column_mut(j).scale_mut(theta[j]);
    }
    Ok(ut * v.transpose())
}

/// Inverse exponential: the velocity U Theta V^T whose geodesic reaches Y2
/// at t = 1; ||log|| equals the distance.
pub fn log(y1: &StiefelPoint, y2: &StiefelPoint) -> Result<TangentStiefel> {
    if y1.matrix().shape() != y2.matrix().shape() {
        return Err(GraffError::InvalidInput(
            "log: points live on different Graff(k,n)".into(),
        ));
    }
    Ok(TangentStiefel {
        base: y1.clone(),
        delta: log_raw(y1.matrix(), y2.matrix())?,
    })
}

/// Riemannian gradient of f at Y from its Euclidean partial-derivative
/// matrix fY: the tangent projection fY - Y Y^T fY. Assumes f is invariant
/// under the right O(k+1) action (true of every well-defined objective on
/// Graff); this is not checked at runtime.
pub fn rgrad(y: &StiefelPoint, fy: &DMatrix<f64>) -> TangentStiefel {
    tangent_project(y, fy)
}

/// Riemannian Hessian of f at Y applied to a tangent Delta:
///
///   H(Delta) = proj_Y(fYY(Delta)) - Delta sym(Y^T fY),
///
/// where fYY_action contracts the Euclidean second derivative against
/// Delta. Y^T fY is symmetric for right-invariant f; symmetrizing keeps the
/// bilinear form exactly symmetric in floating point.
pub fn hess(
    y: &StiefelPoint,
    fy: &DMatrix<f64>,
    fyy_action: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    delta: &TangentStiefel,
) -> Result<TangentStiefel> {
    if !same_base(y, &delta.base) {
        return Err(GraffError::BasePointMismatch);
    }
    let s = y.matrix().transpose() * fy;
    let ssym = (&s + s.transpose()).scale(0.5);
    let curved = fyy_action(&delta.delta);
    let mut out = tangent_project(y, &curved).delta;
    out -= &delta.delta * ssym;
    Ok(TangentStiefel {
        base: y.clone(),
        delta: out,
    })
}

/// The Hessian bilinear form g(H(D1), D2).
pub fn hess_bilinear(
    y: &StiefelPoint,
    fy: &DMatrix<f64>,
    fyy_action: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    d1: &TangentStiefel,
    d2: &TangentStiefel,
) -> Result<f64> {
    metric(&hess(y, fy, fyy_action, d1)?, d2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coords::{affine_from_stiefel, random_point, stiefel_from_affine, OrthAffine};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn graff01_point(b: f64) -> StiefelPoint {
        let c = OrthAffine::new(DMatrix::zeros(1, 0), DVector::from_vec(vec![b])).unwrap();
        stiefel_from_affine(&c)
    }

    fn line(n: usize, b0: Option<usize>) -> StiefelPoint {
        // span{e1} + e_{b0} in R^n.
        let a = DMatrix::from_fn(n, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let mut b = DVector::zeros(n);
        if let Some(i) = b0 {
            b[i] = 1.0;
        }
        stiefel_from_affine(&OrthAffine::new(a, b).unwrap())
    }

    #[test]
    fn tangent_projection_examples() {
        let y = graff01_point(0.0); // the frame e2
        let z = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let d = tangent_project(&y, &z);
        assert_abs_diff_eq!(d.delta()[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.delta()[(1, 0)], 0.0, epsilon = 1e-15);

        // Columns inside span(Y) vanish.
        let z_in = y.matrix() * DMatrix::from_element(1, 1, 3.0);
        assert!(tangent_project(&y, &z_in).norm() < 1e-15);

        // Idempotence: projecting a tangent changes nothing.
        let y2 = random_point(5, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_tangent(&y2, &mut rng);
        let again = tangent_project(&y2, t.delta());
        assert!((again.delta() - t.delta()).amax() < 1e-14);
        assert!((y2.matrix().transpose() * t.delta()).amax() < 1e-14);
    }

    #[test]
    fn metric_examples() {
        let y = random_point(4, 1, 3).unwrap();
        let mut d1m = DMatrix::zeros(5, 2);
        d1m[(0, 0)] = 1.0;
        let mut d2m = DMatrix::zeros(5, 2);
        d2m[(0, 0)] = 2.0;
        let d1 = tangent_project(&y, &d1m);
        let d2 = tangent_project(&y, &d2m);
        // Same support: the inner product is 2 up to the projection of e1.
        let g12 = metric(&d1, &d2).unwrap();
        let g11 = metric(&d1, &d1).unwrap();
        assert_abs_diff_eq!(g12, 2.0 * g11 / 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g11, d1.norm().powi(2), epsilon = 1e-12);

        let other = random_point(4, 1, 4).unwrap();
        let d3 = tangent_project(&other, &d1m);
        assert!(matches!(
            metric(&d1, &d3),
            Err(GraffError::BasePointMismatch)
        ));
    }

    #[test]
    fn exp_examples() {
        // t = 0 returns the base bitwise.
        let y = random_point(6, 3, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random_tangent(&y, &mut rng);
        assert_eq!(exp(&y, &h, 0.0).unwrap().matrix(), y.matrix());

        // Graff(0,1): rotating e2 toward e1 by pi/4 lands on b = 1.
        let o = graff01_point(0.0);
        let h1 = TangentStiefel::try_new(o.clone(), DMatrix::from_column_slice(2, 1, &[1.0, 0.0]))
            .unwrap();
        let p = exp(&o, &h1, std::f64::consts::FRAC_PI_4).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(p.matrix()[(0, 0)], s, epsilon = 1e-14);
        assert_abs_diff_eq!(p.matrix()[(1, 0)], s, epsilon = 1e-14);
        assert_abs_diff_eq!(affine_from_stiefel(&p).b0()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exp_is_periodic_in_a_single_direction() {
        // Rank-one unit-speed velocity: at t = pi the cos/sin blocks flip
        // sign in one column, which is a right-action, i.e. the same point.
        let y = random_point(2, 1, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random_tangent(&y, &mut rng);
        let f = condensed_svd(t.delta()).unwrap();
        let rank1 = f.u.column(0) * f.v.column(0).transpose();
        let h = TangentStiefel::try_new(y.clone(), rank1).unwrap();
        match exp(&y, &h, std::f64::consts::PI) {
            Ok(p) => {
                let (d, _) = distance(&y, &p).unwrap();
                assert!(d < 1e-8, "periodicity violated, d = {d}");
            }
            // The sign-flipped frame can also land on the chart boundary.
            Err(GraffError::InfeasiblePoint { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn transport_examples() {
        let y = random_point(5, 2, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = random_tangent(&y, &mut rng);
        let d = random_tangent(&y, &mut rng);

        // t = 0 is the identity.
        let d0 = transport(&y, &h, 0.0, &d).unwrap();
        assert_eq!(d0.delta(), d.delta());

        // Isometry on the velocity itself.
        let t = 0.3;
        let th = transport(&y, &h, t, &h).unwrap();
        assert_abs_diff_eq!(th.norm(), h.norm(), epsilon = 1e-10);
        // And the transported velocity is the curve's velocity at t.
        let geo = GeodesicStiefel::new(&y, &h).unwrap();
        let (_, q) = canonicalize_stiefel_with_rotation(&geo.point_raw(t)).unwrap();
        let vel = geo.velocity_raw(t) * &q;
        assert!((th.delta() - vel).amax() < 1e-10);

        // Tangency at the endpoint.
        let endpoint = exp(&y, &h, t).unwrap();
        assert!((endpoint.matrix().transpose() * th.delta()).amax() < 1e-10);

        // Graff(0,1) quarter turn: the raw transport of e1 is -e2; the
        // endpoint e1 itself is infeasible, so the public call refuses.
        let o = graff01_point(0.0);
        let e1 = TangentStiefel::try_new(o.clone(), DMatrix::from_column_slice(2, 1, &[1.0, 0.0]))
            .unwrap();
        let geo01 = GeodesicStiefel::new(&o, &e1).unwrap();
        let raw = geo01.transport_raw(std::f64::consts::FRAC_PI_2, e1.delta());
        assert_abs_diff_eq!(raw[(0, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(raw[(1, 0)], -1.0, epsilon = 1e-15);
        assert!(matches!(
            transport(&o, &e1, std::f64::consts::FRAC_PI_2, &e1),
            Err(GraffError::InfeasiblePoint { .. })
        ));
    }

    #[test]
    fn distance_examples() {
        let y = random_point(6, 3, 11).unwrap();
        let (d0, _) = distance(&y, &y).unwrap();
        assert!(d0 < 1e-12, "self-distance {d0}");

        // Parallel lines span{e1} and span{e1} + e2 in R^2.
        let y1 = line(2, None);
        let y2 = line(2, Some(1));
        let (d, pd) = distance(&y1, &y2).unwrap();
        assert_abs_diff_eq!(d, std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        assert!(pd.theta[0].abs() < 1e-12);
        assert_abs_diff_eq!(pd.theta[1], std::f64::consts::FRAC_PI_4, epsilon = 1e-12);

        // Points 0 and e1 of Graff(0,3).
        let o =
            stiefel_from_affine(&OrthAffine::new(DMatrix::zeros(3, 0), DVector::zeros(3)).unwrap());
        let e1 = stiefel_from_affine(
            &OrthAffine::new(DMatrix::zeros(3, 0), DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap(),
        );
        let (d01, _) = distance(&o, &e1).unwrap();
        assert_abs_diff_eq!(d01, std::f64::consts::FRAC_PI_4, epsilon = 1e-12);

        // Symmetry.
        let (dab, _) = distance(&y1, &y2).unwrap();
        let (dba, _) = distance(&y2, &y1).unwrap();
        assert_abs_diff_eq!(dab, dba, epsilon = 1e-12);
    }

    #[test]
    fn distance_is_representative_invariant() {
        let y1 = random_point(5, 2, 12).unwrap();
        let y2 = random_point(5, 2, 13).unwrap();
        let (d, _) = distance(&y1, &y2).unwrap();
        // Rotate the linear block of y1 by a fixed orthogonal matrix.
        let mut q = DMatrix::identity(3, 3);
        let ang = 0.7f64;
        q[(0, 0)] = ang.cos();
        q[(0, 1)] = -ang.sin();
        q[(1, 0)] = ang.sin();
        q[(1, 1)] = ang.cos();
        let y1r = StiefelPoint::try_new(y1.matrix() * &q).unwrap();
        let (dr, _) = distance(&y1r, &y2).unwrap();
        assert_abs_diff_eq!(d, dr, epsilon = 1e-10);
    }

    #[test]
    fn geodesic_between_examples() {
        // Y2 = Y1: the constant curve.
        let y = random_point(5, 2, 14).unwrap();
        let geo = geodesic_between(&y, &y).unwrap();
        assert!(geo.sigma().amax() < 1e-12);
        assert!((geo.point_raw(0.7) - y.matrix()).amax() < 1e-10);

        // Parallel lines: reaches the target with length pi/4.
        let y1 = line(2, None);
        let y2 = line(2, Some(1));
        let geo2 = geodesic_between(&y1, &y2).unwrap();
        let end = geo2.point(1.0).unwrap();
        let (gap, _) = distance(&end, &y2).unwrap();
        assert!(gap < 1e-8);
        assert_abs_diff_eq!(
            geo2.sigma().norm(),
            std::f64::consts::FRAC_PI_4,
            epsilon = 1e-12
        );

        // Midpoint between b = 0 and b = 1 on Graff(0,1) is tan(pi/8).
        let o = graff01_point(0.0);
        let one = graff01_point(1.0);
        let mid = geodesic_between(&o, &one).unwrap().point(0.5).unwrap();
        let b_mid = affine_from_stiefel(&mid).b0()[0];
        assert_abs_diff_eq!(b_mid, (std::f64::consts::FRAC_PI_8).tan(), epsilon = 1e-10);
    }

    #[test]
    fn geodesic_singular_detected() {
        // Orthogonal directions through the origin: the cross-Gram is
        // singular and no unique minimizer exists.
        let e1 = line(2, None);
        let a2 = DMatrix::from_fn(2, 1, |i, _| if i == 1 { 1.0 } else { 0.0 });
        let e2 = stiefel_from_affine(&OrthAffine::new(a2, DVector::zeros(2)).unwrap());
        match geodesic_between(&e1, &e2) {
            Err(GraffError::GeodesicSingular(s)) => assert!(s <= 1e-10),
            other => panic!("expected GeodesicSingular, got {other:?}"),
        }
    }

    #[test]
    fn log_examples_and_roundtrip() {
        let y = random_point(5, 2, 15).unwrap();
        assert!(log(&y, &y).unwrap().norm() < 1e-12);

        // Graff(0,1): from b = 0 toward b = 1 the velocity is (pi/4) e1.
        let o = graff01_point(0.0);
        let one = graff01_point(1.0);
        let l = log(&o, &one).unwrap();
        assert_abs_diff_eq!(
            l.delta()[(0, 0)],
            std::f64::consts::FRAC_PI_4,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(l.delta()[(1, 0)], 0.0, epsilon = 1e-12);

        // exp . log reaches the target; ||log|| matches the distance.
        for seed in 0..25 {
            let y1 = random_point(5, 2, 100 + seed).unwrap();
            let y2 = random_point(5, 2, 200 + seed).unwrap();
            let l = log(&y1, &y2).unwrap();
            let (d, _) = distance(&y1, &y2).unwrap();
            assert_abs_diff_eq!(l.norm(), d, epsilon = 1e-10);
            let reached = exp(&y1, &l, 1.0).unwrap();
            let (gap, _) = distance(&reached, &y2).unwrap();
            assert!(gap < 1e-8, "roundtrip gap {gap} at seed {seed}");
        }
    }

    #[test]
    fn geodesic_factors_state_their_invariants() {
        // Rank-deficient velocity on Graff(3,6): k+1 = 4 exceeds the
        // codimension n-k = 3, so some padding columns must overlap the
        // base span; the meaningful (sigma > 0) columns stay orthogonal
        // to it and U stays orthonormal throughout.
        let y = random_point(6, 3, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t = random_tangent(&y, &mut rng);
        let geo = GeodesicStiefel::new(&y, &t).unwrap();
        let kp1 = 4;
        assert!((geo.u().transpose() * geo.u() - DMatrix::identity(kp1, kp1)).amax() < 1e-10);
        let ytu = y.matrix().transpose() * geo.u();
        for j in 0..kp1 {
            if geo.sigma()[j] > 0.0 {
                assert!(ytu.column(j).amax() < 1e-10);
            }
        }
        // Tangent rank is at most n-k = 3, so the last sigma is exactly 0.
        assert_eq!(geo.sigma()[3], 0.0);
        // The geodesic property is unaffected by the padding.
        let unit = t.scaled(1.0 / t.norm());
        let p = exp(&y, &unit, 0.4).unwrap();
        let (d, _) = distance(&y, &p).unwrap();
        assert_abs_diff_eq!(d, 0.4, epsilon = 1e-8);
    }

    #[test]
    fn rgrad_examples() {
        let y = random_point(5, 2, 18).unwrap();
        // Pure normal component: fY = Y M.
        let m = DMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64);
        let fy = y.matrix() * m;
        assert!(rgrad(&y, &fy).norm() < 1e-12);

        // Critical point of the quadratic: an invariant subspace.
        let o =
            stiefel_from_affine(&OrthAffine::new(DMatrix::zeros(2, 0), DVector::zeros(2)).unwrap());
        let mtil = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 5.0]));
        let fy2 = 2.0 * &mtil * o.matrix();
        assert!(rgrad(&o, &fy2).norm() < 1e-12);
    }

    #[test]
    fn rgrad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for seed in 0..20 {
            let y = random_point(5, 2, 300 + seed).unwrap();
            let g = DMatrix::from_fn(6, 6, |_, _| rng.sample(StandardNormal));
            let m = (&g + g.transpose()).scale(0.5);
            let f = |ym: &DMatrix<f64>| (ym.transpose() * &m * ym).trace();
            let fy = 2.0 * &m * y.matrix();
            let grad = rgrad(&y, &fy);
            let dir = random_tangent(&y, &mut rng);
            let dir = dir.scaled(1.0 / dir.norm());
            let geo = GeodesicStiefel::new(&y, &dir).unwrap();
            let h = 1e-6;
            let fd = (f(&geo.point_raw(h)) - f(&geo.point_raw(-h))) / (2.0 * h);
            let an = metric(&grad, &dir).unwrap();
            let f0 = f(y.matrix()).abs();
            assert!(
                (fd - an).abs() <= 1e-5 * (1.0 + f0),
                "gradient fd mismatch {} vs {} at seed {seed}",
                fd,
                an
            );
        }
    }

    #[test]
    fn hess_examples_and_finite_differences() {
        let y = random_point(5, 2, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = random_tangent(&y, &mut rng);

        // Linear objective f = tr(S Y^T Y)/... take fY = Y S with S
        // symmetric: the curvature term vanishes and H(D) = -D S.
        let graw = DMatrix::from_fn(3, 3, |_, _| rng.sample(StandardNormal));
        let s = (&graw + graw.transpose()).scale(0.5);
        let fy = y.matrix() * &s;
        let hd = hess(&y, &fy, |_| DMatrix::zeros(6, 3), &d).unwrap();
        let expect = -d.delta() * &s;
        assert!((hd.delta() - expect).amax() < 1e-12);

        // Zero direction maps to zero.
        let zero = TangentStiefel::try_new(y.clone(), DMatrix::zeros(6, 3)).unwrap();
        assert_eq!(
            hess(&y, &fy, |_| DMatrix::zeros(6, 3), &zero)
                .unwrap()
                .norm(),
            0.0
        );

        // Quadratic objective: symmetric bilinear form matching second
        // differences along geodesics.
        for seed in 0..15 {
            let y = random_point(5, 2, 400 + seed).unwrap();
            let graw = DMatrix::from_fn(6, 6, |_, _| rng.sample(StandardNormal));
            let m = (&graw + graw.transpose()).scale(0.5);
            let f = |ym: &DMatrix<f64>| (ym.transpose() * &m * ym).trace();
            let fy = 2.0 * &m * y.matrix();
            let action = |dm: &DMatrix<f64>| 2.0 * &m * dm;
            let d1 = random_tangent(&y, &mut rng);
            let d2 = random_tangent(&y, &mut rng);
            let b12 = hess_bilinear(&y, &fy, action, &d1, &d2).unwrap();
            let b21 = hess_bilinear(&y, &fy, action, &d2, &d1).unwrap();
            assert!(
                (b12 - b21).abs() <= 1e-8 * (1.0 + b12.abs()),
                "asymmetry at seed {seed}: {b12} vs {b21}"
            );

            let d1u = d1.scaled(1.0 / d1.norm());
            let geo = GeodesicStiefel::new(&y, &d1u).unwrap();
            let h = 1e-4;
            let fd2 =
                (f(&geo.point_raw(h)) - 2.0 * f(y.matrix()) + f(&geo.point_raw(-h))) / (h * h);
            let an2 = hess_bilinear(&y, &fy, action, &d1u, &d1u).unwrap();
            let scale = 1.0 + f(y.matrix()).abs();
            assert!(
                (fd2 - an2).abs() <= 1e-4 * scale,
                "hessian fd mismatch {fd2} vs {an2} at seed {seed}"
            );
        }
    }

    #[test]
    fn metric_geodesic_consistency() {
        for seed in 0..20 {
            let y = random_point(6, 3, 500 + seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
            let h = random_tangent(&y, &mut rng);
            let h = h.scaled(1.0 / h.norm());
            for t in [0.05, 0.3, 0.9, 1.3] {
                let p = exp(&y, &h, t).unwrap();
                let (d, _) = distance(&y, &p).unwrap();
                assert!(
                    (d - t).abs() < 1e-8,
                    "d(Y, exp(Y,H,{t})) = {d} at seed {seed}"
                );
            }
        }
    }
}
