//! First- and second-order solvers on Graff(k,n).
//!
//! Five methods: steepest descent, conjugate gradient, and Newton in
//! Stiefel coordinates; steepest descent and Newton in projection
//! coordinates. All of them step along exact geodesics (the projection
//! Newton uses the idempotency-preserving QR update instead) and share the
//! same stopping rules: gradient norm, manifold distance between
//! successive iterates, and an iteration cap.
//!
//! Iterates are predictions that can in principle leave the embedded
//! chart. Every accepted point passes through the feasibility gate; small
//! orthonormality drift is repaired and counted in
//! [`OptimizerReport::corrections`], and a genuinely infeasible point
//! (gamma collapsing to zero, a measure-zero event) ends the run with
//! [`Termination::Failed`]. Data-dependent breakdowns never panic and are
//! reported the same way, with the partial record trail preserved;
//! `Err` returns are reserved for structural misuse such as missing
//! derivative callbacks.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coords::{
    canonicalize_stiefel, canonicalize_stiefel_with_rotation, projection_to_stiefel,
    stiefel_to_projection, ProjectionPoint, StiefelPoint, DRIFT_ACCEPT,
};
use crate::error::{GraffError, Result};
use crate::geom_projection::{
    hess_p, metric_p, rgrad_p, rotation_to_block_frame, tangent_project_p, tangent_to_stiefel,
    TangentProjection,
};
use crate::geom_stiefel::{
    distance, hess, metric, rgrad, tangent_project, GeodesicStiefel, TangentStiefel,
};
use crate::io::MatrixForm;
use crate::numerics::{qr_pos, solve_dense, sym_eig, thin_qr_orthonormalize};

/// Objective callbacks. All matrix arguments are raw coordinate
/// representatives: Stiefel callbacks may be called with any orthonormal
/// representative of a flat (line searches probe geodesics without
/// canonicalizing), so objectives must be invariant under the right
/// orthogonal action; `invariance_declared` asserts that the author
/// checked this. Gradient callbacks are only ever called at canonical
/// points.
pub struct ObjectiveOracle {
    /// f in Stiefel coordinates.
    pub value: Box<dyn Fn(&DMatrix<f64>) -> f64 + Send + Sync>,
    /// Euclidean derivative matrix f_Y.
    pub euclid_grad: Option<Box<dyn Fn(&DMatrix<f64>) -> DMatrix<f64> + Send + Sync>>,
    /// Riemannian gradient supplied directly, bypassing `euclid_grad`;
    /// used by objectives defined through manifold quantities.
    pub riem_grad: Option<Box<dyn Fn(&DMatrix<f64>) -> Result<DMatrix<f64>> + Send + Sync>>,
    /// Action of the Euclidean second derivative: (Y, Delta) -> f_YY(Delta).
    #[allow(clippy::type_complexity)]
    pub euclid_hess_action:
        Option<Box<dyn Fn(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64> + Send + Sync>>,
    /// f in projection coordinates.
    pub proj_value: Option<Box<dyn Fn(&DMatrix<f64>) -> f64 + Send + Sync>>,
    /// Euclidean derivative matrix f_P.
    pub proj_grad: Option<Box<dyn Fn(&DMatrix<f64>) -> DMatrix<f64> + Send + Sync>>,
    /// Action of the projection-side second derivative.
    #[allow(clippy::type_complexity)]
    pub proj_hess_action:
        Option<Box<dyn Fn(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64> + Send + Sync>>,
    /// The author vouches that value(Y) = value(YQ) for orthogonal Q.
    pub invariance_declared: bool,
}

impl ObjectiveOracle {
    /// Riemannian gradient at a canonical point, from whichever gradient
    /// callback the oracle carries.
    pub fn riemannian_grad(&self, y: &StiefelPoint) -> Result<TangentStiefel> {
        if let Some(rg) = &self.riem_grad {
            let mat = rg(y.matrix())?;
            return TangentStiefel::try_new(y.clone(), mat);
        }
        if let Some(eg) = &self.euclid_grad {
            return Ok(rgrad(y, &eg(y.matrix())));
        }
        Err(GraffError::InvalidInput(
            "oracle carries no gradient callback".into(),
        ))
    }

    pub fn supports_newton(&self) -> bool {
        self.euclid_grad.is_some() && self.euclid_hess_action.is_some()
    }

    pub fn supports_projection(&self) -> bool {
        self.proj_value.is_some() && self.proj_grad.is_some()
    }
}

/// Stopping rules: the run ends at the first of gradient norm below
/// `grad_tol`, manifold distance between successive iterates below
/// `step_tol`, or `max_iter` steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StopCriteria {
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            step_tol: 1e-12,
            max_iter: 500,
        }
    }
}

impl StopCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) || !(self.step_tol > 0.0) || self.max_iter == 0 {
            return Err(GraffError::InvalidInput(
                "stop criteria must all be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Why a run ended. `Corrected` marks a stop rule firing on an iterate
/// that needed a feasibility repair in the same iteration; `Failed` caps a
/// report whose `failure` names the breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradTol,
    StepTol,
    MaxIter,
    Corrected,
    Failed,
}

/// One row of the convergence trail. `step_t` and `dist_moved` describe
/// the step leaving this iterate and are zero on the final row;
/// `elapsed_s` is wall clock since the run started and is the only
/// nondeterministic field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub f: f64,
    pub gradnorm: f64,
    pub step_t: f64,
    pub dist_moved: f64,
    pub dist_to_solution: Option<f64>,
    pub elapsed_s: f64,
}

/// Outcome of a solver run. The final point is always reported in Stiefel
/// coordinates; projection-coordinate solvers fill `final_projection` too.
/// When `termination` is not `Failed` the final point passed feasibility.
#[derive(Debug)]
pub struct OptimizerReport {
    pub records: Vec<IterationRecord>,
    pub final_point: StiefelPoint,
    pub final_projection: Option<ProjectionPoint>,
    pub termination: Termination,
    pub corrections: usize,
    pub fallbacks: usize,
    pub failure: Option<String>,
}

/// A point repaired by [`correct_feasible`].
#[derive(Debug, Clone)]
pub enum CorrectedPoint {
    Stiefel(StiefelPoint),
    Projection(ProjectionPoint),
}

/// Repairs a drifted coordinate representative: Stiefel form is
/// reorthonormalized and canonicalized; projection form is symmetrized and
/// its spectrum snapped to {0,1} (eigenvalues at least one half round to
/// one). A point whose gamma has genuinely collapsed stays infeasible and
/// surfaces as `InfeasiblePoint`.
pub fn correct_feasible(raw: &DMatrix<f64>, form: MatrixForm) -> Result<CorrectedPoint> {
    match form {
        MatrixForm::Stiefel => {
            let q = thin_qr_orthonormalize(raw)?;
            Ok(CorrectedPoint::Stiefel(canonicalize_stiefel(&q)?))
        }
        MatrixForm::Projection => {
            let sym = (raw + raw.transpose()) * 0.5;
            let eig = sym_eig(&sym)?;
            let dim = sym.nrows();
            let mut p = DMatrix::zeros(dim, dim);
            for j in 0..dim {
                if eig.lambda[j] >= 0.5 {
                    let col = eig.v.column(j);
                    p.ger(1.0, &col, &col, 1.0);
                }
            }
            let p = (&p + p.transpose()) * 0.5;
            Ok(CorrectedPoint::Projection(ProjectionPoint::try_new(p)?))
        }
        MatrixForm::Dense => Err(GraffError::InvalidInput(
            "dense matrices carry no feasibility structure to restore".into(),
        )),
    }
}

/// Width below which golden-section refinement stops. Brackets whose
/// endpoints are too large for f64 to resolve this width stop at their
/// representable resolution instead.
const GOLDEN_WIDTH: f64 = 1e-10;
/// Points on the bracketing grid over (0, pi / (2 sigma_max)].
const GRID_POINTS: usize = 50;
/// Armijo sufficient-decrease constant for the Newton backtracking.
const ARMIJO_C: f64 = 1e-4;
/// Maximum halvings before a Newton step is abandoned.
const MAX_HALVINGS: usize = 30;

/// Exact line search along a geodesic: a 50-point grid over the first
/// quarter period (0, pi / (2 sigma_max)] bracketed together with t = 0,
/// then golden-section refinement of the best bracket down to width 1e-10
/// (or the resolution of f64 at the bracket, whichever is coarser).
/// Returns the minimizing parameter and value; f is never allowed to end
/// up above its t = 0 value. Non-finite objective values along the curve
/// surface as `LineSearchFailed`.
pub fn line_search_geodesic(
    oracle: &ObjectiveOracle,
    y: &StiefelPoint,
    direction: &TangentStiefel,
) -> Result<(f64, f64)> {
    if direction.norm() == 0.0 {
        return Err(GraffError::InvalidInput(
            "line search needs a nonzero direction".into(),
        ));
    }
    let geo = GeodesicStiefel::new(y, direction)?;
    let dphi = geodesic_derivative(oracle, &geo);
    search_on_geodesic(&|m| (oracle.value)(m), dphi.as_deref(), &geo)
}

/// d/dt f(Y(t)) along a geodesic, from whichever first-order callback the
/// oracle carries; `None` for value-only oracles. Probes are canonicalized
/// so gradient callbacks keep seeing feasible points, and the chain rule
/// picks up the canonicalizing rotation q: with the canonical frame Y(t) q,
///
///   d/dt f(Y(t)) = < grad at canonical, velocity q >.
fn geodesic_derivative<'a>(
    oracle: &'a ObjectiveOracle,
    geo: &'a GeodesicStiefel,
) -> Option<Box<dyn Fn(f64) -> Result<f64> + 'a>> {
    if let Some(eg) = oracle.euclid_grad.as_ref() {
        return Some(Box::new(move |t: f64| {
            let (yc, q) = canonicalize_stiefel_with_rotation(&geo.point_raw(t))?;
            Ok(eg(yc.matrix()).dot(&(geo.velocity_raw(t) * q)))
        }));
    }
    if let Some(rg) = oracle.riem_grad.as_ref() {
        return Some(Box::new(move |t: f64| {
            let (yc, q) = canonicalize_stiefel_with_rotation(&geo.point_raw(t))?;
            Ok(rg(yc.matrix())?.dot(&(geo.velocity_raw(t) * q)))
        }));
    }
    None
}

/// Bisection on the directional derivative inside the refined bracket.
/// Value-only refinement cannot place the minimizer more precisely than
/// |t - t*| ~ sqrt(eps |f| / f''), the flat-bottom limit, which leaves
/// steps reproducible only to ~1e-8 in position; the sign of f' keeps
/// resolving far below that. Opportunistic: any probe failure (chart exit,
/// singular pair, no sign change) keeps the derivative-free result.
fn polish_with_derivative(
    dphi: &dyn Fn(f64) -> Result<f64>,
    best_t: f64,
    step: f64,
    tmax: f64,
) -> Option<f64> {
    let mut width = step;
    let (mut lo, mut hi);
    loop {
        lo = (best_t - width).max(0.0);
        hi = (best_t + width).min(tmax);
        let dlo = dphi(lo).ok()?;
        let dhi = dphi(hi).ok()?;
        if !dlo.is_finite() || !dhi.is_finite() {
            return None;
        }
        if dlo <= 0.0 && dhi >= 0.0 {
            if dlo == 0.0 {
                return Some(lo);
            }
            if dhi == 0.0 {
                return Some(hi);
            }
            break;
        }
        width *= 2.0;
        if width > 4.0 * step {
            return None;
        }
    }
    for _ in 0..90 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let dm = dphi(mid).ok()?;
        if !dm.is_finite() {
            return None;
        }
        if dm == 0.0 {
            return Some(mid);
        }
        if dm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn search_on_geodesic(
    value: &dyn Fn(&DMatrix<f64>) -> f64,
    dphi: Option<&(dyn Fn(f64) -> Result<f64> + '_)>,
    geo: &GeodesicStiefel,
) -> Result<(f64, f64)> {
    let eval = |t: f64| -> Result<f64> {
        let f = if t == 0.0 {
            value(geo.base().matrix())
        } else {
            value(&geo.point_raw(t))
        };
        if f.is_finite() {
            Ok(f)
        } else {
            Err(GraffError::LineSearchFailed(format!(
                "objective is {f} at t = {t:.6e}"
            )))
        }
    };

    let smax = geo.sigma_max();
    if smax == 0.0 {
        return Err(GraffError::InvalidInput(
            "line search needs a nonzero direction".into(),
        ));
    }
    let tmax = std::f64::consts::FRAC_PI_2 / smax;
    let mut best_t = 0.0;
    let mut best_f = eval(0.0)?;
    for j in 1..=GRID_POINTS {
        let t = tmax * j as f64 / GRID_POINTS as f64;
        let f = eval(t)?;
        if f < best_f {
            best_f = f;
            best_t = t;
        }
    }

    // Golden-section refinement of the bracket around the grid minimum.
    let step = tmax / GRID_POINTS as f64;
    let mut a = (best_t - step).max(0.0);
    let mut b = (best_t + step).min(tmax);
    let ratio = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    // The width target is floored at a few ulps of the endpoints: when a
    // weak direction pushes tmax past ~1e6 the spacing of f64 values there
    // exceeds the absolute target and the bracket cannot shrink further.
    let width_floor =
        |a: f64, b: f64| GOLDEN_WIDTH.max(16.0 * f64::EPSILON * a.abs().max(b.abs()));
    while b - a > width_floor(a, b) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = eval(d)?;
        }
        if fc < best_f {
            best_f = fc;
            best_t = c;
        }
        if fd < best_f {
            best_f = fd;
            best_t = d;
        }
    }

    if best_t > 0.0 {
        if let Some(dphi) = dphi {
            if let Some(t) = polish_with_derivative(dphi, best_t, step, tmax) {
                if t > 0.0 {
                    if let Ok(f) = eval(t) {
                        // The root is the true minimizer to machine
                        // precision; its value can only sit above the
                        // probed one by evaluation noise.
                        if f <= best_f + 1e-12 * (1.0 + best_f.abs()) {
                            best_t = t;
                            best_f = f;
                        }
                    }
                }
            }
        }
    }
    Ok((best_t, best_f))
}

/// Orthonormality drift of a raw Stiefel frame.
fn frame_drift(raw: &DMatrix<f64>) -> f64 {
    let kp1 = raw.ncols();
    (raw.transpose() * raw - DMatrix::identity(kp1, kp1)).amax()
}

struct RunState<'a> {
    records: Vec<IterationRecord>,
    corrections: usize,
    fallbacks: usize,
    started: Instant,
    reference: Option<&'a StiefelPoint>,
}

impl<'a> RunState<'a> {
    fn new(reference: Option<&'a StiefelPoint>) -> Self {
        Self {
            records: Vec::new(),
            corrections: 0,
            fallbacks: 0,
            started: Instant::now(),
            reference,
        }
    }

    fn push(
        &mut self,
        iter: usize,
        f: f64,
        gradnorm: f64,
        step_t: f64,
        dist_moved: f64,
        y: &StiefelPoint,
    ) {
        let dist_to_solution = self
            .reference
            .and_then(|r| distance(y, r).ok().map(|(d, _)| d));
        self.records.push(IterationRecord {
            iter,
            f,
            gradnorm,
            step_t,
            dist_moved,
            dist_to_solution,
            elapsed_s: self.started.elapsed().as_secs_f64(),
        });
    }

    fn finish(
        self,
        final_point: StiefelPoint,
        final_projection: Option<ProjectionPoint>,
        termination: Termination,
        failure: Option<String>,
    ) -> OptimizerReport {
        OptimizerReport {
            records: self.records,
            final_point,
            final_projection,
            termination,
            corrections: self.corrections,
            fallbacks: self.fallbacks,
            failure,
        }
    }
}

/// Accepts a raw geodesic endpoint: counts a correction when the frame
/// drifted beyond the accept band, repairs what can be repaired, and
/// reports a genuinely infeasible endpoint as an error for the caller to
/// turn into a failed run.
fn accept_stiefel(raw: &DMatrix<f64>, corrections: &mut usize) -> Result<(StiefelPoint, bool)> {
    let drift = frame_drift(raw);
    let corrected = drift > DRIFT_ACCEPT * (1.0 + raw.amax());
    if corrected {
        *corrections += 1;
    }
    let point = match canonicalize_stiefel(raw) {
        Ok(p) => p,
        Err(GraffError::InvalidInput(_)) => match correct_feasible(raw, MatrixForm::Stiefel)? {
            CorrectedPoint::Stiefel(p) => p,
            CorrectedPoint::Projection(_) => unreachable!("stiefel form requested"),
        },
        Err(e) => return Err(e),
    };
    Ok((point, corrected))
}

fn stop_kind(base: Termination, corrected: bool) -> Termination {
    if corrected {
        Termination::Corrected
    } else {
        base
    }
}

/// Steepest descent in Stiefel coordinates: exact line search along the
/// geodesic in the negative-gradient direction. `reference` fills the
/// distance-to-solution column of the records when an oracle solution is
/// known.
pub fn sd_stiefel(
    oracle: &ObjectiveOracle,
    y0: &StiefelPoint,
    stop: &StopCriteria,
    reference: Option<&StiefelPoint>,
) -> Result<OptimizerReport> {
    stop.validate()?;
    let mut state = RunState::new(reference);
    let mut y = y0.clone();
    let mut last_corrected = false;
    let mut iter = 0usize;
    loop {
        let f = (oracle.value)(y.matrix());
        if !f.is_finite() {
            state.push(iter, f, f64::NAN, 0.0, 0.0, &y);
            return Ok(state.finish(
                y,
                None,
                Termination::Failed,
                Some("objective value is not finite".into()),
            ));
        }
        let g = match oracle.riemannian_grad(&y) {
            Ok(g) => g,
            Err(GraffError::InvalidInput(m)) => return Err(GraffError::InvalidInput(m)),
            Err(e) => {
                state.push(iter, f, f64::NAN, 0.0, 0.0, &y);
                return Ok(state.finish(y, None, Termination::Failed, Some(e.to_string())));
            }
        };
        let gradnorm = g.norm();
        if gradnorm <= stop.grad_tol {
            state.push(iter, f, gradnorm, 0.0, 0.0, &y);
            return Ok(state.finish(
                y,
                None,
                stop_kind(Termination::GradTol, last_corrected),
                None,
            ));
        }
        if iter >= stop.max_iter {
            state.push(iter, f, gradnorm, 0.0, 0.0, &y);
            return Ok(state.finish(y, None, Termination::MaxIter, None));
        }

        let h = g.scaled(-1.0);
        let geo = GeodesicStiefel::new(&y, &h)?;
        let dphi = geodesic_derivative(oracle, &geo);
        let (t, f_t) = match search_on_geodesic(&|m| (oracle.value)(m), dphi.as_deref(), &geo) {
            Ok(r) => r,
            Err(e) => {
                state.push(iter, f, gradnorm, 0.0, 0.0, &y);
                return Ok(state.finish(y, None, Termination::Failed, Some(e.to_string())));
            }
        };
        debug_assert!(
            f_t <= f + 1e-12 * (1.0 + f.abs()),
            "line search increased f"
        );
        if t == 0.0 {
            state.push(iter, f, gradnorm, 0.0, 0.0, &y);
            return Ok(state.finish(
                y,
                None,
                stop_kind(Termination::StepTol, last_corrected),
                None,
            ));
        }
        let raw = geo.point_raw(t);
        let (y_next, corrected) = match accept_stiefel(&raw, &mut state.corrections) {
            Ok(r) => r,
            Err(e) => {
                state.push(iter, f, gradnorm, t, 0.0, &y);
                return Ok(state.finish(y, None, Termination::Failed, Some(e.to_string())));
            }
        };
        let (moved, _) = distance(&y, &y_next)?;
        state.push(iter, f, gradnorm, t, moved, &y);
        y = y_next;
        last_corrected = corrected;
        iter += 1;
        if moved <= stop.step_tol {
            let f_fin = (oracle.value)(y.matrix());
            let g_fin = oracle
                .riemannian_grad(&y)
                .map(|g| g.norm())
                .unwrap_or(f64::NAN);
            state.push(iter, f_fin, g_fin, 0.0, 0.0, &y);
            return Ok(state.finish(y, None, stop_kind(Termination::StepTol, corrected), None));
        }
    }
}

/// Conjugate gradient in Stiefel coordinates: exact line search along the
/// current direction, parallel transport of both the direction and the
/// gradient, a Polak-Ribiere coefficient
/// tr((G_{i+1} - tau G_i)^T G_{i+1}) / tr(G_i^T G_i), and a restart to
/// steepest descent every (k+1)(n-k) iterations or when the coefficient
/// denominator degenerates. The first step coincides with steepest
/// descent.
pub fn cg_stiefel(
    oracle: &ObjectiveOracle,
    y0: &StiefelPoint,
    stop: &StopCriteria,
    reference: Option<&StiefelPoint>,
) -> Result<OptimizerReport> {
    stop.validate()?;
    let mut state = RunState::new(reference);
    let mut y = y0.clone();
    let restart_period = (y.k() + 1) * (y.n() - y.k());
    let mut last_corrected = false;

    let mut g = match oracle.riemannian_grad(&y) {
        Ok(g) => g,
        Err(GraffError::InvalidInput(m)) => return Err(GraffError::InvalidInput(m)),
        Err(e) => {
            let f = (oracle.value)(y.matrix());
            state.push(0, f, f64::NAN, 0.0, 0.0, &y);
            return Ok(state.finish(y, None, Termination::Failed, Some(e.to_string())));
        }
    };
    let mut h = g.scaled(-1.0);
    let mut iter = 0usize;
    loop {
        let f = (oracle.value)(y.matrix());
        if !f.is_finite() {
            state.push(iter, f, f64::NAN, 0.0, 0.0, &y);
            return Ok(state.finish(
                y,
                None,
                Termination::Failed,
                Some("objective value is not finite".into()),
            ));
        }
        let gradnorm = g.norm();
        if gradnorm <= stop.grad_tol {
            state.push(iter, f, gradnorm, 0.0, 0.0, &y);
            return Ok(state.finish(
                y,
                None,
                stop_kind(Termination::GradTol, last_corrected),
                None,
            ));
        }
        if iter >= stop.max_iter {
            state.push(iter, f, gradnorm, 0.0, 0.0, &y);
            return Ok(state.finish(y, None, Termination::MaxIter, None));
        }

        // A transported direction can lose descent; fall back to steepest
        // descent for the iteration rather than stalling the search.
        if metric(&h, &g)? >= 0.0 {
            h = g.scaled(-1.0);
        }
        let geo = GeodesicStiefel::new(&y, &h)?;
        let dphi = geodesic_derivative(oracle, &geo);
        let (t, f_t) = match search_on_geodesic(&|m| (oracle.value)(m), dphi.as_deref(), &geo) {
            Ok(r) => r,
            Err(e) => {
                state.push(iter, f, gradnorm, 0.0, 0.0, &y);
                return Ok(state.finish(y, None, Termination::Failed, Some(e.to_string())));
            }
        };
        debug_assert!(
            f_t <= f + 1e-12 * (1.0 + f.abs()),
            "line search increased f"
        );
        let (t, f_t) =
            if t == 0.0 && metric(&h, &g.scaled(-1.0))? < h.norm() * gradnorm * (1.0 - 1e-12) {
                // Stalled on a conjugate direction: restart once from steepest
                // descent before concluding anything.
                h = g.scaled(-1.0);
                let geo_sd = GeodesicStiefel::new(&y, &h)?;
                let dphi_sd = geodesic_derivative(oracle, &geo_sd);
                match search_on_geodesic(&|m| (oracle.value)(m), dphi_sd.as_deref(), &geo_sd) {
                    Ok(r) => r,
                    Err(e) => {
                        state.push(iter, f, gradnorm, 0.0, 0.0, &y);
                        return Ok(state.finish(y, None, Termination::Failed, Some(e.to_string())));
                    }
                }
            } else {
                (t, f_t)
            };
        let _ = f_t;
        if t == 0.0 {
            state.push(iter, f, gradnorm, 0.0, 0.0, &y);
            return Ok(state.finish(
                y,
                None,
                stop_kind(Termination::StepTol, last_corrected),
                None,
            ));
        }
        let geo = GeodesicStiefel::new(&y, &h)?;
        let raw = geo.point_raw(t);
        let drift = frame_drift(&raw);
        let corrected = drift > DRIFT_ACCEPT * (1.0 + raw.amax());
        if corrected {
            state.corrections += 1;
        }
        // Keep the canonicalizing rotation: it acts on frames from the
        // right, so it carries transported tangents to the accepted
        // representative. A frame too drifted to canonicalize is repaired
        // instead, and the transported direction state is discarded.
        let mut repaired = false;
        let (y_next, q) = match canonicalize_stiefel_with_rotation(&raw) {
            Ok(r) => r,
            Err(GraffError::InvalidInput(_)) => {
                repaired = true;
                match correct_feasible(&raw, MatrixForm::Stiefel) {
                    Ok(CorrectedPoint::Stiefel(p)) => {
                        let kp1 = raw.ncols();
                        (p, DMatrix::identity(kp1, kp1))
                    }
                    Ok(CorrectedPoint::Projection(_)) => unreachable!("stiefel form requested"),
                    Err(e) => {
                        state.push(iter, f, gradnorm, t, 0.0, &y);
                        return Ok(state.finish(y, None, Termination::Failed, Some(e.to_string())));
                    }
                }
            }
            Err(e) => {
                state.push(iter, f, gradnorm, t, 0.0, &y);
                return Ok(state.finish(y, None, Termination::Failed, Some(e.to_string())));
            }
        };
        let (moved, _) = distance(&y, &y_next)?;
        state.push(iter, f, gradnorm, t, moved, &y);

        let g_next = match oracle.riemannian_grad(&y_next) {
            Ok(g) => g,
            Err(e) => {
                return Ok(state.finish(y_next, None, Termination::Failed, Some(e.to_string())));
            }
        };

        if moved <= stop.step_tol {
            let f_fin = (oracle.value)(y_next.matrix());
            state.push(iter + 1, f_fin, g_next.norm(), 0.0, 0.0, &y_next);
            return Ok(state.finish(
                y_next,
                None,
                stop_kind(Termination::StepTol, corrected),
                None,
            ));
        }

        let tau_h = geo.velocity_raw(t) * &q;
        let tau_g = geo.transport_raw(t, g.delta()) * &q;

        let denom = metric(&g, &g)?;
        let diff = g_next.delta() - &tau_g;
        let gamma = if denom < 1e-30 {
            0.0
        } else {
            (diff.transpose() * g_next.delta()).trace() / denom
        };
        let mut h_next_mat = -g_next.delta() + tau_h * gamma;
        if (iter + 1) % restart_period == 0 || denom < 1e-30 || repaired {
            h_next_mat = -g_next.delta();
        }
        // Transported directions live in the tangent space up to rounding;
        // reproject to keep the invariant exact.
        let h_next = tangent_project(&y_next, &h_next_mat);

        y = y_next;
        g = g_next;
        h = h_next;
        last_corrected = corrected;
        iter += 1;
    }
}

/// Orthonormal basis of the tangent space at Y, built by projecting the
/// standard matrix basis (column-major) and orthonormalizing. The
/// projected candidates share the column structure q e_j^T, so the basis
/// has exactly (k+1)(n-k) elements.
fn stiefel_tangent_basis(y: &StiefelPoint) -> Vec<TangentStiefel> {
    let np1 = y.n() + 1;
    let kp1 = y.k() + 1;
    let dim = kp1 * (np1 - kp1);
    let mut basis: Vec<DMatrix<f64>> = Vec::with_capacity(dim);
    'outer: for j in 0..kp1 {
        for i in 0..np1 {
            let mut e = DMatrix::zeros(np1, kp1);
            e[(i, j)] = 1.0;
            let mut cand = tangent_project(y, &e).delta().clone();
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&cand);
                    cand -= b * c;
                }
            }
            let nrm = cand.norm();
            if nrm > 1e-8 {
                basis.push(cand.unscale(nrm));
            }
            if basis.len() == dim {
                break 'outer;
            }
        }
    }
    debug_assert_eq!(basis.len(), dim, "tangent space dimension mismatch");
    basis
        .into_iter()
        .map(|m| TangentStiefel::from_parts_unchecked(y.clone(), m))
        .collect()
}

/// Newton's method in Stiefel coordinates: per iteration solve the
/// tangent-space system H(Delta) = -G over an orthonormal tangent basis,
/// step along the geodesic with backtracking from t = 1 (Armijo constant
/// 1e-4, at most 30 halvings). A singular or indefinite system, or a
/// direction that fails to descend, falls back to an exact-line-search
/// steepest-descent step for that iteration, counted in `fallbacks`.
pub fn newton_stiefel(
    oracle: &ObjectiveOracle,
    y0: &StiefelPoint,
    stop: &StopCriteria,
    reference: Option<&StiefelPoint>,
) -> Result<OptimizerReport> {
    stop.validate()?;
    if !oracle.supports_newton() {
        return Err(GraffError::InvalidInput(
            "newton_stiefel needs euclid_grad and euclid_hess_action".into(),
        ));
    }
    let mut state = RunState::new(reference);
    let mut y = y0.clone();
    let mut last_corrected = false;
    let mut iter = 0usize;
    loop {
        let f = (oracle.value)(y.matrix());
        let fy = oracle.euclid_grad.as_ref().expect("checked above")(y.matrix());
        let g = rgrad(&y, &fy);
        let gradnorm = g.norm();
        if gradnorm <= stop.grad_tol {
            state.push(iter, f, gradnorm, 0.0, 0.0, &y);
            return Ok(state.finish(
                y,
                None,
                stop_kind(Termination::GradTol, last_corrected),
                None,
            ));
        }
        if iter >= stop.max_iter {
            state.push(iter, f, gradnorm, 0.0, 0.0, &y);
            return Ok(state.finish(y, None, Termination::MaxIter, None));
        }

        let basis = stiefel_tangent_basis(&y);
        let dim = basis.len();
        let hess_cb = oracle.euclid_hess_action.as_ref().expect("checked above");
        let mut a = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        let mut assembly_ok = true;
        for c in 0..dim {
            match hess(&y, &fy, |d| hess_cb(y.matrix(), d), &basis[c]) {
                Ok(hc) => {
                    for r in 0..dim {
                        a[(r, c)] = metric(&hc, &basis[r])?;
                    }
                }
                Err(_) => {
                    assembly_ok = false;
                    break;
                }
            }
        }
        for r in 0..dim {
            rhs[r] = -metric(&g, &basis[r])?;
        }

        let newton_dir = if assembly_ok {
            solve_dense(&a, &rhs).ok().map(|coef| {
                let mut d = DMatrix::zeros(y.n() + 1, y.k() + 1);
                for (c, b) in basis.iter().enumerate() {
                    d += b.delta() * coef[c];
                }
                TangentStiefel::from_parts_unchecked(y.clone(), d)
            })
        } else {
            None
        };

        // Accept the Newton direction only when it descends.
        let newton_dir =
            newton_dir.filter(|d| metric(d, &g).map(|slope| slope < 0.0).unwrap_or(false));

        let step = match newton_dir {
            Some(dir) => {
                let slope = metric(&dir, &g)?;
                let geo = GeodesicStiefel::new(&y, &dir)?;
                let mut t = 1.0;
                let mut accepted = None;
                for _ in 0..=MAX_HALVINGS {
                    let f_t = (oracle.value)(&geo.point_raw(t));
                    if f_t.is_finite() && f_t <= f + ARMIJO_C * t * slope {
                        accepted = Some((t, geo.point_raw(t)));
                        break;
                    }
                    t *= 0.5;
                }
                accepted
            }
            None => None,
        };

        let (t, raw) = match step {
            Some(s) => s,
            None => {
                // Steepest-descent rescue for this iteration.
                state.fallbacks += 1;
                let h = g.scaled(-1.0);
                let geo = GeodesicStiefel::new(&y, &h)?;
                let dphi = geodesic_derivative(oracle, &geo);
                let (t, _) = match search_on_geodesic(&|m| (oracle.value)(m), dphi.as_deref(), &geo)
                {
                    Ok(r) => r,
                    Err(e) => {
                        state.push(iter, f, gradnorm, 0.0, 0.0, &y);
                        return Ok(state.finish(y, None, Termination::Failed, Some(e.to_string())));
                    }
                };
                if t == 0.0 {
                    state.push(iter, f, gradnorm, 0.0, 0.0, &y);
                    return Ok(state.finish(
                        y,
                        None,
                        stop_kind(Termination::StepTol, last_corrected),
                        None,
                    ));
                }
                (t, geo.point_raw(t))
            }
        };

        let (y_next, corrected) = match accept_stiefel(&raw, &mut state.corrections) {
            Ok(r) => r,
            Err(e) => {
                state.push(iter, f, gradnorm, t, 0.0, &y);
                return Ok(state.finish(y, None, Termination::Failed, Some(e.to_string())));
            }
        };
        let (moved, _) = distance(&y, &y_next)?;
        state.push(iter, f, gradnorm, t, moved, &y);
        y = y_next;
        last_corrected = corrected;
        iter += 1;
        if moved <= stop.step_tol {
            let f_fin = (oracle.value)(y.matrix());
            let fy_fin = oracle.euclid_grad.as_ref().expect("checked above")(y.matrix());
            state.push(iter, f_fin, rgrad(&y, &fy_fin).norm(), 0.0, 0.0, &y);
            return Ok(state.finish(y, None, stop_kind(Termination::StepTol, corrected), None));
        }
    }
}

/// Steepest descent in projection coordinates: the gradient is the double
/// bracket [P, [P, f_P]], the step converts the direction to Stiefel
/// coordinates, line-searches the geodesic there, and converts back.
pub fn sd_projection(
    oracle: &ObjectiveOracle,
    p0: &ProjectionPoint,
    stop: &StopCriteria,
    reference: Option<&StiefelPoint>,
) -> Result<OptimizerReport> {
    stop.validate()?;
    if !oracle.supports_projection() {
        return Err(GraffError::InvalidInput(
            "sd_projection needs proj_value and proj_grad".into(),
        ));
    }
    let mut state = RunState::new(reference);
    let mut p = p0.clone();
    let mut y = projection_to_stiefel(&p)?;
    let mut last_corrected = false;
    let mut iter = 0usize;
    let proj_value = oracle.proj_value.as_ref().expect("checked above");
    let proj_grad = oracle.proj_grad.as_ref().expect("checked above");
    loop {
        let f = proj_value(p.matrix());
        if !f.is_finite() {
            state.push(iter, f, f64::NAN, 0.0, 0.0, &y);
            return Ok(state.finish(
                y,
                Some(p),
                Termination::Failed,
                Some("objective value is not finite".into()),
            ));
        }
        let g = rgrad_p(&p, &proj_grad(p.matrix()));
        let gradnorm = g.norm();
        if gradnorm <= stop.grad_tol {
            state.push(iter, f, gradnorm, 0.0, 0.0, &y);
            return Ok(state.finish(
                y,
                Some(p),
                stop_kind(Termination::GradTol, last_corrected),
                None,
            ));
        }
        if iter >= stop.max_iter {
            state.push(iter, f, gradnorm, 0.0, 0.0, &y);
            return Ok(state.finish(y, Some(p), Termination::MaxIter, None));
        }

        let (y_at, h) = match tangent_to_stiefel(&g.scaled(-1.0)) {
            Ok(r) => r,
            Err(e) => {
                state.push(iter, f, gradnorm, 0.0, 0.0, &y);
                return Ok(state.finish(y, Some(p), Termination::Failed, Some(e.to_string())));
            }
        };
        let geo = GeodesicStiefel::new(&y_at, &h)?;
        let value_p = |m: &DMatrix<f64>| proj_value(&(m * m.transpose()));
        // Chain rule through P(t) = Y(t) Y(t)^T: dP/dt = V Y^T + Y V^T,
        // and <G, dP/dt> = 2 <G Y, V> for symmetric G.
        let dphi_p = |t: f64| -> Result<f64> {
            let m = geo.point_raw(t);
            let gp = proj_grad(&(&m * m.transpose()));
            Ok(2.0 * (gp * &m).dot(&geo.velocity_raw(t)))
        };
        let (t, _f_t) = match search_on_geodesic(&value_p, Some(&dphi_p), &geo) {
            Ok(r) => r,
            Err(e) => {
                state.push(iter, f, gradnorm, 0.0, 0.0, &y);
                return Ok(state.finish(y, Some(p), Termination::Failed, Some(e.to_string())));
            }
        };
        if t == 0.0 {
            state.push(iter, f, gradnorm, 0.0, 0.0, &y);
            return Ok(state.finish(
                y,
                Some(p),
                stop_kind(Termination::StepTol, last_corrected),
                None,
            ));
        }
        let raw = geo.point_raw(t);
        let (y_next, corrected) = match accept_stiefel(&raw, &mut state.corrections) {
            Ok(r) => r,
            Err(e) => {
                state.push(iter, f, gradnorm, t, 0.0, &y);
                return Ok(state.finish(y, Some(p), Termination::Failed, Some(e.to_string())));
            }
        };
        let (moved, _) = distance(&y_at, &y_next)?;
        state.push(iter, f, gradnorm, t, moved, &y);
        p = stiefel_to_projection(&y_next);
        y = y_next;
        last_corrected = corrected;
        iter += 1;
        if moved <= stop.step_tol {
            let f_fin = proj_value(p.matrix());
            let g_fin = rgrad_p(&p, &proj_grad(p.matrix()));
            state.push(iter, f_fin, g_fin.norm(), 0.0, 0.0, &y);
            return Ok(state.finish(y, Some(p), stop_kind(Termination::StepTol, corrected), None));
        }
    }
}

/// Orthonormal tangent basis at P from projecting the symmetric matrix
/// basis (upper triangle, column-major) and orthonormalizing.
fn projection_tangent_basis(p: &ProjectionPoint) -> Vec<TangentProjection> {
    let np1 = p.matrix().nrows();
    let kp1 = p.k() + 1;
    let dim = kp1 * (np1 - kp1);
    let mut basis: Vec<DMatrix<f64>> = Vec::with_capacity(dim);
    'outer: for b in 0..np1 {
        for a in 0..=b {
            let mut e = DMatrix::zeros(np1, np1);
            e[(a, b)] = 1.0;
            e[(b, a)] = 1.0;
            let mut cand = tangent_project_p(p, &e).delta().clone();
            for _ in 0..2 {
                for q in &basis {
                    let c = q.dot(&cand);
                    cand -= q * c;
                }
            }
            let nrm = cand.norm();
            if nrm > 1e-8 {
                basis.push(cand.unscale(nrm));
            }
            if basis.len() == dim {
                break 'outer;
            }
        }
    }
    debug_assert_eq!(basis.len(), dim, "tangent space dimension mismatch");
    basis
        .into_iter()
        .map(|m| TangentProjection::from_parts_unchecked(p.clone(), m))
        .collect()
}

fn comm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b - b * a
}

/// The idempotency-preserving update: rotate to the block frame of P,
/// QR-factor I - [P, [P, t Omega]] there with positive diagonal, and
/// conjugate P by the rotated Q. Orthogonal conjugation keeps symmetry,
/// idempotency, and trace exactly; the step agrees with the geodesic to
/// first order in t.
fn qr_retract(p: &ProjectionPoint, omega: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let np1 = p.matrix().nrows();
    let theta = rotation_to_block_frame(p)?;
    let scaled = omega * t;
    let k = comm(p.matrix(), &comm(p.matrix(), &scaled));
    let m = &theta * (DMatrix::identity(np1, np1) - k) * theta.transpose();
    let qr = qr_pos(&m)?;
    let conj = theta.transpose() * qr.q * &theta;
    Ok(&conj * p.matrix() * conj.transpose())
}

/// Newton's method in projection coordinates: solve the tangent-space
/// system H(Delta) = -G over an orthonormal tangent basis (the skew
/// generators Omega with [P, Omega] = Delta parameterize the same space
/// with a stabilizer kernel, so the system is solved gauge-fixed on the
/// tangent side), then step with the QR update above under Armijo
/// backtracking. Singular systems and non-descent directions fall back to
/// a steepest-descent step, counted in `fallbacks`.
pub fn newton_projection(
    oracle: &ObjectiveOracle,
    p0: &ProjectionPoint,
    stop: &StopCriteria,
    reference: Option<&StiefelPoint>,
) -> Result<OptimizerReport> {
    stop.validate()?;
    if !oracle.supports_projection() || oracle.proj_hess_action.is_none() {
        return Err(GraffError::InvalidInput(
            "newton_projection needs proj_value, proj_grad, and proj_hess_action".into(),
        ));
    }
    let mut state = RunState::new(reference);
    let mut p = p0.clone();
    let mut y = projection_to_stiefel(&p)?;
    let mut last_corrected = false;
    let mut iter = 0usize;
    let proj_value = oracle.proj_value.as_ref().expect("checked above");
    let proj_grad = oracle.proj_grad.as_ref().expect("checked above");
    let proj_hess = oracle.proj_hess_action.as_ref().expect("checked above");
    loop {
        let f = proj_value(p.matrix());
        let fp = proj_grad(p.matrix());
        let g = rgrad_p(&p, &fp);
        let gradnorm = g.norm();
        if gradnorm <= stop.grad_tol {
            state.push(iter, f, gradnorm, 0.0, 0.0, &y);
            return Ok(state.finish(
                y,
                Some(p),
                stop_kind(Termination::GradTol, last_corrected),
                None,
            ));
        }
        if iter >= stop.max_iter {
            state.push(iter, f, gradnorm, 0.0, 0.0, &y);
            return Ok(state.finish(y, Some(p), Termination::MaxIter, None));
        }

        let basis = projection_tangent_basis(&p);
        let dim = basis.len();
        let mut a = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        let mut assembly_ok = true;
        for c in 0..dim {
            match hess_p(&p, &fp, |d| proj_hess(p.matrix(), d), &basis[c]) {
                Ok(hc) => {
                    for r in 0..dim {
                        a[(r, c)] = metric_p(&hc, &basis[r])?;
                    }
                }
                Err(_) => {
                    assembly_ok = false;
                    break;
                }
            }
        }
        for r in 0..dim {
            rhs[r] = -metric_p(&g, &basis[r])?;
        }

        let newton_dir = if assembly_ok {
            solve_dense(&a, &rhs).ok().map(|coef| {
                let np1 = p.matrix().nrows();
                let mut d = DMatrix::zeros(np1, np1);
                for (c, b) in basis.iter().enumerate() {
                    d += b.delta() * coef[c];
                }
                TangentProjection::from_parts_unchecked(p.clone(), d)
            })
        } else {
            None
        };
        let newton_dir =
            newton_dir.filter(|d| metric_p(d, &g).map(|slope| slope < 0.0).unwrap_or(false));

        enum Step {
            Retract(f64, DMatrix<f64>),
            Geodesic(f64, DMatrix<f64>),
        }

        let step = match &newton_dir {
            Some(dir) => {
                let slope = metric_p(dir, &g)?;
                let omega = dir.generator();
                let mut t = 1.0;
                let mut accepted = None;
                for _ in 0..=MAX_HALVINGS {
                    if let Ok(cand) = qr_retract(&p, &omega, t) {
                        let f_t = proj_value(&cand);
                        if f_t.is_finite() && f_t <= f + ARMIJO_C * t * slope {
                            accepted = Some(Step::Retract(t, cand));
                            break;
                        }
                    }
                    t *= 0.5;
                }
                accepted
            }
            None => None,
        };

        let step = match step {
            Some(s) => s,
            None => {
                state.fallbacks += 1;
                let (y_at, h) = match tangent_to_stiefel(&g.scaled(-1.0)) {
                    Ok(r) => r,
                    Err(e) => {
                        state.push(iter, f, gradnorm, 0.0, 0.0, &y);
                        return Ok(state.finish(
                            y,
                            Some(p),
                            Termination::Failed,
                            Some(e.to_string()),
                        ));
                    }
                };
                let geo = GeodesicStiefel::new(&y_at, &h)?;
                let value_p = |m: &DMatrix<f64>| proj_value(&(m * m.transpose()));
                let dphi_p = |t: f64| -> Result<f64> {
                    let m = geo.point_raw(t);
                    let gp = proj_grad(&(&m * m.transpose()));
                    Ok(2.0 * (gp * &m).dot(&geo.velocity_raw(t)))
                };
                let (t, _) = match search_on_geodesic(&value_p, Some(&dphi_p), &geo) {
                    Ok(r) => r,
                    Err(e) => {
                        state.push(iter, f, gradnorm, 0.0, 0.0, &y);
                        return Ok(state.finish(
                            y,
                            Some(p),
                            Termination::Failed,
                            Some(e.to_string()),
                        ));
                    }
                };
                if t == 0.0 {
                    state.push(iter, f, gradnorm, 0.0, 0.0, &y);
                    return Ok(state.finish(
                        y,
                        Some(p),
                        stop_kind(Termination::StepTol, last_corrected),
                        None,
                    ));
                }
                Step::Geodesic(t, geo.point_raw(t))
            }
        };

        let (t, p_next, corrected) = match step {
            Step::Retract(t, cand) => match ProjectionPoint::try_new(cand.clone()) {
                Ok(pn) => (t, pn, false),
                Err(GraffError::NotAProjection(_)) => {
                    state.corrections += 1;
                    match correct_feasible(&cand, MatrixForm::Projection) {
                        Ok(CorrectedPoint::Projection(pn)) => (t, pn, true),
                        Ok(CorrectedPoint::Stiefel(_)) => unreachable!("projection form requested"),
                        Err(e) => {
                            state.push(iter, f, gradnorm, t, 0.0, &y);
                            return Ok(state.finish(
                                y,
                                Some(p),
                                Termination::Failed,
                                Some(e.to_string()),
                            ));
                        }
                    }
                }
                Err(e) => {
                    state.push(iter, f, gradnorm, t, 0.0, &y);
                    return Ok(state.finish(y, Some(p), Termination::Failed, Some(e.to_string())));
                }
            },
            Step::Geodesic(t, raw) => {
                let (y_next, corrected) = match accept_stiefel(&raw, &mut state.corrections) {
                    Ok(r) => r,
                    Err(e) => {
                        state.push(iter, f, gradnorm, t, 0.0, &y);
                        return Ok(state.finish(
                            y,
                            Some(p),
                            Termination::Failed,
                            Some(e.to_string()),
                        ));
                    }
                };
                (t, stiefel_to_projection(&y_next), corrected)
            }
        };

        let y_next = match projection_to_stiefel(&p_next) {
            Ok(yn) => yn,
            Err(e) => {
                state.push(iter, f, gradnorm, t, 0.0, &y);
                return Ok(state.finish(y, Some(p), Termination::Failed, Some(e.to_string())));
            }
        };
        let (moved, _) = distance(&y, &y_next)?;
        state.push(iter, f, gradnorm, t, moved, &y);
        p = p_next;
        y = y_next;
        last_corrected = corrected;
        iter += 1;
        if moved <= stop.step_tol {
            let f_fin = proj_value(p.matrix());
            let g_fin = rgrad_p(&p, &proj_grad(p.matrix()));
            state.push(iter, f_fin, g_fin.norm(), 0.0, 0.0, &y);
            return Ok(state.finish(y, Some(p), stop_kind(Termination::StepTol, corrected), None));
        }
    }
}
