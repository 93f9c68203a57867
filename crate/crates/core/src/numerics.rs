//! Dense factorization kernels with pinned conventions.
//!
//! Every decomposition used elsewhere in the crate goes through this module
//! so that ordering and sign conventions are decided in exactly one place:
//! singular values descending, eigenvalues ascending, triangular factors
//! with positive diagonal, and each orthonormal column signed so that its
//! first entry of magnitude above 1e-12 is positive. Geodesics and
//! transports are assembled from these factors, so reruns must reproduce
//! them bitwise; nothing here depends on randomized pivoting or on the
//! backend's internal ordering.

use nalgebra::{DMatrix, DVector};

use crate::error::{GraffError, Result};

/// Entries below this magnitude are ignored when picking a column's sign.
const SIGN_PIVOT_TOL: f64 = 1e-12;

fn check_finite(m: &DMatrix<f64>, who: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(GraffError::InvalidInput(format!(
            "{who}: matrix has non-finite entries"
        )))
    }
}

/// Flips column signs of `u` (and the matching columns of `v`, when given) so
/// the first entry of each column of `u` with |entry| > 1e-12 is positive.
fn fix_column_signs(u: &mut DMatrix<f64>, mut v: Option<&mut DMatrix<f64>>) {
    for j in 0..u.ncols() {
        let pivot = (0..u.nrows())
            .map(|i| u[(i, j)])
            .find(|x| x.abs() > SIGN_PIVOT_TOL);
        if let Some(p) = pivot {
            if p < 0.0 {
                u.column_mut(j).neg_mut();
                if let Some(v) = v.as_deref_mut() {
                    v.column_mut(j).neg_mut();
                }
            }
        }
    }
}

/// Condensed singular value decomposition M = U diag(S) V^T.
///
/// For M of size m x p, `u` is m x r and `v` is p x r with r = min(m, p),
/// both with orthonormal columns; `s` is nonnegative and descending. Sign
/// convention as described in the module docs, applied to the columns of `u`
/// and mirrored onto `v`.
///
/// Computed by one-sided Jacobi rotations rather than bidiagonalization:
/// the rotation criterion is relative to the column norms, so the factors
/// stay accurate (and U stays genuinely orthonormal with a correct
/// reconstruction) even when the matrix is rank deficient, which tangent
/// matrices on Graff routinely are.
#[derive(Debug, Clone)]
pub struct CondensedSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// One-sided Jacobi on a matrix with nrows >= ncols: returns (W, V) with
/// W = M V, the columns of W mutually orthogonal.
fn jacobi_orthogonalize(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let mut w = m.clone();
    let mut v = DMatrix::identity(cols, cols);
    // Quadratic convergence: a handful of sweeps suffices at these sizes.
    // The cap is a safety net, not a tuning parameter.
    for _ in 0..60 {
        let mut rotated = false;
        for i in 0..cols {
            for j in i + 1..cols {
                let a = w.column(i).norm_squared();
                let b = w.column(j).norm_squared();
                let c = w.column(i).dot(&w.column(j));
                if c.abs() <= 1e-15 * (a * b).sqrt() || a == 0.0 || b == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (b - a) / (2.0 * c);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for r in 0..rows {
                    let wi = w[(r, i)];
                    let wj = w[(r, j)];
                    w[(r, i)] = cs * wi - sn * wj;
                    w[(r, j)] = sn * wi + cs * wj;
                }
                for r in 0..cols {
                    let vi = v[(r, i)];
                    let vj = v[(r, j)];
                    v[(r, i)] = cs * vi - sn * vj;
                    v[(r, j)] = sn * vi + cs * vj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

/// Replaces exactly-zero columns of `u` (flagged in `dead`) with unit
/// coordinate directions orthogonal to every other column; greedy and
/// deterministic.
fn fill_dead_columns(u: &mut DMatrix<f64>, dead: &[bool]) {
    let (rows, cols) = u.shape();
    for col in 0..cols {
        if !dead[col] {
            continue;
        }
        let mut best: Option<(f64, DVector<f64>)> = None;
        for cand in 0..rows {
            let mut x = DVector::zeros(rows);
            x[cand] = 1.0;
            for _ in 0..2 {
                for (other, &is_dead) in dead.iter().enumerate() {
                    if other == col || (is_dead && other > col) {
                        continue;
                    }
                    let c = u.column(other).dot(&x);
                    x.axpy(-c, &u.column(other).into_owned(), 1.0);
                }
            }
            let nrm = x.norm();
            if best.as_ref().is_none_or(|(n, _)| nrm > n + 1e-12) {
                best = Some((nrm, x));
            }
        }
        let (nrm, x) = best.expect("rows >= cols guarantees a free direction");
        u.set_column(col, &x.unscale(nrm));
    }
}

pub fn condensed_svd(m: &DMatrix<f64>) -> Result<CondensedSvd> {
    check_finite(m, "condensed_svd")?;
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(GraffError::InvalidInput(
            "condensed_svd: empty matrix".into(),
        ));
    }
    if m.nrows() < m.ncols() {
        // Wide matrix: factor the transpose and swap the roles of U and V.
        let f = condensed_svd(&m.transpose())?;
        return Ok(CondensedSvd {
            u: f.v,
            s: f.s,
            v: f.u,
        });
    }
    let (w, v_full) = jacobi_orthogonalize(m);
    let p = m.ncols();
    let norms: Vec<f64> = (0..p).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap());

    let mut u = DMatrix::zeros(m.nrows(), p);
    let mut v = DMatrix::zeros(p, p);
    let mut s = DVector::zeros(p);
    let mut dead = vec![false; p];
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = norms[src];
        v.set_column(dst, &v_full.column(src));
        if norms[src] > 0.0 {
            u.set_column(dst, &(w.column(src) / norms[src]));
        } else {
            dead[dst] = true;
        }
    }
    fill_dead_columns(&mut u, &dead);
    fix_column_signs(&mut u, Some(&mut v));
    Ok(CondensedSvd { u, s, v })
}

/// Eigendecomposition S = V diag(lambda) V^T of a symmetric matrix.
///
/// Eigenvalues ascending; eigenvector columns follow the crate sign
/// convention. Rejects matrices whose asymmetry exceeds
/// 1e-10 * (1 + ||S||_F); smaller asymmetry is symmetrized away.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub lambda: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn sym_eig(s: &DMatrix<f64>) -> Result<SymEig> {
    check_finite(s, "sym_eig")?;
    if !s.is_square() || s.nrows() == 0 {
        return Err(GraffError::InvalidInput(
            "sym_eig: matrix must be square and nonempty".into(),
        ));
    }
    let asym = (s - s.transpose()).norm();
    if asym > 1e-10 * (1.0 + s.norm()) {
        return Err(GraffError::InvalidInput(format!(
            "sym_eig: matrix is not symmetric, ||S - S^T||_F = {asym:.3e}"
        )));
    }
    let sym = (s + s.transpose()).scale(0.5);
    let ee = sym.symmetric_eigen();
    let n = ee.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ee.eigenvalues[a].partial_cmp(&ee.eigenvalues[b]).unwrap());

    let mut v = DMatrix::zeros(n, n);
    let mut lambda = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        v.set_column(dst, &ee.eigenvectors.column(src));
        lambda[dst] = ee.eigenvalues[src];
    }
    fix_column_signs(&mut v, None);
    Ok(SymEig { lambda, v })
}

/// QR factorization M = QR of a square invertible matrix, normalized so R
/// has strictly positive diagonal (which makes the pair unique).
#[derive(Debug, Clone)]
pub struct QrPos {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl QrPos {
    /// Ratio of largest to smallest |R_ii|, a cheap conditioning proxy.
    pub fn diag_condition(&self) -> f64 {
        let d = (0..self.r.nrows()).map(|i| self.r[(i, i)].abs());
        let max = d.clone().fold(0.0f64, f64::max);
        let min = d.fold(f64::INFINITY, f64::min);
        max / min
    }
}

pub fn qr_pos(m: &DMatrix<f64>) -> Result<QrPos> {
    check_finite(m, "qr_pos")?;
    if !m.is_square() || m.nrows() == 0 {
        return Err(GraffError::InvalidInput(
            "qr_pos: matrix must be square and nonempty".into(),
        ));
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    let n = r.nrows();
    let max_diag = (0..n).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    for i in 0..n {
        if r[(i, i)].abs() <= 1e-14 * (1.0 + max_diag) {
            return Err(GraffError::SingularMatrix(format!(
                "qr_pos: |R[{i},{i}]| = {:.3e} is numerically zero",
                r[(i, i)].abs()
            )));
        }
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    Ok(QrPos { q, r })
}

/// Symmetric Householder reflector Q with Q^T v = ||v|| e_last.
///
/// Q = I - 2 w w^T / ||w||^2 with w = v - ||v|| e_last; Q is orthogonal and
/// equal to its own transpose and inverse. Returns the identity when v is
/// already a positive multiple of e_last (so the reflector is exact there),
/// and `ZeroVector` when ||v|| <= 1e-14.
pub fn householder_align(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    if !v.iter().all(|x| x.is_finite()) {
        return Err(GraffError::InvalidInput(
            "householder_align: non-finite entries".into(),
        ));
    }
    let d = v.len();
    if d == 0 {
        return Err(GraffError::InvalidInput(
            "householder_align: empty vector".into(),
        ));
    }
    let nrm = v.norm();
    if nrm <= 1e-14 {
        return Err(GraffError::ZeroVector);
    }
    let rest_sq = v.rows(0, d - 1).norm_squared();
    if rest_sq == 0.0 && v[d - 1] > 0.0 {
        return Ok(DMatrix::identity(d, d));
    }
    let mut w = v.clone();
    // v[d-1] - nrm cancels when v is nearly aligned with +e_last; the
    // algebraically equal form below stays accurate in that regime.
    w[d - 1] = if v[d - 1] > 0.0 {
        -rest_sq / (v[d - 1] + nrm)
    } else {
        v[d - 1] - nrm
    };
    let ww = w.norm_squared();
    if ww == 0.0 {
        return Ok(DMatrix::identity(d, d));
    }
    let mut q = DMatrix::identity(d, d);
    q.ger(-2.0 / ww, &w, &w, 1.0);
    Ok(q)
}

/// Solves Ax = b for square A by LU with partial pivoting, then verifies the
/// residual: ||Ax - b|| <= 1e-10 (||A||_F ||x|| + ||b||) or the system is
/// reported singular.
pub fn solve_dense(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    check_finite(a, "solve_dense")?;
    if !a.is_square() {
        return Err(GraffError::InvalidInput(
            "solve_dense: matrix must be square".into(),
        ));
    }
    if a.nrows() != b.len() {
        return Err(GraffError::InvalidInput(format!(
            "solve_dense: dimension mismatch, A is {}x{} but b has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if !b.iter().all(|x| x.is_finite()) {
        return Err(GraffError::InvalidInput(
            "solve_dense: rhs has non-finite entries".into(),
        ));
    }
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| GraffError::SingularMatrix("solve_dense: zero pivot in LU".into()))?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(GraffError::SingularMatrix(
            "solve_dense: solution has non-finite entries".into(),
        ));
    }
    let resid = (a * &x - b).norm();
    let bound = 1e-10 * (a.norm() * x.norm() + b.norm());
    if resid > bound {
        return Err(GraffError::SingularMatrix(format!(
            "solve_dense: residual {resid:.3e} exceeds bound {bound:.3e}"
        )));
    }
    Ok(x)
}

/// Orthonormalizes the columns of a tall matrix (nrows >= ncols) by thin QR,
/// errors with `RankDeficient` when a diagonal entry of R collapses.
///
/// The output spans the same column space and depends deterministically on
/// the input. Used for reorthogonalization and for turning Gaussian draws
/// into orthonormal frames.
pub fn thin_qr_orthonormalize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_finite(m, "thin_qr_orthonormalize")?;
    let (rows, cols) = m.shape();
    if cols == 0 || rows < cols {
        return Err(GraffError::InvalidInput(format!(
            "thin_qr_orthonormalize: need nrows >= ncols >= 1, got {rows}x{cols}"
        )));
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    let max_diag = (0..cols).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    for i in 0..cols {
        if r[(i, i)].abs() <= 1e-12 * (1.0 + max_diag) {
            return Err(GraffError::RankDeficient(format!(
                "thin_qr_orthonormalize: |R[{i},{i}]| = {:.3e}",
                r[(i, i)].abs()
            )));
        }
        if r[(i, i)] < 0.0 {
            q.column_mut(i).neg_mut();
        }
    }
    Ok(q)
}
