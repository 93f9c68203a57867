//! The two benchmark problems with closed-form references: trace
//! minimization of a bordered quadratic form, whose optimum is the sum of
//! the k+1 smallest eigenvalues, and the Karcher mean of flats, whose m=2
//! case is the geodesic midpoint.
//!
//! Instances are immutable and seeded, oracles are pure, and everything is
//! safe to share across parallel trials. Instances serialize to the GRAFF
//! matrix format next to a small JSON manifest carrying a payload checksum
//! for reproducible benchmarking.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coords::{canonicalize_stiefel, random_point, StiefelPoint};
use crate::error::{GraffError, Result};
use crate::geom_stiefel::{distance_raw, geodesic_between, log_raw};
use crate::io::{save_matrix_text, MatrixForm};
use crate::numerics::sym_eig;
use crate::optimize::ObjectiveOracle;

/// Quadratic trace benchmark: minimize tr(Y^T M Y) over Graff(k,n), with
/// M the bordered symmetric matrix [A, b; b^T, c].
#[derive(Debug, Clone)]
pub struct QuadraticInstance {
    m: DMatrix<f64>,
    n: usize,
    k: usize,
    seed: u64,
}

impl QuadraticInstance {
    /// Wraps an explicit matrix; it must be (n+1) x (n+1) and symmetric
    /// to 1e-12.
    pub fn from_matrix(m: DMatrix<f64>, n: usize, k: usize, seed: u64) -> Result<Self> {
        if k >= n || m.nrows() != n + 1 || m.ncols() != n + 1 {
            return Err(GraffError::InvalidInput(format!(
                "quadratic instance needs a square (n+1) x (n+1) matrix with k < n, got {}x{} for n={n}, k={k}",
                m.nrows(),
                m.ncols()
            )));
        }
        if (&m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
            return Err(GraffError::InvalidInput(
                "quadratic instance matrix must be symmetric".into(),
            ));
        }
        Ok(Self { m, n, k, seed })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Saves the matrix as `quadratic.graff` plus `manifest.json` in `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_matrix_text(
            &dir.join("quadratic.graff"),
            MatrixForm::Dense,
            self.n,
            self.k,
            &self.m,
        )?;
        let manifest = InstanceManifest {
            problem: "quadratic".into(),
            n: self.n,
            k: self.k,
            m: None,
            seed: self.seed,
            checksum: checksum_matrices(std::iter::once(&self.m)),
        };
        manifest.save(&dir.join("manifest.json"))
    }
}

/// Closed-form solution of a quadratic instance.
#[derive(Debug, Clone)]
pub struct QuadraticSolution {
    /// Sum of the k+1 smallest eigenvalues of M.
    pub opt_value: f64,
    /// Canonical frame spanning the bottom eigenspace.
    pub minimizer: StiefelPoint,
    /// Full spectrum of M, ascending.
    pub spectrum: DVector<f64>,
}

/// Draws a quadratic instance: A = (G + G^T)/2 with G standard normal,
/// then b and c standard normal, assembled as M = [A, b; b^T, c].
/// Deterministic per seed.
pub fn quad_random(n: usize, k: usize, seed: u64) -> Result<QuadraticInstance> {
    if k >= n {
        return Err(GraffError::InvalidInput(format!(
            "quad_random: need 0 <= k < n, got k={k}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
    }
    let a = (&g + g.transpose()) * 0.5;
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&a);
    for i in 0..n {
        let bi: f64 = rng.sample(rand_distr::StandardNormal);
        m[(i, n)] = bi;
        m[(n, i)] = bi;
    }
    m[(n, n)] = rng.sample::<f64, _>(rand_distr::StandardNormal);
    QuadraticInstance::from_matrix(m, n, k, seed)
}

/// Oracle for tr(Y^T M Y): Euclidean derivative 2MY, second derivative
/// action 2M Delta; in projection coordinates tr(MP) with derivative M and
/// vanishing second derivative. The trace form is invariant under the
/// right orthogonal action.
pub fn quad_oracle(inst: &QuadraticInstance) -> ObjectiveOracle {
    let m_val = inst.m.clone();
    let m_grad = inst.m.clone();
    let m_hess = inst.m.clone();
    let m_pval = inst.m.clone();
    let m_pgrad = inst.m.clone();
    ObjectiveOracle {
        value: Box::new(move |y| (y.transpose() * &m_val * y).trace()),
        euclid_grad: Some(Box::new(move |y| &m_grad * y * 2.0)),
        riem_grad: None,
        euclid_hess_action: Some(Box::new(move |_, d| &m_hess * d * 2.0)),
        proj_value: Some(Box::new(move |p| (&m_pval * p).trace())),
        proj_grad: Some(Box::new(move |_| m_pgrad.clone())),
        proj_hess_action: Some(Box::new(|_, d| d * 0.0)),
        invariance_declared: true,
    }
}

/// Closed-form minimizer: the bottom k+1 eigenvectors of M, canonicalized.
/// The eigenspace fails feasibility only on a measure-zero set (it must
/// avoid being contained in R^n); such instances surface as
/// `OracleInfeasible` so the caller can regenerate.
pub fn quad_solution(inst: &QuadraticInstance) -> Result<QuadraticSolution> {
    let eig = sym_eig(&inst.m)?;
    let np1 = inst.n + 1;
    let kp1 = inst.k + 1;
    let mut bottom = DMatrix::zeros(np1, kp1);
    for j in 0..kp1 {
        bottom.set_column(j, &eig.v.column(j));
    }
    let minimizer = match canonicalize_stiefel(&bottom) {
        Ok(y) => y,
        Err(GraffError::InfeasiblePoint { gamma, .. }) => {
            return Err(GraffError::OracleInfeasible(format!(
                "bottom eigenspace lies in R^n (gamma = {gamma:.3e}); regenerate the instance"
            )));
        }
        Err(e) => return Err(e),
    };
    let opt_value = (0..kp1).map(|j| eig.lambda[j]).sum();
    Ok(QuadraticSolution {
        opt_value,
        minimizer,
        spectrum: eig.lambda,
    })
}

/// Karcher mean benchmark: minimize the sum of squared geodesic distances
/// to m fixed flats on a common Graff(k,n).
#[derive(Debug, Clone)]
pub struct MeanInstance {
    points: Vec<StiefelPoint>,
    n: usize,
    k: usize,
    seed: u64,
}

impl MeanInstance {
    /// Wraps explicit points; at least two, all on the same Graff(k,n),
    /// and pairwise connectable by a unique geodesic.
    pub fn from_points(points: Vec<StiefelPoint>, seed: u64) -> Result<Self> {
        if points.len() < 2 {
            return Err(GraffError::InvalidInput(
                "mean instance needs at least two points".into(),
            ));
        }
        let (n, k) = (points[0].n(), points[0].k());
        for p in &points[1..] {
            if p.n() != n || p.k() != k {
                return Err(GraffError::InvalidInput(
                    "mean instance points live on different Graff(k,n)".into(),
                ));
            }
        }
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                geodesic_between(&points[i], &points[j])?;
            }
        }
        Ok(Self { points, n, k, seed })
    }

    pub fn points(&self) -> &[StiefelPoint] {
        &self.points
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.points.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Saves the points as `point_<i>.graff` plus `manifest.json` in `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, p) in self.points.iter().enumerate() {
            save_matrix_text(
                &dir.join(format!("point_{i}.graff")),
                MatrixForm::Stiefel,
                self.n,
                self.k,
                p.matrix(),
            )?;
        }
        let manifest = InstanceManifest {
            problem: "mean".into(),
            n: self.n,
            k: self.k,
            m: Some(self.points.len()),
            seed: self.seed,
            checksum: checksum_matrices(self.points.iter().map(|p| p.matrix())),
        };
        manifest.save(&dir.join("manifest.json"))
    }
}

/// Draws m mutually connectable random flats. Each point gets a bounded
/// number of attempts with seeds derived from (seed, index, attempt); a
/// draw with an orthogonal direction pair against an earlier point (a
/// measure-zero event) is redrawn. Deterministic per seed.
pub fn mean_random(n: usize, k: usize, m: usize, seed: u64) -> Result<MeanInstance> {
    if m < 2 {
        return Err(GraffError::InvalidInput(format!(
            "mean_random: need m >= 2 points, got {m}"
        )));
    }
    const ATTEMPTS: usize = 32;
    let mut points: Vec<StiefelPoint> = Vec::with_capacity(m);
    for i in 0..m {
        let mut accepted = None;
        for attempt in 0..ATTEMPTS {
            let derived =
                seed.wrapping_add(((i * 37 + attempt) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let cand = random_point(n, k, derived)?;
            let connectable = points.iter().all(|p| geodesic_between(p, &cand).is_ok());
            if connectable {
                accepted = Some(cand);
                break;
            }
        }
        match accepted {
            Some(p) => points.push(p),
            None => {
                return Err(GraffError::InvalidInput(format!(
                    "mean_random: point {i} not connectable after {ATTEMPTS} attempts"
                )));
            }
        }
    }
    MeanInstance::from_points(points, seed)
}

/// Oracle for the sum of squared distances over a fixed point list. The
/// Riemannian gradient is supplied directly as -2 sum log_X(points_i); a
/// log that hits an orthogonal direction pair propagates
/// `GeodesicSingular`. The plain value stays finite there (distances are
/// defined even where the geodesic is not unique) and degrades to NaN
/// only on structural evaluation failures, which the solvers treat as a
/// failed run.
pub fn mean_oracle(points: &[StiefelPoint]) -> ObjectiveOracle {
    let pts_val = points.to_vec();
    let pts_grad = points.to_vec();
    ObjectiveOracle {
        value: Box::new(move |x| {
            pts_val
                .iter()
                .map(|p| {
                    distance_raw(x, p.matrix())
                        .map(|d| d * d)
                        .unwrap_or(f64::NAN)
                })
                .sum()
        }),
        euclid_grad: None,
        riem_grad: Some(Box::new(move |x| {
            let mut g = DMatrix::zeros(x.nrows(), x.ncols());
            for p in &pts_grad {
                g -= log_raw(x, p.matrix())? * 2.0;
            }
            Ok(g)
        })),
        euclid_hess_action: None,
        proj_value: None,
        proj_grad: None,
        proj_hess_action: None,
        invariance_declared: true,
    }
}

impl MeanInstance {
    pub fn oracle(&self) -> ObjectiveOracle {
        mean_oracle(&self.points)
    }
}

/// Midpoint of the unique geodesic between two flats; for two points this
/// is the exact Fréchet mean. Equidistant from both ends, at half the
/// total distance.
pub fn geodesic_midpoint(y1: &StiefelPoint, y2: &StiefelPoint) -> Result<StiefelPoint> {
    if (y1.matrix() - y2.matrix()).amax() == 0.0 {
        return Ok(y1.clone());
    }
    geodesic_between(y1, y2)?.point(0.5)
}

/// Reproducibility manifest stored next to serialized instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceManifest {
    pub problem: String,
    pub n: usize,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    pub seed: u64,
    /// FNV-1a over the row-major little-endian f64 payload bytes.
    pub checksum: u64,
}

impl InstanceManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| GraffError::InvalidInput(format!("manifest serialization: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| GraffError::Parse(format!("manifest {}: {e}", path.display())))
    }
}

/// FNV-1a 64 over the matrices' row-major entries as little-endian bit
/// patterns: stable across platforms, sensitive to every payload bit.
fn checksum_matrices<'a>(mats: impl Iterator<Item = &'a DMatrix<f64>>) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for m in mats {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                for byte in m[(i, j)].to_bits().to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(PRIME);
                }
            }
        }
    }
    h
}
