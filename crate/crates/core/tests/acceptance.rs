//! End-to-end acceptance gate: nine numbered criteria covering benchmark
//! correctness, solver behavior, the geometry and interchange suites,
//! derivative consistency, hand-computed fixtures, and feasibility
//! bookkeeping. Each test prints one `ACCEPTANCE n: PASS|FAIL` line; run
//! with `--nocapture` to see them all.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;

use graffopt::checks::{run_suite, CheckResult};
use graffopt::coords::{random_point, StiefelPoint};
use graffopt::geom_stiefel::{distance, exp, random_tangent};
use graffopt::optimize::{
    cg_stiefel, newton_stiefel, sd_stiefel, OptimizerReport, StopCriteria, Termination,
};
use graffopt::problems::{
    geodesic_midpoint, mean_random, quad_oracle, quad_random, quad_solution, QuadraticInstance,
};
use graffopt::GraffError;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn verdict(n: usize, pass: bool, detail: &str) {
    println!("ACCEPTANCE {n}: {}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

struct QuadRun {
    sd: OptimizerReport,
    cg: OptimizerReport,
    sd_dist: f64,
    cg_dist: f64,
    sd_ferr: f64,
    cg_ferr: f64,
}

struct QuadBench {
    runs: Vec<QuadRun>,
    elapsed_s: f64,
}

/// The 20 Graff(3,6) quadratic runs shared by criteria 1, 2, and 9.
fn quad_bench() -> &'static QuadBench {
    static BENCH: OnceLock<QuadBench> = OnceLock::new();
    BENCH.get_or_init(|| {
        let stop = StopCriteria::default();
        let start = Instant::now();
        let runs = (0..20u64)
            .map(|i| {
                let inst = quad_random(6, 3, 100 + i).unwrap();
                let oracle = quad_oracle(&inst);
                let sol = quad_solution(&inst).unwrap();
                let y0 = random_point(6, 3, 9_000 + i).unwrap();
                let sd = sd_stiefel(&oracle, &y0, &stop, Some(&sol.minimizer)).unwrap();
                let cg = cg_stiefel(&oracle, &y0, &stop, Some(&sol.minimizer)).unwrap();
                let dist_to =
                    |r: &OptimizerReport| distance(&r.final_point, &sol.minimizer).unwrap().0;
                let ferr = |r: &OptimizerReport| {
                    (r.records.last().map(|rec| rec.f).unwrap() - sol.opt_value).abs()
                };
                QuadRun {
                    sd_dist: dist_to(&sd),
                    cg_dist: dist_to(&cg),
                    sd_ferr: ferr(&sd),
                    cg_ferr: ferr(&cg),
                    sd,
                    cg,
                }
            })
            .collect();
        QuadBench {
            runs,
            elapsed_s: start.elapsed().as_secs_f64(),
        }
    })
}

/// The 10 Graff(7,19) two-point Karcher runs shared by criteria 3 and 9.
fn mean_bench() -> &'static Vec<(OptimizerReport, f64)> {
    static BENCH: OnceLock<Vec<(OptimizerReport, f64)>> = OnceLock::new();
    BENCH.get_or_init(|| {
        let stop = StopCriteria {
            grad_tol: 1e-8,
            step_tol: 1e-12,
            max_iter: 200,
        };
        (0..10u64)
            .map(|i| {
                let inst = mean_random(19, 7, 2, 300 + i).unwrap();
                let target = geodesic_midpoint(&inst.points()[0], &inst.points()[1]).unwrap();
                let report =
                    sd_stiefel(&inst.oracle(), &inst.points()[0], &stop, Some(&target)).unwrap();
                let d = distance(&report.final_point, &target).unwrap().0;
                (report, d)
            })
            .collect()
    })
}

/// The 20 Graff(2,5) Newton runs shared by criteria 4 and 9.
fn newton_bench() -> &'static Vec<OptimizerReport> {
    static BENCH: OnceLock<Vec<OptimizerReport>> = OnceLock::new();
    BENCH.get_or_init(|| {
        let stop = StopCriteria {
            grad_tol: 1e-10,
            step_tol: 1e-14,
            max_iter: 10,
        };
        (0..20u64)
            .map(|i| {
                let inst = quad_random(5, 2, 400 + i).unwrap();
                let oracle = quad_oracle(&inst);
                let sol = quad_solution(&inst).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(9_500 + i);
                let dir = random_tangent(&sol.minimizer, &mut rng);
                let dir = dir.scaled(1.0 / dir.norm());
                let y0 = exp(&sol.minimizer, &dir, 0.1).unwrap();
                newton_stiefel(&oracle, &y0, &stop, Some(&sol.minimizer)).unwrap()
            })
            .collect()
    })
}

fn find<'a>(results: &'a [CheckResult], name: &str) -> &'a CheckResult {
    results
        .iter()
        .find(|r| r.name == name)
        .unwrap_or_else(|| panic!("check {name} missing from suite"))
}

#[test]
fn acceptance_1_quadratic_benchmark() {
    let bench = quad_bench();
    let mut worst_dist = 0.0f64;
    let mut worst_ferr = 0.0f64;
    for run in &bench.runs {
        worst_dist = worst_dist.max(run.sd_dist).max(run.cg_dist);
        worst_ferr = worst_ferr.max(run.sd_ferr).max(run.cg_ferr);
    }
    let pass = worst_dist <= 1e-5 && worst_ferr <= 1e-8 && bench.elapsed_s < 10.0;
    verdict(
        1,
        pass,
        &format!(
            "worst distance {worst_dist:.3e} (<= 1e-5), worst objective error {worst_ferr:.3e} \
             (<= 1e-8), elapsed {:.2}s (< 10s)",
            bench.elapsed_s
        ),
    );
}

#[test]
fn acceptance_2_cg_beats_sd_on_iterations() {
    let bench = quad_bench();
    let median = |mut v: Vec<usize>| -> f64 {
        v.sort_unstable();
        let m = v.len() / 2;
        if v.len() % 2 == 0 {
            (v[m - 1] + v[m]) as f64 / 2.0
        } else {
            v[m] as f64
        }
    };
    let iters = |r: &OptimizerReport| r.records.last().unwrap().iter;
    let sd_med = median(bench.runs.iter().map(|r| iters(&r.sd)).collect());
    let cg_med = median(bench.runs.iter().map(|r| iters(&r.cg)).collect());
    let pass = cg_med <= 0.7 * sd_med;
    verdict(
        2,
        pass,
        &format!("median CG iterations {cg_med} vs 0.7 x median SD {sd_med}"),
    );
}

#[test]
fn acceptance_3_karcher_mean_of_two() {
    let runs = mean_bench();
    let worst = runs.iter().map(|(_, d)| *d).fold(0.0f64, f64::max);
    let iter_cap = runs
        .iter()
        .all(|(r, _)| r.records.last().unwrap().iter <= 200);
    let pass = worst <= 1e-5 && iter_cap;
    verdict(
        3,
        pass,
        &format!("worst distance to the midpoint {worst:.3e} (<= 1e-5), all within 200 iterations: {iter_cap}"),
    );
}

#[test]
fn acceptance_4_newton_local_convergence() {
    let runs = newton_bench();
    let successes = runs
        .iter()
        .filter(|r| {
            let last = r.records.last().unwrap();
            last.gradnorm <= 1e-10 && last.iter <= 10
        })
        .count();
    let pass = successes >= 18;
    verdict(
        4,
        pass,
        &format!("{successes}/20 seeds reached gradnorm <= 1e-10 within 10 iterations"),
    );
}

#[test]
fn acceptance_5_geometry_suite() {
    let results = run_suite("geometry").unwrap();
    let required = [
        "geometry/exp-log-roundtrip",
        "geometry/transport-isometry",
        "geometry/transport-tangency",
        "geometry/distance-metric-axioms",
        "geometry/distance-representative-invariance",
    ];
    let mut detail = String::new();
    let mut pass = true;
    for name in required {
        let r = find(&results, name);
        let ok = r.pass && r.samples >= 1000;
        pass &= ok;
        detail.push_str(&format!(
            "{name}: {} samples, residual {:.3e} vs {:.1e}; ",
            r.samples, r.max_residual, r.tolerance
        ));
    }
    verdict(5, pass, &detail);
}

#[test]
fn acceptance_6_interchange_suite() {
    let coords = run_suite("coords").unwrap();
    let inter = run_suite("interchange").unwrap();
    let roundtrip = find(&coords, "coords/roundtrip-preserves-flat");
    let grad = find(&inter, "interchange/gradient-correspondence");
    let step = find(&inter, "interchange/sd-step-commutes");
    let fin = find(&inter, "interchange/final-objectives-agree");
    let pass = roundtrip.pass && roundtrip.tolerance <= 1e-10 && grad.pass && step.pass && fin.pass;
    verdict(
        6,
        pass,
        &format!(
            "roundtrip {:.3e}, gradient {:.3e}, one-step {:.3e}, final objectives {:.3e}",
            roundtrip.max_residual, grad.max_residual, step.max_residual, fin.max_residual
        ),
    );
}

#[test]
fn acceptance_7_derivative_checks() {
    let results = run_suite("derivative").unwrap();
    let mut pass = true;
    let mut detail = String::new();
    for r in &results {
        pass &= r.pass;
        detail.push_str(&format!("{}: {:.3e}; ", r.name, r.max_residual));
    }
    // Gradients for both objectives in both systems, Hessians wherever
    // second derivatives exist (the quadratic, both systems).
    for name in [
        "derivative/quad-grad-stiefel",
        "derivative/quad-hess-stiefel",
        "derivative/quad-grad-projection",
        "derivative/quad-hess-projection",
        "derivative/mean-grad-stiefel",
        "derivative/mean-grad-projection",
    ] {
        let r = find(&results, name);
        pass &= r.samples >= 100;
    }
    verdict(7, pass, &detail);
}

#[test]
fn acceptance_8_hand_computed_fixtures() {
    let tol = 1e-10;
    let mut detail = String::new();
    let mut pass = true;

    // Parallel lines in R^2: span{e1} through 0 and through e2.
    let y1 = StiefelPoint::try_new(DMatrix::from_column_slice(
        3,
        2,
        &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    ))
    .unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let y2 = StiefelPoint::try_new(DMatrix::from_column_slice(
        3,
        2,
        &[1.0, 0.0, 0.0, 0.0, s, s],
    ))
    .unwrap();
    let (d, _) = distance(&y1, &y2).unwrap();
    let lines_err = (d - std::f64::consts::FRAC_PI_4).abs();
    pass &= lines_err <= tol;
    detail.push_str(&format!("parallel lines |d - pi/4| = {lines_err:.3e}; "));

    // Midpoint of the points 0 and 1 on Graff(0,1).
    let p0 = StiefelPoint::try_new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
    let p1 = StiefelPoint::try_new(DMatrix::from_column_slice(2, 1, &[s, s])).unwrap();
    let mid = geodesic_midpoint(&p0, &p1).unwrap();
    let b = mid.matrix()[(0, 0)] / mid.matrix()[(1, 0)];
    let mid_err = (b - (std::f64::consts::FRAC_PI_8).tan()).abs();
    pass &= mid_err <= tol;
    detail.push_str(&format!("midpoint |b - tan(pi/8)| = {mid_err:.3e}; "));

    // diag(4,3,2,1), k=1: optimum 3 at span{e3} + 0.
    let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 3.0, 2.0, 1.0]));
    let inst = QuadraticInstance::from_matrix(m, 3, 1, 0).unwrap();
    let sol = quad_solution(&inst).unwrap();
    let expected = StiefelPoint::try_new(DMatrix::from_column_slice(
        4,
        2,
        &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    ))
    .unwrap();
    let opt_err = (sol.opt_value - 3.0).abs();
    let (min_dist, _) = distance(&sol.minimizer, &expected).unwrap();
    pass &= opt_err <= tol && min_dist <= tol;
    detail.push_str(&format!(
        "diag(4,3,2,1) |opt - 3| = {opt_err:.3e}, minimizer off span(e3)+0 by {min_dist:.3e}; "
    ));

    // diag(1,2,3,4), k=1: the bottom eigenspace is vertical.
    let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
    let inst = QuadraticInstance::from_matrix(m, 3, 1, 0).unwrap();
    let infeasible = matches!(quad_solution(&inst), Err(GraffError::OracleInfeasible(_)));
    pass &= infeasible;
    detail.push_str(&format!(
        "diag(1,2,3,4) raises OracleInfeasible: {infeasible}"
    ));

    verdict(8, pass, &detail);
}

#[test]
fn acceptance_9_feasibility_and_corrections() {
    let coords = run_suite("coords").unwrap();
    let feas = find(&coords, "coords/random-point-feasible");
    let feas_ok = feas.pass && feas.samples >= 10_000;

    let quad_corr: usize = quad_bench()
        .runs
        .iter()
        .map(|r| r.sd.corrections + r.cg.corrections)
        .sum();
    let mean_corr: usize = mean_bench().iter().map(|(r, _)| r.corrections).sum();
    let newton_corr: usize = newton_bench().iter().map(|r| r.corrections).sum();
    let corr_total = quad_corr + mean_corr + newton_corr;

    let geometry = run_suite("geometry").unwrap();
    let literal = find(&geometry, "geometry/projection-exp-literal-finding");
    let literal_ok = literal.pass && literal.note.is_some();

    let pass = feas_ok && corr_total == 0 && literal_ok;
    verdict(
        9,
        pass,
        &format!(
            "{} random points feasible: {feas_ok}; corrections across criteria 1-4 runs: \
             {corr_total}; literal exp finding documented: {:?}",
            feas.samples, literal.note
        ),
    );
}

#[test]
fn benchmark_runs_terminate_cleanly() {
    for run in &quad_bench().runs {
        for r in [&run.sd, &run.cg] {
            assert!(
                matches!(r.termination, Termination::GradTol | Termination::StepTol),
                "unexpected termination {:?} ({:?})",
                r.termination,
                r.failure
            );
        }
    }
    for (r, _) in mean_bench() {
        assert!(r.failure.is_none(), "karcher run failed: {:?}", r.failure);
    }
}
