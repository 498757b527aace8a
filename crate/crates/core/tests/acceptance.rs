//! Acceptance harness: runs every numbered criterion at its stated tolerance
//! and prints one line per criterion. Exits nonzero if any criterion fails.
//!
//! Run alone with `cargo test -p pdichotomy --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pdichotomy::horizon::{
    average_cost_gap, cauchy_direct, cauchy_solve, homogeneous_boundary_solution, solve_lq_dichotomy,
    solve_lq_shooting, stability_ratio, turnpike_report,
};
use pdichotomy::linalg::column;
use pdichotomy::lyapunov::{solve_plde_stein, solve_plde_truncated, TruncationOptions};
use pdichotomy::problem::{builtin_problem, BUILTIN_PROBLEMS};
use pdichotomy::report::Check;
use pdichotomy::riccati::{riccati_decay_report, riccati_orbit, solve_riccati_terminal};
use pdichotomy::{extremal, Grid, MatrixPath, PeriodicAnalysis, PipelineOptions, Result};

const GRID: usize = 2048;
const SEED: u64 = 20_240_917;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Result<Vec<Check>>,
}

fn analysis(name: &str) -> Result<PeriodicAnalysis> {
    PeriodicAnalysis::build(&builtin_problem(name)?, &PipelineOptions::with_steps(GRID))
}

fn sup_abs(path: &MatrixPath, target: f64) -> f64 {
    path.samples()
        .iter()
        .flat_map(|x| x.iter().map(|v| (v - target).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

fn random_column(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0))
}

// Costs below are the unhalved integral 2·C, the normalization of the reference numbers.
fn reference_costs() -> Result<Vec<Check>> {
    let a = analysis("paper-2d")?;
    let horizon = 30.0;
    let sol = solve_lq_dichotomy(&a.problem, &a.transform, &a.extremal, &column(&[0.2, 0.0]), horizon)?;
    let periodic = horizon / a.problem.theta * a.extremal.cost;
    Ok(vec![
        Check::relative("2·C_T(u^T), T = 30", 2.0 * sol.cost, 21.4649, 0.01),
        Check::relative("2·(T/θ)·C_θ(u_θ)", 2.0 * periodic, 21.6937, 0.01),
    ])
}

fn scalar_equilibria() -> Result<Vec<Check>> {
    let p = builtin_problem("scalar-c3")?;
    let grid = Grid::new(p.theta, GRID)?;
    let horizon = 5.0 * p.theta;
    let mut checks = Vec::new();
    for seed in [3.5, 10.0, 100.0] {
        let path = solve_riccati_terminal(&p, &DMatrix::from_element(1, 1, seed), horizon, 0.0, &grid)?;
        checks.push(Check::at_most(
            format!("backward from {seed}: |p(T−5θ) − 3|"),
            (path.first()[0] - 3.0).abs(),
            1e-6,
        ));
    }
    let forward = riccati_orbit(&p, &DMatrix::zeros(1, 1), 0.0, horizon, &grid)?;
    checks.push(Check::at_most("forward from 0: |p(5θ) + 1|", (forward.last()[0] + 1.0).abs(), 1e-6));
    Ok(checks)
}

fn analytic_oracles() -> Result<Vec<Check>> {
    let a = analysis("scalar-a0")?;
    let ext = &a.extremal;
    Ok(vec![
        Check::at_most("sup |P − 1|", sup_abs(&a.riccati.p, 1.0), 1e-8),
        Check::at_most("sup |E + 1/2|", sup_abs(&a.lyapunov.e, -0.5), 1e-8),
        Check::at_most("sup |y_θ − 1|", sup_abs(&ext.y, 1.0), 1e-7),
        Check::at_most("sup |λ_θ|", sup_abs(&ext.lambda, 0.0), 1e-7),
        Check::at_most("sup |u_θ|", sup_abs(&ext.u, 0.0), 1e-7),
    ])
}

fn residual_suite() -> Result<Vec<Check>> {
    let a = analysis("paper-2d")?;
    let r = extremal::extremal_residual(&a.extremal, &a.problem);
    Ok(vec![
        Check::at_most("Riccati residual", a.riccati.residual_sup, 1e-8),
        Check::at_most("Lyapunov residual", a.lyapunov.residual_sup, 1e-7),
        Check::at_most("decoupling residual", a.transform.decoupling_residual(&a.problem), 1e-6),
        Check::at_most("state equation residual", r.state_residual, 1e-6),
        Check::at_most("costate equation residual", r.costate_residual, 1e-6),
        Check::at_most("state periodicity gap", r.state_gap, 1e-8),
        Check::at_most("costate periodicity gap", r.costate_gap, 1e-8),
        Check::at_most("T·T⁻¹ identity", a.transform.inverse_identity_residual(), 1e-10),
    ])
}

fn cross_solver() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for name in BUILTIN_PROBLEMS {
        let a = analysis(name)?;
        let mut y0 = DMatrix::zeros(a.problem.n, 1);
        y0[0] = 0.2;
        let d = solve_lq_dichotomy(&a.problem, &a.transform, &a.extremal, &y0, 10.0)?;
        let s = solve_lq_shooting(&a.problem, &a.grid, &y0, 10.0)?;
        checks.push(Check::at_most(format!("{name}: sup |dichotomy − shooting|"), d.sup_distance(&s), 1e-6));
    }
    Ok(checks)
}

fn turnpike() -> Result<Vec<Check>> {
    let a = analysis("paper-2d")?;
    let sol = solve_lq_dichotomy(&a.problem, &a.transform, &a.extremal, &column(&[0.2, 0.0]), 30.0)?;
    let rep = turnpike_report(&sol, &a.extremal, &a.riccati.decay)?;
    let nu_hat = rep.nu_hat.unwrap_or(f64::NAN);
    Ok(vec![
        Check::at_least("two-exponential bound holds (1 = yes)", f64::from(u8::from(rep.bound_satisfied)), 1.0),
        Check::relative("fitted ν vs ν̂", rep.fitted_nu.unwrap_or(f64::NAN), nu_hat, 0.30),
        Check::at_most("e(T/2)", rep.mid_error, 1e-3),
    ])
}

fn riccati_decay() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let a = analysis("paper-2d")?;
    let rep = riccati_decay_report(&a.problem, &a.riccati, &DMatrix::identity(2, 2), 10.0 * a.problem.theta, 5, &a.grid)?;
    checks.push(Check::relative(
        "paper-2d: fitted rate vs 2ν̂",
        rep.fit.map_or(f64::NAN, |f| f.rate),
        rep.two_nu_hat.unwrap_or(f64::NAN),
        0.15,
    ));
    let c3 = analysis("scalar-c3")?;
    let rep = riccati_decay_report(&c3.problem, &c3.riccati, &DMatrix::from_element(1, 1, 10.0), 10.0 * c3.problem.theta, 5, &c3.grid)?;
    checks.push(Check::relative("scalar-c3: fitted rate vs 4", rep.fit.map_or(f64::NAN, |f| f.rate), 4.0, 0.02));
    Ok(checks)
}

fn lyapunov_cross_method() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for name in BUILTIN_PROBLEMS {
        let a = analysis(name)?;
        let trunc = solve_plde_truncated(&a.problem, &a.riccati, &TruncationOptions::default())?;
        let stein = solve_plde_stein(&a.problem, &a.riccati)?;
        checks.push(Check::at_most(format!("{name}: sup |E_trunc − E_stein|"), trunc.e.sup_distance(&stein.e), 1e-7));
    }
    Ok(checks)
}

// The homogeneous flow grows to |y| ≈ 4e4 over one period, so an absolute
// 1e-6 match needs a finer grid than the default.
const CAUCHY_GRID: usize = 4096;

fn cauchy() -> Result<Vec<Check>> {
    let a = PeriodicAnalysis::build(&builtin_problem("paper-2d")?, &PipelineOptions::with_steps(CAUCHY_GRID))?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let (y0, lam0) = (random_column(&mut rng, 2), random_column(&mut rng, 2));
        let (y, l) = cauchy_solve(&a.transform, &y0, &lam0, a.problem.theta)?;
        let (yd, ld) = cauchy_direct(&a.problem, &a.grid, &y0, &lam0, a.problem.theta)?;
        worst = worst.max(y.sup_distance(&yd)).max(l.sup_distance(&ld));
    }
    Ok(vec![Check::at_most("sup |Cauchy − direct| over 5 random inits", worst, 1e-6)])
}

fn property_suites() -> Result<Vec<Check>> {
    let a = analysis("paper-2d")?;
    let theta = a.problem.theta;
    let op = &a.riccati.closed_loop;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let (mut cocycle, mut periodicity): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let s = rng.gen_range(0.0..2.0 * theta);
        let t = s + rng.gen_range(0.0..3.0 * theta);
        let r = rng.gen_range(s..=t);
        let full = op.transition(t, s)?;
        cocycle = cocycle.max((op.transition(t, r)? * op.transition(r, s)? - &full).norm());
        periodicity = periodicity.max((op.transition(t + theta, s + theta)? - &full).norm());
    }

    // d/dt⟨y, λ⟩ = λᵀWλ + ‖Cy‖² along the bounded homogeneous boundary solutions.
    let mut duality: f64 = 0.0;
    for horizon in [5.0, 10.0, 20.0] {
        let (y_start, lam_end) = (random_column(&mut rng, 2), random_column(&mut rng, 2));
        let (y, l) = homogeneous_boundary_solution(&a.transform, horizon, &y_start, &lam_end)?;
        let rate: Vec<DMatrix<f64>> = y
            .times()
            .zip(y.samples().iter().zip(l.samples()))
            .map(|(t, (yi, li))| {
                let s = a.problem.eval(t);
                li.transpose() * &s.w * li + (&s.c * yi).transpose() * (&s.c * yi)
            })
            .collect();
        let quad = MatrixPath::from_samples(0.0, y.dt(), rate)?.integral()[0];
        let change = y.last().dot(l.last()) - y.first().dot(l.first());
        duality = duality.max((change - quad).abs());
    }

    let gaps = average_cost_gap(&a.problem, &a.transform, &a.extremal, &column(&[0.2, 0.0]), &[20.0, 40.0, 80.0])?;
    let scaled: Vec<f64> = gaps.iter().map(|(t, g)| t * g).collect();
    let spread = |v: &[f64]| {
        let hi = v.iter().cloned().fold(f64::MIN, f64::max);
        let lo = v.iter().cloned().fold(f64::MAX, f64::min);
        (hi - lo) / hi
    };

    let stab = stability_ratio(&a.transform, 50, &[5.0, 10.0, 20.0, 40.0], SEED)?;
    let (r20, r40) = (stab.per_horizon[2].1, stab.per_horizon[3].1);

    Ok(vec![
        Check::at_most("cocycle", cocycle, 1e-8),
        Check::at_most("periodicity", periodicity, 1e-9),
        Check::at_most("duality identity", duality, 1e-6),
        Check::at_most("gap(T)·T spread over {20, 40, 80}", spread(&scaled), 0.5),
        Check::at_most("gap(80) / gap(20)", gaps[2].1 / gaps[0].1, 1.0 - f64::EPSILON),
        Check::at_most("stability ratio spread, T = 20 vs 40", (r20 - r40).abs() / r20.max(r40), 0.2),
    ])
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "reference-cost reproduction", budget: Duration::from_secs(30), run: reference_costs },
        Criterion { id: 2, name: "scalar Riccati equilibria", budget: Duration::from_secs(1), run: scalar_equilibria },
        Criterion { id: 3, name: "analytic oracle suite", budget: Duration::from_secs(1), run: analytic_oracles },
        Criterion { id: 4, name: "residual suite", budget: Duration::from_secs(30), run: residual_suite },
        Criterion { id: 5, name: "cross-solver equivalence", budget: Duration::from_secs(10), run: cross_solver },
        Criterion { id: 6, name: "turnpike property", budget: Duration::from_secs(30), run: turnpike },
        Criterion { id: 7, name: "Riccati decay rate", budget: Duration::from_secs(10), run: riccati_decay },
        Criterion { id: 8, name: "Lyapunov cross-method", budget: Duration::from_secs(10), run: lyapunov_cross_method },
        Criterion { id: 9, name: "Cauchy representation", budget: Duration::from_secs(5), run: cauchy },
        Criterion { id: 10, name: "property suites", budget: Duration::from_secs(60), run: property_suites },
    ];
    let verbose = std::env::args().any(|a| a == "--verbose" || a == "-v");
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let (pass, detail) = match &outcome {
            Ok(checks) => {
                let bad: Vec<&Check> = checks.iter().filter(|k| !k.pass).collect();
                let detail = if bad.is_empty() {
                    format!("{} checks", checks.len())
                } else {
                    bad.iter()
                        .map(|k| format!("{} = {:.6e} (tol {:.1e})", k.name, k.value, k.tolerance))
                        .collect::<Vec<_>>()
                        .join("; ")
                };
                (bad.is_empty(), detail)
            }
            Err(e) => (false, format!("error: {e}")),
        };
        let timing = if elapsed <= c.budget { "" } else { " over budget" };
        println!(
            "{} [{:>2}] {:<28} {:>7.2}s / {:>2}s{timing}  {detail}",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
        );
        if verbose {
            if let Ok(checks) = &outcome {
                for k in checks {
                    println!("       {:<48} {:>14.6e}  tol {:.1e}", k.name, k.value, k.tolerance);
                }
            }
        }
        if !pass {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
