//! Built-in consistency checks against closed-form solutions of the scalar
//! builtins. Output is deterministic: no timings, fixed formatting.

use nalgebra::DMatrix;

use pdichotomy::extremal::forcing_at;
use pdichotomy::horizon::{solve_lq_dichotomy, solve_lq_shooting};
use pdichotomy::linalg::column;
use pdichotomy::lyapunov::{LyapunovMethod, NSD_TOL};
use pdichotomy::report::{emit_path_csv, read_path_csv, Check};
use pdichotomy::odeflow::build_transition;
use pdichotomy::riccati::{riccati_decay_report, riccati_orbit, riccati_residual};
use pdichotomy::MatrixPath;

use crate::context::{Settings, State};
use crate::error::CliResult;

fn sup_from(path: &MatrixPath, exact: impl Fn(f64) -> DMatrix<f64>) -> f64 {
    path.times()
        .zip(path.samples())
        .map(|(t, x)| (x - exact(t)).amax())
        .fold(0.0, f64::max)
}

fn scalar(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

/// Regulating `ẏ = u` towards `y_d = 1`: `P ≡ 1`, `E ≡ −1/2`, and the
/// periodic extremal sits at `(y, λ, u) = (1, 0, 0)`.
fn scalar_a0(settings: &Settings, corrupt: bool, checks: &mut Vec<Check>) -> CliResult<()> {
    let mut state = State::load("scalar-a0", settings.clone())?;
    state.corrupt_lyapunov_sign = corrupt;
    let theta = state.problem.theta;

    let ric = state.riccati()?.clone();
    checks.push(Check::at_most("scalar-a0: P = 1", sup_from(&ric.p, |_| scalar(1.0)), 1e-8));

    let stein = state.solve_lyapunov(LyapunovMethod::Stein)?;
    let truncated = state.solve_lyapunov(LyapunovMethod::TruncatedIntegral)?;
    checks.push(Check::at_most("scalar-a0: E = -1/2 (Stein)", sup_from(&stein.e, |_| scalar(-0.5)), 1e-8));
    checks.push(Check::at_most("scalar-a0: E = -1/2 (truncated)", sup_from(&truncated.e, |_| scalar(-0.5)), 1e-8));
    checks.push(Check::at_most("scalar-a0: E negative semidefinite", stein.max_eigenvalue, NSD_TOL));
    state.offer_lyapunov(&stein);

    let xf = state.transform()?.clone();
    let t_exact = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, 1.0, 1.0]);
    checks.push(Check::at_most("scalar-a0: T blocks", (xf.t_matrix(0.3 * theta) - t_exact).amax(), 1e-8));
    let (p, q) = xf.to_decoupled(0.0, &scalar(1.0), &scalar(0.0));
    checks.push(Check::at_most(
        "scalar-a0: (y, λ) = (1, 0) maps to (p, q) = (1/2, 1)",
        (p[0] - 0.5).abs().max((q[0] - 1.0).abs()),
        1e-8,
    ));
    let (g1, g2) = forcing_at(&state.problem, &xf, 0.0);
    checks.push(Check::at_most(
        "scalar-a0: forcing (g1, g2) = (1/2, -1)",
        (g1[0] - 0.5).abs().max((g2[0] + 1.0).abs()),
        1e-8,
    ));

    let ext = state.extremal()?.clone();
    checks.push(Check::at_most("scalar-a0: extremal y = 1", sup_from(&ext.y, |_| scalar(1.0)), 1e-7));
    checks.push(Check::at_most("scalar-a0: extremal λ = 0", sup_from(&ext.lambda, |_| scalar(0.0)), 1e-7));
    checks.push(Check::at_most("scalar-a0: extremal u = 0", sup_from(&ext.u, |_| scalar(0.0)), 1e-7));
    checks.push(Check::at_most("scalar-a0: periodic cost = 0", ext.cost.abs(), 1e-10));

    // Finite horizon: ÿ = y − 1, y(0) = y0, λ(T) = ẏ(T) = 0.
    let (horizon, y0) = (10.0_f64, 0.5_f64);
    let b = (y0 - 1.0) / (1.0 + (-2.0 * horizon).exp());
    let a = b * (-2.0 * horizon).exp();
    let y_exact = |t: f64| scalar(1.0 + a * t.exp() + b * (-t).exp());
    let lam_exact = |t: f64| scalar(a * t.exp() - b * (-t).exp());
    let grid = state.grid;
    let (problem, _, xf, ext) = state.periodic()?;
    let dich = solve_lq_dichotomy(problem, xf, ext, &column(&[y0]), horizon)?;
    let shoot = solve_lq_shooting(problem, &grid, &column(&[y0]), horizon)?;
    for (label, sol) in [("dichotomy", &dich), ("shooting", &shoot)] {
        let err = sup_from(&sol.y, y_exact).max(sup_from(&sol.lambda, lam_exact));
        checks.push(Check::at_most(format!("scalar-a0: closed-form BVP at T = 10 ({label})"), err, 1e-8));
    }
    Ok(())
}

/// `ṗ = (p − 1)² − 4`: backward orbits from `p ≥ 0` settle on 3, forward
/// orbits on −1, and `P₀ ≡ 3` gives the decay rate `2ν̂ = 4`.
fn scalar_c3(settings: &Settings, checks: &mut Vec<Check>) -> CliResult<()> {
    let mut state = State::load("scalar-c3", settings.clone())?;
    let theta = state.problem.theta;
    let grid = state.grid;

    let back = riccati_orbit(&state.problem, &scalar(10.0), 5.0 * theta, 0.0, &grid)?;
    checks.push(Check::at_most("scalar-c3: backward orbit from 10 reaches 3", (back.first()[0] - 3.0).abs(), 1e-6));
    let fwd = riccati_orbit(&state.problem, &scalar(0.0), 0.0, 5.0 * theta, &grid)?;
    checks.push(Check::at_most("scalar-c3: forward orbit from 0 reaches -1", (fwd.last()[0] + 1.0).abs(), 1e-6));

    let (problem, ric) = state.riccati_parts()?;
    checks.push(Check::at_most("scalar-c3: periodic P = 3", sup_from(&ric.p, |_| scalar(3.0)), 1e-8));
    let rep = riccati_decay_report(problem, ric, &scalar(10.0), 10.0 * theta, 5, &grid)?;
    let rate = rep.fit.as_ref().map_or(f64::NAN, |f| f.rate);
    checks.push(Check::relative("scalar-c3: Riccati decay rate = 4", rate, 4.0, 0.02));

    let zero = MatrixPath::from_samples(0.0, grid.dt(), vec![scalar(0.0); grid.steps_per_period + 1])?;
    checks.push(Check::relative("scalar-c3: residual of P = 0 is 3", riccati_residual(&zero, problem), 3.0, 1e-12));
    Ok(())
}

fn plumbing(settings: &Settings, checks: &mut Vec<Check>) -> CliResult<()> {
    let a0 = pdichotomy::PeriodicProblem::load("scalar-a0")?;
    let grid = pdichotomy::Grid::new(a0.theta, settings.grid)?;
    let one = MatrixPath::from_samples(0.0, grid.dt(), vec![scalar(1.0); grid.steps_per_period + 1])?;
    checks.push(Check::at_most("residual of the exact P = 1", riccati_residual(&one, &a0), 1e-10));

    let path = MatrixPath::from_samples(
        0.0,
        0.125,
        (0..9).map(|i| DMatrix::from_fn(2, 2, |r, c| (i as f64 * 0.37 + r as f64 - 0.11 * c as f64).sin() / 3.0)).collect(),
    )?;
    let mut buf = Vec::new();
    emit_path_csv(&path, &mut buf)?;
    let back = read_path_csv(buf.as_slice())?;
    checks.push(Check::at_most("CSV round trip", path.sup_distance(&back), 0.0));

    // Ψ(5θ, 0) for L ≡ −1 is e^{−5θ}.
    let op = build_transition(std::sync::Arc::new(|_| scalar(-1.0)), &grid)?;
    let exact = (-5.0 * a0.theta).exp();
    let got = op.transition(5.0 * a0.theta, 0.0)?[0];
    checks.push(Check::relative("transition of L = -1 over 5θ", got, exact, 1e-9));
    Ok(())
}

/// Decoupled coordinates and back, on the reference problem.
fn round_trip(settings: &Settings, checks: &mut Vec<Check>) -> CliResult<()> {
    let mut state = State::load("paper-2d", settings.clone())?;
    let xf = state.transform()?;
    let y = column(&[0.3, -1.2]);
    let lam = column(&[2.0, 0.7]);
    let mut worst: f64 = 0.0;
    for k in 0..8 {
        let t = k as f64 * xf.theta / 8.0;
        let (p, q) = xf.to_decoupled(t, &y, &lam);
        let (y2, l2) = xf.from_decoupled(t, &p, &q);
        worst = worst.max((&y2 - &y).amax()).max((&l2 - &lam).amax());
    }
    checks.push(Check::at_most("paper-2d: decoupled round trip", worst, 1e-12));
    Ok(())
}

/// Runs every section. A section that errors contributes one failing check
/// and the remaining sections still run.
pub fn run(settings: &Settings, corrupt_lyapunov_sign: bool) -> Vec<Check> {
    type Section = fn(&Settings, bool, &mut Vec<Check>) -> CliResult<()>;
    let sections: [(&str, Section); 4] = [
        ("scalar-a0", scalar_a0),
        ("scalar-c3", |s, _, c| scalar_c3(s, c)),
        ("plumbing", |s, _, c| plumbing(s, c)),
        ("round trip", |s, _, c| round_trip(s, c)),
    ];
    let mut checks = Vec::new();
    for (name, section) in sections {
        if let Err(e) = section(settings, corrupt_lyapunov_sign, &mut checks) {
            checks.push(Check {
                name: format!("{name}: {e}"),
                value: f64::NAN,
                tolerance: 0.0,
                pass: false,
            });
        }
    }
    checks
}

pub fn format_check(c: &Check) -> String {
    format!(
        "{} {:<58} {:>11.3e} (tol {:.1e})",
        if c.pass { "PASS" } else { "FAIL" },
        c.name,
        c.value,
        c.tolerance
    )
}
