//! Periodic and terminal-value Riccati differential equations.
//!
//! The stabilizing periodic solution is isolated by integrating the equation
//! backward in time, period by period, from a positive semidefinite seed:
//! the backward flow contracts onto the PSD periodic orbit while the
//! forward flow is repelled from it.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, COND_LIMIT};
use crate::odeflow::{self, DecayEstimate, Grid, MatrixPath, TransitionOperator};
use crate::problem::{CoefficientSample, PeriodicProblem};
use crate::report::{self, ExponentialFit};

/// Eigenvalue slack when checking positive semidefiniteness.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct RiccatiOptions {
    /// Terminal value `P(Nθ)`; identity when absent.
    pub terminal_seed: Option<DMatrix<f64>>,
    pub tol: f64,
    pub max_periods: usize,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        RiccatiOptions {
            terminal_seed: None,
            tol: 1e-10,
            max_periods: 200,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    /// `P` over one period `[0, θ]`.
    pub p: MatrixPath,
    pub residual_sup: f64,
    pub periodicity_gap: f64,
    pub periods_to_converge: usize,
    /// Transition operator of `L = A − B Q⁻¹ Bᵀ P`.
    pub closed_loop: TransitionOperator,
    pub decay: DecayEstimate,
}

impl RiccatiSolution {
    pub fn p_at(&self, t: f64) -> DMatrix<f64> {
        self.p.interpolate_periodic(t, self.closed_loop.period())
    }

    /// Closed-loop matrix `L(t)`.
    pub fn l_at(&self, t: f64) -> DMatrix<f64> {
        (self.closed_loop.generator())(t)
    }

    pub fn nu_hat(&self) -> Option<f64> {
        self.decay.nu_hat
    }
}

/// `Ṗ = −(AᵀP + PA − P W P + CᵀC)`.
pub fn riccati_rhs(s: &CoefficientSample, p: &DMatrix<f64>) -> DMatrix<f64> {
    let ap = s.a.transpose() * p;
    let pw = p * &s.w;
    -(&ap + ap.transpose() - pw * p + &s.ctc)
}

fn check_psd(x: &DMatrix<f64>, what: &str) -> Result<()> {
    let e = linalg::min_sym_eigenvalue(x);
    if e < -PSD_TOL {
        return Err(Error::Precondition(format!(
            "{what} is not positive semidefinite (min eigenvalue {e:.3e})"
        )));
    }
    Ok(())
}

/// Builds the closed-loop generator `t ↦ A(t) − B Q⁻¹ Bᵀ(t) P(t)` for a periodic `P`.
pub fn closed_loop_generator(problem: &PeriodicProblem, p: &MatrixPath) -> odeflow::Generator {
    let problem = problem.clone();
    let p = p.clone();
    Arc::new(move |t| {
        let s = problem.eval(t);
        &s.a - &s.w * p.interpolate_periodic(t, problem.theta)
    })
}

pub fn solve_prde_periodic(
    problem: &PeriodicProblem,
    grid: &Grid,
    opts: &RiccatiOptions,
) -> Result<RiccatiSolution> {
    let n = problem.n;
    let seed = opts
        .terminal_seed
        .clone()
        .unwrap_or_else(|| DMatrix::identity(n, n));
    if seed.shape() != (n, n) {
        return Err(Error::Config(format!("seed has shape {:?}, expected {n}x{n}", seed.shape())));
    }
    if linalg::asymmetry(&seed) > 1e-12 {
        return Err(Error::Config("terminal seed must be symmetric".into()));
    }
    check_psd(&seed, "terminal seed")?;

    let rhs = |t: f64, p: &DMatrix<f64>| riccati_rhs(&problem.eval(t), p);
    let mut terminal = seed;
    let mut previous: Option<MatrixPath> = None;
    let mut last_change = f64::INFINITY;
    let mut converged = None;
    for period in 1..=opts.max_periods {
        let path = odeflow::integrate_steps(
            rhs,
            grid.theta,
            0.0,
            terminal,
            grid.steps_per_period,
            linalg::symmetrize,
        )?;
        terminal = path.first().clone();
        if let Some(prev) = &previous {
            last_change = path.sup_distance(prev);
            if last_change <= opts.tol {
                converged = Some((path, period));
                break;
            }
        }
        previous = Some(path);
    }
    let (p, periods) = converged.ok_or(Error::Convergence {
        periods: opts.max_periods,
        last_change,
    })?;
    for x in p.samples() {
        check_psd(x, "periodic Riccati solution")?;
    }
    let closed_loop = odeflow::build_transition(closed_loop_generator(problem, &p), grid)?;
    let decay = odeflow::estimate_decay(&closed_loop);
    if !decay.stable {
        return Err(Error::Precondition(format!(
            "closed loop is not exponentially stable (spectral radius {:.6})",
            decay.spectral_radius
        )));
    }
    Ok(RiccatiSolution {
        residual_sup: riccati_residual(&p, problem),
        periodicity_gap: (p.first() - p.last()).norm(),
        periods_to_converge: periods,
        p,
        closed_loop,
        decay,
    })
}

/// Sup over nodes of the Riccati defect with `Ṗ` from 4th-order differences.
pub fn riccati_residual(p: &MatrixPath, problem: &PeriodicProblem) -> f64 {
    (0..p.len())
        .map(|i| {
            let s = problem.eval(p.time(i));
            (p.fd_derivative(i) - riccati_rhs(&s, &p.samples()[i])).norm()
        })
        .fold(0.0, f64::max)
}

fn check_terminal(g: &DMatrix<f64>, n: usize, horizon: f64, t_min: f64) -> Result<()> {
    if !(t_min < horizon) {
        return Err(Error::Config(format!("need t_min < T, got {t_min} >= {horizon}")));
    }
    if g.shape() != (n, n) || linalg::asymmetry(g) > 1e-12 {
        return Err(Error::Config("terminal value must be a symmetric n×n matrix".into()));
    }
    if linalg::min_sym_eigenvalue(g) <= 0.0 {
        return Err(Error::Config("terminal value must be positive definite".into()));
    }
    Ok(())
}

/// Backward RK4 solve of the Riccati equation with `P(T) = G`, over `[t_min, T]`.
pub fn solve_riccati_terminal(
    problem: &PeriodicProblem,
    g: &DMatrix<f64>,
    horizon: f64,
    t_min: f64,
    grid: &Grid,
) -> Result<MatrixPath> {
    check_terminal(g, problem.n, horizon, t_min)?;
    odeflow::integrate_steps(
        |t, p| riccati_rhs(&problem.eval(t), p),
        horizon,
        t_min,
        g.clone(),
        grid.steps_for(horizon - t_min),
        linalg::symmetrize,
    )
}

/// Riccati orbit from `P(t_start) = p_start` to `t_end` in either direction,
/// without sign requirements on the seed. Forward orbits are generally
/// attracted to the non-stabilizing solution.
pub fn riccati_orbit(
    problem: &PeriodicProblem,
    p_start: &DMatrix<f64>,
    t_start: f64,
    t_end: f64,
    grid: &Grid,
) -> Result<MatrixPath> {
    let n = problem.n;
    if p_start.shape() != (n, n) {
        return Err(Error::Config(format!("seed has shape {:?}, expected {n}x{n}", p_start.shape())));
    }
    odeflow::integrate_steps(
        |t, p| riccati_rhs(&problem.eval(t), p),
        t_start,
        t_end,
        p_start.clone(),
        grid.steps_for((t_end - t_start).abs()),
        linalg::symmetrize,
    )
}

/// `P = Y X⁻¹` from the linear system `Ẋ = AX − WY, Ẏ = −CᵀCX − AᵀY`,
/// `X(T) = I, Y(T) = G`. Long spans make `X` ill-conditioned and are rejected.
pub fn riccati_via_hamiltonian_flow(
    problem: &PeriodicProblem,
    g: &DMatrix<f64>,
    horizon: f64,
    t_min: f64,
    grid: &Grid,
) -> Result<MatrixPath> {
    check_terminal(g, problem.n, horizon, t_min)?;
    let n = problem.n;
    let rhs = |t: f64, z: &DMatrix<f64>| {
        let s = problem.eval(t);
        let x = z.rows(0, n);
        let y = z.rows(n, n);
        let dx = &s.a * x - &s.w * y;
        let dy = -(&s.ctc * x) - s.a.transpose() * y;
        linalg::stack(&dx, &dy)
    };
    let z0 = linalg::stack(&DMatrix::identity(n, n), g);
    let flow = odeflow::integrate_steps(rhs, horizon, t_min, z0, grid.steps_for(horizon - t_min), |_| {})?;
    let mut samples = Vec::with_capacity(flow.len());
    let mut derivs = Vec::with_capacity(flow.len());
    for (z, dz) in flow.samples().iter().zip(flow.derivs()) {
        let x = z.rows(0, n).clone_owned();
        let x_inv = linalg::inverse_checked(&x, COND_LIMIT, "Hamiltonian flow X(t)")?;
        let p = z.rows(n, n) * &x_inv;
        let dp = (dz.rows(n, n) - &p * dz.rows(0, n)) * &x_inv;
        samples.push(p);
        derivs.push(dp);
    }
    MatrixPath::new(flow.t0(), flow.dt(), samples, derivs)
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    /// `(T − t, ‖P(t) − P₀(t)‖)` at every node.
    pub series: Vec<(f64, f64)>,
    pub fit: Option<ExponentialFit>,
    /// `2·ν̂` from the closed-loop monodromy.
    pub two_nu_hat: Option<f64>,
    pub at_fixed_point: bool,
}

/// Errors below this everywhere mean the terminal value already sits on the orbit.
pub const FIXED_POINT_TOL: f64 = 1e-8;

pub fn riccati_decay_report(
    problem: &PeriodicProblem,
    periodic: &RiccatiSolution,
    g: &DMatrix<f64>,
    horizon: f64,
    periods: usize,
    grid: &Grid,
) -> Result<DecayReport> {
    if periods < 3 {
        return Err(Error::Config(format!("need at least 3 periods, got {periods}")));
    }
    let span = periods as f64 * problem.theta;
    let path = solve_riccati_terminal(problem, g, horizon, horizon - span, grid)?;
    let mut series: Vec<(f64, f64)> = path
        .times()
        .zip(path.samples())
        .map(|(t, p)| (horizon - t, (p - periodic.p_at(t)).norm()))
        .collect();
    series.reverse();
    let two_nu_hat = periodic.nu_hat().map(|v| 2.0 * v);
    let max_err = series.iter().map(|s| s.1).fold(0.0, f64::max);
    if max_err <= FIXED_POINT_TOL {
        return Ok(DecayReport {
            series,
            fit: None,
            two_nu_hat,
            at_fixed_point: true,
        });
    }
    let usable: Vec<(f64, f64)> = series.iter().copied().filter(|s| s.1 <= 1e-2).collect();
    let fit = report::fit_exponential(&usable, report::DEFAULT_FLOOR, (0.0, span))?;
    Ok(DecayReport {
        series,
        fit: Some(fit),
        two_nu_hat,
        at_fixed_point: false,
    })
}
