//! Periodic Lyapunov differential equation `Ė = LE + ELᵀ − W`.
//!
//! Its bounded periodic solution is `E(t) = −∫_{−∞}^t Ψ(t,s) W(s) Ψ(t,s)ᵀ ds`,
//! negative semidefinite. Two routes are provided: a truncated evaluation of
//! that integral and a Stein-equation solve for `E(0)` followed by forward
//! propagation. They share no code past the fundamental matrix and serve as
//! oracles for each other.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::odeflow::{self, MatrixPath};
use crate::problem::PeriodicProblem;
use crate::riccati::RiccatiSolution;

/// Slack on the largest eigenvalue when checking `E ≤ 0`.
pub const NSD_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LyapunovMethod {
    TruncatedIntegral,
    Stein,
}

impl std::str::FromStr for LyapunovMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncated" | "truncated-integral" => Ok(LyapunovMethod::TruncatedIntegral),
            "stein" => Ok(LyapunovMethod::Stein),
            other => Err(Error::Config(format!("unknown Lyapunov method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LyapunovSolution {
    /// `E` over one period `[0, θ]`.
    pub e: MatrixPath,
    pub method: LyapunovMethod,
    pub residual_sup: f64,
    pub periodicity_gap: f64,
    /// Largest eigenvalue of `E` over all nodes; `≤ NSD_TOL` when healthy.
    pub max_eigenvalue: f64,
    /// Periods summed by the truncated integral.
    pub truncation_periods: Option<usize>,
}

impl LyapunovSolution {
    pub fn e_at(&self, t: f64, theta: f64) -> DMatrix<f64> {
        self.e.interpolate_periodic(t, theta)
    }

    pub fn is_negative_semidefinite(&self) -> bool {
        self.max_eigenvalue <= NSD_TOL
    }

    /// Flips the sign of `E`. Only meant for mutation tests of the sign checks.
    pub fn negated(&self) -> Self {
        let e = self.e.map(|_, x| -x);
        let max_eigenvalue = max_eigenvalue(&e);
        LyapunovSolution {
            e,
            max_eigenvalue,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct TruncationOptions {
    /// Target truncation error of the tail integral.
    pub tol: f64,
}

impl Default for TruncationOptions {
    fn default() -> Self {
        TruncationOptions { tol: 1e-12 }
    }
}

fn require_stable(ric: &RiccatiSolution) -> Result<(f64, f64)> {
    match (ric.decay.nu_hat, ric.decay.c_hat) {
        (Some(nu), Some(c)) if ric.decay.stable && nu > 0.0 => Ok((nu, c)),
        _ => Err(Error::Precondition(format!(
            "closed loop is not exponentially stable (spectral radius {:.6})",
            ric.decay.spectral_radius
        ))),
    }
}

/// `F(τ_i) = Φ(τ_i)⁻¹ W(τ_i) Φ(τ_i)⁻ᵀ` at the period nodes.
fn pulled_back_forcing(problem: &PeriodicProblem, ric: &RiccatiSolution) -> Vec<DMatrix<f64>> {
    let fund = ric.closed_loop.fundamental();
    ric.closed_loop
        .inverse_nodes()
        .iter()
        .enumerate()
        .map(|(i, inv)| inv * &problem.eval(fund.time(i)).w * inv.transpose())
        .collect()
}

fn max_eigenvalue(e: &MatrixPath) -> f64 {
    e.samples()
        .iter()
        .map(linalg::max_sym_eigenvalue)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn finish(
    e: MatrixPath,
    method: LyapunovMethod,
    periodicity_gap: f64,
    truncation_periods: Option<usize>,
    ric: &RiccatiSolution,
    problem: &PeriodicProblem,
) -> LyapunovSolution {
    let max_eig = max_eigenvalue(&e);
    if max_eig > NSD_TOL {
        log::warn!("Lyapunov solution has positive eigenvalue {max_eig:.3e}");
    }
    LyapunovSolution {
        residual_sup: plde_residual(&e, ric, problem),
        max_eigenvalue: max_eig,
        e,
        method,
        periodicity_gap,
        truncation_periods,
    }
}

/// Number of whole periods the tail integral must cover, with a 2× safety factor.
pub fn truncation_periods(nu: f64, c: f64, w_bar: f64, theta: f64, tol: f64) -> usize {
    let arg = (c * c * w_bar / (2.0 * nu * tol)).max(1.0);
    let t_trunc = (arg.ln() / (2.0 * nu)).ceil();
    ((2.0 * t_trunc / theta).ceil() as usize).max(1)
}

/// Evaluates `E(t) = −∫_{t−T}^t Ψ(t,s) W(s) Ψ(t,s)ᵀ ds` at each node.
///
/// With the fundamental matrix extended backward by `Φ(τ − kθ) = Φ(τ) M^{−k}`,
/// the integrand factors as `Φ(t) F(s) Φ(t)ᵀ`; the window spans `K` whole
/// periods, so only one period of `F` is ever evaluated.
pub fn solve_plde_truncated(
    problem: &PeriodicProblem,
    ric: &RiccatiSolution,
    opts: &TruncationOptions,
) -> Result<LyapunovSolution> {
    let (nu, c) = require_stable(ric)?;
    let op = &ric.closed_loop;
    let fund = op.fundamental();
    let theta = op.period();
    let w_bar = (0..fund.len())
        .map(|i| linalg::spectral_norm(&problem.eval(fund.time(i)).w))
        .fold(0.0, f64::max);
    let periods = truncation_periods(nu, c, w_bar, theta, opts.tol);

    let f = pulled_back_forcing(problem, ric);
    let running = odeflow::cumulative_integral(&f, fund.dt());
    let one_period = running.last().unwrap().clone();
    let m = op.monodromy();
    // Σ_{k=1}^{K} M^k J M^kᵀ
    let mut tail = DMatrix::zeros(problem.n, problem.n);
    let mut mk = DMatrix::identity(problem.n, problem.n);
    for _ in 0..periods {
        mk = m * &mk;
        tail += &mk * &one_period * mk.transpose();
    }
    let samples: Vec<DMatrix<f64>> = fund
        .samples()
        .iter()
        .zip(&running)
        .map(|(phi, ci)| {
            let inner = &tail + ci - &mk * ci * mk.transpose();
            let mut e = -(phi * inner * phi.transpose());
            linalg::symmetrize(&mut e);
            e
        })
        .collect();
    let e = MatrixPath::from_samples(0.0, fund.dt(), samples)?;
    let gap = (e.first() - e.last()).norm();
    Ok(finish(e, LyapunovMethod::TruncatedIntegral, gap, Some(periods), ric, problem))
}

/// Pins `E(0)` by the Stein equation `E₀ = M E₀ Mᵀ + V` and propagates it over one period.
pub fn solve_plde_stein(problem: &PeriodicProblem, ric: &RiccatiSolution) -> Result<LyapunovSolution> {
    require_stable(ric)?;
    let op = &ric.closed_loop;
    let fund = op.fundamental();
    let m = op.monodromy();
    let f = pulled_back_forcing(problem, ric);
    let weights = odeflow::simpson_weights(f.len() - 1, fund.dt());
    let mut j = DMatrix::zeros(problem.n, problem.n);
    for (w, fi) in weights.iter().zip(&f) {
        j += fi * *w;
    }
    let v = -(m * j * m.transpose());
    let e0 = linalg::solve_stein(m, &v)?;

    let rhs = |t: f64, e: &DMatrix<f64>| {
        let l = ric.l_at(t);
        let le = &l * e;
        &le + le.transpose() - &problem.eval(t).w
    };
    let e = odeflow::integrate_steps(
        rhs,
        0.0,
        op.period(),
        e0.clone(),
        fund.len() - 1,
        linalg::symmetrize,
    )?;
    let gap = (e.last() - &e0).norm();
    Ok(finish(e, LyapunovMethod::Stein, gap, None, ric, problem))
}

/// Sup over nodes of `‖−Ė + LE + ELᵀ − W‖` with `Ė` from 4th-order differences.
pub fn plde_residual(e: &MatrixPath, ric: &RiccatiSolution, problem: &PeriodicProblem) -> f64 {
    (0..e.len())
        .map(|i| {
            let t = e.time(i);
            let l = ric.l_at(t);
            let x = &e.samples()[i];
            let le = &l * x;
            (-e.fd_derivative(i) + &le + le.transpose() - &problem.eval(t).w).norm()
        })
        .fold(0.0, f64::max)
}
