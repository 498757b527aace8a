//! The periodic optimal extremal `(y_θ, λ_θ, u_θ)` and its cost.
//!
//! In decoupled coordinates the periodic problem splits into
//! `ż = Lz + g₁` (stable forward) and `q̇ = −Lᵀq + g₂` (stable backward).
//! Their periodic solutions are pinned by one-period quadratures and then
//! propagated by RK4; `y_θ = z − Eq`, `λ_θ = −Pz + (I + PE)q`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dichotomy::DichotomyTransform;
use crate::error::Result;
use crate::linalg::{self, COND_LIMIT};
use crate::odeflow::{self, MatrixPath};
use crate::problem::PeriodicProblem;

/// Condition number above which `(I − M)⁻¹` is reported as suspicious.
pub const COND_WARN: f64 = 1e10;

#[derive(Clone, Debug)]
pub struct Forcing {
    pub g1: MatrixPath,
    pub g2: MatrixPath,
}

#[derive(Clone, Debug)]
pub struct PeriodicExtremal {
    pub y: MatrixPath,
    pub lambda: MatrixPath,
    pub u: MatrixPath,
    pub z: MatrixPath,
    pub q: MatrixPath,
    pub cost: f64,
    pub theta: f64,
}

impl PeriodicExtremal {
    pub fn y_at(&self, t: f64) -> DMatrix<f64> {
        self.y.interpolate_periodic(t, self.theta)
    }

    pub fn lambda_at(&self, t: f64) -> DMatrix<f64> {
        self.lambda.interpolate_periodic(t, self.theta)
    }

    pub fn u_at(&self, t: f64) -> DMatrix<f64> {
        self.u.interpolate_periodic(t, self.theta)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub state_residual: f64,
    pub costate_residual: f64,
    pub state_gap: f64,
    pub costate_gap: f64,
}

/// `g₁ = (I + EP)Bu_d − E CᵀC y_d`, `g₂ = PBu_d − CᵀC y_d` at time `t`.
pub fn forcing_at(problem: &PeriodicProblem, xf: &DichotomyTransform, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let s = problem.eval(t);
    let (p, e) = (xf.p_at(t), xf.e_at(t));
    let bu = &s.b * &s.u_d;
    let cy = &s.ctc * &s.y_d;
    let g2 = &p * &bu - &cy;
    let g1 = &bu + &e * &g2;
    (g1, g2)
}

pub fn forcing_terms(problem: &PeriodicProblem, xf: &DichotomyTransform) -> Result<Forcing> {
    let (g1, g2): (Vec<_>, Vec<_>) = xf.p.times().map(|t| forcing_at(problem, xf, t)).unzip();
    Ok(Forcing {
        g1: MatrixPath::from_samples(0.0, xf.p.dt(), g1)?,
        g2: MatrixPath::from_samples(0.0, xf.p.dt(), g2)?,
    })
}

fn simpson(values: &[DMatrix<f64>], h: f64) -> DMatrix<f64> {
    let w = odeflow::simpson_weights(values.len() - 1, h);
    let mut acc = DMatrix::zeros(values[0].nrows(), values[0].ncols());
    for (wi, v) in w.iter().zip(values) {
        acc += v * *wi;
    }
    acc
}

fn checked_inverse(x: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = linalg::inverse_checked(x, COND_LIMIT, what)?;
    let cond = x.norm() * inv.norm();
    if cond > COND_WARN {
        log::warn!("{what} is poorly conditioned (cond ≈ {cond:.2e})");
    }
    Ok(inv)
}

/// `z(0) = (I − M)⁻¹ ∫₀^θ Ψ(θ,τ) g₁(τ) dτ`.
pub fn periodic_z_initial(xf: &DichotomyTransform, g1: &MatrixPath) -> Result<DMatrix<f64>> {
    let op = &xf.l_transition;
    let m = op.monodromy();
    let pulled: Vec<_> = op.inverse_nodes().iter().zip(g1.samples()).map(|(inv, g)| inv * g).collect();
    let integral = m * simpson(&pulled, g1.dt());
    let n = xf.dim();
    Ok(checked_inverse(&(DMatrix::identity(n, n) - m), "I - Ψ(θ,0)")? * integral)
}

/// `q(θ) = −(I − Mᵀ)⁻¹ ∫₀^θ Ψ(τ,0)ᵀ g₂(τ) dτ`.
pub fn periodic_q_terminal(xf: &DichotomyTransform, g2: &MatrixPath) -> Result<DMatrix<f64>> {
    let op = &xf.l_transition;
    let m = op.monodromy();
    let fund = op.fundamental();
    let pulled: Vec<_> = fund.samples().iter().zip(g2.samples()).map(|(phi, g)| phi.transpose() * g).collect();
    let integral = simpson(&pulled, g2.dt());
    let n = xf.dim();
    Ok(-(checked_inverse(&(DMatrix::identity(n, n) - m.transpose()), "I - Ψ(θ,0)ᵀ")? * integral))
}

/// Periodic solution of `ż = Lz + g₁` over `[0, θ]`.
pub fn periodic_z(xf: &DichotomyTransform, g1: &MatrixPath) -> Result<MatrixPath> {
    let z0 = periodic_z_initial(xf, g1)?;
    odeflow::integrate_steps(
        |t, z| xf.l_at(t) * z + g1.interpolate(t),
        0.0,
        xf.theta,
        z0,
        xf.grid.steps_per_period,
        |_| {},
    )
}

/// Periodic solution of `q̇ = −Lᵀq + g₂` over `[0, θ]`, integrated backward.
pub fn periodic_q(xf: &DichotomyTransform, g2: &MatrixPath) -> Result<MatrixPath> {
    let q_theta = periodic_q_terminal(xf, g2)?;
    odeflow::integrate_steps(
        |t, q| -(xf.l_at(t).transpose() * q) + g2.interpolate(t),
        xf.theta,
        0.0,
        q_theta,
        xf.grid.steps_per_period,
        |_| {},
    )
}

/// `z` at every node straight from the variation-of-constants quadrature
/// `z(t) = Φ(t)[z(0) + ∫₀^t Φ(τ)⁻¹ g₁(τ) dτ]`; verification only.
pub fn periodic_z_quadrature(xf: &DichotomyTransform, g1: &MatrixPath) -> Result<MatrixPath> {
    let op = &xf.l_transition;
    let z0 = periodic_z_initial(xf, g1)?;
    let pulled: Vec<_> = op.inverse_nodes().iter().zip(g1.samples()).map(|(inv, g)| inv * g).collect();
    let running = odeflow::cumulative_integral(&pulled, g1.dt());
    let samples = op
        .fundamental()
        .samples()
        .iter()
        .zip(&running)
        .map(|(phi, r)| phi * (&z0 + r))
        .collect();
    MatrixPath::from_samples(0.0, g1.dt(), samples)
}

/// `q(t) = Ψ(θ,t)ᵀq(θ) − ∫_t^θ Ψ(τ,t)ᵀ g₂(τ) dτ`; verification only.
/// Anchoring at `θ` keeps the bracket in `Φ(t)⁻ᵀ[Mᵀq(θ) − ∫_t^θ Φ(τ)ᵀg₂]`
/// free of cancellation.
pub fn periodic_q_quadrature(xf: &DichotomyTransform, g2: &MatrixPath) -> Result<MatrixPath> {
    let op = &xf.l_transition;
    let q_theta = periodic_q_terminal(xf, g2)?;
    let anchored = op.monodromy().transpose() * &q_theta;
    let mut pulled: Vec<_> = op
        .fundamental()
        .samples()
        .iter()
        .zip(g2.samples())
        .map(|(phi, g)| phi.transpose() * g)
        .collect();
    pulled.reverse();
    let mut tail = odeflow::cumulative_integral(&pulled, g2.dt());
    tail.reverse();
    let samples = op
        .inverse_nodes()
        .iter()
        .zip(&tail)
        .map(|(inv, r)| inv.transpose() * (&anchored - r))
        .collect();
    MatrixPath::from_samples(0.0, g2.dt(), samples)
}

/// Sup of `‖ẋ − (F x + g)‖` over nodes with `ẋ` from 4th-order differences.
fn ode_residual<F>(x: &MatrixPath, rhs: F) -> f64
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    (0..x.len())
        .map(|i| (x.fd_derivative(i) - rhs(x.time(i), &x.samples()[i])).norm())
        .fold(0.0, f64::max)
}

pub fn z_residual(xf: &DichotomyTransform, z: &MatrixPath, g1: &MatrixPath) -> f64 {
    ode_residual(z, |t, v| xf.l_at(t) * v + g1.interpolate(t))
}

pub fn q_residual(xf: &DichotomyTransform, q: &MatrixPath, g2: &MatrixPath) -> f64 {
    ode_residual(q, |t, v| -(xf.l_at(t).transpose() * v) + g2.interpolate(t))
}

/// Feedback law `u = u_d + Q⁻¹Bᵀλ`.
pub fn feedback(problem: &PeriodicProblem, lambda: &MatrixPath) -> Result<MatrixPath> {
    let u = lambda
        .times()
        .zip(lambda.samples())
        .map(|(t, lam)| {
            let s = problem.eval(t);
            &s.u_d + &s.q_inv * s.b.transpose() * lam
        })
        .collect();
    MatrixPath::from_samples(lambda.t0(), lambda.dt(), u)
}

pub fn periodic_extremal(problem: &PeriodicProblem, xf: &DichotomyTransform) -> Result<PeriodicExtremal> {
    let forcing = forcing_terms(problem, xf)?;
    let z = periodic_z(xf, &forcing.g1)?;
    let q = periodic_q(xf, &forcing.g2)?;
    let (ys, ls): (Vec<_>, Vec<_>) = z
        .times()
        .zip(z.samples().iter().zip(q.samples()))
        .map(|(t, (zi, qi))| xf.from_decoupled(t, zi, qi))
        .unzip();
    let y = MatrixPath::from_samples(0.0, z.dt(), ys)?;
    let lambda = MatrixPath::from_samples(0.0, z.dt(), ls)?;
    let u = feedback(problem, &lambda)?;
    let mut ext = PeriodicExtremal {
        y,
        lambda,
        u,
        z,
        q,
        cost: 0.0,
        theta: problem.theta,
    };
    ext.cost = periodic_cost(&ext, problem);
    Ok(ext)
}

pub fn extremal_residual(ext: &PeriodicExtremal, problem: &PeriodicProblem) -> ResidualReport {
    let state_residual = (0..ext.y.len())
        .map(|i| {
            let s = problem.eval(ext.y.time(i));
            let rhs = &s.a * &ext.y.samples()[i] + &s.w * &ext.lambda.samples()[i] + &s.b * &s.u_d;
            (ext.y.fd_derivative(i) - rhs).norm()
        })
        .fold(0.0, f64::max);
    let costate_residual = (0..ext.lambda.len())
        .map(|i| {
            let s = problem.eval(ext.lambda.time(i));
            let rhs = &s.ctc * (&ext.y.samples()[i] - &s.y_d) - s.a.transpose() * &ext.lambda.samples()[i];
            (ext.lambda.fd_derivative(i) - rhs).norm()
        })
        .fold(0.0, f64::max);
    ResidualReport {
        state_residual,
        costate_residual,
        state_gap: (ext.y.first() - ext.y.last()).norm(),
        costate_gap: (ext.lambda.first() - ext.lambda.last()).norm(),
    }
}

/// Running cost `½(‖C(y − y_d)‖² + (u − u_d)ᵀQ(u − u_d))` at time `t`.
pub fn running_cost(problem: &PeriodicProblem, t: f64, y: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    let s = problem.eval(t);
    let dy = &s.c * (y - &s.y_d);
    let du = u - &s.u_d;
    0.5 * (dy.norm_squared() + (du.transpose() * &s.q * &du)[0])
}

/// Simpson quadrature of the running cost over the nodes of `y` and `u`.
pub fn trajectory_cost(problem: &PeriodicProblem, y: &MatrixPath, u: &MatrixPath) -> f64 {
    let w = odeflow::simpson_weights(y.len() - 1, y.dt());
    y.times()
        .zip(y.samples().iter().zip(u.samples()))
        .zip(&w)
        .map(|((t, (yi, ui)), wi)| wi * running_cost(problem, t, yi, ui))
        .sum()
}

pub fn periodic_cost(ext: &PeriodicExtremal, problem: &PeriodicProblem) -> f64 {
    trajectory_cost(problem, &ext.y, &ext.u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dichotomy::build_transform;
    use crate::lyapunov::solve_plde_stein;
    use crate::odeflow::Grid;
    use crate::problem::builtin_problem;
    use crate::riccati::{solve_prde_periodic, RiccatiOptions};
    use std::f64::consts::PI;

    fn transform(p: &PeriodicProblem, steps: usize) -> DichotomyTransform {
        let grid = Grid::new(p.theta, steps).unwrap();
        let ric = solve_prde_periodic(p, &grid, &RiccatiOptions::default()).unwrap();
        let lya = solve_plde_stein(p, &ric).unwrap();
        build_transform(&ric, &lya).unwrap()
    }

    fn sup_dev(path: &MatrixPath, v: f64) -> f64 {
        path.samples().iter().flat_map(|x| x.iter().map(move |c| (c - v).abs())).fold(0.0, f64::max)
    }

    #[test]
    fn zero_tracking_gives_zero_extremal() {
        let p = builtin_problem("paper-2d").unwrap().without_tracking();
        let xf = transform(&p, 512);
        let ext = periodic_extremal(&p, &xf).unwrap();
        assert_eq!(sup_dev(&ext.y, 0.0), 0.0);
        assert_eq!(sup_dev(&ext.u, 0.0), 0.0);
        assert_eq!(ext.cost, 0.0);
    }

    #[test]
    fn scalar_a0_extremal() {
        let p = builtin_problem("scalar-a0").unwrap();
        let xf = transform(&p, 1024);
        let f = forcing_terms(&p, &xf).unwrap();
        assert!(sup_dev(&f.g1, 0.5) < 1e-8 && sup_dev(&f.g2, -1.0) < 1e-12);
        let ext = periodic_extremal(&p, &xf).unwrap();
        assert!(sup_dev(&ext.z, 0.5) < 1e-8);
        assert!(sup_dev(&ext.q, 1.0) < 1e-8);
        assert!(sup_dev(&ext.y, 1.0) < 1e-8);
        assert!(sup_dev(&ext.lambda, 0.0) < 1e-8);
        assert!(sup_dev(&ext.u, 0.0) < 1e-8);
        assert!(ext.cost < 1e-14);
        let r = extremal_residual(&ext, &p);
        assert!(r.state_residual < 1e-7 && r.costate_residual < 1e-7, "{r:?}");
        // the exact constant extremal has no residual at all
        let exact = |v: f64| ext.y.map(|_, _| DMatrix::from_element(1, 1, v));
        let exact_ext = PeriodicExtremal {
            y: exact(1.0),
            lambda: exact(0.0),
            u: exact(0.0),
            ..ext.clone()
        };
        let r = extremal_residual(&exact_ext, &p);
        assert!(r.state_residual.max(r.costate_residual).max(r.state_gap).max(r.costate_gap) <= 1e-10);
    }

    #[test]
    fn paper_2d_forcing_at_origin() {
        // u_d = 0 and C = I: g₂(0) = −y_d(0) = −(0, 1)
        let p = builtin_problem("paper-2d").unwrap();
        let xf = transform(&p, 256);
        let (_, g2) = forcing_at(&p, &xf, 0.0);
        assert!((g2 - linalg::column(&[0.0, -1.0])).norm() < 1e-14);
    }

    #[test]
    fn paper_2d_extremal_residuals() {
        let p = builtin_problem("paper-2d").unwrap();
        let xf = transform(&p, 2048);
        let f = forcing_terms(&p, &xf).unwrap();
        let ext = periodic_extremal(&p, &xf).unwrap();
        let r = extremal_residual(&ext, &p);
        assert!(r.state_residual <= 1e-6 && r.costate_residual <= 1e-6, "{r:?}");
        assert!(r.state_gap <= 1e-8 && r.costate_gap <= 1e-8, "{r:?}");
        assert!(z_residual(&xf, &ext.z, &f.g1) <= 1e-6);
        assert!(q_residual(&xf, &ext.q, &f.g2) <= 1e-6);
        assert!((ext.z.first() - ext.z.last()).norm() <= 1e-8);
        // quadrature route agrees with the ODE route
        let zq = periodic_z_quadrature(&xf, &f.g1).unwrap();
        let qq = periodic_q_quadrature(&xf, &f.g2).unwrap();
        assert!(zq.sup_distance(&ext.z) < 1e-8, "{}", zq.sup_distance(&ext.z));
        assert!(qq.sup_distance(&ext.q) < 1e-8, "{}", qq.sup_distance(&ext.q));
        // (30/θ)·C_θ with the ½ normalization, independently computed
        let scaled = 30.0 / p.theta * ext.cost;
        assert!((scaled - 10.84706).abs() < 1e-3, "{scaled}");
    }

    #[test]
    fn perturbed_state_fails_residual() {
        let p = builtin_problem("paper-2d").unwrap();
        let xf = transform(&p, 512);
        let mut ext = periodic_extremal(&p, &xf).unwrap();
        ext.y = ext.y.map(|t, y| y + DMatrix::from_element(2, 1, 1e-3 * t.sin()));
        assert!(extremal_residual(&ext, &p).state_residual >= 1e-4);
    }

    #[test]
    fn cost_of_zero_state_against_circle() {
        // ½∫₀^{2π} (sin² + cos²) dt = π
        let p = builtin_problem("paper-2d").unwrap();
        let grid = Grid::new(2.0 * PI, 512).unwrap();
        let zeros = MatrixPath::from_samples(0.0, grid.dt(), vec![DMatrix::zeros(2, 1); 513]).unwrap();
        assert!((trajectory_cost(&p, &zeros, &zeros) - PI).abs() < 1e-10);
    }
}
