//! Finite-horizon problems on `[0, T]` with `y(0) = y₀`, `λ(T) = 0`.
//!
//! The dichotomy solver writes the finite-horizon extremal as the periodic
//! extremal plus a homogeneous correction. In decoupled coordinates the
//! correction is `p(t) = Ψ(t,0)p(0)`, `q(t) = Ψ(T,t)ᵀq(T)`; both factors only
//! ever decay, so the `2n×2n` boundary system stays well conditioned for any
//! `T`. Single shooting is kept as a short-horizon oracle.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dichotomy::DichotomyTransform;
use crate::error::{Error, Result};
use crate::extremal::{self, PeriodicExtremal};
use crate::linalg::{self, COND_LIMIT};
use crate::odeflow::{self, DecayEstimate, Grid, MatrixPath};
use crate::problem::PeriodicProblem;
use crate::report::{self, ExponentialFit};

/// Longest horizon the shooting oracle accepts.
pub const SHOOTING_T_MAX: f64 = 12.0;
/// Longest forward propagation of `q` in the Cauchy solve, in periods.
pub const CAUCHY_MAX_PERIODS: f64 = 6.0;
const MAX_SHOOTING_REFINEMENTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HorizonMethod {
    Dichotomy,
    Shooting,
}

impl std::str::FromStr for HorizonMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dichotomy" => Ok(HorizonMethod::Dichotomy),
            "shooting" => Ok(HorizonMethod::Shooting),
            other => Err(Error::Config(format!("unknown horizon method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FiniteHorizonSolution {
    pub horizon: f64,
    pub y0: DMatrix<f64>,
    pub y: MatrixPath,
    pub lambda: MatrixPath,
    pub u: MatrixPath,
    pub cost: f64,
    pub method: HorizonMethod,
    /// `(‖y(0) − y₀‖, ‖λ(T)‖)`
    pub boundary_residuals: (f64, f64),
}

impl FiniteHorizonSolution {
    /// Largest sup-norm gap between the `y`, `λ`, `u` paths of two solutions on the same nodes.
    pub fn sup_distance(&self, other: &FiniteHorizonSolution) -> f64 {
        self.y
            .sup_distance(&other.y)
            .max(self.lambda.sup_distance(&other.lambda))
            .max(self.u.sup_distance(&other.u))
    }
}

fn check_horizon(horizon: f64, y0: &DMatrix<f64>, n: usize) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    if y0.shape() != (n, 1) {
        return Err(Error::Config(format!("initial state must have length {n}")));
    }
    Ok(())
}

/// `θ`-reduction of `T` landing in `[0, θ)`.
pub fn reduce_horizon(horizon: f64, theta: f64) -> f64 {
    let r = horizon - (horizon / theta).floor() * theta;
    if r >= theta || r < 0.0 {
        0.0
    } else {
        r
    }
}

/// `[[I, −E(0)Ψ(T,0)ᵀ], [−P(T)Ψ(T,0), (I + PE)(T)]]`, mapping `(p(0), q(T))`
/// to `(δy(0), δλ(T))`.
pub fn boundary_matrix(xf: &DichotomyTransform, horizon: f64) -> DMatrix<f64> {
    let n = xf.dim();
    let i = DMatrix::identity(n, n);
    let psi = xf.l_transition.from_origin(horizon);
    let (p_t, e_t) = (xf.p_at(horizon), xf.e_at(horizon));
    linalg::block2(
        &i,
        &-(xf.e_at(0.0) * psi.transpose()),
        &-(&p_t * &psi),
        &(&i + &p_t * &e_t),
    )
}

/// Solves the boundary system for `(p(0), q(T))`.
pub fn decoupled_boundary_solve(
    xf: &DichotomyTransform,
    horizon: f64,
    dy0: &DMatrix<f64>,
    dlam_t: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = xf.dim();
    let rhs = linalg::stack(dy0, dlam_t);
    let sol = linalg::solve_checked(&boundary_matrix(xf, horizon), &rhs, COND_LIMIT, "dichotomy boundary system")?;
    Ok((sol.rows(0, n).clone_owned(), sol.rows(n, n).clone_owned()))
}

/// Homogeneous correction `(δy, δλ)` at time `t` from `(p(0), q(T))`.
fn correction_at(
    xf: &DichotomyTransform,
    horizon: f64,
    t: f64,
    p0: &DMatrix<f64>,
    q_t: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let op = &xf.l_transition;
    let p = op.from_origin(t) * p0;
    let q = op.transition(horizon, t)?.transpose() * q_t;
    Ok(xf.from_decoupled(t, &p, &q))
}

/// Solution of the homogeneous coupled system with `y(0) = y_start` and
/// `λ(T) = lam_end`, reconstructed from the decoupled coordinates on the
/// shared grid. Bounded for every `T`, unlike the initial-value flow.
pub fn homogeneous_boundary_solution(
    xf: &DichotomyTransform,
    horizon: f64,
    y_start: &DMatrix<f64>,
    lam_end: &DMatrix<f64>,
) -> Result<(MatrixPath, MatrixPath)> {
    check_horizon(horizon, y_start, xf.dim())?;
    let (p0, q_t) = decoupled_boundary_solve(xf, horizon, y_start, lam_end)?;
    let (steps, h) = horizon_steps(&xf.grid, horizon);
    let mut ys = Vec::with_capacity(steps + 1);
    let mut ls = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let t = if i == steps { horizon } else { i as f64 * h };
        let (y, l) = correction_at(xf, horizon, t, &p0, &q_t)?;
        ys.push(y);
        ls.push(l);
    }
    Ok((
        MatrixPath::from_samples(0.0, h, ys)?,
        MatrixPath::from_samples(0.0, h, ls)?,
    ))
}

fn horizon_steps(grid: &Grid, horizon: f64) -> (usize, f64) {
    let steps = grid.steps_for(horizon);
    (steps, horizon / steps as f64)
}

fn assemble(
    problem: &PeriodicProblem,
    horizon: f64,
    y0: &DMatrix<f64>,
    ys: Vec<DMatrix<f64>>,
    ls: Vec<DMatrix<f64>>,
    h: f64,
    method: HorizonMethod,
) -> Result<FiniteHorizonSolution> {
    let y = MatrixPath::from_samples(0.0, h, ys)?;
    let lambda = MatrixPath::from_samples(0.0, h, ls)?;
    let u = extremal::feedback(problem, &lambda)?;
    let boundary_residuals = ((y.first() - y0).norm(), lambda.last().norm());
    let cost = extremal::trajectory_cost(problem, &y, &u);
    Ok(FiniteHorizonSolution {
        horizon,
        y0: y0.clone(),
        y,
        lambda,
        u,
        cost,
        method,
        boundary_residuals,
    })
}

pub fn solve_lq_dichotomy(
    problem: &PeriodicProblem,
    xf: &DichotomyTransform,
    ext: &PeriodicExtremal,
    y0: &DMatrix<f64>,
    horizon: f64,
) -> Result<FiniteHorizonSolution> {
    check_horizon(horizon, y0, problem.n)?;
    let dy0 = y0 - ext.y_at(0.0);
    let dlam_t = -ext.lambda.interpolate(reduce_horizon(horizon, xf.theta));
    let (p0, q_t) = decoupled_boundary_solve(xf, horizon, &dy0, &dlam_t)?;
    let (steps, h) = horizon_steps(&xf.grid, horizon);
    let mut ys = Vec::with_capacity(steps + 1);
    let mut ls = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let t = if i == steps { horizon } else { i as f64 * h };
        let (dy, dl) = correction_at(xf, horizon, t, &p0, &q_t)?;
        ys.push(ext.y_at(t) + dy);
        ls.push(ext.lambda_at(t) + dl);
    }
    assemble(problem, horizon, y0, ys, ls, h, HorizonMethod::Dichotomy)
}

/// RK4 flow of the coupled system `[y; λ]' = H [y; λ] + affine·f` for a
/// block of `2n×k` initial columns; `f = [Bu_d; −CᵀCy_d]` is added to column 0
/// only when `affine` is set.
pub fn integrate_coupled(
    problem: &PeriodicProblem,
    z0: DMatrix<f64>,
    horizon: f64,
    steps: usize,
    affine: bool,
) -> Result<MatrixPath> {
    let n = problem.n;
    odeflow::integrate_steps(
        |t, z| {
            let s = problem.eval(t);
            let mut out = s.hamiltonian() * z;
            if affine {
                let bu = &s.b * &s.u_d;
                let cy = &s.ctc * &s.y_d;
                for r in 0..n {
                    out[(r, 0)] += bu[r];
                    out[(n + r, 0)] -= cy[r];
                }
            }
            out
        },
        0.0,
        horizon,
        z0,
        steps,
        |_| {},
    )
}

pub fn solve_lq_shooting(
    problem: &PeriodicProblem,
    grid: &Grid,
    y0: &DMatrix<f64>,
    horizon: f64,
) -> Result<FiniteHorizonSolution> {
    let n = problem.n;
    check_horizon(horizon, y0, n)?;
    if horizon > SHOOTING_T_MAX {
        return Err(Error::Config(format!(
            "shooting is limited to T ≤ {SHOOTING_T_MAX}; use the dichotomy solver for T = {horizon}"
        )));
    }
    let mut z0 = DMatrix::zeros(2 * n, n + 1);
    z0.view_mut((0, 0), (n, 1)).copy_from(y0);
    for j in 0..n {
        z0[(n + j, j + 1)] = 1.0;
    }
    let (steps, h) = horizon_steps(grid, horizon);
    let flow = integrate_coupled(problem, z0, horizon, steps, true)?;
    let end = flow.last();
    let lam_affine = end.view((n, 0), (n, 1)).clone_owned();
    let shooting = end.view((n, 1), (n, n)).clone_owned();
    let shooting_inv = linalg::inverse_checked(
        &shooting,
        COND_LIMIT,
        "shooting matrix (use the dichotomy solver for long horizons)",
    )?;
    let mut lam0 = -(&shooting_inv * lam_affine);
    // Superposing the columns cancels exponentially large terms; re-integrating
    // the single trajectory and correcting λ(0) recovers the lost digits.
    let mut path = integrate_coupled(problem, linalg::stack(y0, &lam0), horizon, steps, true)?;
    for _ in 0..MAX_SHOOTING_REFINEMENTS {
        let miss = path.last().rows(n, n).clone_owned();
        let corrected = &lam0 - &shooting_inv * &miss;
        let trial = integrate_coupled(problem, linalg::stack(y0, &corrected), horizon, steps, true)?;
        if trial.last().rows(n, n).norm() >= miss.norm() {
            break;
        }
        lam0 = corrected;
        path = trial;
    }
    let (ys, ls): (Vec<_>, Vec<_>) = path
        .samples()
        .iter()
        .map(|z| (z.rows(0, n).clone_owned(), z.rows(n, n).clone_owned()))
        .unzip();
    assemble(problem, horizon, y0, ys, ls, h, HorizonMethod::Shooting)
}

pub fn finite_cost(sol: &FiniteHorizonSolution, problem: &PeriodicProblem) -> f64 {
    extremal::trajectory_cost(problem, &sol.y, &sol.u)
}

#[derive(Clone, Debug, Serialize)]
pub struct TurnpikeReport {
    /// `(t, e(t))` at every node.
    pub error_series: Vec<(f64, f64)>,
    pub fitted_nu: Option<f64>,
    pub fitted_c: Option<f64>,
    pub leading_fit: Option<ExponentialFit>,
    pub trailing_fit: Option<ExponentialFit>,
    pub bound_satisfied: bool,
    /// `e(T/2)`
    pub mid_error: f64,
    pub nu_hat: Option<f64>,
    /// All errors below the fit floor: nothing to fit.
    pub degenerate: bool,
}

#[derive(Clone, Debug)]
pub struct TurnpikeOptions {
    /// Leading-arc window as fractions of `T`; the trailing arc mirrors it.
    pub window: (f64, f64),
    /// Range of `e` values admitted to the fit.
    pub value_range: (f64, f64),
    /// Multiplicative slack on the bound.
    pub slack: f64,
    pub refinements: usize,
}

impl Default for TurnpikeOptions {
    fn default() -> Self {
        TurnpikeOptions {
            window: (0.1, 0.5),
            value_range: (1e-12, 1e-1),
            slack: 1.1,
            refinements: 4,
        }
    }
}

/// `e(t) = ‖y^T − y_θ‖ + ‖λ^T − λ_θ‖ + ‖u^T − u_θ‖` at every node.
pub fn turnpike_errors(sol: &FiniteHorizonSolution, ext: &PeriodicExtremal) -> Vec<(f64, f64)> {
    sol.y
        .times()
        .enumerate()
        .map(|(i, t)| {
            let e = (&sol.y.samples()[i] - ext.y_at(t)).norm()
                + (&sol.lambda.samples()[i] - ext.lambda_at(t)).norm()
                + (&sol.u.samples()[i] - ext.u_at(t)).norm();
            (t, e)
        })
        .collect()
}

pub fn turnpike_report(
    sol: &FiniteHorizonSolution,
    ext: &PeriodicExtremal,
    decay: &DecayEstimate,
) -> Result<TurnpikeReport> {
    turnpike_report_with(sol, ext, decay, &TurnpikeOptions::default())
}

/// Fits `e(t) ≈ a·e^{−νt} + b·e^{−ν'(T−t)}` by alternating single-exponential
/// fits of each arc after subtracting the other, then takes `c` as the
/// smallest constant bounding `e` by `c(e^{−νt} + e^{−ν(T−t)})` inside the fit
/// windows. The bound is then checked with the given slack at every node,
/// including the arcs the fit never saw.
pub fn turnpike_report_with(
    sol: &FiniteHorizonSolution,
    ext: &PeriodicExtremal,
    decay: &DecayEstimate,
    opts: &TurnpikeOptions,
) -> Result<TurnpikeReport> {
    let horizon = sol.horizon;
    let series = turnpike_errors(sol, ext);
    let mid = ((0.5 * horizon / sol.y.dt()).round() as usize).min(series.len() - 1);
    let mid_error = series[mid].1;
    let (lo, hi) = opts.value_range;
    let max_e = series.iter().map(|s| s.1).fold(0.0, f64::max);
    if max_e <= lo {
        return Ok(TurnpikeReport {
            error_series: series,
            fitted_nu: None,
            fitted_c: None,
            leading_fit: None,
            trailing_fit: None,
            bound_satisfied: true,
            mid_error,
            nu_hat: decay.nu_hat,
            degenerate: true,
        });
    }
    let window = (opts.window.0 * horizon, opts.window.1 * horizon);
    let in_range = |v: f64| v >= lo && v <= hi;
    let mut lead: Option<ExponentialFit> = None;
    let mut trail: Option<ExponentialFit> = None;
    for _ in 0..opts.refinements.max(1) {
        let leading: Vec<_> = series
            .iter()
            .filter(|s| in_range(s.1))
            .map(|&(t, e)| (t, e - trail.as_ref().map_or(0.0, |f| f.eval(horizon - t))))
            .collect();
        lead = Some(report::fit_exponential(&leading, report::DEFAULT_FLOOR, window)?);
        let trailing: Vec<_> = series
            .iter()
            .filter(|s| in_range(s.1))
            .map(|&(t, e)| (horizon - t, e - lead.as_ref().map_or(0.0, |f| f.eval(t))))
            .collect();
        // a trailing arc may be absent, e.g. when λ_θ(T) happens to vanish
        trail = report::fit_exponential(&trailing, report::DEFAULT_FLOOR, window).ok();
    }
    let lead = lead.expect("at least one refinement");
    let nu = lead.rate;
    let envelope = |t: f64| (-nu * t).exp() + (-nu * (horizon - t)).exp();
    let in_window = |t: f64| {
        (t >= window.0 && t <= window.1) || (horizon - t >= window.0 && horizon - t <= window.1)
    };
    let c = series
        .iter()
        .filter(|&&(t, e)| in_window(t) && in_range(e))
        .map(|&(t, e)| e / envelope(t))
        .fold(0.0, f64::max);
    let bound_satisfied = nu > 0.0
        && series
            .iter()
            .all(|&(t, e)| e <= c * envelope(t) * opts.slack);
    Ok(TurnpikeReport {
        error_series: series,
        fitted_nu: Some(nu),
        fitted_c: Some(c),
        leading_fit: Some(lead),
        trailing_fit: trail,
        bound_satisfied,
        mid_error,
        nu_hat: decay.nu_hat,
        degenerate: false,
    })
}

/// `|C_T/T − C_θ/θ|` for each horizon, solved by the dichotomy method.
pub fn average_cost_gap(
    problem: &PeriodicProblem,
    xf: &DichotomyTransform,
    ext: &PeriodicExtremal,
    y0: &DMatrix<f64>,
    horizons: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("horizons must be strictly ascending".into()));
    }
    let periodic_rate = ext.cost / ext.theta;
    horizons
        .iter()
        .map(|&horizon| {
            let sol = solve_lq_dichotomy(problem, xf, ext, y0, horizon)?;
            Ok((horizon, (sol.cost / horizon - periodic_rate).abs()))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    /// `(T, max ratio)` per horizon.
    pub per_horizon: Vec<(f64, f64)>,
    pub max_ratio: f64,
    pub samples: usize,
}

/// `(‖y(T)‖ + ‖λ(0)‖) / (‖y(0)‖ + ‖λ(T)‖)` for one homogeneous boundary solve.
pub fn boundary_ratio(
    xf: &DichotomyTransform,
    horizon: f64,
    y_start: &DMatrix<f64>,
    lam_end: &DMatrix<f64>,
) -> Result<Option<f64>> {
    let denom = y_start.norm() + lam_end.norm();
    if denom == 0.0 {
        return Ok(None);
    }
    let (p0, q_t) = decoupled_boundary_solve(xf, horizon, y_start, lam_end)?;
    let (y_end, _) = correction_at(xf, horizon, horizon, &p0, &q_t)?;
    let (_, lam_start) = correction_at(xf, horizon, 0.0, &p0, &q_t)?;
    Ok(Some((y_end.norm() + lam_start.norm()) / denom))
}

/// Largest boundary ratio over `samples` random unit-norm boundary data,
/// reusing the same data at every horizon.
pub fn stability_ratio(
    xf: &DichotomyTransform,
    samples: usize,
    horizons: &[f64],
    seed: u64,
) -> Result<StabilityReport> {
    if samples < 10 {
        return Err(Error::Config(format!("need at least 10 samples, got {samples}")));
    }
    let n = xf.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..samples)
        .map(|_| {
            let v: DMatrix<f64> = DMatrix::from_fn(2 * n, 1, |_, _| rng.gen_range(-1.0..1.0));
            let v = &v / v.norm();
            (v.rows(0, n).clone_owned(), v.rows(n, n).clone_owned())
        })
        .collect();
    let mut per_horizon = Vec::with_capacity(horizons.len());
    for &horizon in horizons {
        let mut worst: f64 = 0.0;
        for (y_start, lam_end) in &data {
            if let Some(r) = boundary_ratio(xf, horizon, y_start, lam_end)? {
                worst = worst.max(r);
            }
        }
        per_horizon.push((horizon, worst));
    }
    let max_ratio = per_horizon.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(StabilityReport {
        per_horizon,
        max_ratio,
        samples,
    })
}

/// Initial-value solve of the homogeneous coupled system through the
/// decoupled coordinates: `p(t) = Ψ(t,0)p(0)`, `q(t) = Ψ(t,0)⁻ᵀq(0)`.
/// `q` grows forward in time, hence the horizon bound.
pub fn cauchy_solve(
    xf: &DichotomyTransform,
    y0: &DMatrix<f64>,
    lam0: &DMatrix<f64>,
    horizon: f64,
) -> Result<(MatrixPath, MatrixPath)> {
    let n = xf.dim();
    check_horizon(horizon, y0, n)?;
    if lam0.shape() != (n, 1) {
        return Err(Error::Config(format!("initial costate must have length {n}")));
    }
    let limit = CAUCHY_MAX_PERIODS * xf.theta;
    if horizon > limit {
        return Err(Error::Conditioning {
            what: "forward propagation of q (horizon)".into(),
            cond: horizon,
            limit,
        });
    }
    let (p0, q0) = xf.to_decoupled(0.0, y0, lam0);
    let op = &xf.l_transition;
    let m_inv = linalg::inverse_checked(op.monodromy(), COND_LIMIT, "monodromy")?;
    let (steps, h) = horizon_steps(&xf.grid, horizon);
    let mut ys = Vec::with_capacity(steps + 1);
    let mut ls = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let t = if i == steps { horizon } else { i as f64 * h };
        let (k, tau) = odeflow::reduce_time(t, xf.theta, xf.grid.dt());
        let k = k.max(0) as u64;
        let p = op.phi(tau) * linalg::mat_pow(op.monodromy(), k) * &p0;
        // Ψ(t,0)⁻¹ = M^{−k} Φ(τ)⁻¹
        let psi_inv = linalg::mat_pow(&m_inv, k) * op.phi_inverse(tau)?;
        let q = psi_inv.transpose() * &q0;
        let (y, lam) = xf.from_decoupled(t, &p, &q);
        ys.push(y);
        ls.push(lam);
    }
    Ok((
        MatrixPath::from_samples(0.0, h, ys)?,
        MatrixPath::from_samples(0.0, h, ls)?,
    ))
}

/// Largest gap over one period between the coupled flow from `(y0, λ0)` and
/// the decoupled flow `ṗ = Lp`, `q̇ = −Lᵀq` mapped back through `T⁻¹`.
/// Returns `(gap, scale)` with `scale` the sup-norm of the coupled solution,
/// which grows like `e^{ν̂θ}` and sets the attainable absolute accuracy.
pub fn decoupled_propagation_gap(
    problem: &PeriodicProblem,
    xf: &DichotomyTransform,
    y0: &DMatrix<f64>,
    lam0: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let n = xf.dim();
    check_horizon(xf.theta, y0, n)?;
    let steps = xf.grid.steps_per_period;
    let coupled = integrate_coupled(problem, linalg::stack(y0, lam0), xf.theta, steps, false)?;
    let (p0, q0) = xf.to_decoupled(0.0, y0, lam0);
    let split = odeflow::integrate_steps(
        |t, z| {
            let l = xf.l_at(t);
            linalg::stack(&(&l * z.rows(0, n)), &-(l.transpose() * z.rows(n, n)))
        },
        0.0,
        xf.theta,
        linalg::stack(&p0, &q0),
        steps,
        |_| {},
    )?;
    let mut gap: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (i, (direct, z)) in coupled.samples().iter().zip(split.samples()).enumerate() {
        let p = z.rows(0, n).clone_owned();
        let q = z.rows(n, n).clone_owned();
        let (y, lam) = xf.from_decoupled(coupled.time(i), &p, &q);
        gap = gap.max((linalg::stack(&y, &lam) - direct).norm());
        scale = scale.max(direct.norm());
    }
    Ok((gap, scale))
}

/// Direct RK4 integration of the homogeneous coupled system; the oracle for [`cauchy_solve`].
pub fn cauchy_direct(
    problem: &PeriodicProblem,
    grid: &Grid,
    y0: &DMatrix<f64>,
    lam0: &DMatrix<f64>,
    horizon: f64,
) -> Result<(MatrixPath, MatrixPath)> {
    let n = problem.n;
    let (steps, h) = horizon_steps(grid, horizon);
    let flow = integrate_coupled(problem, linalg::stack(y0, lam0), horizon, steps, false)?;
    let ys = flow.samples().iter().map(|z| z.rows(0, n).clone_owned()).collect();
    let ls = flow.samples().iter().map(|z| z.rows(n, n).clone_owned()).collect();
    Ok((
        MatrixPath::from_samples(0.0, h, ys)?,
        MatrixPath::from_samples(0.0, h, ls)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dichotomy::build_transform;
    use crate::extremal::periodic_extremal;
    use crate::lyapunov::solve_plde_stein;
    use crate::problem::builtin_problem;
    use crate::riccati::{solve_prde_periodic, RiccatiOptions};

    struct Setup {
        p: PeriodicProblem,
        xf: DichotomyTransform,
        ext: PeriodicExtremal,
        decay: DecayEstimate,
    }

    fn setup(p: PeriodicProblem, steps: usize) -> Setup {
        let grid = Grid::new(p.theta, steps).unwrap();
        let ric = solve_prde_periodic(&p, &grid, &RiccatiOptions::default()).unwrap();
        let lya = solve_plde_stein(&p, &ric).unwrap();
        let xf = build_transform(&ric, &lya).unwrap();
        let ext = periodic_extremal(&p, &xf).unwrap();
        Setup { p, xf, ext, decay: ric.decay }
    }

    fn col(v: &[f64]) -> DMatrix<f64> {
        linalg::column(v)
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let s = setup(builtin_problem("paper-2d").unwrap().without_tracking(), 256);
        let sol = solve_lq_dichotomy(&s.p, &s.xf, &s.ext, &col(&[0.0, 0.0]), 7.0).unwrap();
        assert_eq!(sol.cost, 0.0);
        assert_eq!(sol.y.samples().iter().map(|x| x.norm()).fold(0.0, f64::max), 0.0);
        let sh = solve_lq_shooting(&s.p, &s.xf.grid, &col(&[0.0, 0.0]), 7.0).unwrap();
        assert_eq!(sh.cost, 0.0);
    }

    #[test]
    fn scalar_a0_against_closed_form() {
        // ẏ = λ, λ̇ = y − 1, y(0) = 0, λ(T) = 0:
        // y = 1 + a eᵗ + b e⁻ᵗ, λ = a eᵗ − b e⁻ᵗ, b = −1/(1 + e^{−2T}), a = b e^{−2T}
        let s = setup(builtin_problem("scalar-a0").unwrap(), 1024);
        let horizon: f64 = 10.0;
        let b = -1.0 / (1.0 + (-2.0 * horizon).exp());
        let a = b * (-2.0 * horizon).exp();
        let exact_y = |t: f64| 1.0 + a * t.exp() + b * (-t).exp();
        let exact_l = |t: f64| a * t.exp() - b * (-t).exp();
        let sh = solve_lq_shooting(&s.p, &s.xf.grid, &col(&[0.0]), horizon).unwrap();
        let dich = solve_lq_dichotomy(&s.p, &s.xf, &s.ext, &col(&[0.0]), horizon).unwrap();
        for sol in [&sh, &dich] {
            let err = sol
                .y
                .times()
                .enumerate()
                .map(|(i, t)| {
                    (sol.y.samples()[i][0] - exact_y(t)).abs() + (sol.lambda.samples()[i][0] - exact_l(t)).abs()
                })
                .fold(0.0, f64::max);
            let tol = if sol.method == HorizonMethod::Shooting { 1e-8 } else { 1e-7 };
            assert!(err < tol, "{:?} {err}", sol.method);
            assert!(sol.boundary_residuals.0 <= 1e-8 && sol.boundary_residuals.1 <= 1e-8);
        }
    }

    #[test]
    fn scalar_a0_turnpike_rate_is_one() {
        let s = setup(builtin_problem("scalar-a0").unwrap(), 1024);
        let sol = solve_lq_dichotomy(&s.p, &s.xf, &s.ext, &col(&[0.0]), 30.0).unwrap();
        let rep = turnpike_report(&sol, &s.ext, &s.decay).unwrap();
        assert!((rep.fitted_nu.unwrap() - 1.0).abs() < 0.02, "{:?}", rep.fitted_nu);
        assert!(rep.bound_satisfied);
    }

    #[test]
    fn degenerate_turnpike() {
        let s = setup(builtin_problem("paper-2d").unwrap().without_tracking(), 256);
        let sol = solve_lq_dichotomy(&s.p, &s.xf, &s.ext, &col(&[0.0, 0.0]), 10.0).unwrap();
        let rep = turnpike_report(&sol, &s.ext, &s.decay).unwrap();
        assert!(rep.degenerate && rep.fitted_nu.is_none());
    }

    #[test]
    fn paper_2d_dichotomy_matches_shooting() {
        let s = setup(builtin_problem("paper-2d").unwrap(), 2048);
        let y0 = col(&[0.2, 0.0]);
        let d = solve_lq_dichotomy(&s.p, &s.xf, &s.ext, &y0, 10.0).unwrap();
        let sh = solve_lq_shooting(&s.p, &s.xf.grid, &y0, 10.0).unwrap();
        let gap = d.sup_distance(&sh);
        assert!(gap <= 1e-6, "{gap}");
        assert!((d.cost - sh.cost).abs() <= 1e-9, "{}", (d.cost - sh.cost).abs());
    }

    #[test]
    fn shooting_rejects_long_horizon() {
        let s = setup(builtin_problem("scalar-a0").unwrap(), 128);
        assert!(matches!(
            solve_lq_shooting(&s.p, &s.xf.grid, &col(&[0.0]), 40.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stability_ratio_scalar_limit_is_one() {
        let s = setup(builtin_problem("scalar-a0").unwrap(), 512);
        let rep = stability_ratio(&s.xf, 10, &[20.0, 40.0], 7).unwrap();
        for (_, r) in rep.per_horizon {
            assert!((r - 1.0).abs() < 1e-6, "{r}");
        }
        assert_eq!(boundary_ratio(&s.xf, 5.0, &col(&[0.0]), &col(&[0.0])).unwrap(), None);
    }

    #[test]
    fn cauchy_matches_direct_scalar() {
        let s = setup(builtin_problem("scalar-a0").unwrap(), 1024);
        let (y, l) = cauchy_solve(&s.xf, &col(&[1.0]), &col(&[0.0]), 2.0).unwrap();
        let (yd, ld) = cauchy_direct(&s.p, &s.xf.grid, &col(&[1.0]), &col(&[0.0]), 2.0).unwrap();
        assert!(y.sup_distance(&yd).max(l.sup_distance(&ld)) < 1e-7);
        let (y0, _) = cauchy_solve(&s.xf, &col(&[0.0]), &col(&[0.0]), 2.0).unwrap();
        assert!(y0.samples().iter().all(|x| x[0] == 0.0));
        assert!(matches!(
            cauchy_solve(&s.xf, &col(&[1.0]), &col(&[0.0]), 100.0),
            Err(Error::Conditioning { .. })
        ));
    }

    #[test]
    fn horizon_reduction_stays_in_period() {
        let theta = 2.0 * std::f64::consts::PI;
        assert_eq!(reduce_horizon(2.0 * theta, theta), 0.0);
        let r = reduce_horizon(30.0, theta);
        assert!((r - (30.0 - 4.0 * theta)).abs() < 1e-12);
    }
}
