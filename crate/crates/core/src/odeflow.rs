//! Matrix ODE integration on a shared uniform grid, transition operators,
//! monodromy matrices and decay-rate estimates.
//!
//! The primary integrator is fixed-step classical RK4 so that every quantity
//! downstream lives on the same nodes and runs are bit-reproducible. A
//! Dormand–Prince 5(4) pair is kept as a cross-check.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, COND_LIMIT};

/// Uniform time grid shared by all solvers: `steps_per_period` RK4 steps per period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub theta: f64,
    pub steps_per_period: usize,
}

impl Grid {
    pub const DEFAULT_STEPS: usize = 2048;

    pub fn new(theta: f64, steps_per_period: usize) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(Error::Config(format!("period must be positive, got {theta}")));
        }
        if steps_per_period < 16 || !steps_per_period.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "steps per period must be even and at least 16, got {steps_per_period}"
            )));
        }
        Ok(Grid {
            theta,
            steps_per_period,
        })
    }

    pub fn dt(&self) -> f64 {
        self.theta / self.steps_per_period as f64
    }

    /// Even step count covering `span` with steps no longer than `dt`.
    pub fn steps_for(&self, span: f64) -> usize {
        let raw = (span.abs() / self.dt() - 1e-9).ceil().max(1.0) as usize;
        raw + raw % 2
    }
}

/// Composite Simpson weights over `intervals` equal steps of size `h`
/// (3/8 rule on the last three intervals when the count is odd).
pub fn simpson_weights(intervals: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; intervals + 1];
    match intervals {
        0 => {}
        1 => {
            w[0] = 0.5 * h;
            w[1] = 0.5 * h;
        }
        _ => {
            let simpson_part = if intervals.is_multiple_of(2) { intervals } else { intervals - 3 };
            for i in (0..simpson_part).step_by(2) {
                w[i] += h / 3.0;
                w[i + 1] += 4.0 * h / 3.0;
                w[i + 2] += h / 3.0;
            }
            if intervals % 2 == 1 {
                let s = simpson_part;
                w[s] += 3.0 * h / 8.0;
                w[s + 1] += 9.0 * h / 8.0;
                w[s + 2] += 9.0 * h / 8.0;
                w[s + 3] += 3.0 * h / 8.0;
            }
        }
    }
    w
}

/// Sampled matrix-valued function on a uniform ascending grid, with the
/// right-hand side stored at each node for cubic Hermite interpolation.
/// Running integrals `∫₀^{t_i} f` at every node. Each interval uses the same
/// four-point cubic rule (one-sided at the ends), so the error varies smoothly
/// from node to node and differencing the result stays clean.
pub fn cumulative_integral(f: &[DMatrix<f64>], h: f64) -> Vec<DMatrix<f64>> {
    let n = f.len();
    let mut out = Vec::with_capacity(n);
    out.push(DMatrix::zeros(f[0].nrows(), f[0].ncols()));
    for i in 0..n - 1 {
        let step = if i == 0 {
            (&f[0] * 9.0 + &f[1] * 19.0 - &f[2] * 5.0 + &f[3]) * (h / 24.0)
        } else if i + 2 < n {
            (-&f[i - 1] + &f[i] * 13.0 + &f[i + 1] * 13.0 - &f[i + 2]) * (h / 24.0)
        } else {
            (&f[i - 2] - &f[i - 1] * 5.0 + &f[i] * 19.0 + &f[i + 1] * 9.0) * (h / 24.0)
        };
        let next = &out[i] + step;
        out.push(next);
    }
    out
}

#[derive(Clone, Debug)]
pub struct MatrixPath {
    t0: f64,
    dt: f64,
    samples: Vec<DMatrix<f64>>,
    derivs: Vec<DMatrix<f64>>,
}

impl MatrixPath {
    pub fn new(
        t0: f64,
        dt: f64,
        samples: Vec<DMatrix<f64>>,
        derivs: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if samples.len() < 2 || samples.len() != derivs.len() {
            return Err(Error::Config(format!(
                "path needs >= 2 samples with matching derivatives (got {} / {})",
                samples.len(),
                derivs.len()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::Config(format!("path step must be positive, got {dt}")));
        }
        Ok(MatrixPath {
            t0,
            dt,
            samples,
            derivs,
        })
    }

    /// Builds a path whose derivatives come from finite differences of the samples.
    pub fn from_samples(t0: f64, dt: f64, samples: Vec<DMatrix<f64>>) -> Result<Self> {
        let derivs = finite_difference(&samples, dt);
        Self::new(t0, dt, samples, derivs)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.time(i))
    }

    pub fn samples(&self) -> &[DMatrix<f64>] {
        &self.samples
    }

    pub fn derivs(&self) -> &[DMatrix<f64>] {
        &self.derivs
    }

    pub fn first(&self) -> &DMatrix<f64> {
        &self.samples[0]
    }

    pub fn last(&self) -> &DMatrix<f64> {
        &self.samples[self.len() - 1]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.samples[0].shape()
    }

    /// Cubic Hermite interpolation; exact at nodes, clamped outside the range.
    pub fn interpolate(&self, t: f64) -> DMatrix<f64> {
        let x = (t - self.t0) / self.dt;
        let last = self.len() - 1;
        if x <= 0.0 {
            return self.samples[0].clone();
        }
        if x >= last as f64 {
            return self.samples[last].clone();
        }
        let i = x.floor() as usize;
        let s = x - i as f64;
        if s == 0.0 {
            return self.samples[i].clone();
        }
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let mut out = &self.samples[i] * h00;
        out += &self.derivs[i] * (h10 * self.dt);
        out += &self.samples[i + 1] * (h01);
        out += &self.derivs[i + 1] * (h11 * self.dt);
        out
    }

    /// Interpolation of a path covering exactly one period, extended periodically.
    pub fn interpolate_periodic(&self, t: f64, theta: f64) -> DMatrix<f64> {
        let (_, tau) = reduce_time(t - self.t0, theta, self.dt);
        self.interpolate(self.t0 + tau)
    }

    /// 4th-order finite-difference derivative of the samples at node `i`.
    pub fn fd_derivative(&self, i: usize) -> DMatrix<f64> {
        fd_at(&self.samples, self.dt, i)
    }

    /// Composite Simpson integral of the samples over the whole path.
    pub fn integral(&self) -> DMatrix<f64> {
        let w = simpson_weights(self.len() - 1, self.dt);
        let mut acc = DMatrix::zeros(self.shape().0, self.shape().1);
        for (wi, x) in w.iter().zip(&self.samples) {
            acc += x * (*wi);
        }
        acc
    }

    pub fn map<F>(&self, f: F) -> MatrixPath
    where
        F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
    {
        let samples: Vec<_> = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, x)| f(self.time(i), x))
            .collect();
        let derivs = finite_difference(&samples, self.dt);
        MatrixPath {
            t0: self.t0,
            dt: self.dt,
            samples,
            derivs,
        }
    }

    /// Largest Frobenius distance between node samples of two paths on the same grid.
    pub fn sup_distance(&self, other: &MatrixPath) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Flips a path recorded in descending time so that it starts at `t0`.
    fn reversed(mut self, t0: f64) -> Self {
        self.samples.reverse();
        self.derivs.reverse();
        self.t0 = t0;
        self
    }
}

fn fd_at(samples: &[DMatrix<f64>], dt: f64, i: usize) -> DMatrix<f64> {
    let n = samples.len();
    let x = |j: usize| &samples[j];
    let c = 1.0 / (12.0 * dt);
    if n < 5 {
        // too short for the 4th-order stencils
        let (a, b) = if i + 1 < n { (i, i + 1) } else { (i - 1, i) };
        return (x(b) - x(a)) / dt;
    }
    let comb = |coef: &[(usize, f64)]| {
        let mut acc = DMatrix::zeros(samples[0].nrows(), samples[0].ncols());
        for &(j, w) in coef {
            acc += x(j) * (w * c);
        }
        acc
    };
    if i >= 2 && i + 2 < n {
        comb(&[(i - 2, 1.0), (i - 1, -8.0), (i + 1, 8.0), (i + 2, -1.0)])
    } else if i == 0 {
        comb(&[(0, -25.0), (1, 48.0), (2, -36.0), (3, 16.0), (4, -3.0)])
    } else if i == 1 {
        comb(&[(0, -3.0), (1, -10.0), (2, 18.0), (3, -6.0), (4, 1.0)])
    } else if i == n - 1 {
        let k = n - 1;
        comb(&[(k, 25.0), (k - 1, -48.0), (k - 2, 36.0), (k - 3, -16.0), (k - 4, 3.0)])
    } else {
        let k = n - 1;
        comb(&[(k, 3.0), (k - 1, 10.0), (k - 2, -18.0), (k - 3, 6.0), (k - 4, -1.0)])
    }
}

/// 4th-order finite-difference derivatives at every node.
pub fn finite_difference(samples: &[DMatrix<f64>], dt: f64) -> Vec<DMatrix<f64>> {
    (0..samples.len()).map(|i| fd_at(samples, dt, i)).collect()
}

/// Splits `t` into `k·θ + τ` with `τ ∈ [0, θ)`; `τ` within 1e-7 steps of a
/// grid node snaps onto it so node evaluations stay exact.
pub fn reduce_time(t: f64, theta: f64, dt: f64) -> (i64, f64) {
    let mut k = (t / theta).floor();
    let mut tau = t - k * theta;
    let steps = (theta / dt).round();
    let x = tau / dt;
    let r = x.round();
    if (x - r).abs() < 1e-7 {
        tau = r * dt;
        if r >= steps {
            k += 1.0;
            tau = 0.0;
        }
    }
    if tau < 0.0 {
        k -= 1.0;
        tau += theta;
    } else if tau >= theta {
        k += 1.0;
        tau -= theta;
    }
    (k as i64, tau)
}

fn check_finite(x: &DMatrix<f64>, t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { t })
    }
}

/// One classical RK4 step given the slope `k1` at the start.
fn rk4_step<F>(rhs: &F, t: f64, h: f64, x: &DMatrix<f64>, k1: &DMatrix<f64>) -> DMatrix<f64>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let k2 = rhs(t + 0.5 * h, &(x + k1 * (0.5 * h)));
    let k3 = rhs(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = rhs(t + h, &(x + &k3 * h));
    let mut out = x.clone();
    out += k1 * (h / 6.0);
    out += &k2 * (h / 3.0);
    out += &k3 * (h / 3.0);
    out += &k4 * (h / 6.0);
    out
}

/// Fixed-step RK4 from `t_start` to `t_end` (either direction) in exactly
/// `steps` steps; `post` runs on the state after every step. The returned
/// path is always ascending in time.
pub fn integrate_steps<F, G>(
    rhs: F,
    t_start: f64,
    t_end: f64,
    x0: DMatrix<f64>,
    steps: usize,
    post: G,
) -> Result<MatrixPath>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
    G: Fn(&mut DMatrix<f64>),
{
    if steps == 0 || t_end == t_start {
        return Err(Error::Config("integration span must be nonzero".into()));
    }
    let h = (t_end - t_start) / steps as f64;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut derivs = Vec::with_capacity(steps + 1);
    let mut x = x0;
    check_finite(&x, t_start)?;
    let mut k1 = rhs(t_start, &x);
    for i in 0..steps {
        let t = t_start + i as f64 * h;
        let mut next = rk4_step(&rhs, t, h, &x, &k1);
        post(&mut next);
        let t_next = if i + 1 == steps { t_end } else { t + h };
        check_finite(&next, t_next)?;
        let k_next = rhs(t_next, &next);
        samples.push(std::mem::replace(&mut x, next));
        derivs.push(std::mem::replace(&mut k1, k_next));
    }
    samples.push(x);
    derivs.push(k1);
    let path = MatrixPath {
        t0: t_start,
        dt: h.abs(),
        samples,
        derivs,
    };
    Ok(if h < 0.0 { path.reversed(t_end) } else { path })
}

/// Fixed-step RK4 with the grid's step size (adjusted to divide the span evenly).
pub fn integrate_ode<F>(
    rhs: F,
    t_start: f64,
    t_end: f64,
    x0: DMatrix<f64>,
    grid: &Grid,
) -> Result<MatrixPath>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    integrate_steps(rhs, t_start, t_end, x0, grid.steps_for(t_end - t_start), |_| {})
}

/// Adaptive Dormand–Prince 5(4) integration returning only the final state.
/// Cross-check mode; the solvers never use it.
pub fn integrate_adaptive<F>(
    rhs: F,
    t_start: f64,
    t_end: f64,
    x0: DMatrix<f64>,
    rtol: f64,
    atol: f64,
) -> Result<DMatrix<f64>>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let dir = (t_end - t_start).signum();
    let span = (t_end - t_start).abs();
    let mut t = t_start;
    let mut x = x0;
    let mut h = (span / 100.0).max(1e-6);
    let mut done = 0.0;
    let mut iterations = 0usize;
    while done < span {
        iterations += 1;
        if iterations > 10_000_000 {
            return Err(Error::Divergence { t });
        }
        h = h.min(span - done);
        let mut k: Vec<DMatrix<f64>> = Vec::with_capacity(7);
        for stage in 0..7 {
            let mut xs = x.clone();
            for (j, kj) in k.iter().enumerate() {
                if A[stage][j] != 0.0 {
                    xs += kj * (dir * h * A[stage][j]);
                }
            }
            k.push(rhs(t + dir * C[stage] * h, &xs));
        }
        let mut x5 = x.clone();
        let mut x4 = x.clone();
        for s in 0..7 {
            x5 += &k[s] * (dir * h * B5[s]);
            x4 += &k[s] * (dir * h * B4[s]);
        }
        let err = (&x5 - &x4)
            .iter()
            .zip(x5.iter())
            .map(|(e, v)| (e / (atol + rtol * v.abs())).powi(2))
            .sum::<f64>()
            / x5.len() as f64;
        let err = err.sqrt();
        if !err.is_finite() {
            return Err(Error::Divergence { t });
        }
        if err <= 1.0 {
            t += dir * h;
            done += h;
            x = x5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    Ok(x)
}

/// Matrix-valued generator `t ↦ L(t)` of a linear time-periodic system.
pub type Generator = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// Transition matrix `Ψ(t, s)` of `ẋ = L(t)x` for θ-periodic `L`, stored as the
/// fundamental solution `Φ(·, 0)` over one period plus the monodromy `Φ(θ, 0)`.
#[derive(Clone)]
pub struct TransitionOperator {
    generator: Generator,
    period: f64,
    fundamental: MatrixPath,
    inverse_nodes: Vec<DMatrix<f64>>,
    monodromy: DMatrix<f64>,
}

impl std::fmt::Debug for TransitionOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransitionOperator")
            .field("period", &self.period)
            .field("monodromy", &self.monodromy)
            .finish()
    }
}

pub fn build_transition(generator: Generator, grid: &Grid) -> Result<TransitionOperator> {
    let n = generator(0.0).nrows();
    let g = generator.clone();
    let fundamental = integrate_steps(
        move |t, x| g(t) * x,
        0.0,
        grid.theta,
        DMatrix::identity(n, n),
        grid.steps_per_period,
        |_| {},
    )?;
    let inverse_nodes = fundamental
        .samples()
        .iter()
        .map(|x| linalg::inverse_checked(x, COND_LIMIT, "fundamental matrix"))
        .collect::<Result<Vec<_>>>()?;
    let monodromy = fundamental.last().clone();
    Ok(TransitionOperator {
        generator,
        period: grid.theta,
        fundamental,
        inverse_nodes,
        monodromy,
    })
}

impl TransitionOperator {
    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn dim(&self) -> usize {
        self.monodromy.nrows()
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn monodromy(&self) -> &DMatrix<f64> {
        &self.monodromy
    }

    pub fn fundamental(&self) -> &MatrixPath {
        &self.fundamental
    }

    /// `Φ(τ, 0)` for `τ ∈ [0, θ]`.
    pub fn phi(&self, tau: f64) -> DMatrix<f64> {
        self.fundamental.interpolate(tau)
    }

    /// `Φ(τ, 0)⁻¹` for `τ ∈ [0, θ]`, cached at grid nodes.
    pub fn phi_inverse(&self, tau: f64) -> Result<DMatrix<f64>> {
        let x = (tau - self.fundamental.t0()) / self.fundamental.dt();
        if x >= 0.0 && x.fract() == 0.0 && (x as usize) < self.inverse_nodes.len() {
            return Ok(self.inverse_nodes[x as usize].clone());
        }
        linalg::inverse_checked(&self.phi(tau), COND_LIMIT, "partial transition factor")
    }

    /// Inverses of `Φ(t_i, 0)` at the grid nodes.
    pub fn inverse_nodes(&self) -> &[DMatrix<f64>] {
        &self.inverse_nodes
    }

    pub fn monodromy_power(&self, k: u64) -> DMatrix<f64> {
        linalg::mat_pow(&self.monodromy, k)
    }

    fn reduce(&self, t: f64) -> (i64, f64) {
        reduce_time(t, self.period, self.fundamental.dt())
    }

    /// `Ψ(t, s)`. Spans with `t ≥ s` compose `Φ(τ)·M^{k−j}·Φ(σ)⁻¹`; backward
    /// spans invert the forward factor under the conditioning limit.
    pub fn transition(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        if t == s {
            return Ok(DMatrix::identity(self.dim(), self.dim()));
        }
        if t < s {
            let fwd = self.transition(s, t)?;
            return linalg::inverse_checked(&fwd, COND_LIMIT, "backward transition span");
        }
        let (k, tau) = self.reduce(t);
        let (j, sigma) = self.reduce(s);
        let power = (k - j).max(0) as u64;
        let left = self.phi(tau);
        let right = self.phi_inverse(sigma)?;
        Ok(if power == 0 {
            left * right
        } else {
            left * self.monodromy_power(power) * right
        })
    }

    /// `Ψ(t, 0)` for `t ≥ 0` without any inverse.
    pub fn from_origin(&self, t: f64) -> DMatrix<f64> {
        let (k, tau) = self.reduce(t);
        let left = self.phi(tau);
        if k <= 0 {
            left
        } else {
            left * self.monodromy_power(k as u64)
        }
    }

    /// `U*(T, t) = Ψ(T, t)ᵀ`, the propagator of the adjoint equation `φ̇ = −L*φ`.
    pub fn adjoint_transition(&self, horizon: f64, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.transition(horizon, t)?.transpose())
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.monodromy)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayEstimate {
    pub spectral_radius: f64,
    pub stable: bool,
    /// `−ln ρ(M) / θ`; absent when unstable.
    pub nu_hat: Option<f64>,
    /// `sup ‖Ψ(t, s)‖·e^{ν̂(t−s)}` over sampled spans; absent when unstable.
    pub c_hat: Option<f64>,
}

/// Start-time and end-time samples per period used for `c_hat`.
pub const DECAY_S_SAMPLES: usize = 32;
pub const DECAY_T_SAMPLES: usize = 128;
/// Hard cap on the span window; saturation normally stops the sweep far earlier.
pub const DECAY_MAX_PERIODS: usize = 60;

pub fn estimate_decay(op: &TransitionOperator) -> DecayEstimate {
    estimate_decay_over(op, 3.0)
}

/// Like [`estimate_decay`], sampling spans of at least `periods·θ` for `c_hat`.
///
/// `‖Ψ(t,s)‖e^{ν̂(t−s)}` keeps growing while subdominant Floquet modes die
/// out, so the window is extended one period at a time until the per-period
/// supremum stops increasing. Spans are sampled on the lattice
/// `s = σ_j`, `t = kθ + τ_i` of [`DECAY_S_SAMPLES`] × [`DECAY_T_SAMPLES`]
/// nodes per period, using `Ψ(kθ + τ, σ) = Φ(τ) M^k Φ(σ)⁻¹`.
pub fn estimate_decay_over(op: &TransitionOperator, periods: f64) -> DecayEstimate {
    let rho = op.spectral_radius();
    if !(rho < 1.0) {
        return DecayEstimate {
            spectral_radius: rho,
            stable: false,
            nu_hat: None,
            c_hat: None,
        };
    }
    let theta = op.period();
    let nu = -rho.ln() / theta;
    let steps = op.fundamental.len() - 1;
    let dt = op.fundamental.dt();
    let s_nodes: Vec<usize> = (0..steps).step_by((steps / DECAY_S_SAMPLES).max(1)).collect();
    let t_nodes: Vec<usize> = (0..steps).step_by((steps / DECAY_T_SAMPLES).max(1)).collect();
    let right: Vec<(f64, DMatrix<f64>)> = s_nodes
        .iter()
        .map(|&j| (j as f64 * dt, &op.inverse_nodes[j] * (-nu * j as f64 * dt).exp()))
        .collect();
    let left: Vec<(f64, DMatrix<f64>)> = t_nodes
        .iter()
        .map(|&i| (i as f64 * dt, &op.fundamental.samples()[i] * (nu * i as f64 * dt).exp()))
        .collect();
    let scaled_m = &op.monodromy / rho;
    let min_periods = periods.ceil().max(1.0) as usize;
    let mut power = DMatrix::identity(op.dim(), op.dim());
    let mut c: f64 = 1.0;
    let mut previous = 0.0;
    for k in 0..DECAY_MAX_PERIODS {
        let mut period_max: f64 = 0.0;
        for (tau, a) in &left {
            let am = a * &power;
            for (sigma, b) in &right {
                if k == 0 && tau < sigma {
                    continue;
                }
                period_max = period_max.max(linalg::spectral_norm(&(&am * b)));
            }
        }
        c = c.max(period_max);
        if k + 1 >= min_periods && period_max - previous <= 1e-10 * c {
            break;
        }
        previous = period_max;
        power = &scaled_m * power;
    }
    DecayEstimate {
        spectral_radius: rho,
        stable: true,
        nu_hat: Some(nu),
        c_hat: Some(c),
    }
}
