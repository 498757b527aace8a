//! One-call assembly of the periodic objects shared by every downstream
//! computation: `P`, `E`, the transform and the periodic extremal.

use crate::dichotomy::{build_transform, DichotomyTransform};
use crate::error::Result;
use crate::extremal::{periodic_extremal, PeriodicExtremal};
use crate::lyapunov::{solve_plde_stein, solve_plde_truncated, LyapunovMethod, LyapunovSolution, TruncationOptions};
use crate::odeflow::Grid;
use crate::problem::PeriodicProblem;
use crate::riccati::{solve_prde_periodic, RiccatiOptions, RiccatiSolution};

pub const DEFAULT_STEPS: usize = 2048;

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    pub steps_per_period: usize,
    pub riccati: RiccatiOptions,
    pub lyapunov: LyapunovMethod,
    pub truncation: TruncationOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            steps_per_period: DEFAULT_STEPS,
            riccati: RiccatiOptions::default(),
            lyapunov: LyapunovMethod::Stein,
            truncation: TruncationOptions::default(),
        }
    }
}

impl PipelineOptions {
    pub fn with_steps(steps_per_period: usize) -> Self {
        PipelineOptions {
            steps_per_period,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct PeriodicAnalysis {
    pub problem: PeriodicProblem,
    pub grid: Grid,
    pub riccati: RiccatiSolution,
    pub lyapunov: LyapunovSolution,
    pub transform: DichotomyTransform,
    pub extremal: PeriodicExtremal,
}

impl PeriodicAnalysis {
    pub fn build(problem: &PeriodicProblem, opts: &PipelineOptions) -> Result<Self> {
        let grid = Grid::new(problem.theta, opts.steps_per_period)?;
        let riccati = solve_prde_periodic(problem, &grid, &opts.riccati)?;
        let lyapunov = solve_lyapunov(problem, &riccati, opts.lyapunov, &opts.truncation)?;
        let transform = build_transform(&riccati, &lyapunov)?;
        let extremal = periodic_extremal(problem, &transform)?;
        Ok(PeriodicAnalysis {
            problem: problem.clone(),
            grid,
            riccati,
            lyapunov,
            transform,
            extremal,
        })
    }

    pub fn nu_hat(&self) -> Option<f64> {
        self.riccati.nu_hat()
    }
}

pub fn solve_lyapunov(
    problem: &PeriodicProblem,
    ric: &RiccatiSolution,
    method: LyapunovMethod,
    truncation: &TruncationOptions,
) -> Result<LyapunovSolution> {
    match method {
        LyapunovMethod::TruncatedIntegral => solve_plde_truncated(problem, ric, truncation),
        LyapunovMethod::Stein => solve_plde_stein(problem, ric),
    }
}
