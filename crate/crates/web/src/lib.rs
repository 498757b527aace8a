//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes plain numbers and strings and returns a JSON string, so
//! the page needs no generated TypeScript types. The `*_json` functions hold
//! the logic and run natively in tests; the exported wrappers only convert
//! errors into JavaScript exceptions.

use nalgebra::DMatrix;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use pdichotomy::horizon::{solve_lq_dichotomy, turnpike_report};
use pdichotomy::riccati::{riccati_decay_report, riccati_orbit};
use pdichotomy::problem::builtin_problem;
use pdichotomy::{MatrixPath, PeriodicAnalysis, PipelineOptions};

/// Grid used by the demo: coarse enough to stay interactive.
pub const DEMO_STEPS: usize = 512;
/// Points per returned curve.
pub const MAX_POINTS: usize = 400;

fn analysis(problem: &str) -> Result<PeriodicAnalysis, String> {
    let problem = builtin_problem(problem).map_err(|e| e.to_string())?;
    PeriodicAnalysis::build(&problem, &PipelineOptions::with_steps(DEMO_STEPS)).map_err(|e| e.to_string())
}

fn stride(len: usize) -> usize {
    len.div_ceil(MAX_POINTS).max(1)
}

/// `(t, f(X(t)))` thinned to at most about `MAX_POINTS` samples, endpoints kept.
fn thin(path: &MatrixPath, f: impl Fn(&DMatrix<f64>) -> f64) -> Vec<[f64; 2]> {
    let step = stride(path.len());
    let mut out: Vec<[f64; 2]> = (0..path.len())
        .step_by(step)
        .map(|i| [path.time(i), f(&path.samples()[i])])
        .collect();
    let last = path.len() - 1;
    if last % step != 0 {
        out.push([path.t_end(), f(path.last())]);
    }
    out
}

fn thin_series(series: &[(f64, f64)]) -> Vec<[f64; 2]> {
    series.iter().step_by(stride(series.len())).map(|&(t, v)| [t, v]).collect()
}

#[derive(Serialize)]
struct Orbit {
    label: String,
    points: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct Orbits {
    problem: String,
    theta: f64,
    /// `P₁₁` of the periodic stabilizing solution over one period.
    periodic: Vec<[f64; 2]>,
    orbits: Vec<Orbit>,
}

/// Backward Riccati orbits from `P(T) = s·I` for each seed and one forward
/// orbit from `P(0) = 0`, over `periods` periods. Curves show `P₁₁`.
pub fn riccati_orbits_json(problem: &str, seeds: &[f64], periods: f64) -> Result<String, String> {
    if !(periods > 0.0 && periods <= 50.0) {
        return Err(format!("periods must lie in (0, 50], got {periods}"));
    }
    let a = analysis(problem)?;
    let n = a.problem.n;
    let horizon = periods * a.problem.theta;
    let mut orbits = Vec::with_capacity(seeds.len() + 1);
    for &s in seeds {
        let path = riccati_orbit(&a.problem, &(DMatrix::identity(n, n) * s), horizon, 0.0, &a.grid)
            .map_err(|e| e.to_string())?;
        orbits.push(Orbit {
            label: format!("backward from {s}·I"),
            points: thin(&path, |p| p[(0, 0)]),
        });
    }
    let forward =
        riccati_orbit(&a.problem, &DMatrix::zeros(n, n), 0.0, horizon, &a.grid).map_err(|e| e.to_string())?;
    orbits.push(Orbit {
        label: "forward from 0".into(),
        points: thin(&forward, |p| p[(0, 0)]),
    });
    let out = Orbits {
        problem: a.problem.name.clone(),
        theta: a.problem.theta,
        periodic: thin(&a.riccati.p, |p| p[(0, 0)]),
        orbits,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Turnpike {
    horizon: f64,
    /// First state component of the finite-horizon optimum.
    finite: Vec<[f64; 2]>,
    /// First state component of the periodic extremal on the same nodes.
    periodic: Vec<[f64; 2]>,
    /// `(t, |y(t) − y_θ(t)|)`
    error: Vec<[f64; 2]>,
    /// Both costs carry the factor 1/2.
    finite_cost: f64,
    periodic_cost_over_horizon: f64,
    fitted_nu: Option<f64>,
    nu_hat: Option<f64>,
}

/// Finite-horizon optimum from `y(0) = (y0, 0, …, 0)` against the periodic extremal.
pub fn turnpike_json(problem: &str, horizon: f64, y0: f64) -> Result<String, String> {
    if !(horizon > 0.0 && horizon <= 200.0) {
        return Err(format!("horizon must lie in (0, 200], got {horizon}"));
    }
    let a = analysis(problem)?;
    let mut init = DMatrix::zeros(a.problem.n, 1);
    init[0] = y0;
    let sol = solve_lq_dichotomy(&a.problem, &a.transform, &a.extremal, &init, horizon).map_err(|e| e.to_string())?;
    let rep = turnpike_report(&sol, &a.extremal, &a.riccati.decay).map_err(|e| e.to_string())?;
    let periodic = sol.y.map(|t, _| a.extremal.y_at(t));
    let out = Turnpike {
        horizon,
        finite: thin(&sol.y, |y| y[0]),
        periodic: thin(&periodic, |y| y[0]),
        error: thin_series(&rep.error_series),
        finite_cost: sol.cost,
        periodic_cost_over_horizon: horizon / a.extremal.theta * a.extremal.cost,
        fitted_nu: rep.fitted_nu,
        nu_hat: rep.nu_hat,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Decay {
    /// `(T − t, ‖P(t) − P₀(t)‖)`
    series: Vec<[f64; 2]>,
    fitted_rate: Option<f64>,
    two_nu_hat: Option<f64>,
}

/// Distance between the finite-horizon Riccati solution with `P(T) = g·I`
/// and the periodic one, over `periods` periods before `T`.
pub fn riccati_decay_json(problem: &str, g: f64, periods: usize) -> Result<String, String> {
    if !(3..=30).contains(&periods) {
        return Err(format!("periods must lie in 3..=30, got {periods}"));
    }
    let a = analysis(problem)?;
    let n = a.problem.n;
    let horizon = periods as f64 * a.problem.theta;
    let rep = riccati_decay_report(&a.problem, &a.riccati, &(DMatrix::identity(n, n) * g), horizon, periods, &a.grid)
        .map_err(|e| e.to_string())?;
    let out = Decay {
        series: thin_series(&rep.series),
        fitted_rate: rep.fit.map(|f| f.rate),
        two_nu_hat: rep.two_nu_hat,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn builtin_problems() -> String {
    serde_json::to_string(&pdichotomy::problem::BUILTIN_PROBLEMS).unwrap_or_default()
}

/// `seeds` is a JSON array of nonnegative scales, e.g. `"[3.5, 10, 100]"`.
#[wasm_bindgen]
pub fn riccati_orbits(problem: &str, seeds: &str, periods: f64) -> Result<String, JsValue> {
    let seeds: Vec<f64> = serde_json::from_str(seeds).map_err(|e| JsValue::from_str(&e.to_string()))?;
    riccati_orbits_json(problem, &seeds, periods).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn turnpike(problem: &str, horizon: f64, y0: f64) -> Result<String, JsValue> {
    turnpike_json(problem, horizon, y0).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn riccati_decay(problem: &str, g: f64, periods: usize) -> Result<String, JsValue> {
    riccati_decay_json(problem, g, periods).map_err(|e| JsValue::from_str(&e))
}
