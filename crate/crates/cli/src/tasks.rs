//! One function per task. Subcommands and scenario entries share the
//! parameter structs, so every flag has the same name and default in both.

use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Value};

use pdichotomy::extremal::extremal_residual;
use pdichotomy::horizon::{
    cauchy_direct, cauchy_solve, decoupled_propagation_gap, solve_lq_dichotomy, solve_lq_shooting, stability_ratio,
    turnpike_report, FiniteHorizonSolution, HorizonMethod,
};
use pdichotomy::lyapunov::LyapunovMethod;
use pdichotomy::report::{emit_gnuplot_script, write_path_file, write_table_csv, Check, PlotKind};
use pdichotomy::riccati::riccati_decay_report;
use pdichotomy::MatrixPath;

use crate::context::{column_of, write_json, State};
use crate::error::{CliError, CliResult};

/// What one task produced, for the report and the scenario summary.
#[derive(Debug, Default, Serialize)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub outputs: Vec<PathBuf>,
    pub data: Value,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// A list of numbers given as `"0.2,0"` on the command line or as a JSON
/// array (or bare number) in scenario files.
#[derive(Clone, Debug, PartialEq)]
pub struct Values(pub Vec<f64>);

impl FromStr for Values {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        crate::context::parse_list(s, "value list").map(Values)
    }
}

impl<'de> Deserialize<'de> for Values {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            List(Vec<f64>),
            One(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::List(v) => Ok(Values(v)),
            Raw::One(v) => Ok(Values(vec![v])),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// `(0.2, 0, …, 0)`, the initial state of the reference experiment.
fn default_y0(n: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(n, 1);
    y[0] = 0.2;
    y
}

fn initial_state(state: &State, y0: &Option<Values>) -> CliResult<DMatrix<f64>> {
    match y0 {
        Some(v) => column_of(&v.0, state.problem.n, "y0"),
        None => Ok(default_y0(state.problem.n)),
    }
}

fn write_path(state: &State, name: &str, path: &MatrixPath, outcome: &mut Outcome) -> CliResult<PathBuf> {
    let file = state.settings.output(name)?;
    write_path_file(path, &file)?;
    outcome.outputs.push(file.clone());
    Ok(file)
}

fn write_sidecar<T: Serialize>(state: &State, name: &str, value: &T, outcome: &mut Outcome) -> CliResult<()> {
    let file = state.settings.output(name)?;
    write_json(&file, value)?;
    outcome.outputs.push(file);
    Ok(())
}

fn write_plot(state: &State, name: &str, csvs: &[PathBuf], kind: PlotKind, outcome: &mut Outcome) -> CliResult<()> {
    let file = state.settings.output(name)?;
    emit_gnuplot_script(csvs, kind, &file)?;
    outcome.outputs.push(file);
    Ok(())
}

fn with_extension(name: &str, ext: &str) -> String {
    PathBuf::from(name).with_extension(ext).to_string_lossy().into_owned()
}

#[derive(Args, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct RiccatiParams {
    /// Terminal seed `s·I` for the backward orbit (default: identity).
    #[arg(long)]
    pub seed_scale: Option<f64>,
    /// Output CSV for `P`; a JSON sidecar with the same stem is written next to it.
    #[arg(long, default_value = "P.csv")]
    pub out: String,
}

impl Default for RiccatiParams {
    fn default() -> Self {
        RiccatiParams {
            seed_scale: None,
            out: "P.csv".into(),
        }
    }
}

pub fn riccati(state: &mut State, params: &RiccatiParams) -> CliResult<Outcome> {
    if let Some(s) = params.seed_scale {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(CliError::Config(format!("seed scale must be nonnegative, got {s}")));
        }
    }
    let sol = state.solve_riccati(params.seed_scale)?;
    state.offer_riccati(&sol);
    let mut out = Outcome::default();
    write_path(state, &params.out, &sol.p, &mut out)?;
    let diagnostics = json!({
        "residual_sup": sol.residual_sup,
        "periodicity_gap": sol.periodicity_gap,
        "periods_to_converge": sol.periods_to_converge,
        "nu_hat": sol.nu_hat(),
        "decay": sol.decay,
    });
    write_sidecar(state, &with_extension(&params.out, "json"), &diagnostics, &mut out)?;
    out.checks = vec![
        Check::at_most("riccati residual", sol.residual_sup, 1e-8),
        Check::at_most("riccati periodicity gap", sol.periodicity_gap, state.settings.tol),
        Check::at_most("closed-loop spectral radius", sol.decay.spectral_radius, 1.0 - f64::EPSILON),
    ];
    out.data = diagnostics;
    Ok(out)
}

#[derive(Args, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovParams {
    /// `stein` or `truncated`.
    #[arg(long, default_value = "stein")]
    pub method: String,
    #[arg(long, default_value = "E.csv")]
    pub out: String,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        LyapunovParams {
            method: "stein".into(),
            out: "E.csv".into(),
        }
    }
}

pub fn lyapunov(state: &mut State, params: &LyapunovParams) -> CliResult<Outcome> {
    let method: LyapunovMethod = params.method.parse()?;
    let sol = state.solve_lyapunov(method)?;
    state.offer_lyapunov(&sol);
    let mut out = Outcome::default();
    write_path(state, &params.out, &sol.e, &mut out)?;
    let diagnostics = json!({
        "method": sol.method,
        "residual_sup": sol.residual_sup,
        "periodicity_gap": sol.periodicity_gap,
        "max_eigenvalue": sol.max_eigenvalue,
        "truncation_periods": sol.truncation_periods,
    });
    write_sidecar(state, &with_extension(&params.out, "json"), &diagnostics, &mut out)?;
    out.checks = vec![
        Check::at_most("lyapunov negative semidefinite (max eigenvalue)", sol.max_eigenvalue, pdichotomy::lyapunov::NSD_TOL),
        Check::at_most("lyapunov residual", sol.residual_sup, 1e-7),
        Check::at_most("lyapunov periodicity gap", sol.periodicity_gap, 1e-8),
    ];
    out.data = diagnostics;
    Ok(out)
}

#[derive(Args, Deserialize, Clone, Debug, Default)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyParams {}

pub fn verify_dichotomy(state: &mut State, _params: &VerifyParams) -> CliResult<Outcome> {
    let (problem, xf) = state.transform_parts()?;
    let n = problem.n;
    let y0 = DMatrix::from_fn(n, 1, |i, _| 1.0 - 0.5 * i as f64);
    let lam0 = DMatrix::from_fn(n, 1, |i, _| if i % 2 == 0 { -0.5 } else { 1.0 });
    let (gap, scale) = decoupled_propagation_gap(problem, xf, &y0, &lam0)?;
    let inverse = xf.inverse_identity_residual();
    let decoupling = xf.decoupling_residual(problem);
    let relative = gap / scale.max(1.0);
    let data = json!({
        "inverse_identity": inverse,
        "decoupling_residual": decoupling,
        "propagation_equivalence": { "gap": gap, "scale": scale, "relative": relative },
    });
    Ok(Outcome {
        checks: vec![
            Check::at_most("T·T⁻¹ identity", inverse, 1e-10),
            Check::at_most("decoupling residual", decoupling, 1e-6),
            Check::at_most("propagation equivalence (relative)", relative, 1e-6),
        ],
        outputs: Vec::new(),
        data,
    })
}

#[derive(Args, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct ExtremalParams {
    #[arg(long, default_value = "per_")]
    pub out_prefix: String,
}

impl Default for ExtremalParams {
    fn default() -> Self {
        ExtremalParams { out_prefix: "per_".into() }
    }
}

pub fn extremal(state: &mut State, params: &ExtremalParams) -> CliResult<Outcome> {
    let ext = state.extremal()?.clone();
    let residuals = extremal_residual(&ext, &state.problem);
    let mut out = Outcome::default();
    let p = &params.out_prefix;
    let y = write_path(state, &format!("{p}y.csv"), &ext.y, &mut out)?;
    let lam = write_path(state, &format!("{p}lambda.csv"), &ext.lambda, &mut out)?;
    let u = write_path(state, &format!("{p}u.csv"), &ext.u, &mut out)?;
    write_plot(state, &format!("{p}plot.gp"), &[y, lam, u], PlotKind::Trajectory, &mut out)?;
    let data = json!({
        "theta": ext.theta,
        "cost": ext.cost,
        "cost_per_time": ext.cost / ext.theta,
        "residuals": residuals,
    });
    write_sidecar(state, &format!("{p}diagnostics.json"), &data, &mut out)?;
    out.checks = vec![
        Check::at_most("state equation residual", residuals.state_residual, 1e-6),
        Check::at_most("costate equation residual", residuals.costate_residual, 1e-6),
        Check::at_most("state periodicity gap", residuals.state_gap, 1e-8),
        Check::at_most("costate periodicity gap", residuals.costate_gap, 1e-8),
    ];
    out.data = data;
    Ok(out)
}

#[derive(Args, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct FiniteHorizonParams {
    /// Initial state, e.g. "0.2,0" (default: 0.2 in the first entry, zeros elsewhere).
    #[arg(long)]
    pub y0: Option<Values>,
    /// Horizon T.
    #[arg(long = "T", default_value_t = 30.0)]
    #[serde(rename = "T")]
    pub horizon: f64,
    /// `dichotomy` or `shooting`.
    #[arg(long, default_value = "dichotomy")]
    pub method: String,
    #[arg(long, default_value = "lq_")]
    pub out_prefix: String,
}

impl Default for FiniteHorizonParams {
    fn default() -> Self {
        FiniteHorizonParams {
            y0: None,
            horizon: 30.0,
            method: "dichotomy".into(),
            out_prefix: "lq_".into(),
        }
    }
}

fn solve_finite(state: &mut State, y0: &DMatrix<f64>, horizon: f64, method: HorizonMethod) -> CliResult<FiniteHorizonSolution> {
    let grid = state.grid;
    let (problem, _, xf, ext) = state.periodic()?;
    Ok(match method {
        HorizonMethod::Dichotomy => solve_lq_dichotomy(problem, xf, ext, y0, horizon)?,
        HorizonMethod::Shooting => solve_lq_shooting(problem, &grid, y0, horizon)?,
    })
}

pub fn finite_horizon(state: &mut State, params: &FiniteHorizonParams) -> CliResult<Outcome> {
    let method: HorizonMethod = params.method.parse()?;
    let y0 = initial_state(state, &params.y0)?;
    let sol = solve_finite(state, &y0, params.horizon, method)?;
    let ext = state.extremal()?.clone();
    let mut out = Outcome::default();
    let p = &params.out_prefix;
    let y = write_path(state, &format!("{p}y.csv"), &sol.y, &mut out)?;
    write_path(state, &format!("{p}lambda.csv"), &sol.lambda, &mut out)?;
    write_path(state, &format!("{p}u.csv"), &sol.u, &mut out)?;
    let periodic_y = sol.y.map(|t, _| ext.y_at(t));
    let per = write_path(state, &format!("{p}periodic_y.csv"), &periodic_y, &mut out)?;
    write_plot(state, &format!("{p}plot.gp"), &[y, per], PlotKind::Trajectory, &mut out)?;
    let data = json!({
        "T": sol.horizon,
        "method": sol.method,
        "y0": sol.y0.as_slice(),
        "cost": sol.cost,
        "periodic_cost_over_horizon": sol.horizon / ext.theta * ext.cost,
        "boundary_residuals": { "initial_state": sol.boundary_residuals.0, "terminal_costate": sol.boundary_residuals.1 },
    });
    write_sidecar(state, &format!("{p}diagnostics.json"), &data, &mut out)?;
    out.checks = vec![
        Check::at_most("initial state residual", sol.boundary_residuals.0, 1e-8),
        Check::at_most("terminal costate residual", sol.boundary_residuals.1, 1e-8),
    ];
    out.data = data;
    if state.finite.is_none() {
        state.finite = Some(sol);
    }
    Ok(out)
}

#[derive(Args, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct TurnpikeParams {
    /// Initial state; together with `--T` this solves a fresh problem instead
    /// of reusing the first finite-horizon solution of a scenario.
    #[arg(long)]
    pub y0: Option<Values>,
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    #[arg(long, default_value = "turnpike_")]
    pub out_prefix: String,
}

impl Default for TurnpikeParams {
    fn default() -> Self {
        TurnpikeParams {
            y0: None,
            horizon: None,
            out_prefix: "turnpike_".into(),
        }
    }
}

impl TurnpikeParams {
    pub fn solves_own_problem(&self) -> bool {
        self.y0.is_some() || self.horizon.is_some()
    }
}

pub fn turnpike(state: &mut State, params: &TurnpikeParams) -> CliResult<Outcome> {
    let sol = match (&state.finite, params.solves_own_problem()) {
        (Some(sol), false) => sol.clone(),
        _ => {
            let y0 = initial_state(state, &params.y0)?;
            solve_finite(state, &y0, params.horizon.unwrap_or(30.0), HorizonMethod::Dichotomy)?
        }
    };
    let (_, ric, _, ext) = state.periodic()?;
    let rep = turnpike_report(&sol, ext, &ric.decay)?;
    let mut out = Outcome::default();
    let p = &params.out_prefix;
    let csv = state.settings.output(&format!("{p}error.csv"))?;
    let rows: Vec<Vec<f64>> = rep.error_series.iter().map(|&(t, e)| vec![t, e]).collect();
    write_table_csv(std::io::BufWriter::new(std::fs::File::create(&csv)?), &["t", "e"], &rows)?;
    out.outputs.push(csv.clone());
    write_plot(state, &format!("{p}plot.gp"), &[csv], PlotKind::ErrorDecay, &mut out)?;
    let data = json!({
        "T": sol.horizon,
        "fitted_nu": rep.fitted_nu,
        "fitted_c": rep.fitted_c,
        "nu_hat": rep.nu_hat,
        "bound_satisfied": rep.bound_satisfied,
        "mid_error": rep.mid_error,
        "degenerate": rep.degenerate,
        "leading_fit": rep.leading_fit,
        "trailing_fit": rep.trailing_fit,
    });
    write_sidecar(state, &format!("{p}fit.json"), &data, &mut out)?;
    if !rep.degenerate {
        out.checks.push(Check::at_least("two-exponential bound holds", f64::from(u8::from(rep.bound_satisfied)), 1.0));
        if let (Some(fit), Some(nu)) = (rep.fitted_nu, rep.nu_hat) {
            out.checks.push(Check::relative("fitted rate vs closed-loop rate", fit, nu, 0.30));
        }
    }
    out.data = data;
    Ok(out)
}

#[derive(Args, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct AvgCostParams {
    /// Ascending horizons, e.g. "20,40,80".
    #[arg(long, default_value = "20,40,80")]
    pub horizons: Values,
    #[arg(long)]
    pub y0: Option<Values>,
    #[arg(long, default_value = "avg_cost.csv")]
    pub out: String,
}

impl Default for AvgCostParams {
    fn default() -> Self {
        AvgCostParams {
            horizons: Values(vec![20.0, 40.0, 80.0]),
            y0: None,
            out: "avg_cost.csv".into(),
        }
    }
}

fn check_horizons(h: &[f64]) -> CliResult<()> {
    if h.is_empty() || h.iter().any(|t| t.is_nan() || *t <= 0.0) || h.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Config("horizons must be positive and strictly ascending".into()));
    }
    Ok(())
}

pub fn avg_cost(state: &mut State, params: &AvgCostParams) -> CliResult<Outcome> {
    let horizons = &params.horizons.0;
    check_horizons(horizons)?;
    let y0 = initial_state(state, &params.y0)?;
    let (problem, _, xf, ext) = state.periodic()?;
    let rate = ext.cost / ext.theta;
    let mut rows = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let sol = solve_lq_dichotomy(problem, xf, ext, &y0, t)?;
        let gap = (sol.cost / t - rate).abs();
        rows.push(vec![t, sol.cost, sol.cost / t, rate, gap, gap * t]);
    }
    let mut out = Outcome::default();
    let csv = state.settings.output(&params.out)?;
    write_table_csv(
        std::io::BufWriter::new(std::fs::File::create(&csv)?),
        &["T", "C_T", "C_T_over_T", "C_theta_over_theta", "gap", "gap_times_T"],
        &rows,
    )?;
    out.outputs.push(csv);
    let (first, last) = (rows[0][4], rows[rows.len() - 1][4]);
    out.checks.push(Check::at_most("gap at longest horizon vs shortest", last, first));
    out.data = json!({
        "periodic_cost_per_time": rate,
        "rows": rows.iter().map(|r| json!({ "T": r[0], "cost": r[1], "gap": r[4], "gap_times_T": r[5] })).collect::<Vec<_>>(),
    });
    Ok(out)
}

#[derive(Args, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityParams {
    #[arg(long, default_value = "5,10,20,40")]
    pub horizons: Values,
    /// Random boundary data per horizon (at least 10).
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "stability_ratio.json")]
    pub out: String,
}

impl Default for StabilityParams {
    fn default() -> Self {
        StabilityParams {
            horizons: Values(vec![5.0, 10.0, 20.0, 40.0]),
            samples: 50,
            seed: 7,
            out: "stability_ratio.json".into(),
        }
    }
}

pub fn stability(state: &mut State, params: &StabilityParams) -> CliResult<Outcome> {
    check_horizons(&params.horizons.0)?;
    let xf = state.transform()?;
    let rep = stability_ratio(xf, params.samples, &params.horizons.0, params.seed)?;
    let mut out = Outcome::default();
    write_sidecar(state, &params.out, &rep, &mut out)?;
    // A bounded ratio saturates once T spans a few periods, so only the two
    // longest horizons are compared.
    if let [.., (_, a), (_, b)] = rep.per_horizon[..] {
        out.checks.push(Check::at_most("ratio spread, two longest horizons", (a - b).abs() / a.max(b), 0.2));
    }
    out.data = serde_json::to_value(&rep)?;
    Ok(out)
}

#[derive(Args, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct CauchyParams {
    #[arg(long)]
    pub y0: Option<Values>,
    /// Initial costate (default: zero).
    #[arg(long)]
    pub lam0: Option<Values>,
    /// Horizon (default: one period).
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    #[arg(long, default_value = "cauchy_")]
    pub out_prefix: String,
}

impl Default for CauchyParams {
    fn default() -> Self {
        CauchyParams {
            y0: None,
            lam0: None,
            horizon: None,
            out_prefix: "cauchy_".into(),
        }
    }
}

pub fn cauchy(state: &mut State, params: &CauchyParams) -> CliResult<Outcome> {
    let n = state.problem.n;
    let y0 = initial_state(state, &params.y0)?;
    let lam0 = match &params.lam0 {
        Some(v) => column_of(&v.0, n, "lam0")?,
        None => DMatrix::zeros(n, 1),
    };
    let horizon = params.horizon.unwrap_or(state.problem.theta);
    let grid = state.grid;
    let (problem, _, xf, _) = state.periodic()?;
    let (y, lam) = cauchy_solve(xf, &y0, &lam0, horizon)?;
    let (yd, ld) = cauchy_direct(problem, &grid, &y0, &lam0, horizon)?;
    let gap = y.sup_distance(&yd).max(lam.sup_distance(&ld));
    let scale = yd.samples().iter().chain(ld.samples()).map(|x| x.norm()).fold(0.0, f64::max);
    let mut out = Outcome::default();
    let p = &params.out_prefix;
    write_path(state, &format!("{p}y.csv"), &y, &mut out)?;
    write_path(state, &format!("{p}lambda.csv"), &lam, &mut out)?;
    let relative = gap / scale.max(1.0);
    let data = json!({ "T": horizon, "gap_vs_direct": gap, "scale": scale, "relative_gap": relative });
    write_sidecar(state, &format!("{p}diagnostics.json"), &data, &mut out)?;
    out.checks.push(Check::at_most("Cauchy vs direct integration (relative)", relative, 1e-6));
    out.data = data;
    Ok(out)
}

#[derive(Args, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct DecayParams {
    /// Terminal value `G = s·I`.
    #[arg(long = "G", default_value_t = 1.0)]
    #[serde(rename = "G")]
    pub g_scale: f64,
    /// Periods integrated backward from T (at least 3).
    #[arg(long, default_value_t = 5)]
    pub periods: usize,
    /// Terminal time (default: 10θ).
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    #[arg(long, default_value = "decay_")]
    pub out_prefix: String,
}

impl Default for DecayParams {
    fn default() -> Self {
        DecayParams {
            g_scale: 1.0,
            periods: 5,
            horizon: None,
            out_prefix: "decay_".into(),
        }
    }
}

pub fn riccati_decay(state: &mut State, params: &DecayParams) -> CliResult<Outcome> {
    let n = state.problem.n;
    let horizon = params.horizon.unwrap_or(10.0 * state.problem.theta);
    let g = DMatrix::identity(n, n) * params.g_scale;
    let grid = state.grid;
    let (problem, ric) = state.riccati_parts()?;
    let rep = riccati_decay_report(problem, ric, &g, horizon, params.periods, &grid)?;
    let mut out = Outcome::default();
    let p = &params.out_prefix;
    let csv = state.settings.output(&format!("{p}error.csv"))?;
    let rows: Vec<Vec<f64>> = rep.series.iter().map(|&(s, e)| vec![s, e]).collect();
    write_table_csv(std::io::BufWriter::new(std::fs::File::create(&csv)?), &["T_minus_t", "error"], &rows)?;
    out.outputs.push(csv.clone());
    write_plot(state, &format!("{p}plot.gp"), &[csv], PlotKind::ErrorDecay, &mut out)?;
    let data = json!({
        "G_scale": params.g_scale,
        "T": horizon,
        "periods": params.periods,
        "fit": rep.fit,
        "two_nu_hat": rep.two_nu_hat,
        "at_fixed_point": rep.at_fixed_point,
    });
    write_sidecar(state, &format!("{p}fit.json"), &data, &mut out)?;
    if let (Some(fit), Some(target)) = (&rep.fit, rep.two_nu_hat) {
        out.checks.push(Check::relative("fitted rate vs 2ν̂", fit.rate, target, 0.15));
    }
    out.data = data;
    Ok(out)
}
