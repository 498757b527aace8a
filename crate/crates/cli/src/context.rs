//! Per-run state: the problem and the periodic objects derived from it,
//! computed on first use and reused by every later task.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DMatrix;
use serde::Serialize;

use pdichotomy::dichotomy::{build_transform, DichotomyTransform};
use pdichotomy::extremal::{periodic_extremal, PeriodicExtremal};
use pdichotomy::horizon::FiniteHorizonSolution;
use pdichotomy::lyapunov::{LyapunovMethod, LyapunovSolution, TruncationOptions};
use pdichotomy::pipeline::solve_lyapunov;
use pdichotomy::riccati::{solve_prde_periodic, RiccatiOptions, RiccatiSolution};
use pdichotomy::{Grid, PeriodicProblem, DEFAULT_STEPS};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug)]
pub struct Settings {
    pub grid: usize,
    /// Riccati convergence tolerance.
    pub tol: f64,
    pub out_dir: PathBuf,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            grid: DEFAULT_STEPS,
            tol: RiccatiOptions::default().tol,
            out_dir: PathBuf::from("."),
        }
    }
}

impl Settings {
    pub fn output(&self, name: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(self.out_dir.join(name))
    }
}

pub struct State {
    pub problem: PeriodicProblem,
    pub settings: Settings,
    pub grid: Grid,
    riccati: Option<RiccatiSolution>,
    lyapunov: Option<LyapunovSolution>,
    transform: Option<DichotomyTransform>,
    extremal: Option<PeriodicExtremal>,
    /// First finite-horizon solution of the run; the turnpike task reads it.
    pub finite: Option<FiniteHorizonSolution>,
    /// Test hook: flips the sign of every Lyapunov solution before it is cached.
    pub corrupt_lyapunov_sign: bool,
}

impl State {
    pub fn new(problem: PeriodicProblem, settings: Settings) -> CliResult<Self> {
        let report = problem.validate();
        if !report.is_valid() {
            return Err(CliError::Config(format!(
                "problem '{}' is invalid: {}",
                problem.name,
                report.violations.join("; ")
            )));
        }
        let grid = Grid::new(problem.theta, settings.grid)?;
        Ok(State {
            problem,
            settings,
            grid,
            riccati: None,
            lyapunov: None,
            transform: None,
            extremal: None,
            finite: None,
            corrupt_lyapunov_sign: false,
        })
    }

    pub fn load(name_or_path: &str, settings: Settings) -> CliResult<Self> {
        State::new(load_problem(name_or_path)?, settings)
    }

    pub fn riccati_options(&self, seed_scale: Option<f64>) -> RiccatiOptions {
        let n = self.problem.n;
        RiccatiOptions {
            terminal_seed: seed_scale.map(|s| DMatrix::identity(n, n) * s),
            tol: self.settings.tol,
            ..RiccatiOptions::default()
        }
    }

    pub fn solve_riccati(&self, seed_scale: Option<f64>) -> CliResult<RiccatiSolution> {
        info!("solving the periodic Riccati equation for '{}'", self.problem.name);
        Ok(solve_prde_periodic(&self.problem, &self.grid, &self.riccati_options(seed_scale))?)
    }

    /// Caches `sol` unless a Riccati solution is already cached.
    pub fn offer_riccati(&mut self, sol: &RiccatiSolution) {
        if self.riccati.is_none() {
            self.riccati = Some(sol.clone());
        }
    }

    pub fn riccati(&mut self) -> CliResult<&RiccatiSolution> {
        if self.riccati.is_none() {
            self.riccati = Some(self.solve_riccati(None)?);
        }
        Ok(self.riccati.as_ref().unwrap())
    }

    pub fn solve_lyapunov(&mut self, method: LyapunovMethod) -> CliResult<LyapunovSolution> {
        self.riccati()?;
        info!("solving the periodic Lyapunov equation ({method:?})");
        let ric = self.riccati.as_ref().unwrap();
        let sol = solve_lyapunov(&self.problem, ric, method, &TruncationOptions::default())?;
        Ok(if self.corrupt_lyapunov_sign { sol.negated() } else { sol })
    }

    pub fn offer_lyapunov(&mut self, sol: &LyapunovSolution) {
        if self.lyapunov.is_none() {
            self.lyapunov = Some(sol.clone());
        }
    }

    pub fn lyapunov(&mut self) -> CliResult<&LyapunovSolution> {
        if self.lyapunov.is_none() {
            let sol = self.solve_lyapunov(LyapunovMethod::Stein)?;
            self.lyapunov = Some(sol);
        }
        Ok(self.lyapunov.as_ref().unwrap())
    }

    pub fn transform(&mut self) -> CliResult<&DichotomyTransform> {
        if self.transform.is_none() {
            self.lyapunov()?;
            let xf = build_transform(self.riccati.as_ref().unwrap(), self.lyapunov.as_ref().unwrap())?;
            self.transform = Some(xf);
        }
        Ok(self.transform.as_ref().unwrap())
    }

    pub fn extremal(&mut self) -> CliResult<&PeriodicExtremal> {
        if self.extremal.is_none() {
            self.transform()?;
            info!("reconstructing the periodic extremal");
            let ext = periodic_extremal(&self.problem, self.transform.as_ref().unwrap())?;
            self.extremal = Some(ext);
        }
        Ok(self.extremal.as_ref().unwrap())
    }

    pub fn riccati_parts(&mut self) -> CliResult<(&PeriodicProblem, &RiccatiSolution)> {
        self.riccati()?;
        Ok((&self.problem, self.riccati.as_ref().unwrap()))
    }

    pub fn transform_parts(&mut self) -> CliResult<(&PeriodicProblem, &DichotomyTransform)> {
        self.transform()?;
        Ok((&self.problem, self.transform.as_ref().unwrap()))
    }

    /// Borrow of everything the finite-horizon tasks need, computing it first.
    pub fn periodic(&mut self) -> CliResult<(&PeriodicProblem, &RiccatiSolution, &DichotomyTransform, &PeriodicExtremal)> {
        self.extremal()?;
        Ok((
            &self.problem,
            self.riccati.as_ref().unwrap(),
            self.transform.as_ref().unwrap(),
            self.extremal.as_ref().unwrap(),
        ))
    }

    pub fn cached(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.riccati.is_some() {
            out.push("riccati");
        }
        if self.lyapunov.is_some() {
            out.push("lyapunov");
        }
        if self.extremal.is_some() {
            out.push("extremal");
        }
        out
    }
}

/// A builtin name or a path to a problem JSON file.
pub fn load_problem(name_or_path: &str) -> CliResult<PeriodicProblem> {
    let builtins = pdichotomy::problem::BUILTIN_PROBLEMS;
    if !builtins.contains(&name_or_path) && !Path::new(name_or_path).is_file() {
        return Err(CliError::Config(format!(
            "unknown problem '{name_or_path}': not a builtin ({}) and not a file",
            builtins.join(", ")
        )));
    }
    Ok(PeriodicProblem::load(name_or_path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Parses `"0.2,0"` (commas and/or whitespace) into a column vector of length `n`.
pub fn parse_vector(text: &str, n: usize, what: &str) -> CliResult<DMatrix<f64>> {
    let values: Vec<f64> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Config(format!("{what}: '{s}' is not a number")))
        })
        .collect::<CliResult<_>>()?;
    column_of(&values, n, what)
}

pub fn column_of(values: &[f64], n: usize, what: &str) -> CliResult<DMatrix<f64>> {
    if values.len() != n {
        return Err(CliError::Config(format!(
            "{what} has {} entries, the problem has n = {n}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("{what} must be finite")));
    }
    Ok(DMatrix::from_column_slice(n, 1, values))
}

pub fn parse_list(text: &str, what: &str) -> CliResult<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Config(format!("{what}: '{s}' is not a number")))
        })
        .collect()
}
