//! Command-line driver: one subcommand per task, plus scenario files that
//! chain tasks with automatic prerequisite insertion.

pub mod context;
pub mod error;
pub mod scenario;
pub mod selftest;
pub mod tasks;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use context::{Settings, State};
use error::{CliResult, EXIT_CHECK_FAILED, EXIT_OK};
use scenario::{run_scenario, Scenario, TaskSpec};

#[derive(Debug, Parser)]
#[command(name = "pdichotomy", version, about = "Periodic LQ optimal control via the dichotomy transformation")]
pub struct Cli {
    /// Builtin problem name or path to a problem JSON file.
    #[arg(long, global = true, default_value = "paper-2d")]
    pub problem: String,
    /// Grid points per period.
    #[arg(long, global = true, default_value_t = pdichotomy::DEFAULT_STEPS)]
    pub grid: usize,
    /// Riccati convergence tolerance between successive periods.
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub tol: f64,
    /// Directory for every output file.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Negate every Lyapunov solution. Exists to prove the sign checks can fail.
    #[arg(long, global = true, hide = true)]
    pub corrupt_lyapunov_sign: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Periodic Riccati solution P.
    SolveRiccati(tasks::RiccatiParams),
    /// Periodic Lyapunov solution E.
    SolveLyapunov(tasks::LyapunovParams),
    /// Consistency checks of the decoupling transformation.
    VerifyDichotomy(tasks::VerifyParams),
    /// Periodic optimal extremal (y, λ, u).
    PeriodicExtremal(tasks::ExtremalParams),
    /// Finite-horizon optimal control from y0 over [0, T].
    FiniteHorizon(tasks::FiniteHorizonParams),
    /// Turnpike error between finite-horizon and periodic trajectories.
    Turnpike(tasks::TurnpikeParams),
    /// Average cost C_T / T against the periodic rate.
    AvgCost(tasks::AvgCostParams),
    /// Boundary-value stability ratio over several horizons.
    StabilityRatio(tasks::StabilityParams),
    /// Initial-value solve through the decoupled coordinates.
    Cauchy(tasks::CauchyParams),
    /// Decay of finite-horizon Riccati solutions towards the periodic one.
    RiccatiDecay(tasks::DecayParams),
    /// Run a scenario file.
    Run {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Closed-form consistency checks.
    SelfTest,
    /// List the builtin problems.
    ListProblems,
}

impl Command {
    fn task(&self) -> Option<TaskSpec> {
        Some(match self {
            Command::SolveRiccati(p) => TaskSpec::SolveRiccati(p.clone()),
            Command::SolveLyapunov(p) => TaskSpec::SolveLyapunov(p.clone()),
            Command::VerifyDichotomy(p) => TaskSpec::VerifyDichotomy(p.clone()),
            Command::PeriodicExtremal(p) => TaskSpec::PeriodicExtremal(p.clone()),
            Command::FiniteHorizon(p) => TaskSpec::FiniteHorizon(p.clone()),
            Command::Turnpike(p) => TaskSpec::Turnpike(p.clone()),
            Command::AvgCost(p) => TaskSpec::AvgCost(p.clone()),
            Command::StabilityRatio(p) => TaskSpec::StabilityRatio(p.clone()),
            Command::Cauchy(p) => TaskSpec::Cauchy(p.clone()),
            Command::RiccatiDecay(p) => TaskSpec::RiccatiDecay(p.clone()),
            Command::Run { .. } | Command::SelfTest | Command::ListProblems => return None,
        })
    }
}

impl Cli {
    fn settings(&self) -> Settings {
        Settings {
            grid: self.grid,
            tol: self.tol,
            out_dir: self.out_dir.clone(),
        }
    }
}

/// Runs the parsed command and returns the process exit code.
pub fn execute(cli: &Cli) -> CliResult<u8> {
    let settings = cli.settings();
    if let Some(spec) = cli.command.task() {
        let mut state = State::load(&cli.problem, settings)?;
        state.corrupt_lyapunov_sign = cli.corrupt_lyapunov_sign;
        let outcome = spec.run(&mut state).map_err(|e| e.in_task(spec.kind().command()))?;
        let report = json!({
            "task": spec.kind(),
            "problem": state.problem.name,
            "pass": outcome.passed(),
            "checks": outcome.checks,
            "outputs": outcome.outputs,
            "data": outcome.data,
        });
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(if outcome.passed() { EXIT_OK } else { EXIT_CHECK_FAILED });
    }
    match &cli.command {
        Command::Run { scenario } => {
            let sc = Scenario::from_file(scenario)?;
            let summary = run_scenario(sc, settings, cli.corrupt_lyapunov_sign)?;
            for t in &summary.tasks {
                let marker = if t.inserted { " (inserted)" } else { "" };
                println!("{:<5} {}{}", t.status, t.name, marker);
            }
            println!("{} of {} tasks passed", summary.tasks.iter().filter(|t| t.status == "pass").count(), summary.tasks.len());
            Ok(if summary.pass { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::SelfTest => {
            let checks = selftest::run(&settings, cli.corrupt_lyapunov_sign);
            for c in &checks {
                println!("{}", selftest::format_check(c));
            }
            let failed = checks.iter().filter(|c| !c.pass).count();
            println!("{} checks, {} failed", checks.len(), failed);
            Ok(if failed == 0 { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::ListProblems => {
            for name in pdichotomy::problem::BUILTIN_PROBLEMS {
                let p = pdichotomy::PeriodicProblem::load(name)?;
                println!("{name:<10} n = {}  θ = {:.6}", p.n, p.theta);
            }
            Ok(EXIT_OK)
        }
        _ => unreachable!("task commands are handled above"),
    }
}
