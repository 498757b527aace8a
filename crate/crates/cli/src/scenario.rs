//! Scenario files: a problem plus a list of tasks, run in dependency order.
//!
//! Missing prerequisites are inserted with default parameters, so a scenario
//! that only asks for `turnpike` still solves the Riccati and Lyapunov
//! equations first. Explicit ordering between tasks goes through `after`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use petgraph::algo::toposort;
use petgraph::graph::{DiGraph, NodeIndex};
use petgraph::Direction;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use pdichotomy::report::Check;
use pdichotomy::PeriodicProblem;

use crate::context::{load_problem, write_json, Settings, State};
use crate::error::{CliError, CliResult};
use crate::tasks::{self, Outcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    SolveRiccati,
    SolveLyapunov,
    VerifyDichotomy,
    PeriodicExtremal,
    FiniteHorizon,
    Turnpike,
    AvgCost,
    StabilityRatio,
    Cauchy,
    RiccatiDecay,
}

impl TaskKind {
    pub const ALL: [TaskKind; 10] = [
        TaskKind::SolveRiccati,
        TaskKind::SolveLyapunov,
        TaskKind::VerifyDichotomy,
        TaskKind::PeriodicExtremal,
        TaskKind::FiniteHorizon,
        TaskKind::Turnpike,
        TaskKind::AvgCost,
        TaskKind::StabilityRatio,
        TaskKind::Cauchy,
        TaskKind::RiccatiDecay,
    ];

    /// Name used in scenario files and summaries.
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SolveRiccati => "riccati",
            TaskKind::SolveLyapunov => "lyapunov",
            TaskKind::VerifyDichotomy => "dichotomy-verify",
            TaskKind::PeriodicExtremal => "extremal",
            TaskKind::FiniteHorizon => "finite-horizon",
            TaskKind::Turnpike => "turnpike",
            TaskKind::AvgCost => "avg-cost",
            TaskKind::StabilityRatio => "stability-ratio",
            TaskKind::Cauchy => "cauchy",
            TaskKind::RiccatiDecay => "riccati-decay",
        }
    }

    /// Name of the matching subcommand, also accepted in scenario files.
    pub fn command(self) -> &'static str {
        match self {
            TaskKind::SolveRiccati => "solve-riccati",
            TaskKind::SolveLyapunov => "solve-lyapunov",
            TaskKind::VerifyDichotomy => "verify-dichotomy",
            TaskKind::PeriodicExtremal => "periodic-extremal",
            other => other.name(),
        }
    }
}

impl Serialize for TaskKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.command() == s)
            .ok_or_else(|| CliError::Config(format!("unknown task '{s}'")))
    }
}

/// A task kind together with its parameters.
#[derive(Clone, Debug)]
pub enum TaskSpec {
    SolveRiccati(tasks::RiccatiParams),
    SolveLyapunov(tasks::LyapunovParams),
    VerifyDichotomy(tasks::VerifyParams),
    PeriodicExtremal(tasks::ExtremalParams),
    FiniteHorizon(tasks::FiniteHorizonParams),
    Turnpike(tasks::TurnpikeParams),
    AvgCost(tasks::AvgCostParams),
    StabilityRatio(tasks::StabilityParams),
    Cauchy(tasks::CauchyParams),
    RiccatiDecay(tasks::DecayParams),
}

impl TaskSpec {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskSpec::SolveRiccati(_) => TaskKind::SolveRiccati,
            TaskSpec::SolveLyapunov(_) => TaskKind::SolveLyapunov,
            TaskSpec::VerifyDichotomy(_) => TaskKind::VerifyDichotomy,
            TaskSpec::PeriodicExtremal(_) => TaskKind::PeriodicExtremal,
            TaskSpec::FiniteHorizon(_) => TaskKind::FiniteHorizon,
            TaskSpec::Turnpike(_) => TaskKind::Turnpike,
            TaskSpec::AvgCost(_) => TaskKind::AvgCost,
            TaskSpec::StabilityRatio(_) => TaskKind::StabilityRatio,
            TaskSpec::Cauchy(_) => TaskKind::Cauchy,
            TaskSpec::RiccatiDecay(_) => TaskKind::RiccatiDecay,
        }
    }

    pub fn default_for(kind: TaskKind) -> Self {
        match kind {
            TaskKind::SolveRiccati => TaskSpec::SolveRiccati(Default::default()),
            TaskKind::SolveLyapunov => TaskSpec::SolveLyapunov(Default::default()),
            TaskKind::VerifyDichotomy => TaskSpec::VerifyDichotomy(Default::default()),
            TaskKind::PeriodicExtremal => TaskSpec::PeriodicExtremal(Default::default()),
            TaskKind::FiniteHorizon => TaskSpec::FiniteHorizon(Default::default()),
            TaskKind::Turnpike => TaskSpec::Turnpike(Default::default()),
            TaskKind::AvgCost => TaskSpec::AvgCost(Default::default()),
            TaskKind::StabilityRatio => TaskSpec::StabilityRatio(Default::default()),
            TaskKind::Cauchy => TaskSpec::Cauchy(Default::default()),
            TaskKind::RiccatiDecay => TaskSpec::RiccatiDecay(Default::default()),
        }
    }

    fn from_value(kind: TaskKind, params: Value) -> CliResult<Self> {
        fn de<T: serde::de::DeserializeOwned>(kind: TaskKind, v: Value) -> CliResult<T> {
            serde_json::from_value(v).map_err(|e| CliError::Config(format!("task '{kind}': {e}")))
        }
        Ok(match kind {
            TaskKind::SolveRiccati => TaskSpec::SolveRiccati(de(kind, params)?),
            TaskKind::SolveLyapunov => TaskSpec::SolveLyapunov(de(kind, params)?),
            TaskKind::VerifyDichotomy => TaskSpec::VerifyDichotomy(de(kind, params)?),
            TaskKind::PeriodicExtremal => TaskSpec::PeriodicExtremal(de(kind, params)?),
            TaskKind::FiniteHorizon => TaskSpec::FiniteHorizon(de(kind, params)?),
            TaskKind::Turnpike => TaskSpec::Turnpike(de(kind, params)?),
            TaskKind::AvgCost => TaskSpec::AvgCost(de(kind, params)?),
            TaskKind::StabilityRatio => TaskSpec::StabilityRatio(de(kind, params)?),
            TaskKind::Cauchy => TaskSpec::Cauchy(de(kind, params)?),
            TaskKind::RiccatiDecay => TaskSpec::RiccatiDecay(de(kind, params)?),
        })
    }

    /// Task kinds whose results this task reads from the shared state.
    pub fn needs(&self) -> &'static [TaskKind] {
        use TaskKind::*;
        match self {
            TaskSpec::SolveRiccati(_) => &[],
            TaskSpec::SolveLyapunov(_) | TaskSpec::RiccatiDecay(_) => &[SolveRiccati],
            TaskSpec::VerifyDichotomy(_) | TaskSpec::PeriodicExtremal(_) | TaskSpec::StabilityRatio(_) | TaskSpec::Cauchy(_) => {
                &[SolveRiccati, SolveLyapunov]
            }
            TaskSpec::FiniteHorizon(_) | TaskSpec::AvgCost(_) => &[PeriodicExtremal],
            TaskSpec::Turnpike(p) if p.solves_own_problem() => &[PeriodicExtremal],
            TaskSpec::Turnpike(_) => &[PeriodicExtremal, FiniteHorizon],
        }
    }

    pub fn run(&self, state: &mut State) -> CliResult<Outcome> {
        match self {
            TaskSpec::SolveRiccati(p) => tasks::riccati(state, p),
            TaskSpec::SolveLyapunov(p) => tasks::lyapunov(state, p),
            TaskSpec::VerifyDichotomy(p) => tasks::verify_dichotomy(state, p),
            TaskSpec::PeriodicExtremal(p) => tasks::extremal(state, p),
            TaskSpec::FiniteHorizon(p) => tasks::finite_horizon(state, p),
            TaskSpec::Turnpike(p) => tasks::turnpike(state, p),
            TaskSpec::AvgCost(p) => tasks::avg_cost(state, p),
            TaskSpec::StabilityRatio(p) => tasks::stability(state, p),
            TaskSpec::Cauchy(p) => tasks::cauchy(state, p),
            TaskSpec::RiccatiDecay(p) => tasks::riccati_decay(state, p),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaskEntry {
    pub id: Option<String>,
    pub after: Vec<String>,
    pub spec: TaskSpec,
    pub inserted: bool,
}

impl TaskEntry {
    pub fn name(&self) -> String {
        self.id.clone().unwrap_or_else(|| self.spec.kind().name().to_string())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    problem: Value,
    #[serde(default)]
    tasks: Vec<Value>,
    output_dir: Option<PathBuf>,
    grid: Option<usize>,
    #[serde(default)]
    tolerances: BTreeMap<String, f64>,
}

#[derive(Debug)]
pub struct Scenario {
    pub problem: PeriodicProblem,
    pub tasks: Vec<TaskEntry>,
    pub output_dir: Option<PathBuf>,
    pub grid: Option<usize>,
    pub riccati_tol: Option<f64>,
}

fn parse_entry(value: Value) -> CliResult<TaskEntry> {
    let Value::Object(mut map) = value else {
        return Err(CliError::Config("each task must be a JSON object".into()));
    };
    let kind: TaskKind = match map.remove("task") {
        Some(Value::String(s)) => s.parse()?,
        _ => return Err(CliError::Config("task entry without a 'task' string".into())),
    };
    let id = match map.remove("id") {
        None => None,
        Some(Value::String(s)) if !s.is_empty() => Some(s),
        Some(other) => return Err(CliError::Config(format!("task id must be a nonempty string, got {other}"))),
    };
    let after = match map.remove("after") {
        None => Vec::new(),
        Some(v) => serde_json::from_value(v)
            .map_err(|e| CliError::Config(format!("'after' must be a list of task ids: {e}")))?,
    };
    let spec = TaskSpec::from_value(kind, Value::Object(map))?;
    Ok(TaskEntry {
        id,
        after,
        spec,
        inserted: false,
    })
}

impl Scenario {
    pub fn from_json_str(text: &str, base: Option<&Path>) -> CliResult<Self> {
        let raw: RawScenario =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid scenario: {e}")))?;
        let problem = match raw.problem {
            Value::String(name) => {
                // Relative problem paths resolve against the scenario file.
                let local = base.map(|b| b.join(&name)).filter(|p| p.is_file());
                match local {
                    Some(p) => PeriodicProblem::from_file(&p)?,
                    None => load_problem(&name)?,
                }
            }
            inline @ Value::Object(_) => PeriodicProblem::from_json_str(&inline.to_string())?,
            other => return Err(CliError::Config(format!("'problem' must be a name, a path or an object, got {other}"))),
        };
        for key in raw.tolerances.keys() {
            if key != "riccati" {
                return Err(CliError::Config(format!("unknown tolerance '{key}'")));
            }
        }
        let tasks = raw.tasks.into_iter().map(parse_entry).collect::<CliResult<_>>()?;
        Ok(Scenario {
            problem,
            tasks,
            output_dir: raw.output_dir,
            grid: raw.grid,
            riccati_tol: raw.tolerances.get("riccati").copied(),
        })
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read scenario {}: {e}", path.display())))?;
        Scenario::from_json_str(&text, path.parent())
    }
}

/// Appends default tasks for every missing prerequisite, transitively.
/// Returns the names of the inserted tasks.
pub fn insert_dependencies(tasks: &mut Vec<TaskEntry>) -> Vec<String> {
    let mut inserted = Vec::new();
    let mut i = 0;
    while i < tasks.len() {
        for &need in tasks[i].spec.needs() {
            if !tasks.iter().any(|t| t.spec.kind() == need) {
                let entry = TaskEntry {
                    id: None,
                    after: Vec::new(),
                    spec: TaskSpec::default_for(need),
                    inserted: true,
                };
                inserted.push(entry.name());
                tasks.push(entry);
            }
        }
        i += 1;
    }
    inserted
}

/// Execution order: prerequisites first, then `after` constraints.
pub fn execution_order(tasks: &[TaskEntry]) -> CliResult<Vec<usize>> {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut anonymous: HashMap<TaskKind, usize> = HashMap::new();
    for (i, t) in tasks.iter().enumerate() {
        match &t.id {
            Some(id) => {
                if ids.insert(id, i).is_some() {
                    return Err(CliError::Config(format!("duplicate task id '{id}'")));
                }
            }
            None => {
                if anonymous.insert(t.spec.kind(), i).is_some() {
                    return Err(CliError::Config(format!(
                        "task '{}' appears twice; give each an 'id' so their outputs do not collide",
                        t.spec.kind()
                    )));
                }
            }
        }
    }
    let mut graph: DiGraph<usize, ()> = DiGraph::new();
    let nodes: Vec<NodeIndex> = (0..tasks.len()).map(|i| graph.add_node(i)).collect();
    for (i, t) in tasks.iter().enumerate() {
        for &need in t.spec.needs() {
            if let Some(p) = tasks.iter().position(|o| o.spec.kind() == need) {
                graph.update_edge(nodes[p], nodes[i], ());
            }
        }
        for dep in &t.after {
            let p = ids
                .get(dep.as_str())
                .or_else(|| dep.parse::<TaskKind>().ok().and_then(|k| anonymous.get(&k)))
                .ok_or_else(|| CliError::Config(format!("task '{}' runs after unknown task '{dep}'", t.name())))?;
            graph.update_edge(nodes[*p], nodes[i], ());
        }
    }
    toposort(&graph, None).map_err(|cycle| {
        CliError::Config(format!(
            "task dependencies form a cycle through '{}'",
            tasks[graph[cycle.node_id()]].name()
        ))
    })?;
    // Acyclic: order ready tasks by file position so runs read like the file.
    let mut indegree: Vec<usize> = nodes
        .iter()
        .map(|&n| graph.neighbors_directed(n, Direction::Incoming).count())
        .collect();
    let mut ready: BinaryHeap<Reverse<usize>> = (0..tasks.len()).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(tasks.len());
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for next in graph.neighbors_directed(nodes[i], Direction::Outgoing) {
            let j = graph[next];
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(Reverse(j));
            }
        }
    }
    Ok(order)
}

#[derive(Debug, Serialize)]
pub struct TaskRecord {
    pub name: String,
    pub task: TaskKind,
    pub inserted: bool,
    /// `pass`, `fail` or `error`.
    pub status: &'static str,
    pub checks: Vec<Check>,
    pub outputs: Vec<PathBuf>,
    pub data: Value,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub problem: String,
    pub tasks: Vec<TaskRecord>,
    pub inserted_dependencies: Vec<String>,
    pub pass: bool,
}

/// Runs every task and writes `summary.json` into the output directory.
/// A task that errors stops the run; its error is returned after the summary
/// is written. Failed checks do not stop the run.
pub fn run_scenario(scenario: Scenario, mut settings: Settings, corrupt_lyapunov_sign: bool) -> CliResult<Summary> {
    if let Some(dir) = &scenario.output_dir {
        settings.out_dir = settings.out_dir.join(dir);
    }
    if let Some(grid) = scenario.grid {
        settings.grid = grid;
    }
    if let Some(tol) = scenario.riccati_tol {
        settings.tol = tol;
    }
    let mut entries = scenario.tasks;
    let inserted = insert_dependencies(&mut entries);
    if !inserted.is_empty() {
        info!("inserted prerequisite tasks: {}", inserted.join(", "));
    }
    let order = execution_order(&entries)?;
    let root = settings.out_dir.clone();
    let mut state = State::new(scenario.problem, settings)?;
    state.corrupt_lyapunov_sign = corrupt_lyapunov_sign;

    let mut summary = Summary {
        problem: state.problem.name.clone(),
        tasks: Vec::new(),
        inserted_dependencies: inserted,
        pass: true,
    };
    let mut failure = None;
    for i in order {
        let entry = &entries[i];
        state.settings.out_dir = match &entry.id {
            Some(id) => root.join(id),
            None => root.clone(),
        };
        info!("running task '{}'", entry.name());
        let (status, outcome) = match entry.spec.run(&mut state) {
            Ok(o) if o.passed() => ("pass", o),
            Ok(o) => ("fail", o),
            Err(e) => {
                let e = e.in_task(&entry.name());
                warn!("{e}");
                let data = serde_json::json!({ "error": e.to_string() });
                failure = Some(e);
                ("error", Outcome { data, ..Outcome::default() })
            }
        };
        for c in outcome.checks.iter().filter(|c| !c.pass) {
            warn!("task '{}': check '{}' failed ({:.3e} vs {:.3e})", entry.name(), c.name, c.value, c.tolerance);
        }
        summary.pass &= status == "pass";
        summary.tasks.push(TaskRecord {
            name: entry.name(),
            task: entry.spec.kind(),
            inserted: entry.inserted,
            status,
            checks: outcome.checks,
            outputs: outcome.outputs,
            data: outcome.data,
        });
        if failure.is_some() {
            break;
        }
    }
    std::fs::create_dir_all(&root)?;
    write_json(&root.join("summary.json"), &summary)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(json: &str) -> Vec<TaskEntry> {
        let v: Vec<Value> = serde_json::from_str(json).unwrap();
        v.into_iter().map(|e| parse_entry(e).unwrap()).collect()
    }

    #[test]
    fn turnpike_pulls_in_the_whole_chain() {
        let mut t = entries(r#"[{"task": "turnpike"}]"#);
        let inserted = insert_dependencies(&mut t);
        assert_eq!(inserted, ["extremal", "finite-horizon", "riccati", "lyapunov"]);
        let order: Vec<String> = execution_order(&t).unwrap().into_iter().map(|i| t[i].name()).collect();
        let pos = |n: &str| order.iter().position(|x| x == n).unwrap();
        assert!(pos("riccati") < pos("lyapunov"));
        assert!(pos("lyapunov") < pos("extremal"));
        assert!(pos("extremal") < pos("finite-horizon"));
        assert!(pos("finite-horizon") < pos("turnpike"));
    }

    #[test]
    fn own_horizon_turnpike_skips_finite_horizon() {
        let mut t = entries(r#"[{"task": "turnpike", "T": 20}]"#);
        insert_dependencies(&mut t);
        assert!(t.iter().all(|e| e.spec.kind() != TaskKind::FiniteHorizon));
    }

    #[test]
    fn cycles_are_configuration_errors() {
        let t = entries(
            r#"[{"task": "cauchy", "id": "a", "after": ["b"]},
                {"task": "avg-cost", "id": "b", "after": ["a"]}]"#,
        );
        let err = execution_order(&t).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_CONFIG);
    }

    #[test]
    fn subcommand_names_are_aliases() {
        for k in TaskKind::ALL {
            assert_eq!(k.command().parse::<TaskKind>().unwrap(), k);
            assert_eq!(k.name().parse::<TaskKind>().unwrap(), k);
        }
    }

    #[test]
    fn duplicate_anonymous_kinds_are_rejected() {
        let t = entries(r#"[{"task": "cauchy"}, {"task": "cauchy", "T": 3}]"#);
        assert!(execution_order(&t).is_err());
    }

    #[test]
    fn unknown_parameters_are_rejected() {
        let v: Value = serde_json::from_str(r#"{"task": "cauchy", "horizon": 3}"#).unwrap();
        assert!(parse_entry(v).is_err());
    }

    #[test]
    fn lists_accept_strings_numbers_and_arrays() {
        let t = entries(
            r#"[{"task": "avg-cost", "id": "a", "horizons": "10, 20"},
                {"task": "avg-cost", "id": "b", "horizons": [10, 20]},
                {"task": "cauchy", "y0": 1.5}]"#,
        );
        let h = |e: &TaskEntry| match &e.spec {
            TaskSpec::AvgCost(p) => p.horizons.0.clone(),
            _ => unreachable!(),
        };
        assert_eq!(h(&t[0]), h(&t[1]));
        match &t[2].spec {
            TaskSpec::Cauchy(p) => assert_eq!(p.y0.as_ref().unwrap().0, [1.5]),
            _ => unreachable!(),
        }
    }
}
