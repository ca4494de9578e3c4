//! `qfb` command-line driver: loads scenario files, dispatches to the solvers
//! and writes JSON or CSV.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use qfb_core::control::{bellman_complete, bellman_ket, enumerate_strategies_oracle, SolveReport, Strategy, TreeNode};
use qfb_core::dynamics::{ControlVector, Model, Scenario};
use qfb_core::filter::{
    complete_measurement_kernel, filter_trajectory, posterior_rows, posterior_tree_json, reachable_posteriors,
    FilterState, MeasurementRecord, TransitionKernel,
};
use qfb_core::instrument::validate_instrument;
use qfb_core::qcore::Ket;
use qfb_core::sim::{estimate_risk, SimConfig};
use serde::Serialize;
use serde_json::json;

pub mod scenario;

pub use scenario::{canonical_json, load_scenario, parse_scenario};

/// Failure reported on standard error as one JSON line.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub location: Option<String>,
    #[serde(skip)]
    pub exit: i32,
}

impl CliError {
    pub fn usage(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            location: None,
            exit: 2,
        }
    }

    pub fn domain(code: &str, message: impl Into<String>, location: Option<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            location,
            exit: 1,
        }
    }

    /// Wraps a library error; the error's own location wins over `location`.
    pub fn from_core(e: qfb_core::Error, location: &str) -> Self {
        let loc = e
            .location()
            .map(str::to_string)
            .or_else(|| (!location.is_empty()).then(|| location.to_string()));
        Self::domain(e.code(), e.to_string(), loc)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<qfb_core::Error> for CliError {
    fn from(e: qfb_core::Error) -> Self {
        Self::from_core(e, "")
    }
}

type Res<T> = std::result::Result<T, CliError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "qfb", version, about = "Measurement-feedback control of finite quantum systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file.
    pub scenario: PathBuf,
    /// Output path (standard output when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load the scenario and report every residual check.
    Validate(Common),
    /// Dynamic program over the posterior tree.
    Solve(Common),
    /// Dynamic program over the last outcome (complete measurements only).
    SolveComplete(Common),
    /// Exhaustive search over deterministic strategies.
    Oracle(Common),
    /// Condition the initial state on a measurement record.
    Filter {
        #[command(flatten)]
        common: Common,
        /// Outcome labels (or indices), comma separated.
        #[arg(long, default_value = "")]
        record: String,
        /// Grid index of the control per stage, comma separated (default 0).
        #[arg(long)]
        controls: Option<String>,
        /// Emit every reachable posterior instead of a single record.
        #[arg(long)]
        tree: bool,
    },
    /// Monte Carlo estimate of a strategy's expected cost.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Strategy or solve output; the ket dynamic program is run when omitted.
        #[arg(long)]
        strategy: Option<PathBuf>,
        /// Write per-trajectory record and cost as CSV.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Complete-measurement transition kernels per stage and control.
    Kernel {
        #[command(flatten)]
        common: Common,
        /// Only this stage (every stage when omitted)
        #[arg(long)]
        stage: Option<usize>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Validate(c) | Command::Solve(c) | Command::SolveComplete(c) | Command::Oracle(c) => c,
            Command::Filter { common, .. } | Command::Simulate { common, .. } | Command::Kernel { common, .. } => common,
        }
    }
}

/// Builds the global worker pool from `QFB_THREADS` (unset or 0: automatic).
pub fn configure_threads() -> Res<()> {
    let n = match std::env::var("QFB_THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::usage("usage", format!("QFB_THREADS must be a nonnegative integer, got {s:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage("usage", format!("cannot start worker pool: {e}")))
}

pub fn run(cli: &Cli) -> Res<()> {
    let common = cli.command.common();
    let scenario = load_scenario(&common.scenario)?;
    let body = match &cli.command {
        Command::Validate(c) => {
            let (body, passed) = validate(scenario, c.format)?;
            emit(c.out.as_deref(), &body)?;
            return match passed {
                true => Ok(()),
                false => Err(CliError::domain("invariant", "scenario failed validation", None)),
            };
        }
        Command::Solve(c) => {
            let (model, psi) = ket_model(scenario)?;
            solve_output(&model, &bellman_ket(&model, &psi)?, c.format)?
        }
        Command::SolveComplete(c) => {
            let model = Model::compile(scenario)?;
            solve_output(&model, &bellman_complete(&model)?, c.format)?
        }
        Command::Oracle(c) => {
            let (model, psi) = ket_model(scenario)?;
            solve_output(&model, &enumerate_strategies_oracle(&model, &psi)?, c.format)?
        }
        Command::Filter {
            common,
            record,
            controls,
            tree,
        } => filter(&scenario, record, controls.as_deref(), *tree, common.format)?,
        Command::Simulate {
            common,
            n,
            seed,
            strategy,
            dump,
        } => simulate(scenario, *n, *seed, strategy.as_deref(), dump.as_deref(), common.format)?,
        Command::Kernel { common, stage } => kernel(&scenario, *stage, common.format)?,
    };
    emit(common.out.as_deref(), &body)
}

fn emit(out: Option<&Path>, body: &str) -> Res<()> {
    match out {
        Some(path) => std::fs::write(path, body)
            .map_err(|e| CliError::usage("io", format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(body.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::domain("io", format!("cannot write output: {e}"), None))
        }
    }
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serializes");
    s.push('\n');
    s
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> Res<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::domain("io", e.to_string(), None);
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::domain("io", e.to_string(), None))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn ket_model(scenario: Scenario) -> Res<(Model, Ket)> {
    let psi = scenario.initial.as_ket().cloned().ok_or_else(|| {
        CliError::domain("state", "this command needs a ket initial state", Some("initial".into()))
    })?;
    Ok((Model::compile(scenario)?, psi))
}

fn validate(scenario: Scenario, format: Format) -> Res<(String, bool)> {
    let model = Model::compile(scenario)?;
    let tol = *model.tolerances();
    let mut passed = true;
    let mut rows = Vec::new();
    let mut stages = Vec::new();
    for k in 0..model.horizon() {
        let mut controls = Vec::new();
        for (j, sc) in model.stage(k).iter().enumerate() {
            let unitarity = sc.propagator.unitarity_residual();
            let ins = validate_instrument(&sc.instrument, &tol);
            let ok = unitarity <= tol.unitarity && ins.passed;
            passed &= ok;
            rows.push(vec![
                k.to_string(),
                j.to_string(),
                join_f64(sc.control.values()),
                unitarity.to_string(),
                ins.normalization_residual.to_string(),
                ins.complete_positivity.min_eigenvalue.to_string(),
                ok.to_string(),
            ]);
            controls.push(json!({
                "control": j,
                "u": sc.control,
                "unitarity_residual": unitarity,
                "normalization_residual": ins.normalization_residual,
                "choi_min_eigenvalue": ins.complete_positivity.min_eigenvalue,
                "passed": ok,
            }));
        }
        stages.push(json!({
            "stage": k,
            "outcomes": model.scenario().stages[k].outcome_labels(),
            "complete": model.scenario().stages[k].is_complete(),
            "controls": controls,
        }));
    }
    let body = match format {
        Format::Json => to_json(&json!({
            "dim": model.dim(),
            "horizon": model.horizon(),
            "complete": model.scenario().is_complete(),
            "terminal_min_eigenvalue": model.terminal().min_eigenvalue(),
            "stages": stages,
            "passed": passed,
        })),
        Format::Csv => csv_text(
            &["stage", "control", "u", "unitarity_residual", "normalization_residual", "choi_min_eigenvalue", "passed"],
            rows,
        )?,
    };
    Ok((body, passed))
}

fn solve_output(model: &Model, report: &SolveReport, format: Format) -> Res<String> {
    match format {
        Format::Json => Ok(to_json(report)),
        Format::Csv => match &report.strategy {
            Strategy::Tree(t) => {
                let mut rows = Vec::new();
                tree_rows(model, &t.root, &mut Vec::new(), &mut rows);
                csv_text(&["stage", "record", "control", "u", "value"], rows)
            }
            Strategy::Markov(m) => {
                let values = report.values.as_deref().unwrap_or_default();
                let mut rows = Vec::new();
                for (k, qk) in values.iter().enumerate() {
                    let labels = model.scenario().coordinate_labels(k);
                    for (v, q) in qk.iter().enumerate() {
                        let (j, u) = match m.controls.get(k) {
                            Some(row) => (row[v].to_string(), join_f64(model.stage(k)[row[v]].control.values())),
                            None => (String::new(), String::new()),
                        };
                        rows.push(vec![k.to_string(), v.to_string(), labels[v].to_string(), q.to_string(), j, u]);
                    }
                }
                csv_text(&["stage", "coordinate", "label", "value", "control", "u"], rows)
            }
        },
    }
}

fn tree_rows(model: &Model, node: &TreeNode, record: &mut Vec<usize>, rows: &mut Vec<Vec<String>>) {
    let k = record.len();
    let labels = MeasurementRecord(record.clone()).labels(model.scenario(), 0).join(";");
    let (j, u) = match node.control {
        Some(j) => (j.to_string(), join_f64(model.stage(k)[j].control.values())),
        None => (String::new(), String::new()),
    };
    let value = node.value.map(|v| v.to_string()).unwrap_or_default();
    rows.push(vec![k.to_string(), labels, j, u, value]);
    for (v, child) in node.children.iter().enumerate() {
        if let Some(c) = child {
            record.push(v);
            tree_rows(model, c, record, rows);
            record.pop();
        }
    }
}

fn split_list(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect()
}

fn grid_controls(scenario: &Scenario, spec: Option<&str>, len: usize) -> Res<Vec<ControlVector>> {
    let indices: Vec<usize> = match spec {
        Some(s) => split_list(s)
            .iter()
            .map(|x| x.parse().map_err(|_| CliError::usage("usage", format!("bad control index {x:?}"))))
            .collect::<Res<_>>()?,
        None => vec![0; len],
    };
    if indices.len() != len {
        return Err(CliError::usage(
            "usage",
            format!("{} control indices given for {len} stages", indices.len()),
        ));
    }
    indices
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            scenario
                .stages
                .get(k)
                .and_then(|s| s.control_grid.get(j))
                .cloned()
                .ok_or_else(|| CliError::usage("usage", format!("stage {k} has no control index {j}")))
        })
        .collect()
}

fn state_numbers(s: &FilterState) -> Vec<f64> {
    match s {
        FilterState::Ket(k) => k.amplitudes().iter().flat_map(|z| [z.re, z.im]).collect(),
        FilterState::Density(r) => r.matrix().row_major().iter().flat_map(|z| [z.re, z.im]).collect(),
    }
}

fn filter(scenario: &Scenario, record: &str, controls: Option<&str>, tree: bool, format: Format) -> Res<String> {
    if tree {
        let psi = scenario.initial.as_ket().ok_or_else(|| {
            CliError::domain("state", "posterior trees need a ket initial state", Some("initial".into()))
        })?;
        let controls = grid_controls(scenario, controls, scenario.horizon())?;
        let t = reachable_posteriors(scenario, 0, psi, &controls)?;
        return match format {
            Format::Json => Ok(to_json(&posterior_tree_json(scenario, &t))),
            Format::Csv => csv_text(
                &["record", "probability", "amplitudes"],
                posterior_rows(scenario, &t)
                    .into_iter()
                    .map(|r| vec![r.record.join(";"), r.probability.to_string(), join_f64(&r.amplitudes)])
                    .collect(),
            ),
        };
    }
    let labels = split_list(record);
    let rec = MeasurementRecord::from_labels(scenario, &labels).map_err(|e| CliError::from_core(e, "record"))?;
    let controls = grid_controls(scenario, controls, rec.len())?;
    let f = filter_trajectory(scenario, &controls, &rec)?;
    match format {
        Format::Json => Ok(to_json(&f)),
        Format::Csv => {
            let names = rec.labels(scenario, 0);
            let rows = f
                .states
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    vec![
                        i.to_string(),
                        names[i].clone(),
                        f.stage_probs[i].to_string(),
                        join_f64(&state_numbers(s)),
                    ]
                })
                .collect();
            csv_text(&["stage", "outcome", "conditional_probability", "posterior"], rows)
        }
    }
}

fn read_strategy(path: &Path) -> Res<Strategy> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage("io", format!("cannot read {}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::domain("json", format!("{}: {e}", path.display()), None))?;
    let inner = v.get("strategy").cloned().unwrap_or(v);
    serde_json::from_value(inner).map_err(|e| CliError::domain("schema", e.to_string(), Some("strategy".into())))
}

fn simulate(
    scenario: Scenario,
    n: u64,
    seed: u64,
    strategy: Option<&Path>,
    dump: Option<&Path>,
    format: Format,
) -> Res<String> {
    if n == 0 {
        return Err(CliError::usage("usage", "--n must be at least 1"));
    }
    let (model, psi) = ket_model(scenario)?;
    let strategy = match strategy {
        Some(p) => read_strategy(p)?,
        None => bellman_ket(&model, &psi)?.strategy,
    };
    let cfg = SimConfig {
        trajectories: n,
        seed,
        keep_trajectories: dump.is_some(),
    };
    let mut result = estimate_risk(&model, &strategy, &cfg, &psi)?;
    if let (Some(path), Some(samples)) = (dump, result.samples.take()) {
        let rows = samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                vec![
                    i.to_string(),
                    s.record.labels(model.scenario(), 0).join(";"),
                    s.cost.to_string(),
                ]
            })
            .collect();
        let text = csv_text(&["trajectory", "record", "cost"], rows)?;
        emit(Some(path), &text)?;
    }
    match format {
        Format::Json => Ok(to_json(&result)),
        Format::Csv => {
            let mut rows = vec![
                vec!["mean".into(), String::new(), String::new(), result.mean.to_string()],
                vec!["stderr".into(), String::new(), String::new(), result.stderr.to_string()],
            ];
            for f in &result.frequencies {
                for (label, x) in f.outcomes.iter().zip(&f.frequencies) {
                    rows.push(vec!["frequency".into(), f.stage.to_string(), label.clone(), x.to_string()]);
                }
            }
            csv_text(&["quantity", "stage", "outcome", "value"], rows)
        }
    }
}

fn kernel(scenario: &Scenario, stage: Option<usize>, format: Format) -> Res<String> {
    let stages: Vec<usize> = match stage {
        Some(k) if k < scenario.horizon() => vec![k],
        Some(k) => return Err(CliError::usage("usage", format!("--stage {k} is beyond the horizon {}", scenario.horizon()))),
        None => (0..scenario.horizon()).collect(),
    };
    let kernels: Vec<TransitionKernel> = stages
        .iter()
        .map(|&k| complete_measurement_kernel(scenario, k))
        .collect::<qfb_core::Result<_>>()?;
    match format {
        Format::Json => Ok(to_json(&kernels)),
        Format::Csv => {
            let mut rows = Vec::new();
            for kern in &kernels {
                for (j, m) in kern.matrices.iter().enumerate() {
                    for (a, row) in m.iter().enumerate() {
                        for (b, p) in row.iter().enumerate() {
                            rows.push(vec![
                                kern.stage.to_string(),
                                j.to_string(),
                                kern.source_outcomes[a].to_string(),
                                kern.target_outcomes[b].to_string(),
                                p.to_string(),
                            ]);
                        }
                    }
                }
            }
            csv_text(&["stage", "control", "from", "to", "probability"], rows)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn scenario(name: &str) -> String {
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("../../scenarios")
            .join(name)
            .to_string_lossy()
            .into_owned()
    }

    /// Runs a command line with `--out` pointed at a temp file; returns the output.
    fn run_to_string(args: &[&str]) -> Res<String> {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut argv = vec!["qfb"];
        argv.extend_from_slice(args);
        argv.extend_from_slice(&["--out", out.to_str().unwrap()]);
        let cli = Cli::try_parse_from(argv).map_err(|e| CliError::usage("usage", e.to_string()))?;
        run(&cli)?;
        Ok(std::fs::read_to_string(out).unwrap())
    }

    fn json(args: &[&str]) -> serde_json::Value {
        serde_json::from_str(&run_to_string(args).unwrap()).unwrap()
    }

    #[test]
    fn validate_reports_residuals() {
        let v = json(&["validate", &scenario("reference_qubit.json")]);
        assert_eq!(v["passed"], true);
        assert_eq!(v["horizon"], 3);
        assert!(v["stages"][0]["controls"][2]["unitarity_residual"].as_f64().unwrap() <= 1e-10);
    }

    #[test]
    fn solve_and_oracle_agree() {
        for name in ["reference_qubit.json", "qutrit_coarse.json"] {
            let a = json(&["solve", &scenario(name)])["value"].as_f64().unwrap();
            let b = json(&["oracle", &scenario(name)])["value"].as_f64().unwrap();
            assert!((a - b).abs() <= 1e-9, "{name}: {a} vs {b}");
        }
    }

    #[test]
    fn simulate_with_saved_strategy_is_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        let strategy = dir.path().join("strategy.json");
        let solved = run_to_string(&["solve", &scenario("reference_qubit.json")]).unwrap();
        std::fs::write(&strategy, solved).unwrap();
        let args = [
            "simulate",
            &scenario("reference_qubit.json"),
            "--n",
            "5000",
            "--seed",
            "7",
            "--strategy",
            strategy.to_str().unwrap(),
        ];
        let a = run_to_string(&args).unwrap();
        assert_eq!(a, run_to_string(&args).unwrap());
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["trajectories"], 5000);
        assert!(v["stderr"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn simulate_dump_has_one_row_per_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let dump = dir.path().join("dump.csv");
        run_to_string(&["simulate", &scenario("reference_qubit.json"), "--n", "50", "--dump", dump.to_str().unwrap()]).unwrap();
        let mut r = csv::Reader::from_path(&dump).unwrap();
        assert_eq!(r.headers().unwrap(), vec!["trajectory", "record", "cost"]);
        assert_eq!(r.records().count(), 50);
    }

    #[test]
    fn csv_exports_have_headers() {
        let cases: [(&[&str], &str); 4] = [
            (&["solve-complete"], "stage,coordinate,label,value,control,u"),
            (&["kernel", "--stage", "1"], "stage,control,from,to,probability"),
            (&["filter", "--record", "1,0", "--controls", "2,1"], "stage,outcome,conditional_probability,posterior"),
            (&["solve"], "stage,record,control,u,value"),
        ];
        for (args, header) in cases {
            let mut argv = args.to_vec();
            let path = scenario("reference_qubit.json");
            argv.insert(1, &path);
            argv.extend_from_slice(&["--format", "csv"]);
            let text = run_to_string(&argv).unwrap();
            assert_eq!(text.lines().next().unwrap(), header);
        }
    }

    #[test]
    fn solve_complete_table_matches_kernel_recursion() {
        let v = json(&["solve-complete", &scenario("reference_qubit.json")]);
        assert!((v["value"].as_f64().unwrap() - json(&["solve", &scenario("reference_qubit.json")])["value"].as_f64().unwrap()).abs() <= 1e-9);
        assert_eq!(v["strategy"]["form"], "markov");
        assert_eq!(v["values"][3], json!([0.0, 1.0]));
    }

    #[test]
    fn filter_by_label_and_tree() {
        let f = json(&["filter", &scenario("qutrit_coarse.json"), "--record", "high,2", "--controls", "1,2"]);
        let p = f["probability"].as_f64().unwrap();
        let stages: Vec<f64> = f["stage_probs"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!((p - stages.iter().product::<f64>()).abs() <= 1e-12);
        let t = json(&["filter", &scenario("qutrit_coarse.json"), "--tree", "--controls", "1,2"]);
        assert_eq!(t["root"]["probability"], 1.0);
        let leaves: f64 = t["root"]["children"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|c| c["children"].as_array().unwrap().iter().map(|l| l["probability"].as_f64().unwrap()))
            .sum();
        assert!((leaves - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn error_exit_codes() {
        let ref_path = scenario("reference_qubit.json");
        let beyond = run_to_string(&["kernel", &ref_path, "--stage", "9"]).unwrap_err();
        assert_eq!(beyond.exit, 2);
        let bad_record = run_to_string(&["filter", &ref_path, "--record", "7"]).unwrap_err();
        assert_eq!(bad_record.exit, 1);
        let incomplete = run_to_string(&["solve-complete", &scenario("qutrit_coarse.json")]).unwrap_err();
        assert_eq!((incomplete.exit, incomplete.code.as_str()), (1, "not_complete_measurement"));
        let missing = run_to_string(&["solve", "/nonexistent/scenario.json"]).unwrap_err();
        assert_eq!(missing.exit, 2);
        let line = incomplete.to_json_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert!(v.get("code").is_some() && v.get("message").is_some() && v.get("location").is_some());
    }

    #[test]
    fn density_initial_state_needs_the_density_filter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mixed.json");
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(scenario("reference_qubit.json")).unwrap()).unwrap();
        v["initial"] = json!({"density": [[0.5, 0.0], [0.0, 0.5]]});
        std::fs::write(&path, v.to_string()).unwrap();
        let e = run_to_string(&["solve", path.to_str().unwrap()]).unwrap_err();
        assert_eq!((e.exit, e.location.as_deref()), (1, Some("initial")));
        let f = json(&["filter", path.to_str().unwrap(), "--record", "0"]);
        assert!((f["probability"].as_f64().unwrap() - 0.5).abs() <= 1e-12);
        assert!(f["states"][0].get("density").is_some());
    }
}
