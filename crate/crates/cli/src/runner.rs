use std::path::{Path, PathBuf};

use bridgelab_core::bridge::{neglog_equal_endpoint_energy, quadratic_bridge_coefficients, solve_bridge};
use bridgelab_core::flow::{closed_form_flow, default_steps, gradient_flow};
use bridgelab_core::gaussian::{bridge_marginal, gaussian_energy, heat_flow_gaussian, rel_entropy_gaussian, w2_gaussian};
use bridgelab_core::{
    fit_rate, verify_bounds, BoundCase, BridgeSolution, Gaussian1D, GaussianBridge, Potential, PotentialKind, RateModel,
    Trajectory,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Mode};
use crate::error::CliError;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(usize),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:.16e}"),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

/// One CSV artifact.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub file_name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(file_name: String, header: &[&str]) -> Self {
        Table { file_name, header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(&self.file_name);
        let io = |e: std::io::Error| CliError::Io { path: path.display().to_string(), source: e };
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)
            .map_err(|e| io(e.into()))?;
        writer.write_record(&self.header).map_err(|e| io(e.into()))?;
        for row in &self.rows {
            writer.write_record(row.iter().map(Cell::render)).map_err(|e| io(e.into()))?;
        }
        writer.flush().map_err(io)?;
        Ok(path)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub keep_going: bool,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseRecord {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub diagnostics: Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub mode: Mode,
    pub config: ExperimentConfig,
    pub cases: Vec<CaseRecord>,
    /// Mode-specific aggregates: rate fits, bound tallies.
    pub results: Value,
    pub files: Vec<String>,
}

/// Outcome of a run whose artifacts were written.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub summary: RunSummary,
    pub tables: Vec<Table>,
    /// Failed cases plus failed bound reports.
    pub failures: usize,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.failures > 0 {
            2
        } else {
            0
        }
    }
}

struct ModeOutput {
    tables: Vec<Table>,
    cases: Vec<CaseRecord>,
    results: Value,
    failures: usize,
}

/// Validates, solves every case, and writes the CSV tables and JSON summary.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport, CliError> {
    let mut config = config.clone();
    if let Some(dir) = &opts.out_dir {
        config.redirect(dir);
    }
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} threads: {e}", opts.threads)))?;
    let output = pool.install(|| match config.mode {
        Mode::Bridge => run_bridge(&config, opts.keep_going),
        Mode::Flow => run_flow(&config, opts.keep_going),
        Mode::Gaussian => run_gaussian(&config, opts.keep_going),
        Mode::Verify => run_verify(&config, opts.keep_going),
        Mode::Sweep => run_sweep(&config, opts.keep_going),
    })?;

    let dir = &config.outputs.csv_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.display().to_string(), source: e })?;
    let mut files = Vec::with_capacity(output.tables.len());
    for table in &output.tables {
        table.write(dir)?;
        files.push(table.file_name.clone());
    }
    let summary = RunSummary {
        name: config.name.clone(),
        mode: config.mode,
        config: config.clone(),
        cases: output.cases,
        results: output.results,
        files,
    };
    let json_path = config.json_path();
    if let Some(parent) = json_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Io { path: parent.display().to_string(), source: e })?;
    }
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&json_path, text + "\n")
        .map_err(|e| CliError::Io { path: json_path.display().to_string(), source: e })?;
    Ok(RunReport { summary, tables: output.tables, failures: output.failures })
}

type CaseResults<T> = Vec<(f64, Result<T, String>)>;

/// Solves every horizon in parallel; results keep the order of `T_values`.
fn solve_all<T: Send>(
    config: &ExperimentConfig,
    keep_going: bool,
    solve: impl Fn(f64) -> Result<T, String> + Sync,
) -> Result<CaseResults<T>, CliError> {
    let results: CaseResults<T> =
        config.horizons.par_iter().map(|&horizon| (horizon, solve(horizon))).collect();
    if !keep_going {
        if let Some((horizon, Err(e))) = results.iter().find(|(_, r)| r.is_err()) {
            return Err(CliError::Solver(format!("T = {horizon}: {e}")));
        }
    }
    Ok(results)
}

fn failed_case(horizon: f64, error: &str) -> CaseRecord {
    CaseRecord { horizon, ok: false, error: Some(error.to_string()), diagnostics: Value::Null }
}

fn diagnostics(sol: &BridgeSolution) -> Value {
    json!({
        "solver": sol.solver,
        "iterations": sol.iterations,
        "nodes": sol.trajectory.len(),
        "boundary_error": finite_or_null(sol.boundary_error),
        "energy_maxdev": finite_or_null(sol.energy_maxdev),
        "conservation_tol": sol.conservation_tol,
        "newton_residual": finite_or_null(sol.newton_residual),
    })
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn file_stem(config: &ExperimentConfig, suffix: &str) -> String {
    format!("{}_{suffix}.csv", config.name)
}

/// Cubic Hermite interpolation of the state at time `t`.
pub fn state_at(traj: &Trajectory, t: f64) -> Vec<f64> {
    let k = match traj.times.partition_point(|&s| s <= t) {
        0 => 0,
        n if n >= traj.len() => traj.len() - 2,
        n => n - 1,
    };
    let (t0, t1) = (traj.times[k], traj.times[k + 1]);
    let h = t1 - t0;
    let s = ((t - t0) / h).clamp(0.0, 1.0);
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    (0..traj.dim())
        .map(|i| {
            h00 * traj.states[k][i]
                + h10 * h * traj.velocities[k][i]
                + h01 * traj.states[k + 1][i]
                + h11 * h * traj.velocities[k + 1][i]
        })
        .collect()
}

/// `|X_t − S_t(x)|` at `t = min(1, T)`.
pub fn distance_to_flow(p: &Potential, sol: &BridgeSolution) -> Result<f64, String> {
    let traj = &sol.trajectory;
    let t = traj.horizon().min(1.0);
    let flow = match closed_form_flow(p, traj.first(), t) {
        Ok(s) => s,
        Err(_) => gradient_flow(p, traj.first(), t, default_steps(t)).map_err(|e| e.to_string())?.last().to_vec(),
    };
    let bridge = state_at(traj, t);
    Ok(bridge.iter().zip(&flow).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// Closed-form `(E_T, C_T)` where known.
pub fn reference_values(p: &Potential, x: &[f64], y: &[f64], horizon: f64) -> (Option<f64>, Option<f64>) {
    match p.kind() {
        PotentialKind::QuadraticIsotropic => {
            let (alpha, beta) = quadratic_bridge_coefficients(x, y, horizon);
            let dot: f64 = alpha.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let sq: f64 = alpha.iter().chain(&beta).map(|a| a * a).sum();
            (Some(-4.0 * (-horizon).exp() * dot), Some((1.0 - (-2.0 * horizon).exp()) * sq))
        }
        PotentialKind::NegLog if x == y && x.iter().all(|v| *v == x[0]) => {
            (Some(x.len() as f64 * neglog_equal_endpoint_energy(x[0], horizon)), None)
        }
        _ => (None, None),
    }
}

fn run_bridge(config: &ExperimentConfig, keep_going: bool) -> Result<ModeOutput, CliError> {
    let p = config.potential()?;
    let (x, y) = (&config.endpoints.x, &config.endpoints.y);
    let results = solve_all(config, keep_going, |horizon| {
        let sol = solve_bridge(&p, x, y, horizon, &config.solver).map_err(|e| e.to_string())?;
        let distance = distance_to_flow(&p, &sol)?;
        Ok((sol, distance))
    })?;

    let dim = p.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=dim).map(|i| format!("x_{i}")));
    header.extend((1..=dim).map(|i| format!("v_{i}")));
    header.extend(["E".to_string(), "phi_norm".to_string()]);
    let mut summary = Table::new(
        file_stem(config, "summary"),
        &[
            "T",
            "cost",
            "energy",
            "energy_maxdev",
            "distance_t1",
            "cost_exact",
            "energy_exact",
            "solver",
            "iterations",
        ],
    );
    let mut tables = Vec::new();
    let mut cases = Vec::new();
    let mut failures = 0;
    for (horizon, result) in results {
        let (sol, distance) = match result {
            Ok(v) => v,
            Err(e) => {
                failures += 1;
                cases.push(failed_case(horizon, &e));
                continue;
            }
        };
        let traj = &sol.trajectory;
        let mut table = Table { file_name: file_stem(config, &format!("T{horizon}")), header: header.clone(), rows: Vec::new() };
        for k in 0..traj.len() {
            let (state, vel) = (&traj.states[k], &traj.velocities[k]);
            let grad = p.gradient(state).map_err(|e| CliError::Solver(e.to_string()))?;
            let energy = vel.iter().map(|v| v * v).sum::<f64>() - grad.iter().map(|g| g * g).sum::<f64>();
            let defect = grad.iter().zip(vel).map(|(g, v)| (g + v) * (g + v)).sum::<f64>().sqrt();
            let mut row = vec![Cell::Num(traj.times[k])];
            row.extend(state.iter().chain(vel).map(|v| Cell::Num(*v)));
            row.extend([Cell::Num(energy), Cell::Num(defect)]);
            table.rows.push(row);
        }
        tables.push(table);
        let (energy_exact, cost_exact) = reference_values(&p, x, y, horizon);
        summary.rows.push(vec![
            horizon.into(),
            sol.cost.into(),
            sol.energy_mean.into(),
            sol.energy_maxdev.into(),
            distance.into(),
            cost_exact.into(),
            energy_exact.into(),
            Cell::Text(format!("{:?}", sol.solver)),
            Cell::Int(sol.iterations),
        ]);
        let mut diag = diagnostics(&sol);
        diag["cost"] = json!(sol.cost);
        diag["energy"] = json!(sol.energy_mean);
        diag["distance_t1"] = json!(distance);
        cases.push(CaseRecord { horizon, ok: true, error: None, diagnostics: diag });
    }
    tables.insert(0, summary);
    Ok(ModeOutput { tables, cases, results: Value::Null, failures })
}

fn run_flow(config: &ExperimentConfig, keep_going: bool) -> Result<ModeOutput, CliError> {
    let p = config.potential()?;
    let x = &config.endpoints.x;
    let results = solve_all(config, keep_going, |horizon| {
        let traj = gradient_flow(&p, x, horizon, default_steps(horizon)).map_err(|e| e.to_string())?;
        let mut rows = Vec::with_capacity(traj.len());
        for (t, state) in traj.times.iter().zip(&traj.states) {
            let value = p.value(state).map_err(|e| e.to_string())?;
            let grad = p.gradient(state).map_err(|e| e.to_string())?;
            let fisher: f64 = grad.iter().map(|g| g * g).sum();
            let mut row = vec![Cell::Num(*t)];
            row.extend(state.iter().map(|v| Cell::Num(*v)));
            row.extend([Cell::Num(value), Cell::Num(fisher)]);
            rows.push(row);
        }
        Ok(rows)
    })?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=p.dim()).map(|i| format!("x_{i}")));
    header.extend(["F".to_string(), "fisher".to_string()]);
    let mut tables = Vec::new();
    let mut cases = Vec::new();
    let mut failures = 0;
    for (horizon, result) in results {
        match result {
            Ok(rows) => {
                cases.push(CaseRecord { horizon, ok: true, error: None, diagnostics: json!({ "nodes": rows.len() }) });
                tables.push(Table { file_name: file_stem(config, &format!("T{horizon}")), header: header.clone(), rows });
            }
            Err(e) => {
                failures += 1;
                cases.push(failed_case(horizon, &e));
            }
        }
    }
    Ok(ModeOutput { tables, cases, results: Value::Null, failures })
}

fn run_gaussian(config: &ExperimentConfig, keep_going: bool) -> Result<ModeOutput, CliError> {
    let (x0, x1) = (config.endpoints.x[0], config.endpoints.y[0]);
    let unit = |m: f64| rel_entropy_gaussian(&Gaussian1D { mean: m, variance: 1.0 });
    let limit = 2.0 * unit(x0) + 2.0 * unit(x1);
    let results = solve_all(config, keep_going, |horizon| {
        let gb = GaussianBridge::new(x0, x1, horizon).map_err(|e| e.to_string())?;
        let cost = gb.exact_cost();
        let excess = cost - 2.0 * (4.0 * std::f64::consts::PI * horizon).ln();
        let energy = gaussian_energy(&gb, 0.0).map_err(|e| e.to_string())?;
        let t = if horizon > 1.0 { 1.0 } else { 0.5 * horizon };
        let start = Gaussian1D::new(x0, 1.0).map_err(|e| e.to_string())?;
        let heat = heat_flow_gaussian(&start, t).map_err(|e| e.to_string())?;
        let marginal = bridge_marginal(&gb, t).map_err(|e| e.to_string())?;
        let w2 = w2_gaussian(&marginal, &heat);
        Ok(vec![
            Cell::Num(horizon),
            Cell::Num(cost),
            Cell::Num(excess),
            Cell::Num(energy),
            Cell::Num(t),
            Cell::Num(w2),
            Cell::Num(limit),
            Cell::Num(horizon * (excess - limit)),
        ])
    })?;
    let mut table = Table::new(
        file_stem(config, "gaussian"),
        &["T", "cost", "excess", "energy", "t", "w2_to_heat_flow", "limit_target", "first_order"],
    );
    let mut cases = Vec::new();
    let mut failures = 0;
    for (horizon, result) in results {
        match result {
            Ok(row) => {
                table.rows.push(row);
                cases.push(CaseRecord { horizon, ok: true, error: None, diagnostics: Value::Null });
            }
            Err(e) => {
                failures += 1;
                cases.push(failed_case(horizon, &e));
            }
        }
    }
    Ok(ModeOutput { tables: vec![table], cases, results: Value::Null, failures })
}

fn run_verify(config: &ExperimentConfig, keep_going: bool) -> Result<ModeOutput, CliError> {
    let p = config.potential()?;
    let (x, y) = (&config.endpoints.x, &config.endpoints.y);
    let results = solve_all(config, keep_going, |horizon| {
        let sol = solve_bridge(&p, x, y, horizon, &config.solver).map_err(|e| e.to_string())?;
        let case = BoundCase {
            times: vec![0.25 * horizon, 0.5 * horizon, 0.75 * horizon],
            thetas: config.theta_values.clone(),
            opts: config.solver.clone(),
            ..BoundCase::new(&p, &sol)
        };
        let reports = verify_bounds(&case).map_err(|e| e.to_string())?;
        Ok((diagnostics(&sol), reports))
    })?;
    let mut table = Table::new(
        file_stem(config, "bounds"),
        &["T", "orientation", "bound", "part", "t", "theta", "lhs", "rhs", "margin", "pass"],
    );
    let mut cases = Vec::new();
    let mut failures = 0;
    let (mut total, mut failed_reports) = (0usize, Vec::new());
    for (horizon, result) in results {
        let (diag, reports) = match result {
            Ok(v) => v,
            Err(e) => {
                failures += 1;
                cases.push(failed_case(horizon, &e));
                continue;
            }
        };
        for r in &reports {
            total += 1;
            if !r.pass {
                failed_reports.push(json!({ "T": horizon, "bound": r.bound_id, "part": r.part, "margin": r.margin }));
            }
            table.rows.push(vec![
                horizon.into(),
                Cell::Text(format!("{:?}", r.context.orientation).to_lowercase()),
                Cell::Text(r.bound_id.to_string()),
                r.part.clone().map_or(Cell::Empty, Cell::Text),
                r.context.t.into(),
                r.context.theta.into(),
                r.lhs.into(),
                r.rhs.into(),
                r.margin.into(),
                Cell::Text(r.pass.to_string()),
            ]);
        }
        cases.push(CaseRecord { horizon, ok: true, error: None, diagnostics: diag });
    }
    failures += failed_reports.len();
    let results = json!({ "reports": total, "failed": failed_reports });
    Ok(ModeOutput { tables: vec![table], cases, results, failures })
}

fn run_sweep(config: &ExperimentConfig, keep_going: bool) -> Result<ModeOutput, CliError> {
    let p = config.potential()?;
    let (x, y) = (&config.endpoints.x, &config.endpoints.y);
    let results = solve_all(config, keep_going, |horizon| {
        let sol = solve_bridge(&p, x, y, horizon, &config.solver).map_err(|e| e.to_string())?;
        let distance = distance_to_flow(&p, &sol)?;
        Ok((diagnostics(&sol), sol.cost, sol.energy_mean, distance))
    })?;
    let mut data = Table::new(file_stem(config, "sweep"), &["T", "cost", "energy", "abs_energy_times_T", "distance_t1"]);
    let quantities = ["cost", "abs_energy", "abs_energy_times_T", "distance_t1"];
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); quantities.len()];
    let mut cases = Vec::new();
    let mut failures = 0;
    for (horizon, result) in results {
        let (diag, cost, energy, distance) = match result {
            Ok(v) => v,
            Err(e) => {
                failures += 1;
                cases.push(failed_case(horizon, &e));
                continue;
            }
        };
        data.rows.push(vec![horizon.into(), cost.into(), energy.into(), (energy.abs() * horizon).into(), distance.into()]);
        for (s, v) in series.iter_mut().zip([cost, energy.abs(), energy.abs() * horizon, distance]) {
            s.push((horizon, v));
        }
        cases.push(CaseRecord { horizon, ok: true, error: None, diagnostics: diag });
    }
    let mut rates = Table::new(
        file_stem(config, "rates"),
        &["quantity", "model", "exponent", "prefactor", "residual", "points"],
    );
    let mut fit_errors = Vec::new();
    for (name, s) in quantities.iter().zip(&series) {
        for model in [RateModel::PowerLaw, RateModel::Exponential] {
            match fit_rate(s, model) {
                Ok(fit) => rates.rows.push(vec![
                    Cell::Text(name.to_string()),
                    Cell::Text(format!("{model:?}")),
                    fit.exponent.into(),
                    fit.prefactor.into(),
                    fit.residual.into(),
                    Cell::Int(s.len()),
                ]),
                Err(e) => fit_errors.push(json!({ "quantity": name, "model": model, "error": e.to_string() })),
            }
        }
    }
    let results = json!({ "fit_errors": fit_errors });
    Ok(ModeOutput { tables: vec![data, rates], cases, results, failures })
}
