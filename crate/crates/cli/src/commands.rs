use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use qtime_core::continuation::{
    load_store, merge_envelopes, run_sweep, window_times, Envelope, SweepOptions, SweepPlan,
    ENVELOPE_FILE,
};
use qtime_core::diagnostics::{
    costate_commutator_residual, graded_residual, lambda_constancy, one_qubit_constancy,
    time_reversal_residual, LAMBDA_TOLERANCE, LEAKAGE_TOLERANCE, ONE_QUBIT_TOLERANCE,
    TIME_REVERSAL_TOLERANCE,
};
use qtime_core::fitting::{estimate_time_complexity, fit_exp2, fit_linear, fit_power, FitResult};
use qtime_core::krotov::{consistent_state, solve as run_solve, Initial};
use qtime_core::pauli::{enumerate_basis, BASIS_ORDERING_VERSION};
use qtime_core::propagation::{TimeGrid, T2_MAX};
use qtime_core::records::{
    config_hash, read_field_csv, read_json, write_atomic, write_field_csv, write_json, ReportRow,
    SolveInputs, SolveRecord, Timing,
};
use qtime_core::targets::{
    named_target, qft_gate_sequence, qft_time_upper_bound, relative_optimal_time,
};
use qtime_core::Error;
use serde::Serialize;
use serde_json::json;

use crate::config::{CliError, CliResult, RunConfig};
use crate::FitModelArg;

pub const EXIT_OK: u8 = 0;
pub const EXIT_NOT_CONVERGED: u8 = 2;

/// Subdirectory of a sweep store holding the window refinement.
pub const REFINE_DIR: &str = "refine";

fn emit(value: &serde_json::Value, out: Option<&Path>) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    if let Some(path) = out {
        write_json(path, value)?;
    }
    Ok(())
}

pub fn basis(n: usize, as_json: bool) -> CliResult<u8> {
    let table = enumerate_basis(n)?;
    let labels = table.labels();
    if as_json {
        let rows: Vec<_> = (0..table.len())
            .map(|a| {
                json!({
                    "index": a,
                    "label": labels[a],
                    "weight": table.weight()[a],
                    "parity": table.parity()[a],
                })
            })
            .collect();
        let doc = json!({
            "n": n,
            "count": table.len(),
            "basis_ordering": BASIS_ORDERING_VERSION,
            "generators": rows,
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        println!(
            "# basis_ordering={BASIS_ORDERING_VERSION} n={n} count={}",
            table.len()
        );
        println!("index,label,weight,parity");
        for a in 0..table.len() {
            let parity = serde_json::to_value(table.parity()[a])?;
            println!(
                "{a},{},{},{}",
                labels[a],
                table.weight()[a],
                parity.as_str().unwrap_or_default()
            );
        }
    }
    Ok(EXIT_OK)
}

pub fn target(
    name: &str,
    n: usize,
    dump_matrix: Option<&Path>,
    dump_sequence: Option<&Path>,
) -> CliResult<u8> {
    let t = named_target(name, n)?;
    let exact = if n <= 2 {
        Some(relative_optimal_time(&t.matrix)?)
    } else {
        None
    };
    let upper = if name == "qft" {
        Some(qft_time_upper_bound(n)?)
    } else {
        None
    };
    let doc = json!({
        "target": t.label,
        "n": n,
        "dim": t.matrix.nrows(),
        "t2max": T2_MAX,
        "basis_ordering": BASIS_ORDERING_VERSION,
        "optimal_time_rel": exact,
        "upper_bound_rel": upper,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    if let Some(path) = dump_matrix {
        let mut text = String::from("row,col,re,im\n");
        for r in 0..t.matrix.nrows() {
            for c in 0..t.matrix.ncols() {
                let z = t.matrix[(r, c)];
                let _ = writeln!(text, "{r},{c},{:?},{:?}", z.re, z.im);
            }
        }
        write_atomic(path, text.as_bytes())?;
    }
    if let Some(path) = dump_sequence {
        if name != "qft" {
            return Err(CliError::Usage("gate sequences exist only for qft".into()));
        }
        write_json(path, &qft_gate_sequence(n)?)?;
    }
    Ok(EXIT_OK)
}

pub fn solve(cfg: &RunConfig, out: &Path, stem: &str) -> CliResult<u8> {
    let started = Instant::now();
    let target = named_target(&cfg.target, cfg.n)?;
    let basis = enumerate_basis(cfg.n)?;
    let slices = cfg.slice_count();
    let grid = TimeGrid::new(cfg.t_rel * T2_MAX, slices)?;
    let inputs = SolveInputs {
        target: cfg.target.clone(),
        n: cfg.n,
        t_rel: cfg.t_rel,
        slices,
        seed: cfg.seed,
        omega: cfg.omega,
        criteria: cfg.criteria.clone(),
    };
    let hash = config_hash(&inputs)?;
    info!(
        "solve {} n={} T={} hash={hash}",
        cfg.target, cfg.n, cfg.t_rel
    );

    let initial = if cfg.omega == 1.0 {
        Initial::Seed(cfg.seed)
    } else {
        Initial::Field(qtime_core::krotov::seed_random_field(
            grid, &basis, cfg.seed, cfg.omega,
        )?)
    };
    let outcome = run_solve(&target.matrix, grid, &basis, initial, &cfg.criteria)?;

    fs::create_dir_all(out)?;
    let field_file = format!("{stem}_field.csv");
    write_field_csv(&out.join(&field_file), &outcome.state.field, &basis, &hash)?;
    let converged = outcome.status.is_terminal_success();
    let record = SolveRecord {
        config_hash: hash,
        basis_ordering: BASIS_ORDERING_VERSION.to_string(),
        t2max: T2_MAX,
        inputs,
        status: outcome.status,
        converged,
        initial_fidelity: outcome.initial_fidelity,
        fidelity: outcome.state.fidelity,
        lambda_record: outcome.state.lambda_record.clone(),
        reports: outcome.reports.iter().map(ReportRow::from).collect(),
        field_file,
        timing: Timing {
            total_s: started.elapsed().as_secs_f64(),
            per_cycle_s: outcome.reports.iter().map(|r| r.wall_clock_s).collect(),
        },
    };
    let record_path = out.join(format!("{stem}.json"));
    write_json(&record_path, &record)?;
    let summary = json!({
        "config_hash": record.config_hash,
        "basis_ordering": record.basis_ordering,
        "status": record.status,
        "converged": converged,
        "fidelity": record.fidelity,
        "cycles": record.reports.len(),
        "record": record_path,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(if converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

pub fn sweep(
    plan_path: &Path,
    out: &Path,
    resume: bool,
    jobs: Option<usize>,
    refine: Option<usize>,
    window: (f64, f64),
) -> CliResult<u8> {
    let plan: SweepPlan = read_json(plan_path)?;
    plan.validate()?;
    let options = SweepOptions {
        store: Some(out.to_path_buf()),
        resume,
        jobs,
    };
    let outcome = run_sweep(&plan, &options)?;
    let mut doc = json!({
        "config_hash": plan.hash()?,
        "basis_ordering": BASIS_ORDERING_VERSION,
        "branches": outcome.branches.len(),
        "failures": outcome.failures.len(),
        "envelope": out.join(ENVELOPE_FILE),
        "points": outcome.envelope.points.len(),
    });
    if let Some(k) = refine {
        let times = window_times(&outcome.envelope, window, k.max(2))?;
        let mut fine = plan.clone();
        fine.t_values = times;
        fine.slices = Some(plan.slice_count());
        let dir = out.join(REFINE_DIR);
        let fine_options = SweepOptions {
            store: Some(dir.clone()),
            resume,
            jobs,
        };
        let refined = run_sweep(&fine, &fine_options)?;
        doc["refine"] = json!({
            "config_hash": fine.hash()?,
            "t_values": fine.t_values,
            "envelope": dir.join(ENVELOPE_FILE),
            "failures": refined.failures.len(),
        });
    }
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(EXIT_OK)
}

fn store_envelopes(dir: &Path) -> CliResult<(Vec<Envelope>, String)> {
    let (plan, _, env) = load_store(dir)?;
    let mut list = vec![env];
    let refine = dir.join(REFINE_DIR);
    if refine.is_dir() {
        let (_, _, fine) = load_store(&refine)?;
        list.push(fine);
    }
    Ok((list, plan.hash()?))
}

pub fn estimate(
    envelope_paths: &[PathBuf],
    store: Option<&Path>,
    window: (f64, f64),
    out: Option<&Path>,
) -> CliResult<u8> {
    let mut envelopes = Vec::new();
    let mut hashes = Vec::new();
    if let Some(dir) = store {
        let (list, hash) = store_envelopes(dir)?;
        envelopes.extend(list);
        hashes.push(hash);
    }
    for path in envelope_paths {
        let text = fs::read_to_string(path)?;
        envelopes.push(Envelope::from_csv(&text)?);
        if let Some(hash) = envelope_hash(&text) {
            hashes.push(hash);
        }
    }
    if envelopes.is_empty() {
        return Err(CliError::Usage("give --envelope files or --store".into()));
    }
    let merged = merge_envelopes(&envelopes)?;
    for p in &merged.points {
        log::debug!("envelope {:?} {:?} {:?}", p.t_rel, p.fidelity, p.status);
    }
    let fit = estimate_time_complexity(&merged, window)?;
    let doc = json!({
        "estimate_t_rel": fit.estimate(),
        "fit": fit,
        "window": [window.0, window.1],
        "config_hash": config_hash(&hashes)?,
        "sources": hashes,
        "basis_ordering": BASIS_ORDERING_VERSION,
    });
    emit(&doc, out)?;
    Ok(EXIT_OK)
}

fn envelope_hash(text: &str) -> Option<String> {
    let first = text.lines().next()?.strip_prefix("# ")?;
    let meta: serde_json::Value = serde_json::from_str(first).ok()?;
    meta.get("config_hash")?.as_str().map(str::to_string)
}

/// Reads `x,y` pairs; blank lines, `#` comments and a non-numeric header row
/// are skipped.
fn read_points(path: &Path) -> CliResult<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(Error::Parse(format!("{}:{}: expected x,y", path.display(), i + 1)).into());
        }
        match (cells[0].parse::<f64>(), cells[1].parse::<f64>()) {
            (Ok(x), Ok(y)) => points.push((x, y)),
            _ if points.is_empty() && i == first_data_line(&text) => continue,
            _ => {
                return Err(
                    Error::Parse(format!("{}:{}: not a number", path.display(), i + 1)).into(),
                )
            }
        }
    }
    Ok(points)
}

fn first_data_line(text: &str) -> usize {
    text.lines()
        .position(|l| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        })
        .unwrap_or(0)
}

pub fn fit(
    model: FitModelArg,
    input: &Path,
    window: Option<(f64, f64)>,
    out: Option<&Path>,
) -> CliResult<u8> {
    let points = read_points(input)?;
    let result: FitResult = match model {
        FitModelArg::Power => fit_power(&points, window)?,
        FitModelArg::Linear | FitModelArg::Exp2 if window.is_some() => {
            return Err(CliError::Usage(
                "--window applies to the power model only".into(),
            ))
        }
        FitModelArg::Linear => fit_linear(&points)?,
        FitModelArg::Exp2 => fit_exp2(&points)?,
    };
    emit(&serde_json::to_value(&result)?, out)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct CheckResult {
    check: String,
    value: Option<f64>,
    tolerance: f64,
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<serde_json::Value>,
}

impl CheckResult {
    fn value(check: &str, value: f64, tolerance: f64, detail: Option<serde_json::Value>) -> Self {
        Self {
            check: check.into(),
            value: Some(value),
            tolerance,
            passed: value < tolerance,
            error: None,
            detail,
        }
    }

    fn failed(check: &str, tolerance: f64, e: Error) -> Self {
        Self {
            check: check.into(),
            value: None,
            tolerance,
            passed: false,
            error: Some(e.to_string()),
            detail: None,
        }
    }
}

/// Tolerance on the costate commutator residual, relative to the largest
/// entry of `lambda H`.
const COSTATE_TOLERANCE: f64 = 1e-2;

pub fn verify(run: &Path, checks: &str, out: Option<&Path>) -> CliResult<u8> {
    let record: SolveRecord = read_json(run)?;
    let dir = run.parent().unwrap_or(Path::new("."));
    let basis = enumerate_basis(record.inputs.n)?;
    let (_, field) = read_field_csv(&dir.join(&record.field_file), &basis)?;
    let target = named_target(&record.inputs.target, record.inputs.n)?;
    let state = consistent_state(field, &basis, &target.matrix)?;
    let labels = basis.labels();

    let mut results = Vec::new();
    let mut csv: BTreeMap<&str, String> = BTreeMap::new();
    for check in checks.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let r = match check {
            "lambda" => match lambda_constancy(&state.lambda_record) {
                Ok(v) => CheckResult::value(check, v, LAMBDA_TOLERANCE, None),
                Err(e) => CheckResult::failed(check, LAMBDA_TOLERANCE, e),
            },
            "onequbit" => match one_qubit_constancy(&state.field, &basis) {
                Ok(rep) => {
                    let mut text = String::from("label,range\n");
                    for (l, v) in &rep.ranges {
                        let _ = writeln!(text, "{l},{v:?}");
                    }
                    csv.insert("onequbit", text);
                    let detail = serde_json::to_value(&rep)?;
                    CheckResult::value(check, rep.relative, ONE_QUBIT_TOLERANCE, Some(detail))
                }
                Err(e) => CheckResult::failed(check, ONE_QUBIT_TOLERANCE, e),
            },
            "timereversal" => {
                match time_reversal_residual(&state.field, &basis, TIME_REVERSAL_TOLERANCE) {
                    Ok(rep) => {
                        let mut text = String::from("slice");
                        for l in &labels {
                            text.push(',');
                            text.push_str(l);
                        }
                        text.push('\n');
                        for m in 0..state.field.slices() {
                            text.push_str(&m.to_string());
                            for series in &rep.residuals {
                                let _ = write!(text, ",{:?}", series[m]);
                            }
                            text.push('\n');
                        }
                        csv.insert("timereversal", text);
                        let detail = json!({ "class_max": rep.class_max });
                        CheckResult::value(check, rep.aggregate, rep.tolerance, Some(detail))
                    }
                    Err(e) => CheckResult::failed(check, TIME_REVERSAL_TOLERANCE, e),
                }
            }
            "costate" => match costate_commutator_residual(&state, &basis) {
                Ok(v) => {
                    let lambda = state.lambda_record.iter().cloned().fold(0.0, f64::max);
                    let scale = lambda * state.field.radius();
                    let rel = if scale > 0.0 {
                        v / scale
                    } else {
                        f64::INFINITY
                    };
                    CheckResult::value(
                        check,
                        rel,
                        COSTATE_TOLERANCE,
                        Some(json!({ "absolute": v, "scale": scale })),
                    )
                }
                Err(e) => CheckResult::failed(check, COSTATE_TOLERANCE, e),
            },
            "graded" => match graded_residual(&state, &basis, LEAKAGE_TOLERANCE) {
                Ok(rep) => {
                    let detail = serde_json::to_value(&rep)?;
                    CheckResult::value(check, rep.leakage, LEAKAGE_TOLERANCE, Some(detail))
                }
                Err(e) => CheckResult::failed(check, LEAKAGE_TOLERANCE, e),
            },
            other => return Err(CliError::Usage(format!("unknown check {other:?}"))),
        };
        results.push(r);
    }
    let doc = json!({
        "config_hash": record.config_hash,
        "basis_ordering": BASIS_ORDERING_VERSION,
        "status": record.status,
        "fidelity": state.fidelity,
        "checks": results,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("verify.json"), &doc)?;
        for (name, text) in csv {
            let header = format!(
                "# {}\n",
                json!({ "config_hash": record.config_hash, "basis_ordering": BASIS_ORDERING_VERSION })
            );
            write_atomic(
                &dir.join(format!("{name}.csv")),
                (header + &text).as_bytes(),
            )?;
        }
    }
    Ok(EXIT_OK)
}
