//! The four subcommands. Each returns the process exit code on success:
//! 0 for a clean run, 3 when diagnostics or suite assertions fail. Config
//! and usage problems exit 1, computation failures exit 2.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use obspanel::benchmark::{run_benchmark, BenchmarkSuite};
use obspanel::design::gather_features;
use obspanel::panel::{PanelDataset, PanelSchema};
use obspanel::simulation::{presets, SimulationConfig};
use obspanel::{
    aa_test, backward_causality_check, balance_diagnostic, balance_report, estimate_main,
    estimate_spillover, fit_logistic, generate, load_network, load_panel, write_network,
    write_panel, AnalysisOptions, DiagnosticKind, DiagnosticReport, EffectEstimate, Method,
    Network,
};

use crate::config::{EstimandKind, RunConfig};

/// Failures that end a command: configuration/usage problems (exit 1) and
/// computation problems (exit 2).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Computation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Computation(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Computation(m) => m,
        }
    }
}

fn comp(e: impl std::fmt::Display) -> CliError {
    CliError::Computation(e.to_string())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Computation(format!("{}: {e}", path.display()))
}

/// Builds the global rayon pool. `0` (or absence) keeps the default of all
/// available cores; repeat calls in one process are harmless.
pub fn setup_threads(n: Option<usize>) {
    if let Some(n) = n {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

// ---------------------------------------------------------------- simulate

pub fn cmd_simulate(
    config: Option<PathBuf>,
    preset: Option<String>,
    seed: Option<u64>,
    out: PathBuf,
    threads: Option<usize>,
) -> Result<i32, CliError> {
    setup_threads(threads);
    let mut cfg: SimulationConfig = match (config, preset) {
        (Some(path), None) => {
            let raw = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            SimulationConfig::from_json(&raw)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(name)) => {
            presets::load(&name).map_err(|e| CliError::Config(e.to_string()))?
        }
        (None, None) => {
            return Err(CliError::Config("pass either --config or --preset".into()))
        }
        (Some(_), Some(_)) => {
            return Err(CliError::Config("--config and --preset are mutually exclusive".into()))
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }

    ensure_dir(&out)?;
    let study = generate(&cfg).map_err(comp)?;
    let panel_path = out.join("panel.csv");
    let baseline_path = out.join("baseline.csv");
    write_panel(&study.dataset, &panel_path, &baseline_path).map_err(comp)?;
    let mut files = vec!["panel.csv", "baseline.csv"];
    if let Some(net) = &study.network {
        write_network(net, &study.dataset, out.join("edges.csv")).map_err(comp)?;
        files.push("edges.csv");
    }
    let truth_json = serde_json::to_string_pretty(&study.truth).map_err(comp)?;
    write_text(&out.join("truth.json"), &format!("{truth_json}\n"))?;
    files.push("truth.json");
    // Echo the fully resolved configuration so the draw can be reproduced
    // from the output directory alone.
    let cfg_json = serde_json::to_string_pretty(&cfg).map_err(comp)?;
    write_text(&out.join("config.json"), &format!("{cfg_json}\n"))?;
    files.push("config.json");

    let ds = &study.dataset;
    let arms = match ds.arm_scheme().codes() {
        [0, 1] => "binary {0, 1}",
        _ => "three-arm {1, 2, 3}",
    };
    println!("units: {}", ds.n_units());
    println!("periods: {}", ds.n_times());
    println!("arms: {arms}");
    match study.truth.spillover_effect {
        Some(tp) => println!("truth: tau = {}, tau_prime = {tp}", study.truth.treatment_effect),
        None => println!("truth: tau = {}", study.truth.treatment_effect),
    }
    println!("wrote {} to {}", files.join(", "), out.display());
    Ok(0)
}

// ---------------------------------------------------------------- estimate

struct LoadedRun {
    cfg: RunConfig,
    ds: PanelDataset,
    network: Option<Network>,
    opts: AnalysisOptions,
    period_index: usize,
    out: PathBuf,
}

/// Shared front half of `estimate` and `diagnose`: config, data, options.
fn load_run(
    config: &Path,
    out_flag: Option<PathBuf>,
    threads: Option<usize>,
    seed: Option<u64>,
) -> Result<LoadedRun, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    setup_threads(threads.or(cfg.threads));

    let schema = PanelSchema { arm_scheme: cfg.arm.to_scheme()?, ..PanelSchema::default() };
    let ds = load_panel(&cfg.panel, &cfg.baseline, &schema)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let network = match (cfg.estimand, &cfg.edges) {
        (EstimandKind::Main, _) => None,
        (_, Some(path)) => {
            Some(load_network(path, &ds).map_err(|e| CliError::Config(e.to_string()))?)
        }
        // Unreachable after validate(), but keep the error honest.
        (_, None) => return Err(CliError::Config("spillover estimands need edges".into())),
    };

    let period_index = match cfg.period {
        None => ds.n_times() - 1,
        Some(value) => ds
            .times()
            .iter()
            .position(|&t| t == value)
            .ok_or_else(|| {
                CliError::Config(format!(
                    "period {value} not observed; panel has times {:?}",
                    ds.times()
                ))
            })?,
    };
    let subgroup_labels = match &cfg.subgroup_column {
        None => None,
        Some(col) => Some(
            ds.subgroup_labels_from_baseline(col)
                .map_err(|e| CliError::Config(e.to_string()))?,
        ),
    };
    let opts = AnalysisOptions {
        period_index: Some(period_index),
        feature_columns: cfg.feature_columns.clone(),
        subgroup_labels,
        include_time_effects: cfg.include_time_effects,
        logistic: cfg.logistic(),
    };
    let out = out_flag.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedRun { cfg, ds, network, opts, period_index, out })
}

pub fn cmd_estimate(
    config: &Path,
    out_flag: Option<PathBuf>,
    threads: Option<usize>,
    seed: Option<u64>,
) -> Result<i32, CliError> {
    let run = load_run(config, out_flag, threads, seed)?;
    let methods = run.cfg.parsed_estimators()?;
    ensure_dir(&run.out)?;

    let mut rows: Vec<EffectEstimate> = Vec::new();
    let mut errors: Vec<(Method, String)> = Vec::new();
    for &method in &methods {
        let result = match run.cfg.estimand.neighborhood() {
            None => estimate_main(&run.ds, method, &run.opts),
            Some(kind) => estimate_spillover(
                &run.ds,
                run.network.as_ref().expect("network loaded for spillover"),
                kind,
                method,
                &run.opts,
            ),
        };
        match result {
            Ok(mut r) => rows.append(&mut r),
            Err(e) => errors.push((method, e.to_string())),
        }
    }

    let mut csv = String::from(EffectEstimate::CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.csv_row());
        csv.push('\n');
    }
    write_text(&run.out.join("results.csv"), &csv)?;
    write_text(&run.out.join("report.md"), &render_report(&run, &methods, &rows, &errors))?;

    let meta = serde_json::json!({
        "panel": run.cfg.panel.display().to_string(),
        "estimand": run.cfg.estimand.label(),
        "period": run.ds.times()[run.period_index],
        "n_units": run.ds.n_units(),
        "n_times": run.ds.n_times(),
        "estimators": methods.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
        "failed": errors.iter().map(|(m, _)| m.to_string()).collect::<Vec<_>>(),
        "seed": run.cfg.seed,
    });
    write_text(
        &run.out.join("run_meta.json"),
        &format!("{}\n", serde_json::to_string_pretty(&meta).map_err(comp)?),
    )?;

    for row in &rows {
        match &row.subgroup {
            Some(g) => println!(
                "{} [{g}]: {:.4} (se {:.4}, n {})",
                row.method, row.estimate, row.std_error, row.n_used
            ),
            None => println!(
                "{}: {:.4} (se {:.4}, n {})",
                row.method, row.estimate, row.std_error, row.n_used
            ),
        }
    }
    for (method, e) in &errors {
        eprintln!("{method} failed: {e}");
    }
    println!("wrote results.csv, report.md, run_meta.json to {}", run.out.display());

    if rows.is_empty() && !errors.is_empty() {
        return Err(CliError::Computation("every estimator failed".into()));
    }
    Ok(0)
}

fn render_report(
    run: &LoadedRun,
    methods: &[Method],
    rows: &[EffectEstimate],
    errors: &[(Method, String)],
) -> String {
    let mut md = String::from("# Effect estimates\n\n");
    let _ = writeln!(md, "- panel: {}", run.cfg.panel.display());
    let _ = writeln!(md, "- estimand: {}", run.cfg.estimand.label());
    let _ = writeln!(
        md,
        "- units: {}, periods: {} (analysis period {})",
        run.ds.n_units(),
        run.ds.n_times(),
        run.ds.times()[run.period_index]
    );
    let _ = writeln!(
        md,
        "- estimators: {}",
        methods.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(", ")
    );

    // One section per subgroup, overall rows first.
    let mut groups: std::collections::BTreeMap<Option<&str>, Vec<&EffectEstimate>> =
        std::collections::BTreeMap::new();
    for row in rows {
        groups.entry(row.subgroup.as_deref()).or_default().push(row);
    }
    for (group, members) in groups {
        md.push('\n');
        match group {
            None => md.push_str("## Overall\n\n"),
            Some(g) => {
                let _ = writeln!(md, "## Subgroup: {g}\n");
            }
        }
        md.push_str("| Method | Estimand | Estimate | Std. error | N |\n");
        md.push_str("|---|---|---|---|---|\n");
        for row in members {
            let _ = writeln!(
                md,
                "| {} | {} | {:.4} | {:.4} | {} |",
                row.method, row.estimand, row.estimate, row.std_error, row.n_used
            );
        }
    }

    if !errors.is_empty() {
        md.push_str("\n## Errors\n\n");
        for (method, e) in errors {
            let _ = writeln!(md, "- {method}: {e}");
        }
    }
    md
}

// ---------------------------------------------------------------- diagnose

pub fn cmd_diagnose(
    config: &Path,
    out_flag: Option<PathBuf>,
    threads: Option<usize>,
    seed: Option<u64>,
) -> Result<i32, CliError> {
    let run = load_run(config, out_flag, threads, seed)?;
    ensure_dir(&run.out)?;
    let ds = &run.ds;
    let t = run.period_index;
    let feature_columns = run
        .cfg
        .feature_columns
        .clone()
        .unwrap_or_else(|| obspanel::pipeline::own_covariate_columns(ds));
    let k = feature_columns.len();
    let logistic = run.cfg.logistic();

    let mut reports: Vec<DiagnosticReport> = Vec::new();
    for check in &run.cfg.diagnostics.checks {
        match check {
            DiagnosticKind::BackwardCausality => {
                reports.push(
                    backward_causality_check(ds, &feature_columns, &logistic).map_err(comp)?,
                );
            }
            DiagnosticKind::Balance => {
                let features = gather_features(ds, &feature_columns, t).map_err(comp)?;
                let w = ds.treated_at(t);
                let after = if k == 0 {
                    None
                } else {
                    let model =
                        fit_logistic(&features, k, &w, &feature_columns, &logistic)
                            .map_err(comp)?;
                    let e = model.predict(&features).map_err(comp)?;
                    Some(
                        w.iter()
                            .zip(&e)
                            .map(|(&wi, &ei)| if wi == 1 { 1.0 / ei } else { 1.0 / (1.0 - ei) })
                            .collect::<Vec<f64>>(),
                    )
                };
                let report =
                    balance_report(&feature_columns, &features, &w, None, after.as_deref())
                        .map_err(comp)?;
                write_text(&run.out.join("balance.csv"), &report.to_csv())?;
                reports.push(balance_diagnostic(&report));
            }
            DiagnosticKind::AaTest => {
                let column = run
                    .cfg
                    .diagnostics
                    .pre_period_column
                    .as_deref()
                    .expect("validated: A/A needs a column");
                let y_pre: Vec<f64> = if let Some(b) = ds.baseline_index(column) {
                    (0..ds.n_units()).map(|i| ds.baseline(i, b)).collect()
                } else if let Some(c) = ds.covariate_index(column) {
                    (0..ds.n_units()).map(|i| ds.covariate(i, 0, c)).collect()
                } else {
                    return Err(CliError::Config(format!(
                        "pre-period column `{column}` not found in baseline or panel"
                    )));
                };
                let w = ds.treated_at(t);
                let features = gather_features(ds, &feature_columns, t).map_err(comp)?;
                let method: Method = run
                    .cfg
                    .diagnostics
                    .aa_method
                    .parse()
                    .expect("validated: aa_method parses");
                let propensity = match method {
                    Method::Ipw | Method::DoublyRobust => {
                        let model =
                            fit_logistic(&features, k, &w, &feature_columns, &logistic)
                                .map_err(comp)?;
                        Some(model.predict(&features).map_err(comp)?)
                    }
                    _ => None,
                };
                reports.push(
                    aa_test(&y_pre, &w, &features, k, propensity.as_deref(), method)
                        .map_err(comp)?,
                );
            }
        }
    }

    let mut csv = String::from(DiagnosticReport::CSV_HEADER);
    csv.push('\n');
    for r in &reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(&run.out.join("diagnostics.csv"), &csv)?;

    let mut all_pass = true;
    for r in &reports {
        println!(
            "{}: {} (statistic {:.4}, threshold {})",
            r.kind,
            if r.pass { "pass" } else { "FAIL" },
            r.statistic,
            r.threshold
        );
        all_pass &= r.pass;
    }
    println!("wrote diagnostics.csv to {}", run.out.display());
    Ok(if all_pass { 0 } else { 3 })
}

// --------------------------------------------------------------- benchmark

pub fn cmd_benchmark(
    suite_path: Option<PathBuf>,
    reps: Option<usize>,
    seed: Option<u64>,
    out: PathBuf,
    threads: Option<usize>,
) -> Result<i32, CliError> {
    setup_threads(threads);
    let mut suite = match suite_path {
        Some(path) => {
            let raw = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            BenchmarkSuite::from_json(&raw)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => BenchmarkSuite::default_suite().map_err(comp)?,
    };
    if let Some(r) = reps {
        if r == 0 {
            return Err(CliError::Config("--reps must be at least 1".into()));
        }
        suite.replications = r;
    }
    if let Some(s) = seed {
        suite.master_seed = s;
    }

    ensure_dir(&out)?;
    let table = run_benchmark(&suite).map_err(comp)?;
    write_text(&out.join("table1.csv"), &table.to_csv())?;
    let md = table.to_markdown();
    write_text(&out.join("table1.md"), &md)?;
    print!("{md}");
    println!("wrote table1.csv, table1.md to {}", out.display());

    let failures = table.check_assertions(&suite.assertions);
    if failures.is_empty() {
        Ok(0)
    } else {
        for f in &failures {
            eprintln!("suite assertion failed: {f}");
        }
        Ok(3)
    }
}
