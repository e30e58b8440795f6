//! Monte Carlo comparison of estimators across simulated scenarios,
//! rendered as CSV and markdown tables with optional bias-ordering
//! assertions.

use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::network::NeighborhoodKind;
use crate::pipeline::{estimate_main, estimate_spillover, AnalysisOptions};
use crate::simulation::{derive_seed, generate, presets, SimulationConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSuite {
    pub replications: usize,
    pub master_seed: u64,
    pub scenarios: Vec<ScenarioSpec>,
    #[serde(default)]
    pub assertions: Vec<SuiteAssertion>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    /// Name of a shipped preset; exclusive with `config`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SimulationConfig>,
    /// Table columns to fill for this scenario.
    pub estimators: Vec<Method>,
}

impl ScenarioSpec {
    pub fn resolve(&self) -> Result<SimulationConfig> {
        match (&self.preset, &self.config) {
            (Some(name), None) => presets::load(name),
            (None, Some(cfg)) => {
                cfg.validate()?;
                Ok(cfg.clone())
            }
            _ => Err(Error::invalid_config(
                "scenarios",
                format!("scenario `{}` needs exactly one of `preset` or `config`", self.name),
            )),
        }
    }
}

/// Declarative checks evaluated against the finished table; any failure
/// is reported by name so a benchmark run can gate on them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum SuiteAssertion {
    /// |bias(estimator)| < |bias(than)| within one scenario.
    AbsBiasLt { scenario: String, estimator: Method, than: Method },
    /// |bias(estimator)| < bound.
    AbsBiasBelow { scenario: String, estimator: Method, bound: f64 },
    /// The estimator's |bias| is strictly the smallest in its scenario.
    SmallestAbsBias { scenario: String, estimator: Method },
}

impl BenchmarkSuite {
    pub fn from_json(raw: &str) -> Result<Self> {
        let suite: BenchmarkSuite = serde_json::from_str(raw)?;
        suite.validate()?;
        Ok(suite)
    }

    /// The six-scenario suite shipped with the crate.
    pub fn default_suite() -> Result<Self> {
        Self::from_json(presets::DEFAULT_SUITE_JSON)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::invalid_config("replications", "must be at least 1"));
        }
        if self.scenarios.is_empty() {
            return Err(Error::invalid_config("scenarios", "need at least one scenario"));
        }
        let mut names = std::collections::BTreeSet::new();
        for sc in &self.scenarios {
            if sc.name.is_empty() {
                return Err(Error::invalid_config("scenarios", "scenario names cannot be empty"));
            }
            if !names.insert(sc.name.as_str()) {
                return Err(Error::invalid_config(
                    "scenarios",
                    format!("duplicate scenario name `{}`", sc.name),
                ));
            }
            if sc.estimators.is_empty() {
                return Err(Error::invalid_config(
                    "estimators",
                    format!("scenario `{}` lists no estimators", sc.name),
                ));
            }
            let mut seen = std::collections::BTreeSet::new();
            for m in &sc.estimators {
                if !seen.insert(m.as_str()) {
                    return Err(Error::invalid_config(
                        "estimators",
                        format!("scenario `{}` repeats {m}", sc.name),
                    ));
                }
            }
            match (&sc.preset, &sc.config) {
                (Some(_), None) | (None, Some(_)) => {}
                _ => {
                    return Err(Error::invalid_config(
                        "scenarios",
                        format!("scenario `{}` needs exactly one of `preset` or `config`", sc.name),
                    ))
                }
            }
        }
        for a in &self.assertions {
            let (scenario, estimators): (&str, Vec<Method>) = match a {
                SuiteAssertion::AbsBiasLt { scenario, estimator, than } => {
                    (scenario, vec![*estimator, *than])
                }
                SuiteAssertion::AbsBiasBelow { scenario, estimator, .. } => {
                    (scenario, vec![*estimator])
                }
                SuiteAssertion::SmallestAbsBias { scenario, estimator } => {
                    (scenario, vec![*estimator])
                }
            };
            let sc = self
                .scenarios
                .iter()
                .find(|s| s.name == scenario)
                .ok_or_else(|| {
                    Error::invalid_config(
                        "assertions",
                        format!("unknown scenario `{scenario}`"),
                    )
                })?;
            for m in estimators {
                if !sc.estimators.contains(&m) {
                    return Err(Error::invalid_config(
                        "assertions",
                        format!("scenario `{scenario}` does not run {m}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Ok { mean_estimate: f64, mc_sd: f64, bias: f64, abs_bias_rank: usize },
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct BenchmarkCell {
    pub method: Method,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone)]
pub struct BenchmarkRow {
    pub scenario: String,
    pub true_effect: f64,
    pub is_spillover: bool,
    /// Continuous exposure rows fill the doubly robust column with a
    /// covariate-adjusted regression (footnoted in markdown).
    pub continuous_exposure: bool,
    pub cells: Vec<BenchmarkCell>,
}

impl BenchmarkRow {
    pub fn cell(&self, method: Method) -> Option<&BenchmarkCell> {
        self.cells.iter().find(|c| c.method == method)
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkTable {
    pub replications: usize,
    pub rows: Vec<BenchmarkRow>,
}

/// Column order of the rendered tables.
const TABLE_COLUMNS: [Method; 5] = [
    Method::Correlation,
    Method::Ipw,
    Method::DoublyRobust,
    Method::FixedEffects,
    Method::WeightedFixedEffects,
];

impl BenchmarkTable {
    /// One line per (scenario, estimator). Failed cells carry `ERR` in
    /// the mean column and empty statistics.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("scenario,estimator,true_effect,mean_estimate,mc_sd,bias,abs_bias_rank\n");
        for row in &self.rows {
            for cell in &row.cells {
                match &cell.outcome {
                    CellOutcome::Ok { mean_estimate, mc_sd, bias, abs_bias_rank } => {
                        out.push_str(&format!(
                            "{},{},{},{},{},{},{}\n",
                            row.scenario,
                            cell.method,
                            row.true_effect,
                            mean_estimate,
                            mc_sd,
                            bias,
                            abs_bias_rank
                        ));
                    }
                    CellOutcome::Failed(_) => {
                        out.push_str(&format!(
                            "{},{},{},ERR,,,\n",
                            row.scenario, cell.method, row.true_effect
                        ));
                    }
                }
            }
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("Mean estimates over {} replications.\n\n", self.replications));
        out.push_str("| Scenario | True Effect | Correlation | IPW | Doubly Robust | FE | Weighted FE |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        let mut footnote = false;
        for row in &self.rows {
            out.push_str(&format!("| {} | {} |", row.scenario, trim_float(row.true_effect)));
            for method in TABLE_COLUMNS {
                let text = match row.cell(method) {
                    None => "-".to_string(),
                    Some(cell) => match &cell.outcome {
                        CellOutcome::Ok { mean_estimate, .. } => {
                            let mut s = format!("{mean_estimate:.2}");
                            if method == Method::DoublyRobust && row.continuous_exposure {
                                s.push_str("\\*");
                                footnote = true;
                            }
                            s
                        }
                        CellOutcome::Failed(_) => "ERR".to_string(),
                    },
                };
                out.push_str(&format!(" {text} |"));
            }
            out.push('\n');
        }
        if footnote {
            out.push_str(
                "\n\\* Continuous exposure: covariate-adjusted regression stands in for the \
                 doubly robust estimator, which needs a binary exposure.\n",
            );
        }
        out
    }

    /// Returns one message per failed assertion; empty means all hold.
    pub fn check_assertions(&self, assertions: &[SuiteAssertion]) -> Vec<String> {
        let mut failures = Vec::new();
        let bias_of = |scenario: &str, method: Method| -> std::result::Result<f64, String> {
            let row = self
                .rows
                .iter()
                .find(|r| r.scenario == scenario)
                .ok_or_else(|| format!("no scenario `{scenario}` in the table"))?;
            match row.cell(method) {
                None => Err(format!("{scenario}: {method} was not run")),
                Some(cell) => match &cell.outcome {
                    CellOutcome::Ok { bias, .. } => Ok(*bias),
                    CellOutcome::Failed(e) => Err(format!("{scenario}: {method} failed: {e}")),
                },
            }
        };
        for a in assertions {
            let failure = match a {
                SuiteAssertion::AbsBiasLt { scenario, estimator, than } => {
                    match (bias_of(scenario, *estimator), bias_of(scenario, *than)) {
                        (Ok(b1), Ok(b2)) if b1.abs() < b2.abs() => None,
                        (Ok(b1), Ok(b2)) => Some(format!(
                            "{scenario}: |bias({estimator})| = {:.4} is not below |bias({than})| = {:.4}",
                            b1.abs(),
                            b2.abs()
                        )),
                        (Err(e), _) | (_, Err(e)) => Some(e),
                    }
                }
                SuiteAssertion::AbsBiasBelow { scenario, estimator, bound } => {
                    match bias_of(scenario, *estimator) {
                        Ok(b) if b.abs() < *bound => None,
                        Ok(b) => Some(format!(
                            "{scenario}: |bias({estimator})| = {:.4} exceeds bound {bound}",
                            b.abs()
                        )),
                        Err(e) => Some(e),
                    }
                }
                SuiteAssertion::SmallestAbsBias { scenario, estimator } => {
                    match bias_of(scenario, *estimator) {
                        Err(e) => Some(e),
                        Ok(b) => {
                            let row = self.rows.iter().find(|r| r.scenario == *scenario).unwrap();
                            let beaten = row.cells.iter().find(|c| {
                                c.method != *estimator
                                    && matches!(&c.outcome, CellOutcome::Ok { bias, .. } if bias.abs() <= b.abs())
                            });
                            beaten.map(|c| {
                                format!(
                                    "{scenario}: {} has |bias| at most that of {estimator}",
                                    c.method
                                )
                            })
                        }
                    }
                }
            };
            if let Some(msg) = failure {
                failures.push(msg);
            }
        }
        failures
    }
}

fn trim_float(v: f64) -> String {
    format!("{v}")
}

fn scenario_truth(cfg: &SimulationConfig) -> f64 {
    let t = cfg.n_times;
    match &cfg.spillover {
        Some(sp) => sp.spillover_effect.at(t - 1, t),
        None => cfg.treatment_effect.at(t - 1, t),
    }
}

/// Runs every scenario for the configured number of replications, in
/// parallel, and aggregates per-estimator results. Estimation failures
/// mark their cell and never abort the table.
pub fn run_benchmark(suite: &BenchmarkSuite) -> Result<BenchmarkTable> {
    suite.validate()?;
    let mut rows = Vec::with_capacity(suite.scenarios.len());
    for (s_idx, sc) in suite.scenarios.iter().enumerate() {
        let cfg = sc.resolve()?;
        let kind = cfg.spillover.as_ref().map(|sp| sp.exposure_map.neighborhood_kind());
        let true_effect = scenario_truth(&cfg);

        let per_rep: Vec<Vec<std::result::Result<f64, String>>> = (0..suite.replications)
            .into_par_iter()
            .map(|r| {
                let mut rep_cfg = cfg.clone();
                rep_cfg.seed = derive_seed(suite.master_seed, s_idx as u64, r as u64);
                match generate(&rep_cfg) {
                    Err(e) => sc.estimators.iter().map(|_| Err(e.to_string())).collect(),
                    Ok(study) => sc
                        .estimators
                        .iter()
                        .map(|&m| estimate_cell(&study.dataset, study.network.as_ref(), kind, m))
                        .collect(),
                }
            })
            .collect();

        let mut cells = Vec::with_capacity(sc.estimators.len());
        for (m_idx, &method) in sc.estimators.iter().enumerate() {
            let mut estimates = Vec::with_capacity(suite.replications);
            let mut failure: Option<String> = None;
            for rep in &per_rep {
                match &rep[m_idx] {
                    Ok(v) => estimates.push(*v),
                    Err(e) => {
                        failure.get_or_insert_with(|| e.clone());
                    }
                }
            }
            let outcome = match failure {
                Some(e) => CellOutcome::Failed(e),
                None => {
                    let n = estimates.len() as f64;
                    let mean = estimates.iter().sum::<f64>() / n;
                    let mc_sd = if estimates.len() > 1 {
                        (estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0))
                            .sqrt()
                    } else {
                        0.0
                    };
                    CellOutcome::Ok {
                        mean_estimate: mean,
                        mc_sd,
                        bias: mean - true_effect,
                        abs_bias_rank: 0,
                    }
                }
            };
            cells.push(BenchmarkCell { method, outcome });
        }
        assign_ranks(&mut cells);
        rows.push(BenchmarkRow {
            scenario: sc.name.clone(),
            true_effect,
            is_spillover: kind.is_some(),
            continuous_exposure: kind == Some(NeighborhoodKind::Public),
            cells,
        });
    }
    Ok(BenchmarkTable { replications: suite.replications, rows })
}

/// 1 = smallest |bias| among the row's successful cells; ties keep the
/// column order.
fn assign_ranks(cells: &mut [BenchmarkCell]) {
    let mut order: Vec<(usize, f64)> = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match &c.outcome {
            CellOutcome::Ok { bias, .. } => Some((i, bias.abs())),
            CellOutcome::Failed(_) => None,
        })
        .collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1));
    for (rank, (i, _)) in order.into_iter().enumerate() {
        if let CellOutcome::Ok { abs_bias_rank, .. } = &mut cells[i].outcome {
            *abs_bias_rank = rank + 1;
        }
    }
}

/// One estimator on one simulated replication. The column label decides
/// the estimand-appropriate computation: on spillover scenarios the FE
/// column runs the network spillover estimator, and the doubly robust
/// column under a continuous exposure falls back to covariate-adjusted
/// regression.
fn estimate_cell(
    ds: &crate::panel::PanelDataset,
    network: Option<&crate::network::Network>,
    kind: Option<NeighborhoodKind>,
    method: Method,
) -> std::result::Result<f64, String> {
    let opts = AnalysisOptions::default();
    let result = match (network, kind) {
        (Some(net), Some(k)) => {
            let effective = match method {
                Method::DoublyRobust if k == NeighborhoodKind::Public => Method::Regression,
                other => other,
            };
            estimate_spillover(ds, net, k, effective, &opts)
        }
        _ => estimate_main(ds, method, &opts),
    };
    result.map(|v| v[0].estimate).map_err(|e| e.to_string())
}
