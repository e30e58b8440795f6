//! Run configuration for `estimate` and `diagnose`. One JSON file fully
//! describes an analysis so a run can be re-executed (and diffed) from the
//! config alone. Command-line flags override the corresponding fields.

use std::path::{Path, PathBuf};

use obspanel::panel::ArmScheme;
use obspanel::{DiagnosticKind, LogisticConfig, Method};
use serde::Deserialize;

use crate::commands::CliError;

/// Which effect the run targets and, for spillovers, which exposure map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimandKind {
    Main,
    SpilloverPublic,
    SpilloverPrivate,
}

impl Default for EstimandKind {
    fn default() -> Self {
        EstimandKind::Main
    }
}

impl EstimandKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimandKind::Main => "main",
            EstimandKind::SpilloverPublic => "spillover_public",
            EstimandKind::SpilloverPrivate => "spillover_private",
        }
    }

    pub fn neighborhood(&self) -> Option<obspanel::NeighborhoodKind> {
        match self {
            EstimandKind::Main => None,
            EstimandKind::SpilloverPublic => Some(obspanel::NeighborhoodKind::Public),
            EstimandKind::SpilloverPrivate => Some(obspanel::NeighborhoodKind::Private),
        }
    }
}

/// Treatment coding of the panel file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArmConfig {
    /// Codes {0, 1}; the effect contrasts 1 against 0.
    Binary,
    /// Codes {1, 2, 3} with 1 as baseline; `contrast` names the two codes
    /// being compared, e.g. [3, 1].
    ThreeArm { contrast: (i64, i64) },
}

impl Default for ArmConfig {
    fn default() -> Self {
        ArmConfig::Binary
    }
}

impl ArmConfig {
    pub fn to_scheme(self) -> Result<ArmScheme, CliError> {
        match self {
            ArmConfig::Binary => Ok(ArmScheme::binary()),
            ArmConfig::ThreeArm { contrast } => ArmScheme::three_arm(contrast)
                .map_err(|e| CliError::Config(format!("arm.contrast: {e}"))),
        }
    }
}

/// Which checks `diagnose` runs. The A/A test only runs when requested,
/// because it needs a named pre-treatment outcome column.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "default_checks")]
    pub checks: Vec<DiagnosticKind>,
    /// Baseline column (or time-varying column, read at the first period)
    /// holding the outcome measured before any treatment.
    #[serde(default)]
    pub pre_period_column: Option<String>,
    /// Cross-sectional estimator the A/A placebo uses.
    #[serde(default = "default_aa_method")]
    pub aa_method: String,
}

fn default_checks() -> Vec<DiagnosticKind> {
    vec![DiagnosticKind::BackwardCausality, DiagnosticKind::Balance]
}

fn default_aa_method() -> String {
    "Regression".to_string()
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            checks: default_checks(),
            pre_period_column: None,
            aa_method: default_aa_method(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub panel: PathBuf,
    pub baseline: PathBuf,
    #[serde(default)]
    pub edges: Option<PathBuf>,
    #[serde(default)]
    pub arm: ArmConfig,
    #[serde(default)]
    pub estimand: EstimandKind,
    /// Estimator names; see `Method` for accepted spellings ("FE", "IPW",
    /// "DoublyRobust", ...). Required by `estimate`, ignored by `diagnose`.
    #[serde(default)]
    pub estimators: Vec<String>,
    /// Baseline column whose distinct values split every estimate.
    #[serde(default)]
    pub subgroup_column: Option<String>,
    /// Time value (not index) the cross-sectional estimators analyze;
    /// defaults to the last observed period.
    #[serde(default)]
    pub period: Option<i64>,
    /// Columns fed to propensity and adjustment models; defaults to the
    /// panel's own covariates.
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
    #[serde(default)]
    pub include_time_effects: bool,
    /// Propensity clipping interval, e.g. [0.01, 0.99].
    #[serde(default)]
    pub clip_bounds: Option<(f64, f64)>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    /// Recorded in run_meta.json; estimation itself is deterministic.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; absent or 0 means all available cores.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Reads and validates a config, resolving relative paths against the
    /// config file's own directory.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&raw)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.panel = base.join(&cfg.panel);
        cfg.baseline = base.join(&cfg.baseline);
        cfg.edges = cfg.edges.take().map(|p| base.join(p));
        cfg.out = cfg.out.take().map(|p| base.join(p));
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        for (label, path) in [("panel", &self.panel), ("baseline", &self.baseline)] {
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "{label} file {} does not exist",
                    path.display()
                )));
            }
        }
        if self.estimand != EstimandKind::Main {
            match &self.edges {
                None => {
                    return Err(CliError::Config(
                        "spillover estimands need an `edges` file".into(),
                    ))
                }
                Some(p) if !p.is_file() => {
                    return Err(CliError::Config(format!(
                        "edges file {} does not exist",
                        p.display()
                    )))
                }
                _ => {}
            }
        }
        if let Some((lo, hi)) = self.clip_bounds {
            let cfg = LogisticConfig { clip_bounds: (lo, hi), ..LogisticConfig::default() };
            cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if self.diagnostics.checks.contains(&DiagnosticKind::AaTest)
            && self.diagnostics.pre_period_column.is_none()
        {
            return Err(CliError::Config(
                "the A/A check needs diagnostics.pre_period_column".into(),
            ));
        }
        self.diagnostics
            .aa_method
            .parse::<Method>()
            .map_err(|e| CliError::Config(format!("diagnostics.aa_method: {e}")))?;
        Ok(())
    }

    /// The estimator list parsed into methods; errors name the offender.
    pub fn parsed_estimators(&self) -> Result<Vec<Method>, CliError> {
        if self.estimators.is_empty() {
            return Err(CliError::Config("estimators must not be empty".into()));
        }
        let mut out = Vec::with_capacity(self.estimators.len());
        for name in &self.estimators {
            out.push(
                name.parse::<Method>().map_err(|e| CliError::Config(e.to_string()))?,
            );
        }
        Ok(out)
    }

    pub fn logistic(&self) -> LogisticConfig {
        match self.clip_bounds {
            Some(bounds) => LogisticConfig { clip_bounds: bounds, ..LogisticConfig::default() },
            None => LogisticConfig::default(),
        }
    }
}
