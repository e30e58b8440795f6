//! Causal effect estimation from observational panel data.
//!
//! The crate covers the full working loop for studying a binary (or
//! three-arm) exposure observed over repeated periods without
//! randomization:
//!
//! * loading and validating dense panels ([`panel`]),
//! * design-stage tools: propensity models, balance checks, coarsened
//!   matching, stratification ([`design`]),
//! * cross-sectional estimators (naive contrast, IPW, regression
//!   adjustment, AIPW) in [`estimators`], and panel estimators with
//!   absorbed unit (optionally time) effects in [`fixed_effects`],
//!   including the network spillover variant over a [`network`],
//! * pre-analysis diagnostics: reverse-causation probes, placebo A/A
//!   tests, balance reports ([`diagnostics`]),
//! * synthetic data with controlled unobserved confounding and a Monte
//!   Carlo benchmark comparing all of the above ([`simulation`],
//!   [`benchmark`]),
//! * [`pipeline`] glue that maps estimator names to the right
//!   computation per estimand.
//!
//! Standard errors are cluster-robust by unit for the panel estimators
//! (Liang–Zeger), heteroskedasticity-consistent (HC1) for the
//! cross-sectional regressions, and influence-function or design-based
//! elsewhere; each estimator documents its own choice.

pub mod benchmark;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod fixed_effects;
mod linalg;
pub mod network;
pub mod panel;
pub mod pipeline;
pub mod simulation;

pub use benchmark::{run_benchmark, BenchmarkSuite, BenchmarkTable};
pub use design::{
    cem_match, fit_logistic, fit_logistic_weighted, fit_propensity_matrix, standardized_mean_diff, stratify,
    BalanceReport, CemMatch, Coarsening, LogisticConfig, PropensityModel,
};
pub use diagnostics::{
    aa_test, backward_causality_check, balance_diagnostic, balance_report, DiagnosticKind,
    DiagnosticReport,
};
pub use error::{Error, Result};
pub use estimators::{
    doubly_robust, ipw_estimate, naive_diff, regression_adjust, EffectEstimate, Estimand, Method,
};
pub use fixed_effects::{
    fit_fe, fit_spillover_fe, fit_weighted_fe, within_transform, FixedEffectsFit,
    FixedEffectsSpec, TreatmentSpec,
};
pub use network::{load_network, write_network, Network, NeighborhoodKind};
pub use panel::{load_panel, write_panel, ArmScheme, PanelDataset, PanelSchema, WindowConfig};
pub use pipeline::{estimate_main, estimate_spillover, AnalysisOptions};
pub use simulation::{
    gen_contemporaneous, gen_network, gen_spillover, generate, SimulatedStudy, SimulationConfig,
};
