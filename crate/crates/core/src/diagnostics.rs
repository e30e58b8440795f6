//! Pre-analysis sanity checks: reverse-prediction of treatment from the
//! outcome, placebo (A/A) effects on pre-period outcomes, and covariate
//! balance summaries.

use crate::design::{
    fit_logistic, gather_features, standardized_mean_diff, BalanceReport, LogisticConfig,
};
use crate::error::{Error, Result};
use crate::estimators::{
    doubly_robust, ipw_estimate, naive_diff, regression_adjust, Method,
};
use crate::panel::PanelDataset;
use serde::{Deserialize, Serialize};
use std::fmt;

/// |statistic| must stay within this many standard errors for a check to
/// pass.
pub const Z_THRESHOLD: f64 = 2.0;
/// Largest acceptable post-design absolute standardized mean difference.
pub const SMD_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    BackwardCausality,
    AaTest,
    Balance,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DiagnosticKind::BackwardCausality => "backward_causality",
            DiagnosticKind::AaTest => "aa_test",
            DiagnosticKind::Balance => "balance",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub kind: DiagnosticKind,
    pub statistic: f64,
    pub std_error: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl DiagnosticReport {
    pub const CSV_HEADER: &'static str = "check,statistic,std_error,threshold,pass";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.kind, self.statistic, self.std_error, self.threshold, self.pass
        )
    }
}

/// Fits a pooled logistic regression of the treated indicator on the
/// current outcome and the named feature columns. A future cause cannot
/// predict its past: a significant outcome coefficient flags reversed or
/// simultaneous causation (or selection on the outcome).
///
/// Fails when |coef| > 2 SE or when the fit separates (the planted
/// `W = 1{Y > c}` pathology). A constant outcome is dropped by the
/// standardizer (coefficient and SE both zero) and passes.
pub fn backward_causality_check(
    ds: &PanelDataset,
    feature_columns: &[String],
    cfg: &LogisticConfig,
) -> Result<DiagnosticReport> {
    let n = ds.n_units();
    let t_count = ds.n_times();
    let k = feature_columns.len();
    let mut features = Vec::with_capacity(n * t_count * (k + 1));
    let mut labels = Vec::with_capacity(n * t_count);
    for t in 0..t_count {
        let slice = gather_features(ds, feature_columns, t)?;
        let y = ds.outcome_at(t);
        let w = ds.treated_at(t);
        for i in 0..n {
            features.push(y[i]);
            features.extend_from_slice(&slice[i * k..(i + 1) * k]);
            labels.push(w[i]);
        }
    }
    let mut names = Vec::with_capacity(k + 1);
    names.push("outcome".to_string());
    names.extend_from_slice(feature_columns);
    let model = fit_logistic(&features, k + 1, &labels, &names, cfg)?;
    let coef = model.coefficients[1];
    let se = model.std_errors[1];
    let pass = !model.separated && coef.abs() <= Z_THRESHOLD * se;
    Ok(DiagnosticReport {
        kind: DiagnosticKind::BackwardCausality,
        statistic: coef,
        std_error: se,
        threshold: Z_THRESHOLD,
        pass,
    })
}

/// Placebo check: estimates the "effect" of treatment on an outcome
/// measured before exposure. Any cross-sectional estimator may be used;
/// a real design should find nothing, so the check passes when the
/// estimate stays within two standard errors of zero.
pub fn aa_test(
    pre_outcome: &[f64],
    w_arm: &[u8],
    features: &[f64],
    k: usize,
    propensity: Option<&[f64]>,
    method: Method,
) -> Result<DiagnosticReport> {
    let need_propensity = || {
        propensity.ok_or_else(|| {
            Error::InvalidInput(format!("{method} requires propensity scores for the A/A check"))
        })
    };
    let est = match method {
        Method::Correlation => naive_diff(pre_outcome, w_arm)?,
        Method::Ipw => ipw_estimate(pre_outcome, w_arm, need_propensity()?)?,
        Method::Regression => regression_adjust(pre_outcome, w_arm, features, k)?,
        Method::DoublyRobust => doubly_robust(pre_outcome, w_arm, features, k, need_propensity()?)?,
        other => {
            return Err(Error::InvalidInput(format!(
                "{other} is a panel method; the A/A check is cross-sectional"
            )))
        }
    };
    let pass = est.estimate.abs() <= Z_THRESHOLD * est.std_error;
    Ok(DiagnosticReport {
        kind: DiagnosticKind::AaTest,
        statistic: est.estimate,
        std_error: est.std_error,
        threshold: Z_THRESHOLD,
        pass,
    })
}

/// Standardized mean differences for each feature column before and after
/// design weighting, plus effective sample sizes `(sum w)^2 / sum w^2`
/// under the post-design weights.
///
/// `features` is row-major `n x k`; `weights_before` defaults to unit
/// weights and `weights_after` are the design weights being evaluated.
pub fn balance_report(
    columns: &[String],
    features: &[f64],
    w_arm: &[u8],
    weights_before: Option<&[f64]>,
    weights_after: Option<&[f64]>,
) -> Result<BalanceReport> {
    let n = w_arm.len();
    let k = columns.len();
    if features.len() != n * k {
        return Err(Error::SchemaMismatch("feature matrix shape mismatch".into()));
    }
    let mut smd_before = Vec::with_capacity(k);
    let mut smd_after = Vec::with_capacity(k);
    let mut col = vec![0.0; n];
    for j in 0..k {
        for i in 0..n {
            col[i] = features[i * k + j];
        }
        smd_before.push(standardized_mean_diff(&col, w_arm, weights_before)?);
        smd_after.push(standardized_mean_diff(&col, w_arm, weights_after)?);
    }
    let worst_smd = smd_after.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let mut ess = [0.0f64; 2];
    for arm in 0..2 {
        let (mut sw, mut sw2) = (0.0, 0.0);
        for i in 0..n {
            if (w_arm[i] == 1) as usize == arm {
                let w = weights_after.map_or(1.0, |w| w[i]);
                sw += w;
                sw2 += w * w;
            }
        }
        ess[arm] = if sw2 > 0.0 { sw * sw / sw2 } else { 0.0 };
    }
    Ok(BalanceReport {
        columns: columns.to_vec(),
        smd_before,
        smd_after,
        worst_smd,
        n_treated: ess[1],
        n_control: ess[0],
    })
}

/// Pass/fail wrapper over a balance report: every post-design SMD must be
/// below the 0.1 rule of thumb.
pub fn balance_diagnostic(report: &BalanceReport) -> DiagnosticReport {
    DiagnosticReport {
        kind: DiagnosticKind::Balance,
        statistic: report.worst_smd,
        std_error: 0.0,
        threshold: SMD_THRESHOLD,
        pass: report.worst_smd < SMD_THRESHOLD,
    }
}
