//! Cross-sectional treatment-effect estimators: difference in means, Hájek
//! inverse-propensity weighting, OLS regression adjustment, and the
//! augmented (doubly robust) combination.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hc1_covariance, ols};

/// Estimation approach tag carried on every estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Raw outcome/treatment association: difference in means for a binary
    /// arm, OLS slope for a continuous exposure.
    Correlation,
    #[serde(rename = "IPW")]
    Ipw,
    Regression,
    DoublyRobust,
    #[serde(rename = "FE")]
    FixedEffects,
    #[serde(rename = "WeightedFE")]
    WeightedFixedEffects,
    #[serde(rename = "SpilloverFE")]
    SpilloverFixedEffects,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Correlation,
        Method::Ipw,
        Method::Regression,
        Method::DoublyRobust,
        Method::FixedEffects,
        Method::WeightedFixedEffects,
        Method::SpilloverFixedEffects,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Correlation => "Correlation",
            Method::Ipw => "IPW",
            Method::Regression => "Regression",
            Method::DoublyRobust => "DoublyRobust",
            Method::FixedEffects => "FE",
            Method::WeightedFixedEffects => "WeightedFE",
            Method::SpilloverFixedEffects => "SpilloverFE",
        }
    }

    /// True for the estimators that operate on one time slice.
    pub fn is_cross_sectional(&self) -> bool {
        matches!(
            self,
            Method::Correlation | Method::Ipw | Method::Regression | Method::DoublyRobust
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let canon = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        Ok(match canon.as_str() {
            "correlation" | "naive" => Method::Correlation,
            "ipw" => Method::Ipw,
            "regression" => Method::Regression,
            "doublyrobust" | "dr" | "aipw" => Method::DoublyRobust,
            "fe" | "fixedeffects" => Method::FixedEffects,
            "weightedfe" | "wfe" => Method::WeightedFixedEffects,
            "spilloverfe" => Method::SpilloverFixedEffects,
            _ => return Err(Error::InvalidInput(format!("unknown estimator `{s}`"))),
        })
    }
}

/// What the estimate targets: a unit's own treatment or its neighborhood
/// exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimand {
    Main,
    Spillover,
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::Main => "Main",
            Estimand::Spillover => "Spillover",
        })
    }
}

/// A point estimate with its standard error and provenance tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub method: Method,
    pub estimand: Estimand,
    pub subgroup: Option<String>,
    pub n_used: usize,
}

impl EffectEstimate {
    pub const CSV_HEADER: &'static str = "method,estimand,subgroup,estimate,std_error,n_used";

    pub fn with_subgroup(mut self, label: impl Into<String>) -> Self {
        self.subgroup = Some(label.into());
        self
    }

    pub fn with_estimand(mut self, estimand: Estimand) -> Self {
        self.estimand = estimand;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.method,
            self.estimand,
            self.subgroup.as_deref().unwrap_or(""),
            self.estimate,
            self.std_error,
            self.n_used
        )
    }
}

fn check_lengths(y: &[f64], w_arm: &[u8]) -> Result<()> {
    if y.len() != w_arm.len() {
        return Err(Error::SchemaMismatch("outcome and arm lengths differ".into()));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("no rows".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite outcome".into()));
    }
    Ok(())
}

/// Difference in arm means with the unpooled two-sample standard error.
pub fn naive_diff(y: &[f64], w_arm: &[u8]) -> Result<EffectEstimate> {
    check_lengths(y, w_arm)?;
    let mut n = [0usize; 2];
    let mut sum = [0.0f64; 2];
    for i in 0..y.len() {
        let arm = (w_arm[i] == 1) as usize;
        n[arm] += 1;
        sum[arm] += y[i];
    }
    if n[0] == 0 || n[1] == 0 {
        return Err(Error::SingleArm);
    }
    let mean = [sum[0] / n[0] as f64, sum[1] / n[1] as f64];
    let mut ss = [0.0f64; 2];
    for i in 0..y.len() {
        let arm = (w_arm[i] == 1) as usize;
        let d = y[i] - mean[arm];
        ss[arm] += d * d;
    }
    // Sample variances; a singleton arm contributes zero variance.
    let var = [0, 1].map(|a| if n[a] > 1 { ss[a] / (n[a] - 1) as f64 } else { 0.0 });
    let std_error = (var[1] / n[1] as f64 + var[0] / n[0] as f64).sqrt();
    Ok(EffectEstimate {
        estimate: mean[1] - mean[0],
        std_error,
        method: Method::Correlation,
        estimand: Estimand::Main,
        subgroup: None,
        n_used: y.len(),
    })
}

fn check_propensities(e: &[f64], n: usize) -> Result<()> {
    if e.len() != n {
        return Err(Error::SchemaMismatch("propensity length mismatch".into()));
    }
    if e.iter().any(|p| !(p.is_finite() && 0.0 < *p && *p < 1.0)) {
        return Err(Error::InvalidInput(
            "propensities must lie strictly inside (0, 1); clip upstream".into(),
        ));
    }
    Ok(())
}

/// Hájek (self-normalized) inverse-propensity-weighted difference in means.
/// The standard error comes from the influence-function linearization of
/// the two weighted means.
pub fn ipw_estimate(y: &[f64], w_arm: &[u8], e: &[f64]) -> Result<EffectEstimate> {
    check_lengths(y, w_arm)?;
    check_propensities(e, y.len())?;
    let n = y.len() as f64;
    let mut wsum = [0.0f64; 2];
    let mut wysum = [0.0f64; 2];
    for i in 0..y.len() {
        let arm = (w_arm[i] == 1) as usize;
        let w = if arm == 1 { 1.0 / e[i] } else { 1.0 / (1.0 - e[i]) };
        wsum[arm] += w;
        wysum[arm] += w * y[i];
    }
    if wsum[0] == 0.0 || wsum[1] == 0.0 {
        return Err(Error::AllWeightsZero);
    }
    let mu = [wysum[0] / wsum[0], wysum[1] / wsum[1]];
    let wbar = [wsum[0] / n, wsum[1] / n];
    let mut psi_sq = 0.0;
    for i in 0..y.len() {
        let arm = (w_arm[i] == 1) as usize;
        let w = if arm == 1 { 1.0 / e[i] } else { 1.0 / (1.0 - e[i]) };
        let psi = if arm == 1 {
            w * (y[i] - mu[1]) / wbar[1]
        } else {
            -w * (y[i] - mu[0]) / wbar[0]
        };
        psi_sq += psi * psi;
    }
    Ok(EffectEstimate {
        estimate: mu[1] - mu[0],
        std_error: psi_sq.sqrt() / n,
        method: Method::Ipw,
        estimand: Estimand::Main,
        subgroup: None,
        n_used: y.len(),
    })
}

/// OLS of `y` on an intercept, the exposure column `treat`, and `k`
/// covariate columns (row-major `x`); returns the exposure coefficient with
/// a heteroskedasticity-robust (HC1) standard error.
///
/// This is the shared core of `regression_adjust` (binary exposure) and
/// `ols_slope` (continuous exposure).
pub fn linear_adjust(
    y: &[f64],
    treat: &[f64],
    x: &[f64],
    k: usize,
    method: Method,
) -> Result<EffectEstimate> {
    let n = y.len();
    if treat.len() != n {
        return Err(Error::SchemaMismatch("exposure length mismatch".into()));
    }
    if x.len() != n * k {
        return Err(Error::SchemaMismatch("covariate matrix shape mismatch".into()));
    }
    if n < k + 2 {
        return Err(Error::InvalidInput("fewer rows than regression columns".into()));
    }
    let mut design = DMatrix::<f64>::zeros(n, k + 2);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = treat[i];
        for j in 0..k {
            design[(i, 2 + j)] = x[i * k + j];
        }
    }
    let yv = DVector::from_column_slice(y);
    let fit = ols(&design, &yv)?;
    let cov = hc1_covariance(&design, &fit.residuals, &fit.xtx_inv);
    Ok(EffectEstimate {
        estimate: fit.coefficients[1],
        std_error: cov[(1, 1)].max(0.0).sqrt(),
        method,
        estimand: Estimand::Main,
        subgroup: None,
        n_used: n,
    })
}

/// Regression adjustment: OLS of y on [1, w, x] with robust SE on the w
/// coefficient.
pub fn regression_adjust(y: &[f64], w_arm: &[u8], x: &[f64], k: usize) -> Result<EffectEstimate> {
    check_lengths(y, w_arm)?;
    let treat: Vec<f64> = w_arm.iter().map(|&w| (w == 1) as u8 as f64).collect();
    linear_adjust(y, &treat, x, k, Method::Regression)
}

/// Naive association for a continuous exposure: the OLS slope of y on z
/// alone. For a binary z this equals the difference in means.
pub fn ols_slope(y: &[f64], z: &[f64]) -> Result<EffectEstimate> {
    linear_adjust(y, z, &[], 0, Method::Correlation)
}

/// Per-arm OLS prediction: fits y ~ [1, x] on the rows of one arm and
/// predicts for everyone.
fn arm_outcome_model(
    y: &[f64],
    x: &[f64],
    k: usize,
    rows: &[usize],
) -> Result<Vec<f64>> {
    let m = rows.len();
    let mut design = DMatrix::<f64>::zeros(m, k + 1);
    let mut yv = DVector::<f64>::zeros(m);
    for (r, &i) in rows.iter().enumerate() {
        design[(r, 0)] = 1.0;
        for j in 0..k {
            design[(r, 1 + j)] = x[i * k + j];
        }
        yv[r] = y[i];
    }
    let fit = ols(&design, &yv)?;
    let n = y.len();
    let mut pred = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = fit.coefficients[0];
        for j in 0..k {
            v += fit.coefficients[1 + j] * x[i * k + j];
        }
        pred.push(v);
    }
    Ok(pred)
}

/// Augmented IPW (doubly robust) estimator: separate OLS outcome models per
/// arm plus inverse-propensity residual corrections. The standard error is
/// the sample standard deviation of the per-unit summand over sqrt(n).
pub fn doubly_robust(
    y: &[f64],
    w_arm: &[u8],
    x: &[f64],
    k: usize,
    e: &[f64],
) -> Result<EffectEstimate> {
    check_lengths(y, w_arm)?;
    check_propensities(e, y.len())?;
    if x.len() != y.len() * k {
        return Err(Error::SchemaMismatch("covariate matrix shape mismatch".into()));
    }
    let treated_rows: Vec<usize> =
        (0..y.len()).filter(|&i| w_arm[i] == 1).collect();
    let control_rows: Vec<usize> =
        (0..y.len()).filter(|&i| w_arm[i] != 1).collect();
    if treated_rows.is_empty() || control_rows.is_empty() {
        return Err(Error::SingleArm);
    }
    let m1 = arm_outcome_model(y, x, k, &treated_rows)?;
    let m0 = arm_outcome_model(y, x, k, &control_rows)?;
    let n = y.len();
    let mut summand = Vec::with_capacity(n);
    for i in 0..n {
        let w = (w_arm[i] == 1) as u8 as f64;
        let phi = m1[i] - m0[i] + w * (y[i] - m1[i]) / e[i]
            - (1.0 - w) * (y[i] - m0[i]) / (1.0 - e[i]);
        summand.push(phi);
    }
    let mean = summand.iter().sum::<f64>() / n as f64;
    let ss: f64 = summand.iter().map(|s| (s - mean) * (s - mean)).sum();
    let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
    Ok(EffectEstimate {
        estimate: mean,
        std_error: sd / (n as f64).sqrt(),
        method: Method::DoublyRobust,
        estimand: Estimand::Main,
        subgroup: None,
        n_used: n,
    })
}
