//! Panel fixed-effects estimation: within transformation (unit, optionally
//! unit+time by alternating projections), weighted variants, and the
//! network-spillover model built on neighborhood exposures.
//!
//! Unit effects are absorbed by demeaning rather than dummy columns; a
//! dense dummy regression is kept in the test suite as an oracle.

use crate::error::{Error, Result};
use crate::estimators::{EffectEstimate, Estimand, Method};
use crate::linalg::{cluster_covariance, ols};
use crate::network::{
    neighborhood_column_name, neighborhood_covariate_summary, neighborhood_treatment,
    Network, NeighborhoodKind, SummaryStat,
};
use crate::panel::PanelDataset;
use nalgebra::{DMatrix, DVector};

/// What plays the role of the treatment regressor.
#[derive(Debug, Clone, PartialEq)]
pub enum TreatmentSpec {
    /// Indicator columns for each non-baseline arm code; the reported
    /// effect is the dataset's contrast pair.
    Arm,
    /// A caller-supplied per-cell exposure column (unit-major `n * t`),
    /// e.g. a neighborhood treatment.
    Column { name: String, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedEffectsSpec {
    /// Absorb common time shocks as well as unit effects.
    pub include_time_effects: bool,
    /// Per-cell observation weights (unit-major `n * t`); `None` means
    /// unit weights. Weights are normalized to mean 1 internally.
    pub weights: Option<Vec<f64>>,
    pub treatment: TreatmentSpec,
    /// Additional per-cell regressors (name, unit-major values).
    pub extra_columns: Vec<(String, Vec<f64>)>,
    /// Per-unit subgroup labels; when present every treatment column is
    /// interacted with the labels and one effect is reported per label.
    pub interaction_labels: Option<Vec<String>>,
    /// Convergence tolerance for two-way demeaning (max cell change).
    pub demean_tol: f64,
    pub max_sweeps: usize,
}

impl Default for FixedEffectsSpec {
    fn default() -> Self {
        FixedEffectsSpec {
            include_time_effects: false,
            weights: None,
            treatment: TreatmentSpec::Arm,
            extra_columns: Vec::new(),
            interaction_labels: None,
            demean_tol: 1e-10,
            max_sweeps: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedEffectsFit {
    /// One estimate overall, or one per subgroup label.
    pub tau: Vec<EffectEstimate>,
    /// Named coefficients on the non-treatment regressors; columns dropped
    /// for lack of within variation appear with coefficient 0.
    pub beta: Vec<(String, f64)>,
    pub n_units: usize,
    pub n_times: usize,
    pub demeaning_iterations: usize,
    pub converged: bool,
    /// Residuals of the within-transformed regression, unit-major per cell.
    pub residuals: Vec<f64>,
}

/// A transformed column is degenerate when its mean square collapses below
/// this fraction of the pre-transform mean square (or of 1, whichever is
/// larger).
const WITHIN_VARIATION_TOL: f64 = 1e-12;

/// Removes per-unit (and optionally per-time) weighted means from a
/// unit-major `n * t` cell vector. Two-way mode alternates unit and time
/// passes until the largest subtracted mean falls below `tol`.
///
/// Returns the transformed values and the number of sweeps used.
pub fn within_transform(
    values: &[f64],
    n_units: usize,
    n_times: usize,
    two_way: bool,
    weights: Option<&[f64]>,
    tol: f64,
    max_sweeps: usize,
) -> Result<(Vec<f64>, usize)> {
    let cells = n_units * n_times;
    if values.len() != cells {
        return Err(Error::SchemaMismatch("cell vector length mismatch".into()));
    }
    if let Some(w) = weights {
        if w.len() != cells {
            return Err(Error::SchemaMismatch("weight vector length mismatch".into()));
        }
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("demeaning tolerance must be positive".into()));
    }
    let w_at = |c: usize| weights.map_or(1.0, |w| w[c]);
    let mut v = values.to_vec();
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for i in 0..n_units {
            let mut sw = 0.0;
            let mut sv = 0.0;
            for t in 0..n_times {
                let c = i * n_times + t;
                sw += w_at(c);
                sv += w_at(c) * v[c];
            }
            // A fully zero-weighted unit has no mean to remove; its cells
            // are inert in the weighted regression anyway.
            let m = if sw > 0.0 { sv / sw } else { 0.0 };
            for t in 0..n_times {
                v[i * n_times + t] -= m;
            }
            max_change = max_change.max(m.abs());
        }
        if !two_way {
            return Ok((v, sweeps));
        }
        for t in 0..n_times {
            let mut sw = 0.0;
            let mut sv = 0.0;
            for i in 0..n_units {
                let c = i * n_times + t;
                sw += w_at(c);
                sv += w_at(c) * v[c];
            }
            let m = if sw > 0.0 { sv / sw } else { 0.0 };
            for i in 0..n_units {
                v[i * n_times + t] -= m;
            }
            max_change = max_change.max(m.abs());
        }
        if max_change < tol {
            return Ok((v, sweeps));
        }
        if sweeps >= max_sweeps {
            return Err(Error::NoConvergence(max_sweeps));
        }
    }
}

/// Weights scaled to mean 1; scaling the weights does not change the
/// estimator, and unit weights pass through bitwise unchanged.
fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::AllWeightsZero);
    }
    let factor = weights.len() as f64 / sum;
    Ok(weights.iter().map(|w| w * factor).collect())
}

struct CellColumn {
    name: String,
    values: Vec<f64>,
    is_treatment: bool,
    /// (arm code, subgroup label) identifying which effect this treatment
    /// column belongs to; None for plain regressors.
    effect_key: Option<(i64, Option<String>)>,
}

fn weighted_mean_square(values: &[f64], weights: Option<&[f64]>) -> f64 {
    match weights {
        None => values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64,
        Some(w) => {
            let sw: f64 = w.iter().sum();
            if sw <= 0.0 {
                return 0.0;
            }
            values.iter().zip(w).map(|(v, wi)| wi * v * v).sum::<f64>() / sw
        }
    }
}

/// Two-way/one-way fixed-effects regression of the dataset outcome on the
/// treatment column(s), all time-varying covariates, and any extra
/// columns, with cluster-robust (by unit) standard errors.
pub fn fit_fe(ds: &PanelDataset, spec: &FixedEffectsSpec) -> Result<FixedEffectsFit> {
    fit_fe_inner(ds, spec, Method::FixedEffects, Estimand::Main)
}

/// `fit_fe` with per-cell inverse-propensity weights: 1/e on cells holding
/// the contrast's treated code, 1/(1-e) elsewhere. `propensity` is
/// unit-major `n * t` and must lie strictly inside (0, 1).
pub fn fit_weighted_fe(
    ds: &PanelDataset,
    spec: &FixedEffectsSpec,
    propensity: &[f64],
) -> Result<FixedEffectsFit> {
    let weights = ipw_cell_weights(ds, propensity)?;
    let spec = FixedEffectsSpec { weights: Some(weights), ..spec.clone() };
    fit_fe_inner(ds, &spec, Method::WeightedFixedEffects, Estimand::Main)
}

/// Inverse-propensity observation weights per cell from a unit-major
/// propensity matrix.
pub fn ipw_cell_weights(ds: &PanelDataset, propensity: &[f64]) -> Result<Vec<f64>> {
    let cells = ds.n_units() * ds.n_times();
    if propensity.len() != cells {
        return Err(Error::SchemaMismatch("propensity matrix length mismatch".into()));
    }
    if propensity.iter().any(|p| !(p.is_finite() && 0.0 < *p && *p < 1.0)) {
        return Err(Error::InvalidInput(
            "propensities must lie strictly inside (0, 1); clip upstream".into(),
        ));
    }
    let t = ds.n_times();
    let mut weights = Vec::with_capacity(cells);
    for i in 0..ds.n_units() {
        for ti in 0..t {
            let e = propensity[i * t + ti];
            let w = if ds.treated_indicator(i, ti) == 1.0 { 1.0 / e } else { 1.0 / (1.0 - e) };
            weights.push(w);
        }
    }
    Ok(weights)
}

/// Fixed-effects regression of the outcome on a neighborhood-treatment
/// exposure. Isolated units are excluded; the regression controls for the
/// unit's own treated indicator and the neighborhood sums of every
/// covariate, alongside the covariates themselves and any caller extras.
pub fn fit_spillover_fe(
    ds: &PanelDataset,
    network: &Network,
    spec: &FixedEffectsSpec,
    kind: NeighborhoodKind,
) -> Result<FixedEffectsFit> {
    if network.n_units() != ds.n_units() {
        return Err(Error::SchemaMismatch("network and dataset unit counts differ".into()));
    }
    let keep: Vec<usize> =
        (0..ds.n_units()).filter(|&i| !network.is_isolated(i)).collect();
    if keep.is_empty() {
        return Err(Error::EmptyAfterIsolationFilter);
    }
    let sub = ds.subset_units(&keep)?;
    let net = network.subset(&keep)?;
    let n = sub.n_units();
    let t = sub.n_times();

    // Neighbors of retained units are never isolated, so every exposure is
    // defined on the subgraph.
    let mut z = vec![0.0; n * t];
    for ti in 0..t {
        let col = neighborhood_treatment(&sub, &net, kind, ti)?;
        for i in 0..n {
            z[i * t + ti] = col[i].ok_or(Error::EmptyAfterIsolationFilter)?;
        }
    }
    let z_name = match kind {
        NeighborhoodKind::Public => "z_public",
        NeighborhoodKind::Private => "z_private",
    };

    let mut extra = Vec::new();
    let own: Vec<f64> = (0..n * t)
        .map(|c| sub.treated_indicator(c / t, c % t))
        .collect();
    extra.push(("own_contribution".to_string(), own));
    for k in 0..sub.n_covariates() {
        let mut col = vec![0.0; n * t];
        for ti in 0..t {
            let s = neighborhood_covariate_summary(&sub, &net, k, SummaryStat::Sum, ti)?;
            for i in 0..n {
                col[i * t + ti] = s[i].ok_or(Error::EmptyAfterIsolationFilter)?;
            }
        }
        extra.push((neighborhood_column_name(&sub.covariate_names()[k], SummaryStat::Sum), col));
    }
    for (name, values) in &spec.extra_columns {
        if values.len() != ds.n_units() * ds.n_times() {
            return Err(Error::SchemaMismatch(format!("extra column `{name}` length mismatch")));
        }
        let mut subset = Vec::with_capacity(n * t);
        for &i in &keep {
            subset.extend_from_slice(&values[i * t..(i + 1) * t]);
        }
        extra.push((name.clone(), subset));
    }

    let weights = match &spec.weights {
        None => None,
        Some(w) => {
            if w.len() != ds.n_units() * ds.n_times() {
                return Err(Error::SchemaMismatch("weight vector length mismatch".into()));
            }
            let mut subset = Vec::with_capacity(n * t);
            for &i in &keep {
                subset.extend_from_slice(&w[i * t..(i + 1) * t]);
            }
            Some(subset)
        }
    };
    let interaction_labels = match &spec.interaction_labels {
        None => None,
        Some(labels) => {
            if labels.len() != ds.n_units() {
                return Err(Error::SchemaMismatch("interaction label length mismatch".into()));
            }
            Some(keep.iter().map(|&i| labels[i].clone()).collect())
        }
    };

    let sub_spec = FixedEffectsSpec {
        include_time_effects: spec.include_time_effects,
        weights,
        treatment: TreatmentSpec::Column { name: z_name.to_string(), values: z },
        extra_columns: extra,
        interaction_labels,
        demean_tol: spec.demean_tol,
        max_sweeps: spec.max_sweeps,
    };
    fit_fe_inner(&sub, &sub_spec, Method::SpilloverFixedEffects, Estimand::Spillover)
}

fn fit_fe_inner(
    ds: &PanelDataset,
    spec: &FixedEffectsSpec,
    method: Method,
    estimand: Estimand,
) -> Result<FixedEffectsFit> {
    let n = ds.n_units();
    let t = ds.n_times();
    let cells = n * t;

    let weights = match &spec.weights {
        None => None,
        Some(w) => {
            if w.len() != cells {
                return Err(Error::SchemaMismatch("weight vector length mismatch".into()));
            }
            Some(normalize_weights(w)?)
        }
    };
    let w_ref = weights.as_deref();

    // Treatment columns, optionally interacted with subgroup labels.
    let mut base_treatments: Vec<(String, Vec<f64>, i64)> = Vec::new();
    match &spec.treatment {
        TreatmentSpec::Arm => {
            let scheme = ds.arm_scheme();
            for &code in &scheme.codes()[1..] {
                let values: Vec<f64> = (0..cells)
                    .map(|c| (ds.treatment(c / t, c % t) == code) as u8 as f64)
                    .collect();
                base_treatments.push((format!("w{code}"), values, code));
            }
        }
        TreatmentSpec::Column { name, values } => {
            if values.len() != cells {
                return Err(Error::SchemaMismatch(format!(
                    "treatment column `{name}` length mismatch"
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite treatment values".into()));
            }
            // Code 1 vs implicit baseline 0 mirrors the binary arm layout.
            base_treatments.push((name.clone(), values.clone(), 1));
        }
    }

    let groups: Option<Vec<String>> = match &spec.interaction_labels {
        None => None,
        Some(labels) => {
            if labels.len() != n {
                return Err(Error::SchemaMismatch("one interaction label per unit required".into()));
            }
            let mut distinct: Vec<String> = labels.to_vec();
            distinct.sort();
            distinct.dedup();
            if distinct.len() < 2 {
                return Err(Error::InvalidInput(
                    "interaction labels must contain at least two groups".into(),
                ));
            }
            Some(distinct)
        }
    };

    let mut columns: Vec<CellColumn> = Vec::new();
    match (&groups, &spec.interaction_labels) {
        (Some(distinct), Some(labels)) => {
            for g in distinct {
                for (name, values, code) in &base_treatments {
                    let masked: Vec<f64> = (0..cells)
                        .map(|c| if &labels[c / t] == g { values[c] } else { 0.0 })
                        .collect();
                    columns.push(CellColumn {
                        name: format!("{name}[{g}]"),
                        values: masked,
                        is_treatment: true,
                        effect_key: Some((*code, Some(g.clone()))),
                    });
                }
            }
        }
        _ => {
            for (name, values, code) in &base_treatments {
                columns.push(CellColumn {
                    name: name.clone(),
                    values: values.clone(),
                    is_treatment: true,
                    effect_key: Some((*code, None)),
                });
            }
        }
    }

    for k in 0..ds.n_covariates() {
        let values: Vec<f64> =
            (0..cells).map(|c| ds.covariate(c / t, c % t, k)).collect();
        columns.push(CellColumn {
            name: ds.covariate_names()[k].clone(),
            values,
            is_treatment: false,
            effect_key: None,
        });
    }
    for (name, values) in &spec.extra_columns {
        if values.len() != cells {
            return Err(Error::SchemaMismatch(format!("extra column `{name}` length mismatch")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite values in column `{name}`")));
        }
        columns.push(CellColumn {
            name: name.clone(),
            values: values.clone(),
            is_treatment: false,
            effect_key: None,
        });
    }

    // Within-transform the outcome and every regressor consistently.
    let y_raw: Vec<f64> = (0..cells).map(|c| ds.outcome(c / t, c % t)).collect();
    let (y_within, mut sweeps) = within_transform(
        &y_raw,
        n,
        t,
        spec.include_time_effects,
        w_ref,
        spec.demean_tol,
        spec.max_sweeps,
    )?;

    let mut kept: Vec<usize> = Vec::new();
    let mut transformed: Vec<Vec<f64>> = Vec::new();
    let mut beta: Vec<(String, f64)> = Vec::new();
    for (idx, col) in columns.iter().enumerate() {
        let pre_msq = weighted_mean_square(&col.values, w_ref);
        let (tv, s) = within_transform(
            &col.values,
            n,
            t,
            spec.include_time_effects,
            w_ref,
            spec.demean_tol,
            spec.max_sweeps,
        )?;
        sweeps = sweeps.max(s);
        let post_msq = weighted_mean_square(&tv, w_ref);
        if post_msq < WITHIN_VARIATION_TOL * pre_msq.max(1.0) {
            if col.is_treatment {
                return Err(Error::NoWithinVariation(col.name.clone()));
            }
            // Absorbed by the fixed effects; report a zero coefficient.
            beta.push((col.name.clone(), 0.0));
            continue;
        }
        kept.push(idx);
        transformed.push(tv);
    }
    if kept.is_empty() {
        return Err(Error::InvalidInput("no regressors survive the within transform".into()));
    }

    let p = kept.len();
    let sqrt_w: Option<Vec<f64>> =
        weights.as_ref().map(|w| w.iter().map(|v| v.sqrt()).collect());
    let mut design = DMatrix::<f64>::zeros(cells, p);
    let mut yv = DVector::<f64>::zeros(cells);
    for c in 0..cells {
        let s = sqrt_w.as_ref().map_or(1.0, |w| w[c]);
        yv[c] = s * y_within[c];
        for (j, tv) in transformed.iter().enumerate() {
            design[(c, j)] = s * tv[c];
        }
    }
    let fit = ols(&design, &yv)?;

    let clusters: Vec<usize> = (0..cells).map(|c| c / t).collect();
    let n_absorbed = n + if spec.include_time_effects { t.saturating_sub(1) } else { 0 };
    let cov = cluster_covariance(&design, &fit.residuals, &fit.xtx_inv, &clusters, n, n_absorbed);

    // Residuals on the transformed (unscaled) data for diagnostics.
    let mut residuals = y_within;
    for (j, tv) in transformed.iter().enumerate() {
        let b = fit.coefficients[j];
        for c in 0..cells {
            residuals[c] -= b * tv[c];
        }
    }

    for (pos, &idx) in kept.iter().enumerate() {
        if !columns[idx].is_treatment {
            beta.push((columns[idx].name.clone(), fit.coefficients[pos]));
        }
    }
    beta.sort_by(|a, b| a.0.cmp(&b.0));

    // Map (code, subgroup) -> solved coefficient position.
    let coef_of = |code: i64, group: &Option<String>| -> Option<usize> {
        kept.iter().enumerate().find_map(|(pos, &idx)| {
            let col = &columns[idx];
            match &col.effect_key {
                Some((c, g)) if *c == code && g == group => Some(pos),
                _ => None,
            }
        })
    };
    let n_used = match &weights {
        None => cells,
        Some(w) => w.iter().filter(|v| **v > 0.0).count(),
    };
    let (treated_code, control_code) = match &spec.treatment {
        TreatmentSpec::Arm => ds.arm_scheme().contrast(),
        // Exposure column against its implicit zero baseline.
        TreatmentSpec::Column { .. } => (1, 0),
    };
    let baseline = match &spec.treatment {
        TreatmentSpec::Arm => ds.arm_scheme().baseline_code(),
        TreatmentSpec::Column { .. } => 0,
    };
    let group_list: Vec<Option<String>> = match &groups {
        None => vec![None],
        Some(distinct) => distinct.iter().map(|g| Some(g.clone())).collect(),
    };
    let mut tau = Vec::with_capacity(group_list.len());
    for group in group_list {
        let term = |code: i64| -> Result<(f64, f64, Option<usize>)> {
            if code == baseline {
                return Ok((0.0, 0.0, None));
            }
            let pos = coef_of(code, &group).ok_or_else(|| {
                Error::NoWithinVariation(format!("arm {code} column missing from fit"))
            })?;
            Ok((fit.coefficients[pos], cov[(pos, pos)], Some(pos)))
        };
        let (c_t, v_t, p_t) = term(treated_code)?;
        let (c_c, v_c, p_c) = term(control_code)?;
        let cross = match (p_t, p_c) {
            (Some(a), Some(b)) => cov[(a, b)],
            _ => 0.0,
        };
        let var = (v_t + v_c - 2.0 * cross).max(0.0);
        tau.push(EffectEstimate {
            estimate: c_t - c_c,
            std_error: var.sqrt(),
            method,
            estimand,
            subgroup: group,
            n_used,
        });
    }

    Ok(FixedEffectsFit {
        tau,
        beta,
        n_units: n,
        n_times: t,
        demeaning_iterations: sweeps,
        converged: true,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{ArmScheme, PanelDataset, PanelParts, WindowConfig};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn panel(
        n: usize,
        t: usize,
        outcome: Vec<f64>,
        treatment: Vec<i64>,
        scheme: ArmScheme,
    ) -> PanelDataset {
        PanelDataset::from_parts(PanelParts {
            unit_ids: (0..n).map(|i| format!("u{i}")).collect(),
            times: (1..=t as i64).collect(),
            outcome,
            treatment,
            covariate_names: vec![],
            covariates: vec![],
            baseline_names: vec![],
            baseline: vec![],
            arm_scheme: scheme,
            window: WindowConfig::default(),
        })
        .unwrap()
    }

    #[test]
    fn two_way_demeaning_hand_examples() {
        // [[1,2],[3,4]] is additive in (i,t): fully absorbed.
        let (v, sweeps) =
            within_transform(&[1.0, 2.0, 3.0, 4.0], 2, 2, true, None, 1e-10, 500).unwrap();
        for x in &v {
            assert_abs_diff_eq!(*x, 0.0, epsilon = 1e-12);
        }
        assert_eq!(sweeps, 2);

        let (v, _) =
            within_transform(&[1.0, 2.0, 3.0, 5.0], 2, 2, true, None, 1e-10, 500).unwrap();
        let expect = [0.25, -0.25, -0.25, 0.25];
        for (a, b) in v.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn unit_demeaning_kills_constants() {
        let (v, sweeps) = within_transform(&[7.0; 12], 3, 4, false, None, 1e-10, 500).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
        assert_eq!(sweeps, 1);
    }

    #[test]
    fn within_transform_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..60).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (once, _) = within_transform(&vals, 10, 6, true, None, 1e-12, 500).unwrap();
        let (twice, _) = within_transform(&once, 10, 6, true, None, 1e-12, 500).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
        }
    }

    #[test]
    fn exact_effect_with_unit_confounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, t) = (8, 4);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let mut w = vec![0i64; n * t];
        let mut y = vec![0.0; n * t];
        for i in 0..n {
            for ti in 0..t {
                // Confounded assignment: high-u units are treated more.
                let p = if u[i] > 0.0 { 0.8 } else { 0.2 };
                let wi = rng.gen_bool(p) as i64;
                w[i * t + ti] = wi;
                y[i * t + ti] = 5.0 * wi as f64 + u[i];
            }
        }
        // Guarantee within-unit variation for every unit.
        for i in 0..n {
            w[i * t] = 0;
            w[i * t + 1] = 1;
            y[i * t] = u[i];
            y[i * t + 1] = 5.0 + u[i];
        }
        let ds = panel(n, t, y, w, ArmScheme::binary());
        let fit = fit_fe(&ds, &FixedEffectsSpec::default()).unwrap();
        assert_abs_diff_eq!(fit.tau[0].estimate, 5.0, epsilon = 1e-8);
        assert_eq!(fit.tau[0].method, Method::FixedEffects);
    }

    #[test]
    fn exact_effect_with_time_shocks_two_way() {
        let (n, t) = (6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let v: Vec<f64> = (0..t).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let mut w = vec![0i64; n * t];
        let mut y = vec![0.0; n * t];
        for i in 0..n {
            for ti in 0..t {
                let wi = ((i + ti) % 2) as i64;
                w[i * t + ti] = wi;
                y[i * t + ti] = 5.0 * wi as f64 + u[i] + v[ti];
            }
        }
        let ds = panel(n, t, y, w, ArmScheme::binary());
        let spec = FixedEffectsSpec { include_time_effects: true, ..Default::default() };
        let fit = fit_fe(&ds, &spec).unwrap();
        assert_abs_diff_eq!(fit.tau[0].estimate, 5.0, epsilon = 1e-8);
    }

    #[test]
    fn unit_constant_treatment_has_no_within_variation() {
        let (n, t) = (4, 3);
        let w: Vec<i64> = (0..n * t).map(|c| ((c / t) % 2) as i64).collect();
        let y: Vec<f64> = (0..n * t).map(|c| c as f64).collect();
        let ds = panel(n, t, y, w, ArmScheme::binary());
        let err = fit_fe(&ds, &FixedEffectsSpec::default()).unwrap_err();
        assert!(matches!(err, Error::NoWithinVariation(_)), "{err:?}");
    }

    #[test]
    fn uniform_propensity_weights_match_unweighted_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, t) = (12, 5);
        let mut w = vec![0i64; n * t];
        let mut y = vec![0.0; n * t];
        for i in 0..n {
            for ti in 0..t {
                let wi = rng.gen_bool(0.5) as i64;
                w[i * t + ti] = wi;
                y[i * t + ti] = 2.0 * wi as f64 + rng.gen_range(-1.0..1.0);
            }
        }
        w[0] = 0;
        w[1] = 1;
        let ds = panel(n, t, y, w, ArmScheme::binary());
        let plain = fit_fe(&ds, &FixedEffectsSpec::default()).unwrap();
        // e = 0.5 gives every cell weight exactly 2.0, which normalizes to
        // exactly 1.0; the computation is then bit-identical.
        let weighted =
            fit_weighted_fe(&ds, &FixedEffectsSpec::default(), &vec![0.5; n * t]).unwrap();
        assert_eq!(plain.tau[0].estimate, weighted.tau[0].estimate);
        assert_eq!(plain.tau[0].std_error, weighted.tau[0].std_error);
        assert_eq!(weighted.tau[0].method, Method::WeightedFixedEffects);
    }

    #[test]
    fn three_arm_contrasts_are_coefficient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (n, t) = (9, 4);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut w = vec![0i64; n * t];
        let mut y = vec![0.0; n * t];
        for i in 0..n {
            for ti in 0..t {
                let code = 1 + ((i + ti) % 3) as i64;
                w[i * t + ti] = code;
                let lift = match code {
                    2 => 2.0,
                    3 => 7.0,
                    _ => 0.0,
                };
                y[i * t + ti] = lift + u[i];
            }
        }
        for (contrast, expect) in [((3, 2), 5.0), ((3, 1), 7.0), ((2, 1), 2.0)] {
            let scheme = ArmScheme::three_arm(contrast).unwrap();
            let ds = panel(n, t, y.clone(), w.clone(), scheme);
            let fit = fit_fe(&ds, &FixedEffectsSpec::default()).unwrap();
            assert_abs_diff_eq!(fit.tau[0].estimate, expect, epsilon = 1e-8);
            assert!(fit.tau[0].std_error >= 0.0);
        }
    }

    #[test]
    fn subgroup_interactions_report_per_group_effects() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (n, t) = (10, 6);
        let labels: Vec<String> =
            (0..n).map(|i| if i % 2 == 0 { "even".into() } else { "odd".into() }).collect();
        let mut w = vec![0i64; n * t];
        let mut y = vec![0.0; n * t];
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        for i in 0..n {
            for ti in 0..t {
                let wi = ((ti + i) % 2) as i64;
                let effect = if i % 2 == 0 { 3.0 } else { 5.0 };
                w[i * t + ti] = wi;
                y[i * t + ti] = effect * wi as f64 + u[i];
            }
        }
        let ds = panel(n, t, y, w, ArmScheme::binary());
        let spec = FixedEffectsSpec { interaction_labels: Some(labels), ..Default::default() };
        let fit = fit_fe(&ds, &spec).unwrap();
        assert_eq!(fit.tau.len(), 2);
        let by_group: std::collections::BTreeMap<&str, f64> = fit
            .tau
            .iter()
            .map(|e| (e.subgroup.as_deref().unwrap(), e.estimate))
            .collect();
        assert_abs_diff_eq!(by_group["even"], 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(by_group["odd"], 5.0, epsilon = 1e-8);
    }

    #[test]
    fn constant_outcome_shift_is_absorbed() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (n, t) = (7, 4);
        let mut w = vec![0i64; n * t];
        let mut y = vec![0.0; n * t];
        for c in 0..n * t {
            w[c] = rng.gen_bool(0.5) as i64;
            y[c] = 1.5 * w[c] as f64 + rng.gen_range(-2.0..2.0);
        }
        w[0] = 0;
        w[1] = 1;
        let base = fit_fe(&panel(n, t, y.clone(), w.clone(), ArmScheme::binary()), &Default::default())
            .unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + 1000.0).collect();
        let moved = fit_fe(&panel(n, t, shifted, w, ArmScheme::binary()), &Default::default())
            .unwrap();
        assert_abs_diff_eq!(base.tau[0].estimate, moved.tau[0].estimate, epsilon = 1e-7);
    }

    #[test]
    fn residuals_are_orthogonal_to_regressors() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (n, t) = (20, 5);
        let mut w = vec![0i64; n * t];
        let mut y = vec![0.0; n * t];
        for c in 0..n * t {
            w[c] = rng.gen_bool(0.4) as i64;
            y[c] = 2.0 * w[c] as f64 + rng.gen_range(-4.0..4.0);
        }
        w[0] = 0;
        w[1] = 1;
        let ds = panel(n, t, y, w.clone(), ArmScheme::binary());
        let fit = fit_fe(&ds, &FixedEffectsSpec::default()).unwrap();
        let (wt, _) = within_transform(
            &w.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            n,
            t,
            false,
            None,
            1e-10,
            500,
        )
        .unwrap();
        let dot: f64 =
            fit.residuals.iter().zip(wt.iter()).map(|(r, x)| r * x).sum();
        assert!(
            (dot / (n * t) as f64).abs() < 1e-6,
            "residuals not orthogonal: {dot}"
        );
    }

    #[test]
    fn exact_private_spillover_on_a_ring() {
        // Cycle graph: every unit has two neighbors, none isolated.
        let (n, t) = (10, 4);
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let net = Network::from_edges(n, &edges).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let w: Vec<i64> = (0..n * t).map(|_| rng.gen_bool(0.5) as i64).collect();
        let mut y = vec![0.0; n * t];
        for i in 0..n {
            for ti in 0..t {
                let treated_neighbors = net
                    .neighbors(i)
                    .iter()
                    .filter(|&&j| w[j * t + ti] == 1)
                    .count();
                let z = (treated_neighbors > 0) as u8 as f64;
                y[i * t + ti] = 10.0 * z + u[i];
            }
        }
        let ds = panel(n, t, y, w, ArmScheme::binary());
        let fit =
            fit_spillover_fe(&ds, &net, &FixedEffectsSpec::default(), NeighborhoodKind::Private)
                .unwrap();
        assert_abs_diff_eq!(fit.tau[0].estimate, 10.0, epsilon = 1e-8);
        assert_eq!(fit.tau[0].method, Method::SpilloverFixedEffects);
        assert_eq!(fit.tau[0].estimand, Estimand::Spillover);
    }

    #[test]
    fn spillover_requires_some_connected_units() {
        let (n, t) = (4, 3);
        let net = Network::from_edges(n, &[]).unwrap();
        let w: Vec<i64> = (0..n * t).map(|c| (c % 2) as i64).collect();
        let y: Vec<f64> = (0..n * t).map(|c| c as f64).collect();
        let ds = panel(n, t, y, w, ArmScheme::binary());
        let err =
            fit_spillover_fe(&ds, &net, &FixedEffectsSpec::default(), NeighborhoodKind::Private)
                .unwrap_err();
        assert!(matches!(err, Error::EmptyAfterIsolationFilter), "{err:?}");
    }
}
