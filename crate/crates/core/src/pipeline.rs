//! Orchestration: maps an estimator name onto the right computation for
//! the requested estimand, handling propensity fitting, subgroup slicing,
//! and spillover exposure construction along the way.
//!
//! Cross-sectional estimators run on a single period (the last one by
//! default); panel estimators pool every period.

use crate::design::{fit_logistic, fit_propensity_matrix, gather_features, LogisticConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    doubly_robust, ipw_estimate, linear_adjust, naive_diff, ols_slope, EffectEstimate, Estimand,
    Method,
};
use crate::fixed_effects::{fit_fe, fit_spillover_fe, fit_weighted_fe, FixedEffectsSpec};
use crate::network::{neighborhood_treatment, Network, NeighborhoodKind};
use crate::panel::PanelDataset;

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    /// Period index for cross-sectional estimators; defaults to the last.
    pub period_index: Option<usize>,
    /// Columns fed to propensity and adjustment models; defaults to the
    /// dataset's own covariates (network-derived columns excluded).
    pub feature_columns: Option<Vec<String>>,
    /// Per-unit labels; when present one estimate is produced per label.
    pub subgroup_labels: Option<Vec<String>>,
    /// Absorb common time shocks in the panel estimators.
    pub include_time_effects: bool,
    pub logistic: LogisticConfig,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            period_index: None,
            feature_columns: None,
            subgroup_labels: None,
            include_time_effects: false,
            logistic: LogisticConfig::default(),
        }
    }
}

impl AnalysisOptions {
    fn period(&self, ds: &PanelDataset) -> Result<usize> {
        let t = self.period_index.unwrap_or(ds.n_times() - 1);
        if t >= ds.n_times() {
            return Err(Error::InvalidInput(format!(
                "period index {t} out of range for {} periods",
                ds.n_times()
            )));
        }
        Ok(t)
    }

    fn features(&self, ds: &PanelDataset) -> Vec<String> {
        self.feature_columns.clone().unwrap_or_else(|| own_covariate_columns(ds))
    }

    fn fe_spec(&self) -> FixedEffectsSpec {
        FixedEffectsSpec {
            include_time_effects: self.include_time_effects,
            interaction_labels: self.subgroup_labels.clone(),
            ..FixedEffectsSpec::default()
        }
    }
}

/// Covariate columns that describe the unit itself, excluding the
/// network-derived columns a spillover dataset carries.
pub fn own_covariate_columns(ds: &PanelDataset) -> Vec<String> {
    ds.covariate_names()
        .iter()
        .filter(|n| n.as_str() != "self_contrib" && !n.contains("_nbr_"))
        .cloned()
        .collect()
}

/// Estimates the direct (own treatment) effect with the named method.
pub fn estimate_main(
    ds: &PanelDataset,
    method: Method,
    opts: &AnalysisOptions,
) -> Result<Vec<EffectEstimate>> {
    if let Some(labels) = &opts.subgroup_labels {
        if labels.len() != ds.n_units() {
            return Err(Error::SchemaMismatch("one subgroup label per unit required".into()));
        }
    }
    match method {
        Method::FixedEffects => Ok(fit_fe(ds, &opts.fe_spec())?.tau),
        Method::WeightedFixedEffects => {
            let (e, _) = fit_propensity_matrix(ds, &opts.features(ds), &opts.logistic)?;
            Ok(fit_weighted_fe(ds, &opts.fe_spec(), &e)?.tau)
        }
        Method::SpilloverFixedEffects => Err(Error::InvalidInput(
            "spillover estimation needs a network; use the spillover estimand".into(),
        )),
        _ => cross_sectional_main(ds, method, opts),
    }
}

fn cross_sectional_main(
    ds: &PanelDataset,
    method: Method,
    opts: &AnalysisOptions,
) -> Result<Vec<EffectEstimate>> {
    let t = opts.period(ds)?;
    let cols = opts.features(ds);
    let k = cols.len();
    let y = ds.outcome_at(t);
    let w = ds.treated_at(t);
    let x = gather_features(ds, &cols, t)?;

    // Propensities are fit on the full cross-section; subgroup estimates
    // reuse them rather than refitting on thin slices.
    let e: Option<Vec<f64>> = match method {
        Method::Ipw | Method::DoublyRobust => {
            let model = fit_logistic(&x, k, &w, &cols, &opts.logistic)?;
            Some(model.predict(&x)?)
        }
        _ => None,
    };

    let estimate_rows = |rows: &[usize]| -> Result<EffectEstimate> {
        let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let ws: Vec<u8> = rows.iter().map(|&i| w[i]).collect();
        let xs: Vec<f64> = rows
            .iter()
            .flat_map(|&i| x[i * k..(i + 1) * k].iter().copied())
            .collect();
        match method {
            Method::Correlation => naive_diff(&ys, &ws),
            Method::Regression => {
                let treat: Vec<f64> = ws.iter().map(|&v| v as f64).collect();
                linear_adjust(&ys, &treat, &xs, k, Method::Regression)
            }
            Method::Ipw => {
                let es: Vec<f64> =
                    rows.iter().map(|&i| e.as_ref().unwrap()[i]).collect();
                ipw_estimate(&ys, &ws, &es)
            }
            Method::DoublyRobust => {
                let es: Vec<f64> =
                    rows.iter().map(|&i| e.as_ref().unwrap()[i]).collect();
                doubly_robust(&ys, &ws, &xs, k, &es)
            }
            _ => unreachable!("panel methods handled by the caller"),
        }
    };

    match &opts.subgroup_labels {
        None => {
            let all: Vec<usize> = (0..ds.n_units()).collect();
            Ok(vec![estimate_rows(&all)?])
        }
        Some(labels) => {
            let mut distinct: Vec<String> = labels.clone();
            distinct.sort();
            distinct.dedup();
            let mut out = Vec::with_capacity(distinct.len());
            for g in &distinct {
                let rows: Vec<usize> =
                    (0..ds.n_units()).filter(|&i| &labels[i] == g).collect();
                out.push(estimate_rows(&rows)?.with_subgroup(g.clone()));
            }
            Ok(out)
        }
    }
}

/// Estimates the neighborhood-exposure effect with the named method.
/// Isolated units are excluded throughout. `Ipw`, `DoublyRobust`, and
/// `WeightedFixedEffects` need a binary exposure and so reject the
/// continuous (public) exposure map.
pub fn estimate_spillover(
    ds: &PanelDataset,
    network: &Network,
    kind: NeighborhoodKind,
    method: Method,
    opts: &AnalysisOptions,
) -> Result<Vec<EffectEstimate>> {
    if network.n_units() != ds.n_units() {
        return Err(Error::SchemaMismatch("network and dataset unit counts differ".into()));
    }
    match method {
        Method::FixedEffects | Method::SpilloverFixedEffects => {
            Ok(fit_spillover_fe(ds, network, &opts.fe_spec(), kind)?.tau)
        }
        Method::WeightedFixedEffects => {
            require_binary_exposure(kind, method)?;
            let weights = exposure_propensity_weights(ds, network, kind, opts)?;
            let spec = FixedEffectsSpec { weights: Some(weights), ..opts.fe_spec() };
            let fit = fit_spillover_fe(ds, network, &spec, kind)?;
            Ok(fit.tau.into_iter().map(|e| e.with_method(Method::WeightedFixedEffects)).collect())
        }
        Method::Correlation | Method::Regression | Method::Ipw | Method::DoublyRobust => {
            cross_sectional_spillover(ds, network, kind, method, opts)
        }
    }
}

fn require_binary_exposure(kind: NeighborhoodKind, method: Method) -> Result<()> {
    if kind == NeighborhoodKind::Public {
        return Err(Error::InvalidInput(format!(
            "{method} needs a binary exposure; the public map is continuous"
        )));
    }
    Ok(())
}

fn cross_sectional_spillover(
    ds: &PanelDataset,
    network: &Network,
    kind: NeighborhoodKind,
    method: Method,
    opts: &AnalysisOptions,
) -> Result<Vec<EffectEstimate>> {
    let t = opts.period(ds)?;
    let cols = opts.features(ds);
    let k = cols.len();
    let exposure = neighborhood_treatment(ds, network, kind, t)?;
    let keep: Vec<usize> = (0..ds.n_units()).filter(|&i| exposure[i].is_some()).collect();
    if keep.is_empty() {
        return Err(Error::EmptyAfterIsolationFilter);
    }
    let y_all = ds.outcome_at(t);
    let x_all = gather_features(ds, &cols, t)?;

    let e: Option<Vec<f64>> = match method {
        Method::Ipw | Method::DoublyRobust => {
            require_binary_exposure(kind, method)?;
            let labels: Vec<u8> =
                keep.iter().map(|&i| (exposure[i].unwrap() > 0.5) as u8).collect();
            let feats: Vec<f64> = keep
                .iter()
                .flat_map(|&i| x_all[i * k..(i + 1) * k].iter().copied())
                .collect();
            let model = fit_logistic(&feats, k, &labels, &cols, &opts.logistic)?;
            // Indexed by position within `keep`.
            Some(model.predict(&feats)?)
        }
        _ => None,
    };

    let estimate_rows = |rows: &[usize]| -> Result<EffectEstimate> {
        // `rows` holds positions into `keep`.
        let ys: Vec<f64> = rows.iter().map(|&p| y_all[keep[p]]).collect();
        let zs: Vec<f64> = rows.iter().map(|&p| exposure[keep[p]].unwrap()).collect();
        let xs: Vec<f64> = rows
            .iter()
            .flat_map(|&p| x_all[keep[p] * k..(keep[p] + 1) * k].iter().copied())
            .collect();
        match method {
            Method::Correlation => ols_slope(&ys, &zs),
            Method::Regression => linear_adjust(&ys, &zs, &xs, k, Method::Regression),
            Method::Ipw => {
                let ws: Vec<u8> = zs.iter().map(|&z| (z > 0.5) as u8).collect();
                let es: Vec<f64> = rows.iter().map(|&p| e.as_ref().unwrap()[p]).collect();
                ipw_estimate(&ys, &ws, &es)
            }
            Method::DoublyRobust => {
                let ws: Vec<u8> = zs.iter().map(|&z| (z > 0.5) as u8).collect();
                let es: Vec<f64> = rows.iter().map(|&p| e.as_ref().unwrap()[p]).collect();
                doubly_robust(&ys, &ws, &xs, k, &es)
            }
            _ => unreachable!(),
        }
    };

    let labeled = |est: EffectEstimate| est.with_estimand(Estimand::Spillover);
    match &opts.subgroup_labels {
        None => {
            let all: Vec<usize> = (0..keep.len()).collect();
            Ok(vec![labeled(estimate_rows(&all)?)])
        }
        Some(labels) => {
            if labels.len() != ds.n_units() {
                return Err(Error::SchemaMismatch("one subgroup label per unit required".into()));
            }
            let mut distinct: Vec<String> = keep.iter().map(|&i| labels[i].clone()).collect();
            distinct.sort();
            distinct.dedup();
            let mut out = Vec::with_capacity(distinct.len());
            for g in &distinct {
                let rows: Vec<usize> = (0..keep.len())
                    .filter(|&p| &labels[keep[p]] == g)
                    .collect();
                out.push(labeled(estimate_rows(&rows)?).with_subgroup(g.clone()));
            }
            Ok(out)
        }
    }
}

/// Inverse-propensity weights for a binary neighborhood exposure, fit
/// per period on the connected units (own covariates by default).
/// Isolated units keep weight 1; the spillover estimator drops them.
///
/// A period where every connected unit shares one exposure level falls
/// back to the clipped marginal share rather than failing.
pub fn exposure_propensity_weights(
    ds: &PanelDataset,
    network: &Network,
    kind: NeighborhoodKind,
    opts: &AnalysisOptions,
) -> Result<Vec<f64>> {
    let n = ds.n_units();
    let t_count = ds.n_times();
    let cols = opts.features(ds);
    let k = cols.len();
    let (lo, hi) = opts.logistic.clip_bounds;
    let mut weights = vec![1.0; n * t_count];
    for t in 0..t_count {
        let exposure = neighborhood_treatment(ds, network, kind, t)?;
        let keep: Vec<usize> = (0..n).filter(|&i| exposure[i].is_some()).collect();
        if keep.is_empty() {
            continue;
        }
        let labels: Vec<u8> =
            keep.iter().map(|&i| (exposure[i].unwrap() > 0.5) as u8).collect();
        let x_all = gather_features(ds, &cols, t)?;
        let feats: Vec<f64> = keep
            .iter()
            .flat_map(|&i| x_all[i * k..(i + 1) * k].iter().copied())
            .collect();
        let probs = match fit_logistic(&feats, k, &labels, &cols, &opts.logistic) {
            Ok(model) => model.predict(&feats)?,
            Err(Error::SingleClass) => {
                let share =
                    labels.iter().map(|&l| l as f64).sum::<f64>() / labels.len() as f64;
                vec![share.clamp(lo, hi); keep.len()]
            }
            Err(e) => return Err(e),
        };
        for (pos, &i) in keep.iter().enumerate() {
            let e = probs[pos];
            weights[i * t_count + t] =
                if labels[pos] == 1 { 1.0 / e } else { 1.0 / (1.0 - e) };
        }
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{ArmScheme, PanelParts, WindowConfig};
    use crate::simulation::{
        gen_contemporaneous, gen_spillover, ExposureMap, NetworkSpec, Scenario, Schedule,
        SimulationConfig, SpilloverParams,
    };
    use approx::assert_abs_diff_eq;

    fn unconfounded_config(seed: u64) -> SimulationConfig {
        SimulationConfig {
            n_units: 2500,
            n_times: 3,
            covariate_dim: 2,
            scenario: Scenario::TimeInvariantUv,
            seed,
            confounder_correlation: 0.0,
            treatment_intercept: Schedule::Constant(0.0),
            // Randomized: nothing drives treatment, so even the naive
            // contrast must land on the truth.
            treatment_covariate_effects: vec![0.0, 0.0],
            confounder_effect: Schedule::Constant(0.0),
            treatment_effect: Schedule::Constant(5.0),
            outcome_covariate_effects: vec![2.0, -1.0],
            outcome_confounder_effect: Schedule::Constant(0.0),
            outcome_noise_sd: Schedule::Constant(1.0),
            spillover: None,
        }
    }

    #[test]
    fn every_main_method_recovers_an_unconfounded_effect() {
        let study = gen_contemporaneous(&unconfounded_config(31)).unwrap();
        let opts = AnalysisOptions::default();
        for method in [
            Method::Correlation,
            Method::Ipw,
            Method::Regression,
            Method::DoublyRobust,
            Method::FixedEffects,
            Method::WeightedFixedEffects,
        ] {
            let est = estimate_main(&study.dataset, method, &opts).unwrap();
            assert_eq!(est.len(), 1);
            assert!(
                (est[0].estimate - 5.0).abs() < 0.4,
                "{method}: {}",
                est[0].estimate
            );
        }
    }

    #[test]
    fn subgroup_estimates_split_by_label() {
        // Outcome effect differs by a baseline group; both the
        // cross-sectional and panel paths should expose the split.
        let mut rng_state = 123u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 33) as f64 / (1u64 << 31) as f64
        };
        let (n, t) = (600, 3);
        let mut y = vec![0.0; n * t];
        let mut w = vec![0i64; n * t];
        let labels: Vec<String> =
            (0..n).map(|i| if i % 2 == 0 { "a".into() } else { "b".into() }).collect();
        for i in 0..n {
            for ti in 0..t {
                let wi = (next() < 0.5) as i64;
                let effect = if i % 2 == 0 { 2.0 } else { 6.0 };
                w[i * t + ti] = wi;
                y[i * t + ti] = effect * wi as f64 + (next() - 0.5);
            }
        }
        let ds = PanelDataset::from_parts(PanelParts {
            unit_ids: (0..n).map(|i| format!("u{i}")).collect(),
            times: (1..=t as i64).collect(),
            outcome: y,
            treatment: w,
            covariate_names: vec![],
            covariates: vec![],
            baseline_names: vec![],
            baseline: vec![],
            arm_scheme: ArmScheme::binary(),
            window: WindowConfig::default(),
        })
        .unwrap();
        let opts = AnalysisOptions {
            subgroup_labels: Some(labels),
            ..AnalysisOptions::default()
        };
        for method in [Method::Correlation, Method::FixedEffects] {
            let est = estimate_main(&ds, method, &opts).unwrap();
            assert_eq!(est.len(), 2, "{method}");
            let a = est.iter().find(|e| e.subgroup.as_deref() == Some("a")).unwrap();
            let b = est.iter().find(|e| e.subgroup.as_deref() == Some("b")).unwrap();
            assert_abs_diff_eq!(a.estimate, 2.0, epsilon = 0.4);
            assert_abs_diff_eq!(b.estimate, 6.0, epsilon = 0.4);
        }
    }

    fn private_spillover_config(seed: u64) -> SimulationConfig {
        SimulationConfig {
            n_units: 1500,
            n_times: 4,
            covariate_dim: 2,
            scenario: Scenario::TimeInvariantUv,
            seed,
            confounder_correlation: 0.0,
            treatment_intercept: Schedule::Constant(-0.5),
            treatment_covariate_effects: vec![0.4, 0.3],
            confounder_effect: Schedule::Constant(0.0),
            treatment_effect: Schedule::Constant(3.0),
            outcome_covariate_effects: vec![1.0, -1.0],
            outcome_confounder_effect: Schedule::Constant(0.0),
            outcome_noise_sd: Schedule::Constant(1.0),
            spillover: Some(SpilloverParams {
                neighbor_covariate_effect: Schedule::Constant(0.0),
                peer_intercept: Schedule::Constant(-1.5),
                peer_covariate_effects: vec![0.3, 0.2],
                peer_neighbor_covariate_effect: Schedule::Constant(0.0),
                peer_confounder_effect: Schedule::Constant(0.0),
                spillover_effect: Schedule::Constant(4.0),
                exposure_map: ExposureMap::Indicator,
                network: NetworkSpec::ErdosRenyi { mean_degree: 6.0 },
            }),
        }
    }

    #[test]
    fn spillover_methods_agree_on_an_unconfounded_private_design() {
        let study = gen_spillover(&private_spillover_config(41)).unwrap();
        let net = study.network.as_ref().unwrap();
        let opts = AnalysisOptions::default();
        for method in [
            Method::Correlation,
            Method::Ipw,
            Method::DoublyRobust,
            Method::SpilloverFixedEffects,
            Method::WeightedFixedEffects,
        ] {
            let est = estimate_spillover(
                &study.dataset,
                net,
                NeighborhoodKind::Private,
                method,
                &opts,
            )
            .unwrap();
            assert_eq!(est[0].estimand, Estimand::Spillover);
            assert!(
                (est[0].estimate - 4.0).abs() < 0.5,
                "{method}: {}",
                est[0].estimate
            );
        }
    }

    #[test]
    fn public_exposure_rejects_binary_only_methods() {
        let mut cfg = private_spillover_config(43);
        cfg.n_units = 300;
        if let Some(sp) = cfg.spillover.as_mut() {
            sp.exposure_map = ExposureMap::Log2Shift;
        }
        let study = gen_spillover(&cfg).unwrap();
        let net = study.network.as_ref().unwrap();
        let opts = AnalysisOptions::default();
        for method in [Method::Ipw, Method::DoublyRobust, Method::WeightedFixedEffects] {
            let err = estimate_spillover(
                &study.dataset,
                net,
                NeighborhoodKind::Public,
                method,
                &opts,
            )
            .unwrap_err();
            assert!(matches!(err, Error::InvalidInput(_)), "{method}: {err:?}");
        }
        // The continuous-exposure fallbacks still work.
        for method in [Method::Correlation, Method::Regression, Method::FixedEffects] {
            estimate_spillover(&study.dataset, net, NeighborhoodKind::Public, method, &opts)
                .unwrap();
        }
    }

    #[test]
    fn main_estimand_rejects_the_spillover_method() {
        let study = gen_contemporaneous(&unconfounded_config(45)).unwrap();
        let err = estimate_main(
            &study.dataset,
            Method::SpilloverFixedEffects,
            &AnalysisOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn own_covariates_exclude_network_columns() {
        let study = gen_spillover(&private_spillover_config(47)).unwrap();
        assert_eq!(own_covariate_columns(&study.dataset), vec!["x0", "x1"]);
    }
}
