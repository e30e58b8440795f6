//! Design-stage machinery: logistic propensity models, covariate balance
//! metrics, coarsened exact matching, and propensity stratification.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::PanelDataset;

/// Linear predictors are clamped to this magnitude before applying the
/// logistic function; beyond it the probabilities are 1 ulp from {0,1}.
const ETA_CLAMP: f64 = 35.0;
/// IRLS working weights are floored here to keep the normal equations
/// solvable when fitted probabilities saturate.
const WEIGHT_FLOOR: f64 = 1e-10;
/// A coefficient this large on the standardized scale means the classes are
/// (quasi-)separated: the likelihood has no finite maximizer.
const SEPARATION_BOUND: f64 = 30.0;
/// Columns with standard deviation below this are treated as constant.
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct LogisticConfig {
    /// Convergence tolerance on the max coefficient change per iteration
    /// (standardized scale).
    pub tol: f64,
    pub max_iter: usize,
    /// Predicted probabilities are clipped into this closed interval.
    pub clip_bounds: (f64, f64),
    /// Ridge jitter added to the normal-equation diagonal for stability.
    pub ridge: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { tol: 1e-8, max_iter: 100, clip_bounds: (0.01, 0.99), ridge: 1e-8 }
    }
}

impl LogisticConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.clip_bounds;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::invalid_config(
                "clip_bounds",
                "must satisfy 0 < lo < hi < 1",
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid_config("tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid_config("max_iter", "must be at least 1"));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::invalid_config("ridge", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Fitted logistic propensity model. Coefficients are on the original
/// feature scale, intercept first; constant features get coefficient 0 and
/// standard error 0.
#[derive(Debug, Clone)]
pub struct PropensityModel {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// "intercept" followed by the caller's feature names.
    pub feature_names: Vec<String>,
    pub converged: bool,
    /// True when some standardized coefficient ran past the separation
    /// bound; coefficients are clipped there and `converged` is false.
    pub separated: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub clip_bounds: (f64, f64),
}

impl PropensityModel {
    pub fn n_features(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// The intercept-only probability, clipped. This is the prediction an
    /// intercept-only (zero-feature) model gives every row.
    pub fn intercept_probability(&self) -> f64 {
        clip(sigmoid(self.coefficients[0].clamp(-ETA_CLAMP, ETA_CLAMP)), self.clip_bounds)
    }

    /// Clipped propensities for row-major `features` with the same columns
    /// the model was fitted on.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        let k = self.n_features();
        if k == 0 {
            // Row count is not inferable from an empty feature slice.
            return Err(Error::InvalidInput(
                "zero-feature model: use intercept_probability".into(),
            ));
        }
        if features.len() % k != 0 {
            return Err(Error::SchemaMismatch(format!(
                "feature row width {} does not divide into {k} columns",
                features.len()
            )));
        }
        let n = features.len() / k;
        let mut out = Vec::with_capacity(n);
        for row in 0..n {
            let mut eta = self.coefficients[0];
            for j in 0..k {
                eta += self.coefficients[1 + j] * features[row * k + j];
            }
            out.push(clip(sigmoid(eta.clamp(-ETA_CLAMP, ETA_CLAMP)), self.clip_bounds));
        }
        Ok(out)
    }
}

/// Clipped propensities; thin wrapper kept for symmetry with `fit_logistic`.
pub fn predict_propensity(model: &PropensityModel, features: &[f64]) -> Result<Vec<f64>> {
    model.predict(features)
}

#[inline]
fn sigmoid(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

#[inline]
fn clip(p: f64, bounds: (f64, f64)) -> f64 {
    p.clamp(bounds.0, bounds.1)
}

/// log(1 + e^eta) without overflow.
#[inline]
fn log1p_exp(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// Maximum-likelihood logistic regression of `labels` on `features`
/// (row-major, `k` columns, no intercept column; one is added internally).
///
/// Features are standardized internally for conditioning; reported
/// coefficients and standard errors are on the original scale. Standard
/// errors come from the inverse Fisher information at the final iterate.
pub fn fit_logistic(
    features: &[f64],
    k: usize,
    labels: &[u8],
    feature_names: &[String],
    cfg: &LogisticConfig,
) -> Result<PropensityModel> {
    fit_logistic_weighted(features, k, labels, None, feature_names, cfg)
}

/// `fit_logistic` with per-row nonnegative weights (e.g. design-stage
/// matching weights). `None` means unit weights.
pub fn fit_logistic_weighted(
    features: &[f64],
    k: usize,
    labels: &[u8],
    weights: Option<&[f64]>,
    feature_names: &[String],
    cfg: &LogisticConfig,
) -> Result<PropensityModel> {
    cfg.validate()?;
    let n = labels.len();
    if n == 0 {
        return Err(Error::InvalidInput("no rows".into()));
    }
    if features.len() != n * k {
        return Err(Error::SchemaMismatch(format!(
            "feature matrix has {} entries, expected {} rows x {} columns",
            features.len(),
            n,
            k
        )));
    }
    if feature_names.len() != k {
        return Err(Error::SchemaMismatch("feature name count mismatch".into()));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::SchemaMismatch("weight length mismatch".into()));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::AllWeightsZero);
        }
    }
    let ones = labels.iter().filter(|&&y| y == 1).count();
    if ones == 0 || ones == n {
        return Err(Error::SingleClass);
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }

    // Standardize columns; constant columns are dropped from the solve and
    // restored as zero coefficients afterwards.
    let mut means = vec![0.0; k];
    let mut sds = vec![0.0; k];
    for j in 0..k {
        let mut sum = 0.0;
        for i in 0..n {
            sum += features[i * k + j];
        }
        let m = sum / n as f64;
        let mut ss = 0.0;
        for i in 0..n {
            let d = features[i * k + j] - m;
            ss += d * d;
        }
        means[j] = m;
        sds[j] = (ss / n as f64).sqrt();
    }
    let kept: Vec<usize> = (0..k).filter(|&j| sds[j] > VARIANCE_FLOOR).collect();
    let p = 1 + kept.len();

    let mut x = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for (c, &j) in kept.iter().enumerate() {
            x[(i, 1 + c)] = (features[i * k + j] - means[j]) / sds[j];
        }
    }

    let mut beta = DVector::<f64>::zeros(p);
    let mut converged = false;
    let mut iterations = 0;
    let row_weight = |i: usize| weights.map_or(1.0, |w| w[i]);

    let mut eta = DVector::<f64>::zeros(n);
    let mut irls_w = vec![0.0; n];
    for iter in 1..=cfg.max_iter {
        iterations = iter;
        eta = &x * &beta;
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwz = DVector::<f64>::zeros(p);
        for i in 0..n {
            let e = eta[i].clamp(-ETA_CLAMP, ETA_CLAMP);
            let mu = sigmoid(e);
            let wu = (mu * (1.0 - mu)).max(WEIGHT_FLOOR);
            irls_w[i] = row_weight(i) * wu;
            let z = e + (labels[i] as f64 - mu) / wu;
            for a in 0..p {
                let xa = x[(i, a)];
                let wxa = irls_w[i] * xa;
                xtwz[a] += wxa * z;
                for b in a..p {
                    xtwx[(a, b)] += wxa * x[(i, b)];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
            xtwx[(a, a)] += cfg.ridge;
        }
        let next = xtwx
            .cholesky()
            .map(|ch| ch.solve(&xtwz))
            .ok_or(Error::RankDeficient)?;
        let delta = (&next - &beta).amax();
        beta = next;
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }

    let mut separated = false;
    for b in beta.iter_mut() {
        if b.abs() > SEPARATION_BOUND {
            separated = true;
            *b = b.clamp(-SEPARATION_BOUND, SEPARATION_BOUND);
        }
    }
    if separated {
        converged = false;
    }

    // Fisher information and log-likelihood at the reported coefficients.
    eta.copy_from(&(&x * &beta));
    let mut info = DMatrix::<f64>::zeros(p, p);
    let mut log_likelihood = 0.0;
    for i in 0..n {
        let e = eta[i].clamp(-ETA_CLAMP, ETA_CLAMP);
        let mu = sigmoid(e);
        let wu = row_weight(i) * (mu * (1.0 - mu)).max(WEIGHT_FLOOR);
        for a in 0..p {
            let wxa = wu * x[(i, a)];
            for b in a..p {
                info[(a, b)] += wxa * x[(i, b)];
            }
        }
        log_likelihood += row_weight(i) * (labels[i] as f64 * e - log1p_exp(e));
    }
    for a in 0..p {
        for b in 0..a {
            info[(a, b)] = info[(b, a)];
        }
        info[(a, a)] += cfg.ridge;
    }
    let cov_std = info
        .cholesky()
        .map(|ch| ch.inverse())
        .ok_or(Error::RankDeficient)?;

    // Undo the standardization: eta = b0 + sum_c b_c (x_j - m_j)/s_j, so the
    // original-scale coefficients are an affine map A of the standardized
    // ones and their covariance is A cov A'.
    let mut a = DMatrix::<f64>::zeros(k + 1, p);
    a[(0, 0)] = 1.0;
    for (c, &j) in kept.iter().enumerate() {
        a[(0, 1 + c)] = -means[j] / sds[j];
        a[(1 + j, 1 + c)] = 1.0 / sds[j];
    }
    let beta_orig = &a * &beta;
    let cov_orig = &a * cov_std * a.transpose();
    let coefficients: Vec<f64> = beta_orig.iter().copied().collect();
    let std_errors: Vec<f64> = (0..k + 1).map(|j| cov_orig[(j, j)].max(0.0).sqrt()).collect();

    let mut names = Vec::with_capacity(k + 1);
    names.push("intercept".to_string());
    names.extend(feature_names.iter().cloned());

    Ok(PropensityModel {
        coefficients,
        std_errors,
        feature_names: names,
        converged,
        separated,
        iterations,
        log_likelihood,
        clip_bounds: cfg.clip_bounds,
    })
}

/// Standardized mean difference between arms:
/// (mean_treated - mean_control) / sqrt((var_treated + var_control) / 2),
/// with weighted means and (population) weighted variances when `weights`
/// is given. Returns 0 when both arms are degenerate with equal means;
/// errors when degenerate with unequal means.
pub fn standardized_mean_diff(
    x: &[f64],
    w_arm: &[u8],
    weights: Option<&[f64]>,
) -> Result<f64> {
    if x.len() != w_arm.len() {
        return Err(Error::SchemaMismatch("x and arm lengths differ".into()));
    }
    if let Some(w) = weights {
        if w.len() != x.len() {
            return Err(Error::SchemaMismatch("weight length mismatch".into()));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
    }
    let mut stats = [(0.0f64, 0.0f64, 0usize); 2]; // (sum w, sum w x, count) per arm
    for i in 0..x.len() {
        let arm = (w_arm[i] == 1) as usize;
        let w = weights.map_or(1.0, |w| w[i]);
        stats[arm].0 += w;
        stats[arm].1 += w * x[i];
        stats[arm].2 += 1;
    }
    if stats[0].2 == 0 || stats[1].2 == 0 {
        return Err(Error::SingleArm);
    }
    if stats[0].0 == 0.0 || stats[1].0 == 0.0 {
        return Err(Error::AllWeightsZero);
    }
    let mean = [stats[0].1 / stats[0].0, stats[1].1 / stats[1].0];
    let mut ss = [0.0f64; 2];
    for i in 0..x.len() {
        let arm = (w_arm[i] == 1) as usize;
        let w = weights.map_or(1.0, |w| w[i]);
        let d = x[i] - mean[arm];
        ss[arm] += w * d * d;
    }
    let var = [ss[0] / stats[0].0, ss[1] / stats[1].0];
    let pooled = (var[0] + var[1]) / 2.0;
    let diff = mean[1] - mean[0];
    let scale = 1.0 + mean[0].abs().max(mean[1].abs());
    if pooled < 1e-24 * scale * scale {
        if diff.abs() <= 1e-12 * scale {
            return Ok(0.0);
        }
        return Err(Error::DegenerateVariance);
    }
    Ok(diff / pooled.sqrt())
}

/// Per-column coarsening rule for coarsened exact matching.
#[derive(Debug, Clone, PartialEq)]
pub enum Coarsening {
    /// Strictly increasing bin edges; a value's bin is the count of edges
    /// at or below it.
    Edges(Vec<f64>),
    /// No coarsening: exact match on the value (categorical columns).
    Identity,
}

impl Coarsening {
    fn validate(&self) -> Result<()> {
        if let Coarsening::Edges(edges) = self {
            if !edges.iter().all(|e| e.is_finite()) {
                return Err(Error::InvalidInput("bin edges must be finite".into()));
            }
            if !edges.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::InvalidInput("bin edges must be strictly increasing".into()));
            }
        }
        Ok(())
    }

    fn key(&self, value: f64) -> u64 {
        match self {
            Coarsening::Edges(edges) => edges.partition_point(|e| *e <= value) as u64,
            // +0.0 and -0.0 compare equal, so give them one key.
            Coarsening::Identity => (value + 0.0).to_bits(),
        }
    }
}

/// Result of coarsened exact matching: indices of retained units and their
/// matching weights (treated 1, control scaled to balance its bucket).
#[derive(Debug, Clone, PartialEq)]
pub struct CemMatch {
    pub retained: Vec<usize>,
    pub weights: Vec<f64>,
    pub n_treated: usize,
    pub n_control: usize,
    pub n_buckets: usize,
    pub n_dropped: usize,
}

/// Groups units by their coarsened feature vector and keeps only buckets
/// containing both arms. Control weights equalize arm totals per bucket:
/// bucket treated count / bucket control count.
pub fn cem_match(
    features: &[f64],
    k: usize,
    w_arm: &[u8],
    coarsenings: &[Coarsening],
) -> Result<CemMatch> {
    let n = w_arm.len();
    if features.len() != n * k {
        return Err(Error::SchemaMismatch("feature matrix shape mismatch".into()));
    }
    if coarsenings.len() != k {
        return Err(Error::SchemaMismatch("one coarsening per column required".into()));
    }
    for c in coarsenings {
        c.validate()?;
    }
    let mut buckets: BTreeMap<Vec<u64>, (usize, usize)> = BTreeMap::new();
    let mut keys = Vec::with_capacity(n);
    for i in 0..n {
        let key: Vec<u64> =
            (0..k).map(|j| coarsenings[j].key(features[i * k + j])).collect();
        let entry = buckets.entry(key.clone()).or_insert((0, 0));
        if w_arm[i] == 1 {
            entry.0 += 1;
        } else {
            entry.1 += 1;
        }
        keys.push(key);
    }
    let mut retained = Vec::new();
    let mut weights = Vec::new();
    let mut n_treated = 0;
    let mut n_control = 0;
    for i in 0..n {
        let (nt, nc) = buckets[&keys[i]];
        if nt == 0 || nc == 0 {
            continue;
        }
        retained.push(i);
        if w_arm[i] == 1 {
            n_treated += 1;
            weights.push(1.0);
        } else {
            n_control += 1;
            weights.push(nt as f64 / nc as f64);
        }
    }
    if retained.is_empty() {
        return Err(Error::EmptyResult);
    }
    let n_buckets = buckets.values().filter(|(nt, nc)| *nt > 0 && *nc > 0).count();
    Ok(CemMatch {
        retained,
        weights,
        n_treated,
        n_control,
        n_buckets,
        n_dropped: n - n_treated - n_control,
    })
}

/// Propensity-score strata: quantile bins merged until every bin holds both
/// arms.
#[derive(Debug, Clone, PartialEq)]
pub struct Strata {
    /// Interior boundaries between consecutive bins, strictly increasing.
    pub boundaries: Vec<f64>,
    /// Unit indices per bin, ascending within each bin.
    pub members: Vec<Vec<usize>>,
    /// Number of merge operations applied to fix single-armed bins.
    pub n_merges: usize,
}

/// Splits units into `k` quantile bins of `scores`, then merges any bin
/// lacking one of the arms into its neighbor toward the end (last bin
/// merges backward) until all bins are two-armed.
pub fn stratify(scores: &[f64], w_arm: &[u8], k: usize) -> Result<Strata> {
    if scores.len() != w_arm.len() {
        return Err(Error::SchemaMismatch("score and arm lengths differ".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("bin count must be at least 1".into()));
    }
    if scores.is_empty() {
        return Err(Error::CannotStratify("no units".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("scores must be finite".into()));
    }
    let n = scores.len();
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut boundaries: Vec<f64> = (1..k).map(|j| sorted[j * n / k]).collect();
    boundaries.dedup();
    // A boundary equal to the minimum leaves its lower bin empty forever;
    // drop it up front.
    boundaries.retain(|b| *b > sorted[0]);

    let n_bins = boundaries.len() + 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    let mut counts: Vec<(usize, usize)> = vec![(0, 0); n_bins];
    for i in 0..n {
        let bin = boundaries.partition_point(|b| *b <= scores[i]);
        members[bin].push(i);
        if w_arm[i] == 1 {
            counts[bin].0 += 1;
        } else {
            counts[bin].1 += 1;
        }
    }

    let mut n_merges = 0;
    loop {
        let Some(bad) = counts.iter().position(|(nt, nc)| *nt == 0 || *nc == 0) else {
            break;
        };
        if members.len() == 1 {
            return Err(Error::CannotStratify(
                "sample contains only one arm".into(),
            ));
        }
        let into = if bad + 1 < members.len() { bad + 1 } else { bad - 1 };
        let (src, dst) = (bad.max(into), bad.min(into));
        let moved = members.remove(src);
        members[dst].extend(moved);
        members[dst].sort_unstable();
        let (nt, nc) = counts.remove(src);
        counts[dst].0 += nt;
        counts[dst].1 += nc;
        boundaries.remove(dst);
        n_merges += 1;
    }
    Ok(Strata { boundaries, members, n_merges })
}

/// Covariate balance before/after a weighting or matching adjustment.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub columns: Vec<String>,
    pub smd_before: Vec<f64>,
    pub smd_after: Vec<f64>,
    /// max |smd_after|.
    pub worst_smd: f64,
    /// Effective sample sizes (sum w)^2 / sum w^2 under the "after" weights.
    pub n_treated: f64,
    pub n_control: f64,
}

impl BalanceReport {
    pub fn worst_before(&self) -> f64 {
        self.smd_before.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("covariate,smd_before,smd_after\n");
        for i in 0..self.columns.len() {
            out.push_str(&format!(
                "{},{},{}\n",
                self.columns[i], self.smd_before[i], self.smd_after[i]
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| covariate | SMD before | SMD after |\n|---|---|---|\n");
        for i in 0..self.columns.len() {
            out.push_str(&format!(
                "| {} | {:.4} | {:.4} |\n",
                self.columns[i], self.smd_before[i], self.smd_after[i]
            ));
        }
        out
    }
}

/// Per-time-slice propensity fits over the named dataset columns
/// (time-varying covariates or baseline columns). Cell (i, t) of the
/// returned matrix is unit i's clipped propensity at time t.
///
/// A slice where one arm is absent cannot support a logistic fit; such
/// slices fall back to the clipped marginal treated share and report no
/// model.
pub fn fit_propensity_matrix(
    ds: &PanelDataset,
    feature_columns: &[String],
    cfg: &LogisticConfig,
) -> Result<(Vec<f64>, Vec<Option<PropensityModel>>)> {
    cfg.validate()?;
    let n = ds.n_units();
    let t_count = ds.n_times();
    let k = feature_columns.len();
    let mut values = vec![0.0; n * t_count];
    let mut models = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let features = gather_features(ds, feature_columns, t)?;
        let labels = ds.treated_at(t);
        match fit_logistic(&features, k, &labels, feature_columns, cfg) {
            Ok(model) => {
                if k == 0 {
                    let p = model.intercept_probability();
                    for i in 0..n {
                        values[i * t_count + t] = p;
                    }
                } else {
                    let preds = model.predict(&features)?;
                    for i in 0..n {
                        values[i * t_count + t] = preds[i];
                    }
                }
                models.push(Some(model));
            }
            Err(Error::SingleClass) => {
                let share = labels.iter().map(|&y| y as f64).sum::<f64>() / n as f64;
                let p = clip(share, cfg.clip_bounds);
                for i in 0..n {
                    values[i * t_count + t] = p;
                }
                models.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((values, models))
}

/// Row-major feature matrix at time `t` for the named columns; names are
/// resolved against time-varying covariates first, then baseline columns.
pub fn gather_features(
    ds: &PanelDataset,
    feature_columns: &[String],
    t: usize,
) -> Result<Vec<f64>> {
    enum Source {
        Covariate(usize),
        Baseline(usize),
    }
    let mut sources = Vec::with_capacity(feature_columns.len());
    for name in feature_columns {
        if let Some(k) = ds.covariate_index(name) {
            sources.push(Source::Covariate(k));
        } else if let Some(k) = ds.baseline_index(name) {
            sources.push(Source::Baseline(k));
        } else {
            return Err(Error::SchemaMismatch(format!("no covariate or baseline column `{name}`")));
        }
    }
    let mut out = Vec::with_capacity(ds.n_units() * sources.len());
    for i in 0..ds.n_units() {
        for src in &sources {
            out.push(match src {
                Source::Covariate(k) => ds.covariate(i, t, *k),
                Source::Baseline(k) => ds.baseline(i, *k),
            });
        }
    }
    Ok(out)
}
