//! Synthetic observational panels with controlled unobserved confounding,
//! with or without network spillovers, plus the Erdős–Rényi graph
//! generator used for interference scenarios.
//!
//! Treatment follows a per-period logistic model in the covariates and a
//! latent confounder U; the outcome is Gaussian in the covariates, the
//! treatment, and a second latent V correlated with U. The correlation
//! knob is what makes naive estimates biased by a controllable amount.

use crate::error::{Error, Result};
use crate::network::Network;
use crate::panel::{ArmScheme, PanelDataset, PanelParts, WindowConfig};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Scalar model parameter that may vary over the panel's periods.
///
/// In JSON a bare number is constant, `{"start": a, "end": b}`
/// interpolates linearly across periods, and an array gives one value per
/// period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Constant(f64),
    Linear { start: f64, end: f64 },
    PerTime(Vec<f64>),
}

impl Schedule {
    pub fn at(&self, t: usize, n_times: usize) -> f64 {
        match self {
            Schedule::Constant(c) => *c,
            Schedule::Linear { start, end } => {
                if n_times <= 1 {
                    *start
                } else {
                    start + (end - start) * t as f64 / (n_times - 1) as f64
                }
            }
            Schedule::PerTime(v) => v[t],
        }
    }

    fn values(&self, n_times: usize) -> Vec<f64> {
        (0..n_times).map(|t| self.at(t, n_times)).collect()
    }

    fn validate(&self, field: &str, n_times: usize) -> Result<()> {
        if let Schedule::PerTime(v) = self {
            if v.len() != n_times {
                return Err(Error::invalid_config(
                    field,
                    format!("needs one value per period ({n_times}), got {}", v.len()),
                ));
            }
        }
        if self.values(n_times).iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid_config(field, "values must be finite"));
        }
        Ok(())
    }
}

/// Whether the latent confounders are drawn once per unit or redrawn
/// every period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    TimeInvariantUv,
    TimeVaryingUv,
}

/// Exposure mapping applied to the number of contributing neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureMap {
    /// log2(1 + s): diminishing returns, used for public contributions.
    Log2Shift,
    /// 1[s >= 1]: any-treated-neighbor, used for private contributions.
    Indicator,
}

impl ExposureMap {
    pub fn apply(self, s: f64) -> f64 {
        match self {
            ExposureMap::Log2Shift => (1.0 + s).log2(),
            ExposureMap::Indicator => (s >= 1.0) as u8 as f64,
        }
    }

    pub fn neighborhood_kind(self) -> crate::network::NeighborhoodKind {
        match self {
            ExposureMap::Log2Shift => crate::network::NeighborhoodKind::Public,
            ExposureMap::Indicator => crate::network::NeighborhoodKind::Private,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "model", rename_all = "snake_case")]
pub enum NetworkSpec {
    ErdosRenyi { mean_degree: f64 },
}

/// Parameters of the peer-contribution process and the interference
/// structure. Present only for spillover scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpilloverParams {
    /// Effect of the summed neighbor covariates on the unit's own
    /// contribution propensity.
    pub neighbor_covariate_effect: Schedule,
    pub peer_intercept: Schedule,
    pub peer_covariate_effects: Vec<f64>,
    pub peer_neighbor_covariate_effect: Schedule,
    pub peer_confounder_effect: Schedule,
    /// True effect of the mapped neighbor exposure on the outcome.
    pub spillover_effect: Schedule,
    pub exposure_map: ExposureMap,
    pub network: NetworkSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_units: usize,
    pub n_times: usize,
    pub covariate_dim: usize,
    pub scenario: Scenario,
    pub seed: u64,
    /// Correlation between the treatment-side confounder U and the
    /// outcome-side confounder V.
    pub confounder_correlation: f64,
    pub treatment_intercept: Schedule,
    pub treatment_covariate_effects: Vec<f64>,
    /// Loading of U in the treatment propensity.
    pub confounder_effect: Schedule,
    pub treatment_effect: Schedule,
    pub outcome_covariate_effects: Vec<f64>,
    /// Loading of V in the outcome.
    pub outcome_confounder_effect: Schedule,
    pub outcome_noise_sd: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spillover: Option<SpilloverParams>,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_units < 2 {
            return Err(Error::invalid_config("n_units", "need at least two units"));
        }
        if self.n_times < 2 {
            return Err(Error::invalid_config("n_times", "need at least two periods"));
        }
        let k = self.covariate_dim;
        check_vec("treatment_covariate_effects", &self.treatment_covariate_effects, k)?;
        check_vec("outcome_covariate_effects", &self.outcome_covariate_effects, k)?;
        if !(-1.0..=1.0).contains(&self.confounder_correlation)
            || !self.confounder_correlation.is_finite()
        {
            return Err(Error::invalid_config("confounder_correlation", "must lie in [-1, 1]"));
        }
        let t = self.n_times;
        self.treatment_intercept.validate("treatment_intercept", t)?;
        self.confounder_effect.validate("confounder_effect", t)?;
        self.treatment_effect.validate("treatment_effect", t)?;
        self.outcome_confounder_effect.validate("outcome_confounder_effect", t)?;
        self.outcome_noise_sd.validate("outcome_noise_sd", t)?;
        if self.outcome_noise_sd.values(t).iter().any(|s| *s <= 0.0) {
            return Err(Error::invalid_config("outcome_noise_sd", "must be positive"));
        }
        if let Some(sp) = &self.spillover {
            check_vec("peer_covariate_effects", &sp.peer_covariate_effects, k)?;
            sp.neighbor_covariate_effect.validate("neighbor_covariate_effect", t)?;
            sp.peer_intercept.validate("peer_intercept", t)?;
            sp.peer_neighbor_covariate_effect
                .validate("peer_neighbor_covariate_effect", t)?;
            sp.peer_confounder_effect.validate("peer_confounder_effect", t)?;
            sp.spillover_effect.validate("spillover_effect", t)?;
            let NetworkSpec::ErdosRenyi { mean_degree } = &sp.network;
            if !mean_degree.is_finite() || *mean_degree < 0.0 {
                return Err(Error::invalid_config("mean_degree", "must be finite and nonnegative"));
            }
            if *mean_degree >= self.n_units as f64 {
                return Err(Error::invalid_config("mean_degree", "must be below the unit count"));
            }
        }
        Ok(())
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let cfg: SimulationConfig = serde_json::from_str(raw)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_vec(field: &str, v: &[f64], k: usize) -> Result<()> {
    if v.len() != k {
        return Err(Error::invalid_config(
            field,
            format!("needs covariate_dim = {k} entries, got {}", v.len()),
        ));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid_config(field, "entries must be finite"));
    }
    Ok(())
}

/// The effects the generator actually planted, written alongside
/// simulated datasets so estimates can be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueEffects {
    #[serde(rename = "tau")]
    pub treatment_effect: f64,
    #[serde(rename = "tau_prime", default, skip_serializing_if = "Option::is_none")]
    pub spillover_effect: Option<f64>,
}

/// Latent confounder draws, unit-major per cell. Kept for test
/// introspection only; nothing estimator-facing may read them.
#[derive(Debug, Clone)]
pub struct HiddenDraws {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulatedStudy {
    pub dataset: PanelDataset,
    pub network: Option<Network>,
    pub truth: TrueEffects,
    pub hidden: HiddenDraws,
}

/// Dispatches on the presence of spillover parameters.
pub fn generate(cfg: &SimulationConfig) -> Result<SimulatedStudy> {
    if cfg.spillover.is_some() {
        gen_spillover(cfg)
    } else {
        gen_contemporaneous(cfg)
    }
}

/// Panel without interference: each unit's treatment depends on its own
/// covariates and U; the outcome on its covariates, treatment, and V.
pub fn gen_contemporaneous(cfg: &SimulationConfig) -> Result<SimulatedStudy> {
    cfg.validate()?;
    if cfg.spillover.is_some() {
        return Err(Error::invalid_config(
            "spillover",
            "unexpected for the contemporaneous generator",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, t_count, k) = (cfg.n_units, cfg.n_times, cfg.covariate_dim);
    let x = draw_covariates(&mut rng, n, t_count, k);
    let (u, v) = draw_confounders(&mut rng, cfg);

    let alpha = cfg.treatment_intercept.values(t_count);
    let gamma = cfg.confounder_effect.values(t_count);
    let tau = cfg.treatment_effect.values(t_count);
    let xi = cfg.outcome_confounder_effect.values(t_count);
    let sigma = cfg.outcome_noise_sd.values(t_count);

    let cells = n * t_count;
    let mut w = vec![0i64; cells];
    for i in 0..n {
        for ti in 0..t_count {
            let c = i * t_count + ti;
            let mut eta = alpha[ti] + gamma[ti] * u[c];
            for kk in 0..k {
                eta += cfg.treatment_covariate_effects[kk] * x[c * k + kk];
            }
            w[c] = rng.gen_bool(sigmoid(eta)) as i64;
        }
    }
    let mut y = vec![0.0; cells];
    for i in 0..n {
        for ti in 0..t_count {
            let c = i * t_count + ti;
            let mut m = tau[ti] * w[c] as f64 + xi[ti] * v[c];
            for kk in 0..k {
                m += cfg.outcome_covariate_effects[kk] * x[c * k + kk];
            }
            let eps: f64 = rng.sample(StandardNormal);
            y[c] = m + sigma[ti] * eps;
        }
    }

    let dataset = build_dataset(n, t_count, y, w, covariate_names(k), x)?;
    Ok(SimulatedStudy {
        dataset,
        network: None,
        truth: TrueEffects {
            treatment_effect: cfg.treatment_effect.at(t_count - 1, t_count),
            spillover_effect: None,
        },
        hidden: HiddenDraws { u, v },
    })
}

/// Panel over a random graph. Each unit draws an own contribution (from
/// the p-model, exposed as the `self_contrib` covariate) and a peer
/// contribution (from the q-model, the dataset's treatment column); the
/// outcome adds the mapped count of contributing neighbors.
pub fn gen_spillover(cfg: &SimulationConfig) -> Result<SimulatedStudy> {
    cfg.validate()?;
    let sp = cfg
        .spillover
        .as_ref()
        .ok_or_else(|| Error::invalid_config("spillover", "required for the spillover generator"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, t_count, k) = (cfg.n_units, cfg.n_times, cfg.covariate_dim);
    let x = draw_covariates(&mut rng, n, t_count, k);
    let (u, v) = draw_confounders(&mut rng, cfg);
    let NetworkSpec::ErdosRenyi { mean_degree } = &sp.network;
    let network = gen_network_rng(&mut rng, n, *mean_degree)?;
    if network.n_edges() == 0 {
        return Err(Error::IsolatedOnlyNetwork);
    }

    let alpha = cfg.treatment_intercept.values(t_count);
    let gamma = cfg.confounder_effect.values(t_count);
    let tau = cfg.treatment_effect.values(t_count);
    let xi = cfg.outcome_confounder_effect.values(t_count);
    let sigma = cfg.outcome_noise_sd.values(t_count);
    let nu = sp.neighbor_covariate_effect.values(t_count);
    let alpha_p = sp.peer_intercept.values(t_count);
    let nu_p = sp.peer_neighbor_covariate_effect.values(t_count);
    let gamma_p = sp.peer_confounder_effect.values(t_count);
    let tau_p = sp.spillover_effect.values(t_count);

    let cells = n * t_count;
    // Per-cell grand sum of covariates, then its sum over neighbors.
    let mut grand = vec![0.0; cells];
    for c in 0..cells {
        for kk in 0..k {
            grand[c] += x[c * k + kk];
        }
    }
    let mut nbr_x = vec![0.0; cells];
    for i in 0..n {
        for &j in network.neighbors(i) {
            for ti in 0..t_count {
                nbr_x[i * t_count + ti] += grand[j * t_count + ti];
            }
        }
    }

    let mut w_ego = vec![0u8; cells];
    for i in 0..n {
        for ti in 0..t_count {
            let c = i * t_count + ti;
            let mut eta = alpha[ti] + nu[ti] * nbr_x[c] + gamma[ti] * u[c];
            for kk in 0..k {
                eta += cfg.treatment_covariate_effects[kk] * x[c * k + kk];
            }
            w_ego[c] = rng.gen_bool(sigmoid(eta)) as u8;
        }
    }
    let mut w_peer = vec![0i64; cells];
    for i in 0..n {
        for ti in 0..t_count {
            let c = i * t_count + ti;
            let mut eta = alpha_p[ti] + nu_p[ti] * nbr_x[c] + gamma_p[ti] * u[c];
            for kk in 0..k {
                eta += sp.peer_covariate_effects[kk] * x[c * k + kk];
            }
            w_peer[c] = rng.gen_bool(sigmoid(eta)) as i64;
        }
    }
    let mut y = vec![0.0; cells];
    for i in 0..n {
        for ti in 0..t_count {
            let c = i * t_count + ti;
            let s: i64 = network.neighbors(i).iter().map(|&j| w_peer[j * t_count + ti]).sum();
            let g = sp.exposure_map.apply(s as f64);
            let mut m = tau[ti] * w_ego[c] as f64 + tau_p[ti] * g + xi[ti] * v[c];
            for kk in 0..k {
                m += cfg.outcome_covariate_effects[kk] * x[c * k + kk];
            }
            let eps: f64 = rng.sample(StandardNormal);
            y[c] = m + sigma[ti] * eps;
        }
    }

    // The own contribution is observable, so it rides along as a
    // covariate; the treatment column is the peer process feeding the
    // neighbor exposures.
    let mut names = covariate_names(k);
    names.push("self_contrib".to_string());
    let mut cov = Vec::with_capacity(cells * (k + 1));
    for c in 0..cells {
        cov.extend_from_slice(&x[c * k..(c + 1) * k]);
        cov.push(w_ego[c] as f64);
    }
    let dataset = build_dataset(n, t_count, y, w_peer, names, cov)?;
    Ok(SimulatedStudy {
        dataset,
        network: Some(network),
        truth: TrueEffects {
            treatment_effect: cfg.treatment_effect.at(t_count - 1, t_count),
            spillover_effect: Some(sp.spillover_effect.at(t_count - 1, t_count)),
        },
        hidden: HiddenDraws { u, v },
    })
}

/// Erdős–Rényi graph with edge probability `mean_degree / (N - 1)`.
pub fn gen_network(n_units: usize, mean_degree: f64, seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gen_network_rng(&mut rng, n_units, mean_degree)
}

fn gen_network_rng(rng: &mut ChaCha8Rng, n_units: usize, mean_degree: f64) -> Result<Network> {
    if n_units < 2 {
        return Err(Error::InvalidInput("need at least two nodes".into()));
    }
    if !mean_degree.is_finite() || mean_degree < 0.0 || mean_degree >= n_units as f64 {
        return Err(Error::InvalidInput("mean degree must lie in [0, n_units)".into()));
    }
    let p = mean_degree / (n_units - 1) as f64;
    let mut edges: Vec<(usize, usize)> = Vec::new();
    if p >= 1.0 {
        for v in 1..n_units {
            for w in 0..v {
                edges.push((w, v));
            }
        }
    } else if p > 0.0 {
        // Geometric skips over the lower-triangular pair sequence; visits
        // exactly the sampled pairs instead of all N^2/2.
        let log_q = (-p).ln_1p();
        let mut v: usize = 1;
        let mut w: i64 = -1;
        while v < n_units {
            let r: f64 = rng.gen();
            let skip = ((-r).ln_1p() / log_q).floor() as i64;
            w += 1 + skip;
            while w >= v as i64 && v < n_units {
                w -= v as i64;
                v += 1;
            }
            if v < n_units {
                edges.push((w as usize, v));
            }
        }
    }
    Network::from_edges(n_units, &edges)
}

/// Stable per-replication stream: mixes (master seed, scenario index,
/// replication index) so parallel replications never share a stream.
pub fn derive_seed(master: u64, scenario: u64, replication: u64) -> u64 {
    let mut s = splitmix64(master);
    s = splitmix64(s ^ splitmix64(scenario.wrapping_add(0x632B_E59B_D9B4_E019)));
    splitmix64(s ^ splitmix64(replication.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn draw_covariates(rng: &mut ChaCha8Rng, n: usize, t_count: usize, k: usize) -> Vec<f64> {
    (0..n * t_count * k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// U, V with the configured correlation, expanded to unit-major cells.
fn draw_confounders(rng: &mut ChaCha8Rng, cfg: &SimulationConfig) -> (Vec<f64>, Vec<f64>) {
    let (n, t_count) = (cfg.n_units, cfg.n_times);
    let rho = cfg.confounder_correlation;
    let tail = (1.0 - rho * rho).max(0.0).sqrt();
    let pair = |rng: &mut ChaCha8Rng| {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        (z1, rho * z1 + tail * z2)
    };
    let cells = n * t_count;
    let mut u = Vec::with_capacity(cells);
    let mut v = Vec::with_capacity(cells);
    match cfg.scenario {
        Scenario::TimeInvariantUv => {
            for _ in 0..n {
                let (ui, vi) = pair(rng);
                for _ in 0..t_count {
                    u.push(ui);
                    v.push(vi);
                }
            }
        }
        Scenario::TimeVaryingUv => {
            for _ in 0..cells {
                let (ui, vi) = pair(rng);
                u.push(ui);
                v.push(vi);
            }
        }
    }
    (u, v)
}

fn covariate_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("x{i}")).collect()
}

fn build_dataset(
    n: usize,
    t_count: usize,
    outcome: Vec<f64>,
    treatment: Vec<i64>,
    covariate_names: Vec<String>,
    covariates: Vec<f64>,
) -> Result<PanelDataset> {
    let width = (n - 1).to_string().len();
    PanelDataset::from_parts(PanelParts {
        unit_ids: (0..n).map(|i| format!("u{i:0width$}")).collect(),
        times: (1..=t_count as i64).collect(),
        outcome,
        treatment,
        covariate_names,
        covariates,
        baseline_names: vec![],
        baseline: vec![],
        arm_scheme: ArmScheme::binary(),
        window: WindowConfig::default(),
    })
}

/// Named parameterizations shipped with the crate; `load` parses and
/// validates one by name.
pub mod presets {
    use super::SimulationConfig;
    use crate::error::{Error, Result};

    pub const NAMES: [&str; 6] = [
        "contemporaneous_invariant",
        "contemporaneous_varying",
        "public_invariant",
        "public_varying",
        "private_invariant",
        "private_varying",
    ];

    pub fn json(name: &str) -> Option<&'static str> {
        match name {
            "contemporaneous_invariant" => {
                Some(include_str!("../presets/contemporaneous_invariant.json"))
            }
            "contemporaneous_varying" => {
                Some(include_str!("../presets/contemporaneous_varying.json"))
            }
            "public_invariant" => Some(include_str!("../presets/public_invariant.json")),
            "public_varying" => Some(include_str!("../presets/public_varying.json")),
            "private_invariant" => Some(include_str!("../presets/private_invariant.json")),
            "private_varying" => Some(include_str!("../presets/private_varying.json")),
            _ => None,
        }
    }

    pub fn load(name: &str) -> Result<SimulationConfig> {
        let raw = json(name).ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown preset `{name}`; shipped presets: {}",
                NAMES.join(", ")
            ))
        })?;
        SimulationConfig::from_json(raw)
    }

    /// Scenario suite run by the benchmark command when no suite file is
    /// given.
    pub const DEFAULT_SUITE_JSON: &str = include_str!("../presets/default_suite.json");
}
