//! Cross-checks the within-transform fixed-effects fits against a dense
//! dummy-variable least-squares oracle built independently in this file:
//! one indicator per unit (no intercept) and one per time after the first.
//! Frisch-Waugh-Lovell says coefficients, residuals, and the clustered
//! covariance block on the shared regressors must agree.

use nalgebra::{DMatrix, DVector};
use obspanel::panel::{ArmScheme, PanelParts, WindowConfig};
use obspanel::{
    fit_fe, fit_spillover_fe, fit_weighted_fe, FixedEffectsSpec, Network,
    NeighborhoodKind, PanelDataset,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const COEF_TOL: f64 = 1e-8;

struct DenseFit {
    /// Coefficients on the caller's columns, dummies excluded.
    coefficients: Vec<f64>,
    /// Cluster-robust (by unit) covariance of those coefficients.
    covariance: DMatrix<f64>,
}

/// Ordinary least squares on [cols | unit dummies | time dummies], with the
/// Liang-Zeger unit-clustered sandwich and the small-sample correction
/// G/(G-1) * (N-1)/(N-K) counting every dummy in K.
fn dense_dummy_ols(
    y: &[f64],
    cols: &[Vec<f64>],
    n: usize,
    t: usize,
    two_way: bool,
    weights: Option<&[f64]>,
) -> DenseFit {
    let cells = n * t;
    let p = cols.len();
    let kk = p + n + if two_way { t - 1 } else { 0 };
    let mut x = DMatrix::<f64>::zeros(cells, kk);
    let mut yv = DVector::<f64>::zeros(cells);
    for c in 0..cells {
        yv[c] = y[c];
        for (j, col) in cols.iter().enumerate() {
            x[(c, j)] = col[c];
        }
        x[(c, p + c / t)] = 1.0;
        if two_way && c % t > 0 {
            x[(c, p + n + c % t - 1)] = 1.0;
        }
    }
    if let Some(w) = weights {
        let mean = w.iter().sum::<f64>() / cells as f64;
        for c in 0..cells {
            let s = (w[c] / mean).sqrt();
            yv[c] *= s;
            for j in 0..kk {
                x[(c, j)] *= s;
            }
        }
    }

    let xtx = x.transpose() * &x;
    let chol = xtx.cholesky().expect("oracle design should be full rank");
    let beta = chol.solve(&(x.transpose() * &yv));
    let xtx_inv = chol.inverse();
    let resid = &yv - &x * &beta;

    let mut meat = DMatrix::<f64>::zeros(kk, kk);
    for i in 0..n {
        let mut s = DVector::<f64>::zeros(kk);
        for ti in 0..t {
            let c = i * t + ti;
            for j in 0..kk {
                s[j] += x[(c, j)] * resid[c];
            }
        }
        meat += &s * s.transpose();
    }
    let g = n as f64;
    let nn = cells as f64;
    let correction = g / (g - 1.0) * (nn - 1.0) / (nn - kk as f64);
    let v = correction * &xtx_inv * meat * xtx_inv;

    DenseFit {
        coefficients: beta.iter().take(p).copied().collect(),
        covariance: v.view((0, 0), (p, p)).into_owned(),
    }
}

/// Random balanced panel with unit and time heterogeneity baked into the
/// outcome so the dummies genuinely matter.
fn random_panel(seed: u64, three_arm: bool) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(6..=25);
    let t = rng.gen_range(3..=6);
    let k = rng.gen_range(0..=3usize);
    let names = ["xa", "xb", "xc"];

    let unit_effects: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let time_effects: Vec<f64> = (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect();

    let mut treatment = vec![0i64; n * t];
    let mut covariates = vec![0.0; n * t * k];
    let mut outcome = vec![0.0; n * t];
    for i in 0..n {
        for ti in 0..t {
            let cell = i * t + ti;
            let w = if three_arm { rng.gen_range(1..=3) } else { rng.gen_range(0..=1) };
            treatment[cell] = w;
            let mut xb = 0.0;
            for kk in 0..k {
                let x: f64 = rng.gen_range(-1.0..1.0);
                covariates[cell * k + kk] = x;
                xb += x * (kk as f64 + 0.5);
            }
            outcome[cell] = unit_effects[i]
                + time_effects[ti]
                + 2.0 * w as f64
                + xb
                + rng.gen_range(-0.5..0.5);
        }
    }

    PanelDataset::from_parts(PanelParts {
        unit_ids: (0..n).map(|i| format!("u{i}")).collect(),
        times: (1..=t as i64).collect(),
        outcome,
        treatment,
        covariate_names: names[..k].iter().map(|s| s.to_string()).collect(),
        covariates,
        baseline_names: vec![],
        baseline: vec![],
        arm_scheme: if three_arm { ArmScheme::three_arm((3, 1)).unwrap() } else { ArmScheme::binary() },
        window: WindowConfig::default(),
    })
    .unwrap()
}

/// Regressor columns in the order the fixed-effects fit assembles them:
/// treatment indicators first, then the dataset covariates.
fn regressor_columns(ds: &PanelDataset) -> Vec<Vec<f64>> {
    let n = ds.n_units();
    let t = ds.n_times();
    let mut cols = Vec::new();
    for &code in &ds.arm_scheme().codes()[1..] {
        cols.push(
            (0..n * t)
                .map(|c| (ds.treatment(c / t, c % t) == code) as u8 as f64)
                .collect(),
        );
    }
    for k in 0..ds.n_covariates() {
        cols.push((0..n * t).map(|c| ds.covariate(c / t, c % t, k)).collect());
    }
    cols
}

fn check_binary_panel(ds: &PanelDataset, two_way: bool, weights: Option<Vec<f64>>, tol: f64) {
    let cols = regressor_columns(ds);
    let y: Vec<f64> =
        (0..ds.n_units() * ds.n_times()).map(|c| ds.outcome(c / ds.n_times(), c % ds.n_times())).collect();
    let oracle = dense_dummy_ols(&y, &cols, ds.n_units(), ds.n_times(), two_way, weights.as_deref());

    let spec = FixedEffectsSpec {
        include_time_effects: two_way,
        weights: weights.clone(),
        ..FixedEffectsSpec::default()
    };
    let fit = fit_fe(ds, &spec).unwrap();

    let tau = &fit.tau[0];
    assert!(
        (tau.estimate - oracle.coefficients[0]).abs() < tol,
        "tau {} vs oracle {}",
        tau.estimate,
        oracle.coefficients[0]
    );
    assert!(
        (tau.std_error - oracle.covariance[(0, 0)].sqrt()).abs() < tol,
        "se {} vs oracle {}",
        tau.std_error,
        oracle.covariance[(0, 0)].sqrt()
    );
    for (k, name) in ds.covariate_names().iter().enumerate() {
        let lib = fit.beta.iter().find(|(b, _)| b == name).unwrap().1;
        assert!(
            (lib - oracle.coefficients[1 + k]).abs() < tol,
            "beta[{name}] {lib} vs oracle {}",
            oracle.coefficients[1 + k]
        );
    }
}

#[test]
fn unit_demeaning_matches_dense_dummy_ols() {
    let start = std::time::Instant::now();
    for seed in 0..10u64 {
        let ds = random_panel(seed, false);
        check_binary_panel(&ds, false, None, COEF_TOL);
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn two_way_demeaning_matches_dense_dummy_ols() {
    for seed in 10..20u64 {
        let ds = random_panel(seed, false);
        check_binary_panel(&ds, true, None, COEF_TOL);
    }
}

#[test]
fn weighted_fit_matches_weighted_dummy_ols() {
    for seed in 20..25u64 {
        let ds = random_panel(seed, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let w: Vec<f64> =
            (0..ds.n_units() * ds.n_times()).map(|_| rng.gen_range(0.5..2.5)).collect();
        // One-way weighted demeaning is a single exact pass.
        check_binary_panel(&ds, false, Some(w.clone()), COEF_TOL);
        // Two-way weighted demeaning stops at the sweep tolerance, so the
        // agreement is only as tight as the alternating projections.
        check_binary_panel(&ds, true, Some(w), 1e-6);
    }
}

#[test]
fn weighted_fe_entry_point_agrees_with_dense_oracle() {
    // fit_weighted_fe derives its weights from a propensity matrix; feed the
    // oracle the same 1/e and 1/(1-e) weights.
    for seed in 25..28u64 {
        let ds = random_panel(seed, false);
        let n = ds.n_units();
        let t = ds.n_times();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
        let e: Vec<f64> = (0..n * t).map(|_| rng.gen_range(0.2..0.8)).collect();
        let w: Vec<f64> = (0..n * t)
            .map(|c| {
                if ds.treated_indicator(c / t, c % t) == 1.0 { 1.0 / e[c] } else { 1.0 / (1.0 - e[c]) }
            })
            .collect();

        let cols = regressor_columns(&ds);
        let y: Vec<f64> = (0..n * t).map(|c| ds.outcome(c / t, c % t)).collect();
        let oracle = dense_dummy_ols(&y, &cols, n, t, false, Some(&w));

        let fit = fit_weighted_fe(&ds, &FixedEffectsSpec::default(), &e).unwrap();
        assert!((fit.tau[0].estimate - oracle.coefficients[0]).abs() < COEF_TOL);
        assert!((fit.tau[0].std_error - oracle.covariance[(0, 0)].sqrt()).abs() < COEF_TOL);
    }
}

#[test]
fn three_arm_contrasts_match_dense_coefficient_differences() {
    for seed in 30..36u64 {
        let ds = random_panel(seed, true);
        let cols = regressor_columns(&ds);
        let y: Vec<f64> = (0..ds.n_units() * ds.n_times())
            .map(|c| ds.outcome(c / ds.n_times(), c % ds.n_times()))
            .collect();
        let oracle = dense_dummy_ols(&y, &cols, ds.n_units(), ds.n_times(), false, None);

        // Scheme contrast (3, 1): code 1 is the baseline, so tau is the raw
        // coefficient on the w3 indicator (column 1 of [w2, w3, x..]).
        let fit = fit_fe(&ds, &FixedEffectsSpec::default()).unwrap();
        assert!((fit.tau[0].estimate - oracle.coefficients[1]).abs() < COEF_TOL);
        assert!((fit.tau[0].std_error - oracle.covariance[(1, 1)].sqrt()).abs() < COEF_TOL);

        // Contrast (2, 3) is a coefficient difference with covariance term.
        let relabeled = {
            let scheme = ArmScheme::three_arm((2, 3)).unwrap();
            let parts = PanelParts {
                unit_ids: ds.unit_ids().to_vec(),
                times: ds.times().to_vec(),
                outcome: y.clone(),
                treatment: (0..ds.n_units() * ds.n_times())
                    .map(|c| ds.treatment(c / ds.n_times(), c % ds.n_times()))
                    .collect(),
                covariate_names: ds.covariate_names().to_vec(),
                covariates: (0..ds.n_units() * ds.n_times() * ds.n_covariates())
                    .map(|idx| {
                        let cell = idx / ds.n_covariates();
                        ds.covariate(cell / ds.n_times(), cell % ds.n_times(), idx % ds.n_covariates())
                    })
                    .collect(),
                baseline_names: vec![],
                baseline: vec![],
                arm_scheme: scheme,
                window: WindowConfig::default(),
            };
            PanelDataset::from_parts(parts).unwrap()
        };
        let fit23 = fit_fe(&relabeled, &FixedEffectsSpec::default()).unwrap();
        let want = oracle.coefficients[0] - oracle.coefficients[1];
        let var = oracle.covariance[(0, 0)] + oracle.covariance[(1, 1)]
            - 2.0 * oracle.covariance[(0, 1)];
        assert!((fit23.tau[0].estimate - want).abs() < COEF_TOL);
        assert!((fit23.tau[0].std_error - var.max(0.0).sqrt()).abs() < COEF_TOL);
    }
}

#[test]
fn spillover_fit_matches_dense_oracle_on_the_kept_subgraph() {
    use obspanel::network::{
        neighborhood_covariate_summary, neighborhood_treatment, SummaryStat,
    };
    for seed in 40..44u64 {
        let ds = random_panel(seed, false);
        let n = ds.n_units();
        let t = ds.n_times();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3333);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen_bool(0.3) {
                    edges.push((i, j));
                }
            }
        }
        let net = Network::from_edges(n, &edges).unwrap();
        let keep: Vec<usize> = (0..n).filter(|&i| !net.is_isolated(i)).collect();
        let sub = ds.subset_units(&keep).unwrap();
        let subnet = net.subset(&keep).unwrap();
        let m = sub.n_units();

        // Rebuild the regression the spillover fit runs: exposure, own
        // indicator, covariates, neighborhood covariate sums.
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut z = vec![0.0; m * t];
        for ti in 0..t {
            let col =
                neighborhood_treatment(&sub, &subnet, NeighborhoodKind::Public, ti).unwrap();
            for i in 0..m {
                z[i * t + ti] = col[i].unwrap();
            }
        }
        cols.push(z);
        cols.push((0..m * t).map(|c| sub.treated_indicator(c / t, c % t)).collect());
        for k in 0..sub.n_covariates() {
            cols.push((0..m * t).map(|c| sub.covariate(c / t, c % t, k)).collect());
        }
        for k in 0..sub.n_covariates() {
            let mut col = vec![0.0; m * t];
            for ti in 0..t {
                let s =
                    neighborhood_covariate_summary(&sub, &subnet, k, SummaryStat::Sum, ti).unwrap();
                for i in 0..m {
                    col[i * t + ti] = s[i].unwrap();
                }
            }
            cols.push(col);
        }
        let y: Vec<f64> = (0..m * t).map(|c| sub.outcome(c / t, c % t)).collect();
        let oracle = dense_dummy_ols(&y, &cols, m, t, false, None);

        let fit =
            fit_spillover_fe(&ds, &net, &FixedEffectsSpec::default(), NeighborhoodKind::Public)
                .unwrap();
        assert!((fit.tau[0].estimate - oracle.coefficients[0]).abs() < COEF_TOL);
        assert!((fit.tau[0].std_error - oracle.covariance[(0, 0)].sqrt()).abs() < COEF_TOL);
        assert_eq!(fit.n_units, m);
    }
}
