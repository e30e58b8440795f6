//! The IRLS solver against a brute-force Newton oracle written from the
//! gradient and Fisher information directly, with no standardization and no
//! ridge, plus consistency checks as the sample grows.

use nalgebra::{DMatrix, DVector};
use obspanel::{fit_logistic, fit_logistic_weighted, LogisticConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Plain Newton-Raphson on the unstandardized log-likelihood. Returns
/// (coefficients, standard errors), intercept first.
fn newton_oracle(x: &[f64], k: usize, labels: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let n = labels.len();
    let p = k + 1;
    let row = |i: usize, j: usize| if j == 0 { 1.0 } else { x[i * k + j - 1] };
    let mut beta = DVector::<f64>::zeros(p);
    for _ in 0..100 {
        let mut grad = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let mut eta = 0.0;
            for j in 0..p {
                eta += beta[j] * row(i, j);
            }
            let mu = 1.0 / (1.0 + (-eta).exp());
            let resid = labels[i] as f64 - mu;
            let wi = mu * (1.0 - mu);
            for j in 0..p {
                grad[j] += row(i, j) * resid;
                for l in j..p {
                    info[(j, l)] += wi * row(i, j) * row(i, l);
                }
            }
        }
        for j in 0..p {
            for l in 0..j {
                info[(j, l)] = info[(l, j)];
            }
        }
        let chol = info.clone().cholesky().expect("information matrix should be PD");
        let step = chol.solve(&grad);
        beta += &step;
        if step.amax() < 1e-12 {
            let cov = chol.inverse();
            let se = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
            return (beta.iter().copied().collect(), se);
        }
    }
    panic!("oracle failed to converge");
}

fn simulate_logit(
    seed: u64,
    n: usize,
    truth: &[f64],
) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = truth.len() - 1;
    let mut x = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut eta = truth[0];
        for j in 0..k {
            let v: f64 = StandardNormal.sample(&mut rng);
            x.push(v);
            eta += truth[j + 1] * v;
        }
        let p = 1.0 / (1.0 + (-eta).exp());
        labels.push(rng.gen_bool(p) as u8);
    }
    (x, labels)
}

fn names(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("x{j}")).collect()
}

#[test]
fn irls_agrees_with_brute_force_newton() {
    let truth = [-0.4, 0.9, -0.6, 0.3];
    for seed in [11u64, 12, 13] {
        let (x, labels) = simulate_logit(seed, 20_000, &truth);
        let model = fit_logistic(&x, 3, &labels, &names(3), &LogisticConfig::default()).unwrap();
        assert!(model.converged);
        let (oc, ose) = newton_oracle(&x, 3, &labels);
        for j in 0..4 {
            assert!(
                (model.coefficients[j] - oc[j]).abs() < 1e-6,
                "coef {j}: {} vs {}",
                model.coefficients[j],
                oc[j]
            );
            assert!(
                (model.std_errors[j] - ose[j]).abs() < 1e-6,
                "se {j}: {} vs {}",
                model.std_errors[j],
                ose[j]
            );
        }
    }
}

#[test]
fn coefficients_approach_truth_as_n_grows() {
    let truth = [0.2, 0.8, -0.5, 0.35];
    let sizes = [1_000usize, 10_000, 50_000];
    let mut mean_err = Vec::new();
    for (si, &n) in sizes.iter().enumerate() {
        let mut total = 0.0;
        for rep in 0..3u64 {
            let (x, labels) = simulate_logit(1000 + 17 * si as u64 + rep, n, &truth);
            let model =
                fit_logistic(&x, 3, &labels, &names(3), &LogisticConfig::default()).unwrap();
            let err = truth
                .iter()
                .zip(&model.coefficients)
                .map(|(t, c)| (t - c).abs())
                .fold(0.0f64, f64::max);
            total += err;
        }
        mean_err.push(total / 3.0);
    }
    assert!(mean_err[1] < mean_err[0], "{mean_err:?}");
    assert!(mean_err[2] < mean_err[1], "{mean_err:?}");
    assert!(mean_err[2] < 0.05, "{mean_err:?}");
}

#[test]
fn integer_weights_replicate_row_duplication() {
    let truth = [0.1, 0.7, -0.4];
    let (x, labels) = simulate_logit(99, 400, &truth);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let weights: Vec<f64> = (0..400).map(|_| rng.gen_range(1..=3) as f64).collect();

    let mut x_dup = Vec::new();
    let mut labels_dup = Vec::new();
    for i in 0..400 {
        for _ in 0..weights[i] as usize {
            x_dup.extend_from_slice(&x[i * 2..(i + 1) * 2]);
            labels_dup.push(labels[i]);
        }
    }

    let weighted = fit_logistic_weighted(
        &x,
        2,
        &labels,
        Some(&weights),
        &names(2),
        &LogisticConfig::default(),
    )
    .unwrap();
    let duplicated =
        fit_logistic(&x_dup, 2, &labels_dup, &names(2), &LogisticConfig::default()).unwrap();
    for j in 0..3 {
        assert!(
            (weighted.coefficients[j] - duplicated.coefficients[j]).abs() < 1e-7,
            "coef {j}: {} vs {}",
            weighted.coefficients[j],
            duplicated.coefficients[j]
        );
        // Same likelihood, same information: identical standard errors.
        assert!((weighted.std_errors[j] - duplicated.std_errors[j]).abs() < 1e-7);
    }
}

#[test]
fn separation_is_flagged_not_diverged() {
    // Perfectly separable: label = 1 exactly when the feature is positive.
    let x: Vec<f64> = (0..200).map(|i| i as f64 / 100.0 - 1.0 + 0.005).collect();
    let labels: Vec<u8> = x.iter().map(|&v| (v > 0.0) as u8).collect();
    let model = fit_logistic(&x, 1, &labels, &names(1), &LogisticConfig::default()).unwrap();
    assert!(model.separated);
    assert!(!model.converged);
    assert!(model.coefficients.iter().all(|c| c.is_finite()));
    let p = model.predict(&x).unwrap();
    assert!(p.iter().all(|v| (0.01..=0.99).contains(v)));
}
