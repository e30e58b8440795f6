//! Dense least squares with rank detection, plus sandwich covariance
//! estimators (heteroskedasticity-robust and cluster-robust).
//!
//! # References
//! - White (1980), "A heteroskedasticity-consistent covariance matrix
//!   estimator and a direct test for heteroskedasticity".
//! - Liang & Zeger (1986), "Longitudinal data analysis using generalized
//!   linear models".

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot threshold below which the design matrix is declared rank
/// deficient.
pub(crate) const RANK_TOL: f64 = 1e-10;

pub(crate) struct OlsFit {
    pub coefficients: Vec<f64>,
    pub residuals: DVector<f64>,
    /// (X'X)^-1, reused by the sandwich estimators.
    pub xtx_inv: DMatrix<f64>,
}

/// Ordinary least squares via column-pivoted QR.
pub(crate) fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if p == 0 {
        return Err(Error::InvalidInput("empty design matrix".into()));
    }
    if n < p {
        return Err(Error::RankDeficient);
    }
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let dmax = (0..p).map(|j| r[(j, j)].abs()).fold(0.0_f64, f64::max);
    if dmax == 0.0 || (0..p).any(|j| r[(j, j)].abs() < RANK_TOL * dmax) {
        return Err(Error::RankDeficient);
    }

    let q = qr.q();
    let qty = q.transpose() * y;
    let z = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient)?;

    // The factorization works on X with columns permuted; `perm` maps the
    // permuted order back to the caller's column order.
    let mut perm = DMatrix::<f64>::identity(p, p);
    qr.p().permute_columns(&mut perm);
    let beta = &perm * z;

    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::RankDeficient)?;
    let gram_inv = &rinv * rinv.transpose();
    let xtx_inv = &perm * gram_inv * perm.transpose();

    let residuals = y - x * &beta;
    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        residuals,
        xtx_inv,
    })
}

/// HC1 heteroskedasticity-robust covariance of the OLS coefficients.
pub(crate) fn hc1_covariance(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    xtx_inv: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..n {
        let e2 = residuals[i] * residuals[i];
        for a in 0..p {
            let xa = x[(i, a)] * e2;
            for b in 0..p {
                meat[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    let dof = if n > p { n as f64 / (n - p) as f64 } else { 1.0 };
    xtx_inv * meat * xtx_inv * dof
}

/// Cluster-robust covariance with the usual small-sample correction
/// G/(G-1) * (N-1)/(N-K). `n_absorbed` counts parameters removed by
/// demeaning (unit and time means) so the dof correction stays honest.
pub(crate) fn cluster_covariance(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    xtx_inv: &DMatrix<f64>,
    clusters: &[usize],
    n_clusters: usize,
    n_absorbed: usize,
) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut scores = vec![0.0_f64; n_clusters * p];
    for i in 0..n {
        let base = clusters[i] * p;
        let e = residuals[i];
        for a in 0..p {
            scores[base + a] += x[(i, a)] * e;
        }
    }
    let mut meat = DMatrix::zeros(p, p);
    for c in 0..n_clusters {
        let s = &scores[c * p..(c + 1) * p];
        for a in 0..p {
            for b in 0..p {
                meat[(a, b)] += s[a] * s[b];
            }
        }
    }
    let g = n_clusters as f64;
    let nf = n as f64;
    let kf = (p + n_absorbed) as f64;
    let correction = if g > 1.0 && nf > kf {
        (g / (g - 1.0)) * ((nf - 1.0) / (nf - kf))
    } else {
        1.0
    };
    xtx_inv * meat * xtx_inv * correction
}
