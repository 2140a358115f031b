//! Gaussian summary of an attribute pool and the Mahalanobis distance to it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::AttributePool;
use crate::tensor::{dot, Matrix};

pub const DEFAULT_RIDGE_SCALE: f64 = 1e-4;
const MAX_RIDGE_RETRIES: usize = 3;

/// Mean, maximum-likelihood covariance and the Cholesky factor of the ridged
/// covariance `cov + ridge * I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    pub mu: Vec<f64>,
    pub cov: Matrix,
    pub chol: Matrix,
    pub ridge: f64,
}

impl GaussianSummary {
    /// Factorizes `cov + ridge * I`. Fails when that is not positive-definite.
    pub fn new(mu: Vec<f64>, cov: Matrix, ridge: f64) -> Result<Self> {
        let d = mu.len();
        if cov.shape() != (d, d) {
            return Err(Error::DimMismatch {
                expected: d,
                actual: cov.rows(),
            });
        }
        let chol = cholesky(&cov, ridge).ok_or(Error::FactorizationFailed { retries: 0 })?;
        Ok(Self { mu, cov, chol, ridge })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `L^{-1} (x - mu)`.
    fn whiten(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let diff: Vec<f64> = x.iter().zip(&self.mu).map(|(a, m)| a - m).collect();
        Ok(forward_substitute(&self.chol, &diff))
    }
}

/// Fits mean and covariance (dividing by N) and factorizes with a ridge of
/// `ridge_scale * trace(cov) / D`, growing it tenfold on failure.
pub fn fit_gaussian(pool: &AttributePool, ridge_scale: f64) -> Result<GaussianSummary> {
    let n = pool.len();
    if n < 2 {
        return Err(Error::TooFewRows(n));
    }
    let d = pool.dim();
    let t = &pool.embeddings;

    let mut mu = vec![0.0; d];
    for row in t.iter_rows() {
        mu.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in t.iter_rows() {
        centered
            .iter_mut()
            .zip(row.iter().zip(&mu))
            .for_each(|(c, (x, m))| *c = x - m);
        for a in 0..d {
            let ca = centered[a];
            let dst = cov.row_mut(a);
            for b in 0..=a {
                dst[b] += ca * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov.get(a, b) / n as f64;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }

    let trace: f64 = (0..d).map(|i| cov.get(i, i)).sum();
    let mean_var = trace / d as f64;
    // A pool of (numerically) identical rows has no scale of its own; use the
    // unit scale of normalized embeddings instead.
    let mut ridge = ridge_scale * if mean_var > 1e-12 { mean_var } else { 1.0 };
    for attempt in 0..=MAX_RIDGE_RETRIES {
        if let Some(chol) = cholesky(&cov, ridge) {
            return Ok(GaussianSummary {
                mu,
                cov,
                chol,
                ridge,
            });
        }
        if attempt == MAX_RIDGE_RETRIES {
            break;
        }
        ridge = if ridge > 0.0 {
            ridge * 10.0
        } else {
            1e-10 * mean_var.max(1.0)
        };
        log::warn!("covariance factorization failed, retrying with ridge {ridge:e}");
    }
    Err(Error::FactorizationFailed {
        retries: MAX_RIDGE_RETRIES,
    })
}

/// `sqrt((x - mu)^T S^{-1} (x - mu))` with `S` the ridged covariance.
pub fn mahalanobis(g: &GaussianSummary, x: &[f64]) -> Result<f64> {
    let z = g.whiten(x)?;
    Ok(dot(&z, &z).sqrt())
}

/// Gradient of [`mahalanobis`] in `x`; the distance in the denominator is
/// clamped at 1e-12 so the value at `mu` stays finite.
pub fn mahalanobis_grad(g: &GaussianSummary, x: &[f64]) -> Result<Vec<f64>> {
    mahalanobis_with_grad(g, x).map(|(_, grad)| grad)
}

/// Distance and gradient from a single pair of triangular solves.
pub fn mahalanobis_with_grad(g: &GaussianSummary, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let z = g.whiten(x)?;
    let dist = dot(&z, &z).sqrt();
    let mut s_inv_diff = back_substitute_transposed(&g.chol, &z);
    let denom = dist.max(1e-12);
    s_inv_diff.iter_mut().for_each(|v| *v /= denom);
    Ok((dist, s_inv_diff))
}

/// Lower Cholesky factor of `a + ridge * I`, or `None` if not positive-definite.
pub fn cholesky(a: &Matrix, ridge: f64) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            if i == j {
                sum += ridge;
            }
            sum -= dot(&l.row(i)[..j], &l.row(j)[..j]);
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l.set(i, i, sum.sqrt());
            } else {
                let v = sum / l.get(j, j);
                l.set(i, j, v);
            }
        }
    }
    Some(l)
}

/// Solves `L z = b` for lower-triangular `L`.
fn forward_substitute(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s = b[i] - dot(&l.row(i)[..i], &z[..i]);
        z[i] = s / l.get(i, i);
    }
    z
}

/// Solves `L^T y = z` for lower-triangular `L`.
fn back_substitute_transposed(l: &Matrix, z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut y = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l.get(k, i) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    y
}
