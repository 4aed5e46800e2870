//! Weighted linear least squares on a small, explicit basis.
//!
//! Columns are equilibrated before the normal equations are formed, so bases
//! whose natural SI magnitudes differ by many orders (1/d against a constant,
//! V² against V) stay well conditioned.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    /// Covariance of the coefficients, row-major p×p.
    pub covariance: Vec<Vec<f64>>,
    pub chi2: f64,
    pub n_points: usize,
}

impl LinearFit {
    pub fn dof(&self) -> usize {
        self.n_points.saturating_sub(self.coefficients.len())
    }
}

/// Fits y ≈ Σⱼ cⱼ·rows[i][j] with weights 1/σᵢ². Every row must have the
/// same length p, and at least p points are required.
pub fn weighted_least_squares(rows: &[Vec<f64>], y: &[f64], sigma: &[f64]) -> Result<LinearFit> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Arity { needed: 1, got: 0 });
    }
    let p = rows[0].len();
    if y.len() != n || sigma.len() != n || rows.iter().any(|r| r.len() != p) {
        return Err(Error::domain("design matrix, data and sigma lengths differ"));
    }
    if n < p {
        return Err(Error::Arity { needed: p, got: n });
    }
    if let Some(i) = sigma.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::validation(Some(i + 1), "sigma must be positive"));
    }

    let mut a = DMatrix::<f64>::zeros(n, p);
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..n {
        let w = 1.0 / sigma[i];
        for j in 0..p {
            a[(i, j)] = rows[i][j] * w;
        }
        b[i] = y[i] * w;
    }
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let norm = a.column(j).norm();
            if norm > 0.0 {
                1.0 / norm
            } else {
                1.0
            }
        })
        .collect();
    for (j, &s) in scale.iter().enumerate() {
        a.column_mut(j).scale_mut(s);
    }

    let normal = a.transpose() * &a;
    let rhs = a.transpose() * &b;
    // singularity guard on the equilibrated matrix (unit diagonal)
    let eig = normal.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_eig > 1e-12 * p as f64) {
        return Err(Error::Rank(format!(
            "normal equations are singular (smallest scaled eigenvalue {min_eig:.3e})"
        )));
    }
    let inv = normal
        .try_inverse()
        .ok_or_else(|| Error::Rank("normal equations are not invertible".into()))?;
    let scaled = &inv * rhs;
    // one step of iterative refinement against the equilibrated system
    let resid = &b - &a * &scaled;
    let scaled = scaled + &inv * (a.transpose() * resid);
    let fitted = &a * &scaled;
    let chi2 = (&b - fitted).norm_squared();

    let coefficients = (0..p).map(|j| scaled[j] * scale[j]).collect();
    let covariance = (0..p)
        .map(|i| (0..p).map(|j| inv[(i, j)] * scale[i] * scale[j]).collect())
        .collect();
    Ok(LinearFit {
        coefficients,
        covariance,
        chi2,
        n_points: n,
    })
}
