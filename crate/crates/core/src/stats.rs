//! Two-dimensional Gaussian helpers shared by the simulator and the metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

pub fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Eigenvalues of a symmetric 2x2 matrix, smallest first.
pub fn sym_eigenvalues(m: &Mat2) -> (f64, f64) {
    let half_tr = 0.5 * (m[0][0] + m[1][1]);
    let d = (0.25 * (m[0][0] - m[1][1]).powi(2) + m[0][1] * m[1][0]).max(0.0).sqrt();
    (half_tr - d, half_tr + d)
}

/// Inverse of a symmetric positive-definite 2x2 matrix; rejects singular or
/// indefinite input with the eigenvalue ratio as condition estimate.
pub fn spd_inverse(m: &Mat2) -> Result<Mat2> {
    let (lo, hi) = sym_eigenvalues(m);
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(lo > 0.0) || cond > 1e14 || !cond.is_finite() {
        return Err(Error::Singular { cond });
    }
    let d = det(m);
    Ok([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
}

pub fn quad_form(inv: &Mat2, v: &Vec2) -> f64 {
    v[0] * (inv[0][0] * v[0] + inv[0][1] * v[1]) + v[1] * (inv[1][0] * v[0] + inv[1][1] * v[1])
}

pub fn mean(points: &[Vec2]) -> Vec2 {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    [sx / n, sy / n]
}

/// Unbiased sample covariance.
pub fn covariance(points: &[Vec2], mu: &Vec2) -> Mat2 {
    let n = points.len() as f64;
    let mut c = [[0.0; 2]; 2];
    for p in points {
        let dx = p[0] - mu[0];
        let dy = p[1] - mu[1];
        c[0][0] += dx * dx;
        c[0][1] += dx * dy;
        c[1][1] += dy * dy;
    }
    let denom = (n - 1.0).max(1.0);
    c[0][0] /= denom;
    c[0][1] /= denom;
    c[1][1] /= denom;
    c[1][0] = c[0][1];
    c
}

/// A bivariate normal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2 {
    pub mean: Vec2,
    pub cov: Mat2,
}

impl Gaussian2 {
    pub fn fit(points: &[Vec2]) -> Gaussian2 {
        let mean = mean(points);
        let cov = covariance(points, &mean);
        Gaussian2 { mean, cov }
    }

    /// Lower Cholesky factor. Accepts positive semi-definite covariances so a
    /// zero covariance degenerates to a point mass.
    pub fn cholesky(&self) -> Result<Mat2> {
        let [[a, b], [b2, c]] = self.cov;
        let scale = a.abs().max(c.abs()).max(1e-300);
        if (b - b2).abs() > 1e-12 * scale || !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::Config(format!("covariance {:?} is not symmetric", self.cov)));
        }
        let tol = 1e-12 * scale;
        if a < -tol || c < -tol || a * c - b * b < -tol * scale {
            let (lo, hi) = sym_eigenvalues(&self.cov);
            return Err(Error::Singular { cond: hi / lo });
        }
        let l11 = a.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
        let l22 = (c - l21 * l21).max(0.0).sqrt();
        Ok([[l11, 0.0], [l21, l22]])
    }

    pub fn log_density(&self, inv: &Mat2, log_det: f64, x: &Vec2) -> f64 {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        -0.5 * quad_form(inv, &d) - 0.5 * log_det - (2.0 * std::f64::consts::PI).ln()
    }
}
