//! Cluster separation, assignment fidelity and the per-class Gaussian baseline.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iqsim::{IQShot, Label};
use crate::stats::{self, Gaussian2, Mat2, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    /// Count-weighted average of the two sample covariances.
    #[default]
    Pooled,
    /// Mean of the two one-sided distances, each in its own cluster's metric.
    PerCluster,
}

fn points(shots: &[IQShot]) -> Vec<Vec2> {
    shots.iter().map(IQShot::point).collect()
}

pub fn mahalanobis_distance(cluster0: &[IQShot], cluster1: &[IQShot]) -> Result<f64> {
    mahalanobis_distance_with(cluster0, cluster1, CovarianceMode::Pooled)
}

pub fn mahalanobis_distance_with(cluster0: &[IQShot], cluster1: &[IQShot], mode: CovarianceMode) -> Result<f64> {
    for c in [cluster0, cluster1] {
        if c.len() < 3 {
            return Err(Error::TooFewShots { need: 3, got: c.len() });
        }
    }
    let g0 = Gaussian2::fit(&points(cluster0));
    let g1 = Gaussian2::fit(&points(cluster1));
    let diff = [g1.mean[0] - g0.mean[0], g1.mean[1] - g0.mean[1]];
    match mode {
        CovarianceMode::Pooled => {
            let (n0, n1) = (cluster0.len() as f64, cluster1.len() as f64);
            let mut pooled: Mat2 = [[0.0; 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    pooled[r][c] = (n0 * g0.cov[r][c] + n1 * g1.cov[r][c]) / (n0 + n1);
                }
            }
            let inv = stats::spd_inverse(&pooled)?;
            Ok(stats::quad_form(&inv, &diff).max(0.0).sqrt())
        }
        CovarianceMode::PerCluster => {
            let d0 = stats::quad_form(&stats::spd_inverse(&g0.cov)?, &diff).max(0.0).sqrt();
            let d1 = stats::quad_form(&stats::spd_inverse(&g1.cov)?, &diff).max(0.0).sqrt();
            Ok(0.5 * (d0 + d1))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub p00: f64,
    pub p11: f64,
    pub avg: f64,
    pub n0: usize,
    pub n1: usize,
}

impl FidelityReport {
    pub const CSV_HEADER: &'static str = "readout_time,p00,p11,avg";

    /// One row of the fidelity table; `readout_time` in microseconds.
    pub fn write_csv_row<W: Write>(&self, mut w: W, readout_time_us: f64) -> std::io::Result<()> {
        writeln!(w, "{readout_time_us},{:.6},{:.6},{:.6}", self.p00, self.p11, self.avg)
    }
}

pub fn fidelity(labels: &[Label], predictions: &[Label]) -> Result<FidelityReport> {
    if labels.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    let mut counts = [[0usize; 2]; 2];
    for (l, p) in labels.iter().zip(predictions) {
        counts[l.as_u8() as usize][p.as_u8() as usize] += 1;
    }
    let n0 = counts[0][0] + counts[0][1];
    let n1 = counts[1][0] + counts[1][1];
    if n0 == 0 {
        return Err(Error::MissingClass(Label::Ground));
    }
    if n1 == 0 {
        return Err(Error::MissingClass(Label::Excited));
    }
    let p00 = counts[0][0] as f64 / n0 as f64;
    let p11 = counts[1][1] as f64 / n1 as f64;
    Ok(FidelityReport {
        p00,
        p11,
        avg: 0.5 * (p00 + p11),
        n0,
        n1,
    })
}

/// Supervised per-class Gaussian fit, the conventional software discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianClassifier {
    pub mean0: Vec2,
    pub mean1: Vec2,
    pub cov0: Mat2,
    pub cov1: Mat2,
    pub prior0: f64,
    #[serde(skip)]
    cache: Option<ClassifierCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct ClassifierCache {
    inv: [Mat2; 2],
    log_det: [f64; 2],
}

impl GaussianClassifier {
    pub fn new(g0: Gaussian2, g1: Gaussian2, prior0: f64) -> Result<GaussianClassifier> {
        if !(0.0..=1.0).contains(&prior0) {
            return Err(Error::range("prior0", prior0, 0.0, 1.0));
        }
        let mut clf = GaussianClassifier {
            mean0: g0.mean,
            mean1: g1.mean,
            cov0: g0.cov,
            cov1: g1.cov,
            prior0,
            cache: None,
        };
        clf.prepare()?;
        Ok(clf)
    }

    pub fn fit(shots: &[IQShot]) -> Result<GaussianClassifier> {
        let (s0, s1): (Vec<IQShot>, Vec<IQShot>) = shots.iter().partition(|s| s.label == Label::Ground);
        for s in [&s0, &s1] {
            if s.len() < 3 {
                return Err(Error::TooFewShots { need: 3, got: s.len() });
            }
        }
        let g0 = Gaussian2::fit(&points(&s0));
        let g1 = Gaussian2::fit(&points(&s1));
        GaussianClassifier::new(g0, g1, s0.len() as f64 / shots.len() as f64)
    }

    /// Validates covariances and caches their inverses; needed after deserializing.
    pub fn prepare(&mut self) -> Result<()> {
        let inv0 = stats::spd_inverse(&self.cov0)?;
        let inv1 = stats::spd_inverse(&self.cov1)?;
        self.cache = Some(ClassifierCache {
            inv: [inv0, inv1],
            log_det: [stats::det(&self.cov0).ln(), stats::det(&self.cov1).ln()],
        });
        Ok(())
    }

    pub fn class(&self, label: Label) -> Gaussian2 {
        match label {
            Label::Ground => Gaussian2 { mean: self.mean0, cov: self.cov0 },
            Label::Excited => Gaussian2 { mean: self.mean1, cov: self.cov1 },
        }
    }

    /// Log posterior score (up to a shared constant) of each class.
    pub fn scores(&self, x: &Vec2) -> [f64; 2] {
        let cache = self.cache.as_ref().expect("GaussianClassifier::prepare not called");
        let prior = [self.prior0, 1.0 - self.prior0];
        let mut out = [0.0; 2];
        for (k, label) in Label::BOTH.into_iter().enumerate() {
            out[k] = self.class(label).log_density(&cache.inv[k], cache.log_det[k], x) + prior[k].ln();
        }
        out
    }

    /// Excited only when its score is strictly larger; ties go to ground.
    pub fn predict(&self, shot: &IQShot) -> Label {
        let [s0, s1] = self.scores(&shot.point());
        Label::from_bit(s1 > s0)
    }
}

pub fn gaussian_fit(shots: &[IQShot]) -> Result<GaussianClassifier> {
    GaussianClassifier::fit(shots)
}

pub fn gaussian_predict(clf: &GaussianClassifier, shot: &IQShot) -> Label {
    clf.predict(shot)
}

/// Mahalanobis distance of every shot to its own class mean, in that class's metric.
pub fn own_class_distances(shots: &[IQShot]) -> Result<Vec<f64>> {
    let clf = GaussianClassifier::fit(shots)?;
    let cache = clf.cache.as_ref().expect("prepared by fit");
    Ok(shots
        .iter()
        .map(|s| {
            let g = clf.class(s.label);
            let k = s.label.as_u8() as usize;
            let d = [s.i - g.mean[0], s.q - g.mean[1]];
            stats::quad_form(&cache.inv[k], &d).max(0.0).sqrt()
        })
        .collect())
}
