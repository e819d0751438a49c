//! Synthetic readout signals.
//!
//! Each state's noiseless baseband trajectory is a single-pole ring-up
//! `amp * (1 - exp(-t / tau)) * exp(j * phase)`, shaped by the readout-pulse
//! envelope. Raw shots put that trajectory on the intermediate-frequency
//! carrier, add white Gaussian ADC noise, optionally let an excited shot decay
//! to the ground trajectory at a uniformly drawn sample, and clip at the ADC
//! full scale.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulseshape::cosine_edge_envelope;
use crate::stats::{Gaussian2, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Ground,
    Excited,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::Ground, Label::Excited];

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Ground => 0,
            Label::Excited => 1,
        }
    }

    pub fn from_bit(excited: bool) -> Label {
        if excited {
            Label::Excited
        } else {
            Label::Ground
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Ground),
            1 => Ok(Label::Excited),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Ground => "ground",
            Label::Excited => "excited",
        })
    }
}

/// Simulator knobs. Key names in the configuration file match the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Samples per second.
    pub sample_rate: f64,
    /// Intermediate frequency at the ADC, Hz.
    pub readout_freq: f64,
    /// Readout window, seconds.
    pub readout_len: f64,
    pub amp0: f64,
    pub amp1: f64,
    pub phase0: f64,
    pub phase1: f64,
    /// Resonator ring-up time constant, seconds. Zero disables the transient.
    pub ring_up_tau: f64,
    /// Per-sample noise standard deviation, ADC counts.
    pub noise_sigma: f64,
    /// Probability that an excited shot decays inside the window.
    pub relax_prob: f64,
    pub adc_fullscale: f64,
    /// Cosine-edge ramp fraction of the readout pulse; 0 means a flat envelope.
    pub ramp_fraction: f64,
    pub seed: u64,
}

impl SimConfig {
    /// Low-SNR setup without a parametric amplifier.
    pub fn no_twpa() -> SimConfig {
        SimConfig {
            sample_rate: 1e9,
            readout_freq: 100e6,
            readout_len: 1e-6,
            amp0: 0.12,
            amp1: 0.12,
            phase0: 0.0,
            phase1: 0.25,
            ring_up_tau: 400e-9,
            noise_sigma: 1400.0,
            relax_prob: 0.03,
            adc_fullscale: 8191.0,
            ramp_fraction: 0.05,
            seed: 2024,
        }
    }

    /// High-SNR setup with a parametric amplifier and a shorter window.
    pub fn twpa() -> SimConfig {
        SimConfig {
            readout_len: 500e-9,
            noise_sigma: 300.0,
            relax_prob: 0.01,
            ..SimConfig::no_twpa()
        }
    }

    pub fn preset(name: &str) -> Result<SimConfig> {
        match name {
            "no-twpa" => Ok(SimConfig::no_twpa()),
            "twpa" => Ok(SimConfig::twpa()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected \"no-twpa\" or \"twpa\")"
            ))),
        }
    }

    /// Samples per shot.
    pub fn n_samples(&self) -> Result<usize> {
        let n = self.readout_len * self.sample_rate;
        let rounded = n.round();
        if !(rounded >= 1.0) || (n - rounded).abs() > 1e-6 * rounded.max(1.0) {
            return Err(Error::Config(format!(
                "readout_len * sample_rate = {n} is not a positive integer"
            )));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<usize> {
        if !(self.sample_rate > 0.0) {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.relax_prob) {
            return Err(Error::range("relax_prob", self.relax_prob, 0.0, 1.0));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        if !(self.adc_fullscale > 0.0) {
            return Err(Error::Config("adc_fullscale must be positive".into()));
        }
        if !(self.ring_up_tau >= 0.0) {
            return Err(Error::Config("ring_up_tau must be non-negative".into()));
        }
        if !(0.0..=0.5).contains(&self.ramp_fraction) {
            return Err(Error::range("ramp_fraction", self.ramp_fraction, 0.0, 0.5));
        }
        self.n_samples()
    }

    pub fn envelope(&self) -> Result<Vec<f64>> {
        let n = self.validate()?;
        if self.ramp_fraction == 0.0 {
            Ok(vec![1.0; n])
        } else {
            Ok(cosine_edge_envelope(n, self.ramp_fraction)?.values)
        }
    }
}

/// Time series of ADC samples for one readout window.
#[derive(Debug, Clone, PartialEq)]
pub struct RawShot {
    pub samples: Vec<f64>,
    pub label: Label,
    pub relaxed_at: Option<usize>,
}

/// One accumulated measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IQShot {
    pub label: Label,
    pub i: f64,
    pub q: f64,
}

impl IQShot {
    pub fn point(&self) -> Vec2 {
        [self.i, self.q]
    }
}

/// Noiseless per-state baseband trajectories.
pub fn trajectory_means(cfg: &SimConfig) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let n = cfg.validate()?;
    let env = cfg.envelope()?;
    let ring_up = |k: usize| {
        if cfg.ring_up_tau > 0.0 {
            let t = k as f64 / cfg.sample_rate;
            1.0 - (-t / cfg.ring_up_tau).exp()
        } else {
            1.0
        }
    };
    let traj = |amp: f64, phase: f64| -> Vec<Complex64> {
        let rot = Complex64::from_polar(amp, phase);
        (0..n).map(|k| rot * (ring_up(k) * env[k])).collect()
    };
    Ok((traj(cfg.amp0, cfg.phase0), traj(cfg.amp1, cfg.phase1)))
}

/// Carrier phase of sample `k`.
pub(crate) fn carrier_phase(freq: f64, k: usize, sample_rate: f64) -> f64 {
    2.0 * PI * freq * k as f64 / sample_rate
}

/// Precomputed noiseless carrier-modulated samples for both states.
#[derive(Debug, Clone)]
pub struct RawShotGenerator {
    cfg: SimConfig,
    clean: [Vec<f64>; 2],
}

impl RawShotGenerator {
    pub fn new(cfg: &SimConfig) -> Result<RawShotGenerator> {
        let (t0, t1) = trajectory_means(cfg)?;
        let modulate = |traj: &[Complex64]| -> Vec<f64> {
            traj.iter()
                .enumerate()
                .map(|(k, z)| {
                    let carrier = Complex64::from_polar(
                        1.0,
                        carrier_phase(cfg.readout_freq, k, cfg.sample_rate),
                    );
                    (z * carrier).re * cfg.adc_fullscale
                })
                .collect()
        };
        Ok(RawShotGenerator {
            cfg: cfg.clone(),
            clean: [modulate(&t0), modulate(&t1)],
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn n_samples(&self) -> usize {
        self.clean[0].len()
    }

    /// Noiseless carrier-modulated samples of one state.
    pub fn clean(&self, state: Label) -> &[f64] {
        &self.clean[state.as_u8() as usize]
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: Label, rng: &mut R) -> RawShot {
        let n = self.n_samples();
        // The decay draw happens for every excited shot so that paired streams
        // stay aligned when only relax_prob changes.
        let relaxed_at = match state {
            Label::Excited => {
                let u: f64 = rng.random();
                let at = rng.random_range(0..n);
                (u < self.cfg.relax_prob).then_some(at)
            }
            Label::Ground => None,
        };
        let own = self.clean(state);
        let ground = self.clean(Label::Ground);
        let fs = self.cfg.adc_fullscale;
        let sigma = self.cfg.noise_sigma;
        let samples = (0..n)
            .map(|k| {
                let clean = match relaxed_at {
                    Some(at) if k >= at => ground[k],
                    _ => own[k],
                };
                let noise: f64 = if sigma > 0.0 {
                    sigma * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                (clean + noise).clamp(-fs, fs)
            })
            .collect();
        RawShot {
            samples,
            label: state,
            relaxed_at,
        }
    }
}

pub fn sample_raw_shot<R: Rng + ?Sized>(cfg: &SimConfig, state: Label, rng: &mut R) -> Result<RawShot> {
    Ok(RawShotGenerator::new(cfg)?.sample(state, rng))
}

/// Per-state 2-D Gaussians for generating accumulate-level shots directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianCluster {
    pub ground: Gaussian2,
    pub excited: Gaussian2,
}

impl GaussianCluster {
    /// Isotropic clusters with common standard deviation `sigma`.
    pub fn isotropic(mean0: Vec2, mean1: Vec2, sigma: f64) -> GaussianCluster {
        let cov = [[sigma * sigma, 0.0], [0.0, sigma * sigma]];
        GaussianCluster {
            ground: Gaussian2 { mean: mean0, cov },
            excited: Gaussian2 { mean: mean1, cov },
        }
    }

    pub fn state(&self, label: Label) -> &Gaussian2 {
        match label {
            Label::Ground => &self.ground,
            Label::Excited => &self.excited,
        }
    }
}

pub fn sample_iq_shot<R: Rng + ?Sized>(
    cluster: &GaussianCluster,
    state: Label,
    rng: &mut R,
) -> Result<IQShot> {
    let g = cluster.state(state);
    let l = g.cholesky()?;
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    Ok(IQShot {
        label: state,
        i: g.mean[0] + l[0][0] * z0,
        q: g.mean[1] + l[1][0] * z0 + l[1][1] * z1,
    })
}

/// `n_per_state` shots of each state from the cluster model, ground first.
pub fn cluster_dataset(cluster: &GaussianCluster, n_per_state: usize, seed: u64, salt: u64) -> Result<Vec<IQShot>> {
    cluster.ground.cholesky()?;
    cluster.excited.cholesky()?;
    let mut out = Vec::with_capacity(2 * n_per_state);
    for state in Label::BOTH {
        for k in 0..n_per_state {
            let mut rng = crate::rng::stream(seed, (salt << 40) | crate::rng::shot_stream(k as u64, state.as_u8()));
            out.push(sample_iq_shot(cluster, state, &mut rng)?);
        }
    }
    Ok(out)
}
