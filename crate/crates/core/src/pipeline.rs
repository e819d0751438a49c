//! End-to-end steps shared by the command line and the test suites.

use serde::{Deserialize, Serialize};

use crate::demod::{self, Dlo, WeightVector};
use crate::emu::{self, QuantizedModel};
use crate::error::{Error, Result};
use crate::fnn::{self, Architecture, EpochRecord, FnnParams, ScalerParams, TrainConfig};
use crate::fxp::LutConfig;
use crate::iqsim::{IQShot, Label, RawShotGenerator, SimConfig};
use crate::metrics::{self, FidelityReport, GaussianClassifier};

/// Accumulated evaluation-population shots, ground first.
pub fn simulate_dataset(sim: &SimConfig, weights: Option<&WeightVector>, n_per_state: usize) -> Result<Vec<IQShot>> {
    let gen = RawShotGenerator::new(sim)?;
    demod::simulate_accumulated(&gen, &Dlo::for_config(sim), weights, n_per_state, demod::SALT_EVALUATION)
}

pub fn calibrate_weights(sim: &SimConfig, alpha: f64, n_per_state: usize) -> Result<WeightVector> {
    let gen = RawShotGenerator::new(sim)?;
    Ok(demod::calibrate(&gen, &Dlo::for_config(sim), alpha, n_per_state)?.weights)
}

pub fn gaussian_baseline(train: &[IQShot], test: &[IQShot]) -> Result<FidelityReport> {
    let clf = GaussianClassifier::fit(train)?;
    let labels: Vec<Label> = test.iter().map(|s| s.label).collect();
    let preds: Vec<Label> = test.iter().map(|s| clf.predict(s)).collect();
    metrics::fidelity(&labels, &preds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: FnnParams,
    pub scaler: ScalerParams,
    pub history: Vec<EpochRecord>,
    /// Training shots removed by the outlier cut.
    pub heralded_out: usize,
}

/// Fits the scaler and trains on `train`, after the optional outlier cut.
/// `test` is only used for the per-epoch fidelity column.
pub fn train_fnn(train: &[IQShot], test: &[IQShot], arch: &Architecture, cfg: &TrainConfig) -> Result<TrainedModel> {
    let kept = match cfg.herald_cut {
        Some(cut) => fnn::herald(train, cut)?,
        None => train.to_vec(),
    };
    let scaler = fnn::scaler_fit(&kept)?;
    let (params, history) = fnn::train(
        &fnn::to_examples(&scaler, &kept),
        &fnn::to_examples(&scaler, test),
        arch,
        cfg,
    )?;
    Ok(TrainedModel {
        params,
        scaler,
        history,
        heralded_out: train.len() - kept.len(),
    })
}

pub fn float_fidelity(model: &TrainedModel, test: &[IQShot]) -> Result<FidelityReport> {
    fnn::evaluate(&model.params, &fnn::to_examples(&model.scaler, test))
}

/// Fixed-point replay of a test set next to the float model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emulation {
    pub fidelity: FidelityReport,
    pub shots: usize,
    pub overflow_shots: usize,
    /// Shots whose fixed-point label matches the float label; `None` without a float model.
    pub label_agreement: Option<f64>,
    /// Largest |decoded prob - float prob| over shots with no overflow.
    pub max_prob_error: Option<f64>,
}

pub fn emulate(model: &QuantizedModel, float: Option<&TrainedModel>, test: &[IQShot]) -> Result<Emulation> {
    use rayon::prelude::*;
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let rows: Vec<(Label, bool, Option<(bool, f64)>)> = test
        .par_iter()
        .map(|s| -> Result<_> {
            let inf = model.infer_shot(s)?;
            let cmp = float.map(|f| {
                let p = fnn::forward(&f.params, fnn::scaler_apply(&f.scaler, s));
                (Label::from_bit(p > 0.5) == inf.state, (model.prob(&inf) - p).abs())
            });
            Ok((inf.state, inf.trace.overflows > 0, cmp))
        })
        .collect::<Result<_>>()?;
    let labels: Vec<Label> = test.iter().map(|s| s.label).collect();
    let preds: Vec<Label> = rows.iter().map(|r| r.0).collect();
    let overflow_shots = rows.iter().filter(|r| r.1).count();
    let (label_agreement, max_prob_error) = if float.is_some() {
        let agree = rows.iter().filter(|r| r.2.is_some_and(|c| c.0)).count();
        let err = rows
            .iter()
            .filter(|r| !r.1)
            .filter_map(|r| r.2.map(|c| c.1))
            .fold(0.0, f64::max);
        (Some(agree as f64 / rows.len() as f64), Some(err))
    } else {
        (None, None)
    };
    Ok(Emulation {
        fidelity: metrics::fidelity(&labels, &preds)?,
        shots: test.len(),
        overflow_shots,
        label_agreement,
        max_prob_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub readout_time: f64,
    pub baseline_avg: f64,
    pub system_avg: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "readout_time,baseline_avg,system_avg";
}

/// Settings for one readout-time comparison.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub sim: SimConfig,
    pub baseline_ramp_fraction: f64,
    pub shots_per_state: usize,
    pub calibration_shots: usize,
    pub ema_alpha: f64,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub lut: LutConfig,
}

/// Baseline: baseline ramp, square DLO, Gaussian discriminator.
/// System: configured ramp, weighted DLO, quantized network on the emulator.
/// Both use the same seeds and the same train/test split fraction.
pub fn sweep_point(s: &SweepSettings, readout_us: f64) -> Result<SweepRow> {
    let base_sim = SimConfig {
        readout_len: readout_us * 1e-6,
        ramp_fraction: s.baseline_ramp_fraction,
        ..s.sim.clone()
    };
    let sys_sim = SimConfig { readout_len: readout_us * 1e-6, ..s.sim.clone() };

    let base = simulate_dataset(&base_sim, None, s.shots_per_state)?;
    let (btrain, btest) = fnn::split_dataset(&base, &s.train)?;
    let baseline = gaussian_baseline(&btrain, &btest)?;

    let weights = calibrate_weights(&sys_sim, s.ema_alpha, s.calibration_shots)?;
    let sys = simulate_dataset(&sys_sim, Some(&weights), s.shots_per_state)?;
    let (strain, stest) = fnn::split_dataset(&sys, &s.train)?;
    let trained = train_fnn(&strain, &stest, &s.arch, &s.train)?;
    let q = emu::quantize(&trained.params, &trained.scaler, &s.lut)?;
    let system = emulate(&q, None, &stest)?;

    Ok(SweepRow {
        readout_time: readout_us,
        baseline_avg: baseline.avg,
        system_avg: system.fidelity.avg,
    })
}
