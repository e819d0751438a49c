//! Bit-exact emulation of the on-chip inference pipeline.
//!
//! `infer` follows the hardware dataflow: shift-only normalization of both
//! accumulates, then per layer one DSP product per weight sliced back to the
//! activation format, summed with the bias, ReLU on hidden layers, and a
//! comparison-addressed sigmoid table at the output. Every intermediate word
//! is recorded in a [`Trace`]. Saturation never aborts; it is counted.

pub mod bank;
pub mod cycles;
pub mod feedback;
pub mod resources;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fnn::{Architecture, FnnParams, ScalerParams};
use crate::fxp::{scale_shift_raw, slice_product, LutConfig, QFormat, SigmoidLut};
use crate::iqsim::{IQShot, Label};

pub use bank::{bank_load, bank_store};
pub use cycles::{cycle_report, AccumulationMode, CyclePolicy, CycleReport};
pub use feedback::{mid_circuit_feedback, Discriminator, FeedbackScenario, JointHistogram, ShotSource};
pub use resources::{resource_report, ResourceModel, ResourceReport};

pub const MAX_QUBITS: u8 = 8;

/// Integer scaler parameters: accumulate offset and shift exponent per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedScaler {
    pub mu_i: i64,
    pub n_i: u32,
    pub mu_q: i64,
    pub n_q: u32,
}

impl FixedScaler {
    pub fn from_float(s: &ScalerParams) -> Result<FixedScaler> {
        let n = |v: i32, ch| {
            u32::try_from(v)
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| Error::Config(format!("scaler exponent for {ch} must be >= 1, got {v}")))
        };
        Ok(FixedScaler {
            mu_i: s.mu_i.round() as i64,
            n_i: n(s.n_i, "I")?,
            mu_q: s.mu_q.round() as i64,
            n_q: n(s.n_q, "Q")?,
        })
    }
}

/// Activation and weight word layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Formats {
    pub act: QFormat,
    pub weight: QFormat,
}

impl Default for Formats {
    fn default() -> Self {
        Formats {
            act: QFormat::Q10_17,
            weight: QFormat::Q6_12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub qubit_id: u8,
    pub arch: Architecture,
    pub formats: Formats,
    /// Per layer, row-major `out x in` raw weight words.
    pub weights: Vec<Vec<i64>>,
    pub biases: Vec<Vec<i64>>,
    pub scaler: FixedScaler,
    pub lut: SigmoidLut,
}

pub fn quantize(params: &FnnParams, scaler: &ScalerParams, lut_cfg: &LutConfig) -> Result<QuantizedModel> {
    quantize_with(params, scaler, lut_cfg, Formats::default())
}

/// Quantizes with explicit word layouts. The sigmoid table is always built in
/// Q10.17 and compared against logits sharing its fraction width.
pub fn quantize_with(
    params: &FnnParams,
    scaler: &ScalerParams,
    lut_cfg: &LutConfig,
    formats: Formats,
) -> Result<QuantizedModel> {
    params.validate()?;
    if formats.act.frac_bits != QFormat::Q10_17.frac_bits {
        return Err(Error::Config(format!(
            "activation format {} must keep {} fraction bits",
            formats.act,
            QFormat::Q10_17.frac_bits
        )));
    }
    if formats.weight.width() + formats.act.width() > 62 {
        return Err(Error::Config("product of the chosen formats exceeds 62 bits".into()));
    }
    let named = |fmt: QFormat, x: f64, what: String| {
        fmt.encode(x).map_err(|_| {
            Error::range(
                what,
                x,
                fmt.decode(fmt.min_raw()),
                fmt.decode(fmt.max_raw()),
            )
        })
    };
    let mut weights = Vec::with_capacity(params.layers.len());
    let mut biases = Vec::with_capacity(params.layers.len());
    for (k, layer) in params.layers.iter().enumerate() {
        let mut w = Vec::with_capacity(layer.fan_in() * layer.fan_out());
        for (o, row) in layer.weights.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                w.push(named(formats.weight, v, format!("layer {} weight[{o}][{i}]", k + 1))?);
            }
        }
        let b = layer
            .biases
            .iter()
            .enumerate()
            .map(|(o, &v)| named(formats.act, v, format!("layer {} bias[{o}]", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        weights.push(w);
        biases.push(b);
    }
    Ok(QuantizedModel {
        qubit_id: 0,
        arch: params.architecture(),
        formats,
        weights,
        biases,
        scaler: FixedScaler::from_float(scaler)?,
        lut: SigmoidLut::build(lut_cfg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTrace {
    /// Sliced DSP outputs, row-major `out x in`.
    pub products: Vec<i64>,
    /// Bias plus products, after saturation.
    pub sums: Vec<i64>,
    /// After ReLU on hidden layers; equal to `sums` on the output layer.
    pub outputs: Vec<i64>,
}

/// Every intermediate word of one inference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub inputs: [i64; 2],
    pub layers: Vec<LayerTrace>,
    pub logit: i64,
    pub lut_address: usize,
    pub overflows: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inference {
    pub state: Label,
    /// Sigmoid table output as a raw Q10.17 word.
    pub prob_word: i64,
    pub trace: Trace,
}

impl QuantizedModel {
    pub fn with_qubit(mut self, qubit_id: u8) -> Result<QuantizedModel> {
        if qubit_id >= MAX_QUBITS {
            return Err(Error::Config(format!("qubit id {qubit_id} must be below {MAX_QUBITS}")));
        }
        self.qubit_id = qubit_id;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.qubit_id >= MAX_QUBITS {
            return Err(Error::Config(format!("qubit id {} must be below {MAX_QUBITS}", self.qubit_id)));
        }
        let layers: Vec<(usize, usize)> = self.arch.layers().collect();
        if self.weights.len() != layers.len() || self.biases.len() != layers.len() {
            return Err(Error::Config("layer count does not match architecture".into()));
        }
        for (k, &(fi, fo)) in layers.iter().enumerate() {
            if self.weights[k].len() != fi * fo {
                return Err(Error::LengthMismatch { expected: fi * fo, got: self.weights[k].len() });
            }
            if self.biases[k].len() != fo {
                return Err(Error::LengthMismatch { expected: fo, got: self.biases[k].len() });
            }
            if self.weights[k].iter().any(|&w| !self.formats.weight.contains(w))
                || self.biases[k].iter().any(|&b| !self.formats.act.contains(b))
            {
                return Err(Error::Config(format!("layer {} holds an out-of-format word", k + 1)));
            }
        }
        if self.lut.is_empty() || self.lut.thresholds.len() + 1 != self.lut.len() {
            return Err(Error::Config("sigmoid table is malformed".into()));
        }
        Ok(())
    }

    /// Pure integer forward pass.
    pub fn infer(&self, raw_i: i64, raw_q: i64) -> Result<Inference> {
        let act = self.formats.act;
        let wfrac = self.formats.weight.frac_bits;
        let mut overflows = 0u32;
        let sat = |raw: i64, overflows: &mut u32| {
            let (v, o) = act.saturate(raw);
            *overflows += u32::from(o);
            v
        };
        let s = &self.scaler;
        let inputs = [
            sat(scale_shift_raw(raw_i, s.n_i, s.mu_i, act.frac_bits)?, &mut overflows),
            sat(scale_shift_raw(raw_q, s.n_q, s.mu_q, act.frac_bits)?, &mut overflows),
        ];
        let mut x: Vec<i64> = inputs.to_vec();
        let last = self.weights.len() - 1;
        let mut layers = Vec::with_capacity(self.weights.len());
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let fan_in = x.len();
            let mut products = Vec::with_capacity(w.len());
            let mut sums = Vec::with_capacity(b.len());
            for (o, bias) in b.iter().enumerate() {
                let mut acc = *bias;
                for (i, xi) in x.iter().enumerate() {
                    let (p, o) = slice_product(w[o * fan_in + i] * xi, wfrac, act);
                    overflows += u32::from(o);
                    products.push(p);
                    acc += p;
                }
                sums.push(acc);
            }
            let sums: Vec<i64> = sums.into_iter().map(|v| sat(v, &mut overflows)).collect();
            let outputs: Vec<i64> = if k == last {
                sums.clone()
            } else {
                sums.iter().map(|&v| v.max(0)).collect()
            };
            x = outputs.clone();
            layers.push(LayerTrace { products, sums, outputs });
        }
        let logit = x[0];
        let lut_address = self.lut.address(logit);
        let prob_word = self.lut.entries[lut_address];
        Ok(Inference {
            state: Label::from_bit(prob_word > self.lut.format.one() / 2),
            prob_word,
            trace: Trace {
                inputs,
                layers,
                logit,
                lut_address,
                overflows,
            },
        })
    }

    /// Runs an accumulated shot through the pipeline after rounding it to
    /// integer accumulator counts.
    pub fn infer_shot(&self, shot: &IQShot) -> Result<Inference> {
        self.infer(shot.i.round() as i64, shot.q.round() as i64)
    }

    pub fn prob(&self, inf: &Inference) -> f64 {
        self.lut.format.decode(inf.prob_word)
    }
}
