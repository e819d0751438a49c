//! Linear resource estimate for the inference core.
//!
//! DSP slices map one-to-one to weights. The LUT, flip-flop and carry-chain
//! figures are linear in the weight and node counts; the default coefficients
//! reproduce the post-implementation numbers of the reference [2, 8, 4, 1]
//! design. The sigmoid table occupies half a block RAM.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fnn::Architecture;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceModel {
    pub lut_per_weight: u64,
    pub lut_per_node: u64,
    pub lut_base: u64,
    pub ff_per_weight: u64,
    pub ff_per_node: u64,
    pub ff_base: u64,
    pub carry8_per_weight: u64,
    pub carry8_per_node: u64,
    pub carry8_base: u64,
    pub bram: f64,
}

impl Default for ResourceModel {
    fn default() -> Self {
        ResourceModel {
            lut_per_weight: 26,
            lut_per_node: 18,
            lut_base: 6,
            ff_per_weight: 45,
            ff_per_node: 18,
            ff_base: 23,
            carry8_per_weight: 1,
            carry8_per_node: 2,
            carry8_base: 2,
            bram: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub dsp_count: u64,
    pub lut_estimate: u64,
    pub ff_estimate: u64,
    pub carry8_estimate: u64,
    pub bram_estimate: f64,
}

pub fn resource_report(arch: &Architecture, model: &ResourceModel) -> Result<ResourceReport> {
    arch.validate()?;
    let w = arch.n_weights() as u64;
    let n = arch.n_biases() as u64;
    Ok(ResourceReport {
        dsp_count: w,
        lut_estimate: model.lut_per_weight * w + model.lut_per_node * n + model.lut_base,
        ff_estimate: model.ff_per_weight * w + model.ff_per_node * n + model.ff_base,
        carry8_estimate: model.carry8_per_weight * w + model.carry8_per_node * n + model.carry8_base,
        bram_estimate: model.bram,
    })
}
