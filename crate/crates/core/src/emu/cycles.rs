//! Cycle-accurate latency model of the pipelined inference datapath.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fnn::Architecture;

/// How the per-node sum of products and bias is reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccumulationMode {
    /// One running accumulator; each adder cycle folds in `max_add_operands - 1` new terms.
    #[default]
    Sequential,
    /// Balanced tree of `max_add_operands`-input adders.
    OperandTree,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CyclePolicy {
    pub clock_period_ns: f64,
    pub norm_cycles: u32,
    pub mult_cycles: u32,
    pub add_cycles: u32,
    pub max_add_operands: u32,
    pub relu_cycles: u32,
    pub sigmoid_compare_cycles: u32,
    pub lut_read_cycles: u32,
    pub accumulation: AccumulationMode,
}

impl Default for CyclePolicy {
    fn default() -> Self {
        CyclePolicy {
            clock_period_ns: 2.0,
            norm_cycles: 9,
            mult_cycles: 2,
            add_cycles: 1,
            max_add_operands: 3,
            relu_cycles: 1,
            sigmoid_compare_cycles: 2,
            lut_read_cycles: 1,
            accumulation: AccumulationMode::Sequential,
        }
    }
}

impl CyclePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.clock_period_ns > 0.0 && self.clock_period_ns.is_finite()) {
            return Err(Error::Config(format!("clock period must be positive, got {}", self.clock_period_ns)));
        }
        if self.max_add_operands < 2 {
            return Err(Error::Config(format!(
                "adders need at least 2 operands, got {}",
                self.max_add_operands
            )));
        }
        Ok(())
    }

    /// Adder cycles to reduce `operands` terms to one.
    pub fn fold_cycles(&self, operands: u32) -> u32 {
        let m = self.max_add_operands.max(2);
        if operands <= 1 {
            return 0;
        }
        let rounds = match self.accumulation {
            AccumulationMode::Sequential => (operands - 1).div_ceil(m - 1),
            AccumulationMode::OperandTree => {
                let (mut k, mut r) = (operands, 0);
                while k > 1 {
                    k = k.div_ceil(m);
                    r += 1;
                }
                r
            }
        };
        rounds * self.add_cycles
    }

    /// Latency of one dense layer: parallel multiplies, then the fold of
    /// `fan_in` products plus the bias.
    pub fn layer_cycles(&self, fan_in: usize) -> u32 {
        self.mult_cycles + self.fold_cycles(fan_in as u32 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub cycles: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub stages: Vec<Stage>,
    pub total_cycles: u32,
    pub total_ns: f64,
}

impl CycleReport {
    pub fn stage(&self, name: &str) -> Option<u32> {
        self.stages.iter().find(|s| s.name == name).map(|s| s.cycles)
    }
}

pub fn cycle_report(arch: &Architecture, policy: &CyclePolicy) -> Result<CycleReport> {
    arch.validate()?;
    policy.validate()?;
    let mut stages = vec![Stage { name: "normalization".into(), cycles: policy.norm_cycles }];
    let layers: Vec<(usize, usize)> = arch.layers().collect();
    for (k, &(fan_in, _)) in layers.iter().enumerate() {
        stages.push(Stage { name: format!("layer{}", k + 1), cycles: policy.layer_cycles(fan_in) });
        if k + 1 < layers.len() {
            stages.push(Stage { name: format!("relu{}", k + 1), cycles: policy.relu_cycles });
        }
    }
    stages.push(Stage { name: "sigmoid_compare".into(), cycles: policy.sigmoid_compare_cycles });
    stages.push(Stage { name: "lut".into(), cycles: policy.lut_read_cycles });
    let total_cycles = stages.iter().map(|s| s.cycles).sum();
    Ok(CycleReport {
        stages,
        total_cycles,
        total_ns: f64::from(total_cycles) * policy.clock_period_ns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_pipeline_breakdown() {
        let r = cycle_report(&Architecture::default(), &CyclePolicy::default()).unwrap();
        let got: Vec<(&str, u32)> = r.stages.iter().map(|s| (s.name.as_str(), s.cycles)).collect();
        assert_eq!(
            got,
            vec![
                ("normalization", 9),
                ("layer1", 3),
                ("relu1", 1),
                ("layer2", 6),
                ("relu2", 1),
                ("layer3", 4),
                ("sigmoid_compare", 2),
                ("lut", 1),
            ]
        );
        assert_eq!(r.total_cycles, 27);
        assert_eq!(r.total_ns, 54.0);
    }

    #[test]
    fn fold_counts() {
        let p = CyclePolicy::default();
        // Sequential three-input adder: ceil((k - 1) / 2)
        for (k, c) in [(0, 0), (1, 0), (2, 1), (3, 1), (4, 2), (5, 2), (9, 4), (10, 5)] {
            assert_eq!(p.fold_cycles(k), c, "k={k}");
        }
        let t = CyclePolicy { accumulation: AccumulationMode::OperandTree, ..p };
        for (k, c) in [(1, 0), (3, 1), (4, 2), (9, 2), (10, 3), (27, 3), (28, 4)] {
            assert_eq!(t.fold_cycles(k), c, "k={k}");
        }
    }

    #[test]
    fn wider_layers_never_faster() {
        for mode in [AccumulationMode::Sequential, AccumulationMode::OperandTree] {
            let p = CyclePolicy { accumulation: mode, ..CyclePolicy::default() };
            let mut sizes = vec![2, 8, 4, 1];
            let mut prev = cycle_report(&Architecture::new(sizes.clone()).unwrap(), &p).unwrap().total_cycles;
            for _ in 0..4 {
                let n = sizes.len();
                for s in &mut sizes[1..n - 1] {
                    *s *= 2;
                }
                let t = cycle_report(&Architecture::new(sizes.clone()).unwrap(), &p).unwrap().total_cycles;
                assert!(t >= prev);
                prev = t;
            }
        }
    }

    #[test]
    fn rejects_unary_adder() {
        let p = CyclePolicy { max_add_operands: 1, ..CyclePolicy::default() };
        assert!(cycle_report(&Architecture::default(), &p).is_err());
    }
}
