//! Experiment configuration.
//!
//! A config file is TOML laid over the built-in defaults in
//! `configs/default.toml`; every key is optional. The `[sim]` table holds
//! overrides applied on top of the named preset. The top-level `seed` seeds
//! both simulation and training unless `[sim]` or `[train]` set their own.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::emu::{CyclePolicy, ResourceModel};
use crate::error::{Error, Result};
use crate::fnn::{Architecture, TrainConfig};
use crate::fxp::LutConfig;
use crate::iqsim::SimConfig;

pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub shots_per_state: usize,
    pub calibration_shots: usize,
    pub eval_shots_per_state: usize,
    pub ema_alpha: f64,
    pub sweep_readout_us: Vec<f64>,
    pub baseline_ramp_fraction: f64,
    pub qubit_id: u8,
    pub feedback_trials: usize,
    #[serde(default)]
    pub architecture: Architecture,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub lut: LutConfig,
    pub cycle: CyclePolicy,
    pub resource: ResourceModel,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_table(text: &str, origin: &Path) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| Error::ConfigFile {
        path: origin.to_path_buf(),
        msg: e.to_string(),
    })
}

impl ExperimentConfig {
    /// Built-in defaults.
    pub fn defaults() -> ExperimentConfig {
        Self::from_toml_str("").expect("built-in configuration is valid")
    }

    /// Reads `path` over the defaults, or returns the defaults for `None`.
    pub fn load(path: Option<&Path>) -> Result<ExperimentConfig> {
        match path {
            None => Ok(Self::defaults()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::ConfigFile {
                    path: p.to_path_buf(),
                    msg: e.to_string(),
                })?;
                Self::from_toml_at(&text, p)
            }
        }
    }

    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        Self::from_toml_at(text, Path::new("<inline>"))
    }

    fn from_toml_at(text: &str, origin: &Path) -> Result<ExperimentConfig> {
        let file_err = |msg: String| Error::ConfigFile { path: origin.to_path_buf(), msg };
        let mut table = parse_table(DEFAULT_CONFIG, Path::new("<default>"))?;
        merge(&mut table, parse_table(text, origin)?);

        let preset = match table.get("preset") {
            Some(toml::Value::String(s)) => s.clone(),
            _ => return Err(file_err("`preset` must be a string".into())),
        };
        let seed = table
            .get("seed")
            .and_then(toml::Value::as_integer)
            .ok_or_else(|| file_err("`seed` must be a non-negative integer".into()))?;

        let mut sim = toml::Table::try_from(SimConfig::preset(&preset)?).map_err(|e| file_err(e.to_string()))?;
        sim.insert("seed".into(), toml::Value::Integer(seed));
        if let Some(toml::Value::Table(over)) = table.remove("sim") {
            merge(&mut sim, over);
        }
        table.insert("sim".into(), toml::Value::Table(sim));
        if let Some(toml::Value::Table(train)) = table.get_mut("train") {
            train.entry("seed").or_insert(toml::Value::Integer(seed));
        }

        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| file_err(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reseeds simulation and training.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sim.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        SimConfig::preset(&self.preset)?;
        self.sim.validate()?;
        self.train.validate()?;
        self.cycle.validate()?;
        self.architecture.validate()?;
        if self.shots_per_state == 0 || self.calibration_shots == 0 || self.eval_shots_per_state < 2 {
            return Err(Error::Config("shot counts must be positive".into()));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(Error::range("ema_alpha", self.ema_alpha, 0.0, 1.0));
        }
        if self.sweep_readout_us.is_empty() || self.sweep_readout_us.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Config("sweep_readout_us must list positive readout times".into()));
        }
        if !(self.baseline_ramp_fraction >= 0.0 && self.baseline_ramp_fraction <= 0.5) {
            return Err(Error::range("baseline_ramp_fraction", self.baseline_ramp_fraction, 0.0, 0.5));
        }
        if self.qubit_id >= crate::emu::MAX_QUBITS {
            return Err(Error::Config(format!("qubit_id {} must be below 8", self.qubit_id)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_presets() {
        let c = ExperimentConfig::defaults();
        assert_eq!(c.sim, SimConfig::no_twpa());
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.lut, LutConfig::default());
        assert_eq!(c.cycle, CyclePolicy::default());
        assert_eq!(c.resource, ResourceModel::default());
        assert_eq!(c.architecture, Architecture::default());
        assert_eq!(c.shots_per_state, 50_000);
    }

    #[test]
    fn overrides_layer_on_preset() {
        let c = ExperimentConfig::from_toml_str(
            "preset = \"twpa\"\nseed = 7\n[sim]\nnoise_sigma = 250\n[train]\nepochs = 3\n[cycle]\naccumulation = \"operand-tree\"\n",
        )
        .unwrap();
        assert_eq!(c.sim.noise_sigma, 250.0);
        assert_eq!(c.sim.readout_len, SimConfig::twpa().readout_len);
        assert_eq!((c.sim.seed, c.train.seed), (7, 7));
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.cycle.accumulation, crate::emu::AccumulationMode::OperandTree);
    }

    #[test]
    fn section_seed_wins() {
        let c = ExperimentConfig::from_toml_str("seed = 7\n[sim]\nseed = 9\n").unwrap();
        assert_eq!((c.sim.seed, c.train.seed), (9, 7));
    }

    #[test]
    fn rejects_typos_and_bad_values() {
        assert!(ExperimentConfig::from_toml_str("[sim]\nnoise_sigmaa = 1.0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("shots = 3\n").is_err());
        assert!(ExperimentConfig::from_toml_str("sweep_readout_us = [1.0, -2.0]\n").is_err());
        assert!(ExperimentConfig::from_toml_str("preset = \"fridge\"\n").is_err());
    }

    #[test]
    fn missing_file_is_usage_error_with_path() {
        let err = ExperimentConfig::load(Some(Path::new("/nonexistent/x.toml"))).unwrap_err();
        assert!(err.is_usage());
        assert!(err.to_string().contains("/nonexistent/x.toml"));
    }

    #[test]
    fn serialized_config_reloads() {
        let c = ExperimentConfig::defaults();
        assert_eq!(ExperimentConfig::from_toml_str(&c.to_toml()).unwrap(), c);
    }
}
