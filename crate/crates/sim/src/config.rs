//! Versioned TOML configuration. Every section is optional and falls back to
//! the built-in defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use fefet_core::device::DeviceParams;
use fefet_core::network::{Hyperparams, Topology};
use fefet_core::nonideality::{
    default_retention_drifts, AgingSpec, Lorentzian, NoisePsdSpec, OneOverF, RetentionDrift,
    VariationSpec, TEN_YEARS_S,
};
use fefet_core::programming::ProgramConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, SimError, SimResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    #[serde(default)]
    pub device: DeviceParams,
    #[serde(default)]
    pub variation: VariationSpec,
    #[serde(default)]
    pub measured_d2d: MeasuredD2d,
    #[serde(default)]
    pub aging: AgingSpec,
    #[serde(default)]
    pub programming: ProgramConfig,
    #[serde(default)]
    pub crossbar: CrossbarConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub scenario: ScenarioDefaults,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub retention: RetentionConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub data: DataConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            device: DeviceParams::default(),
            variation: VariationSpec::default(),
            measured_d2d: MeasuredD2d::default(),
            aging: AgingSpec::default(),
            programming: ProgramConfig::default(),
            crossbar: CrossbarConfig::default(),
            training: TrainingConfig::default(),
            scenario: ScenarioDefaults::default(),
            sweep: SweepConfig::default(),
            retention: RetentionConfig::default(),
            noise: NoiseConfig::default(),
            data: DataConfig::default(),
        }
    }
}

/// Per-level relative D2D spread of programmed devices (index = level),
/// used where the variation is taken from measured distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasuredD2d {
    pub binary: Vec<f64>,
    pub four_level: Vec<f64>,
}

impl Default for MeasuredD2d {
    fn default() -> Self {
        Self { binary: vec![0.10, 0.03], four_level: vec![0.10, 0.06, 0.04, 0.03] }
    }
}

impl MeasuredD2d {
    pub fn for_levels(&self, levels: u8) -> &[f64] {
        if levels == 2 {
            &self.binary
        } else {
            &self.four_level
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossbarConfig {
    pub max_rows: usize,
    pub max_cols: usize,
}

impl Default for CrossbarConfig {
    fn default() -> Self {
        Self { max_rows: 256, max_cols: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default)]
    pub topology: Topology,
    #[serde(default = "Hyperparams::binary")]
    pub binary: Hyperparams,
    #[serde(default = "Hyperparams::four_level")]
    pub mlc: Hyperparams,
    #[serde(default = "default_train_seed")]
    pub seed: u64,
}

fn default_train_seed() -> u64 {
    7
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            topology: Topology::default(),
            binary: Hyperparams::binary(),
            mlc: Hyperparams::four_level(),
            seed: default_train_seed(),
        }
    }
}

impl TrainingConfig {
    pub fn hyperparams(&self, levels: u8) -> &Hyperparams {
        if levels == 2 {
            &self.binary
        } else {
            &self.mlc
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioDefaults {
    pub repetitions: usize,
    pub base_seed: u64,
    pub cold_temp: f64,
    /// Read voltage of the differential scenarios.
    pub vg_read_digital: f64,
    /// Read voltage of the offset-referenced scenario.
    pub vg_read_analog: f64,
}

impl Default for ScenarioDefaults {
    fn default() -> Self {
        Self {
            repetitions: 5,
            base_seed: 1,
            cold_temp: 233.0,
            vg_read_digital: 0.75,
            vg_read_analog: 1.45,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub vg_read: Vec<f64>,
    pub temps: Vec<f64>,
    pub seeds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { vg_read: vec![0.4, 0.55, 0.75, 1.0, 1.2], temps: vec![300.0, 233.0], seeds: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetentionConfig {
    pub drifts: Vec<RetentionDrift>,
    pub vg_read: f64,
    pub horizon_s: f64,
    /// Smallest acceptable LRS/HRS ratio at the horizon.
    pub min_ratio: f64,
}

impl Default for RetentionConfig {
    fn default() -> Self {
        Self { drifts: default_retention_drifts(), vg_read: 0.75, horizon_s: TEN_YEARS_S, min_ratio: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub psd: NoisePsdSpec,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// Rescale the synthesized trace to this standard deviation when set.
    pub target_sigma: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            psd: NoisePsdSpec {
                lorentzians: vec![Lorentzian { corner_hz: 50.0, amplitude: 2e-7 }],
                one_over_f: Some(OneOverF { amplitude: 2e-6, gamma: 1.0 }),
            },
            duration_s: 10.0,
            sample_rate_hz: 1000.0,
            target_sigma: Some(0.007),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub mnist_dir: Option<PathBuf>,
    pub artifacts_dir: Option<PathBuf>,
}

impl Config {
    pub fn from_toml(text: &str) -> SimResult<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> SimResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> SimResult<String> {
        toml::to_string_pretty(self).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn validate(&self) -> SimResult<()> {
        if self.version != CONFIG_VERSION {
            return Err(SimError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let wrap = |e: fefet_core::Error| SimError::Config(e.to_string());
        self.device.validate().map_err(wrap)?;
        self.variation.validate().map_err(wrap)?;
        self.aging.validate().map_err(wrap)?;
        self.programming.validate().map_err(wrap)?;
        self.training.binary.validate().map_err(wrap)?;
        self.training.mlc.validate().map_err(wrap)?;
        for sigmas in [&self.measured_d2d.binary, &self.measured_d2d.four_level] {
            if sigmas.iter().any(|s| !(0.0..0.5).contains(s)) {
                return Err(SimError::Config("measured D2D sigmas must lie in [0, 0.5)".into()));
            }
        }
        if self.measured_d2d.binary.len() != 2 || self.measured_d2d.four_level.len() != 4 {
            return Err(SimError::Config("measured D2D needs 2 binary and 4 four-level sigmas".into()));
        }
        if self.crossbar.max_rows == 0 || self.crossbar.max_cols == 0 {
            return Err(SimError::Config("crossbar dimensions must be positive".into()));
        }
        if self.scenario.repetitions == 0 {
            return Err(SimError::Config("repetitions must be positive".into()));
        }
        for t in [self.scenario.cold_temp].iter().chain(&self.sweep.temps) {
            fefet_core::device::check_temperature(*t).map_err(wrap)?;
        }
        if self.sweep.vg_read.is_empty() || self.sweep.temps.is_empty() || self.sweep.seeds == 0 {
            return Err(SimError::Config("sweep needs voltages, temperatures and seeds".into()));
        }
        if self.training.topology.sizes.len() < 2 {
            return Err(SimError::Config("topology needs at least two layers".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&bytes)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_needs_version() {
        assert!(Config::from_toml("").is_err());
        let c = Config::from_toml("version = 1").unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn partial_device_table() {
        let c = Config::from_toml("version = 1\n[device]\nvth_hrs = 1.2\n").unwrap();
        assert_eq!(c.device.vth_hrs, 1.2);
        assert_eq!(c.device.vth_lrs, DeviceParams::default().vth_lrs);
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        assert!(Config::from_toml("version = 1\nbogus = 3\n").is_err());
        assert!(Config::from_toml("version = 2\n").is_err());
        assert!(Config::from_toml("version = 1\n[device]\nvth_hrs = 0.1\n").is_err());
        assert!(Config::from_toml("version = 1\n[scenario]\ncold_temp = 200.0\n").is_err());
    }

    #[test]
    fn round_trip_and_hash() {
        let c = Config::default();
        let back = Config::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.device.kt1 = -0.4;
        assert_ne!(d.hash(), c.hash());
    }
}
