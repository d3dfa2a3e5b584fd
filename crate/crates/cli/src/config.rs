//! The TOML configuration shared by every subcommand.
//!
//! ```toml
//! seed = 7
//! devices = ["d1", "d2", "d3", "d4"]
//! stride = 60.0
//!
//! [window]
//! placement = "centered"
//! [window.features]
//! tau = 600.0
//!
//! [protocol]
//! train_frac = 0.7
//! k = 5
//!
//! [[models]]
//! family = "random_forest"
//! n_estimators = 50
//! ```

use std::path::Path;

use airshadow_core::eval::Protocol;
use airshadow_core::ingest::WindowConfig;
use airshadow_core::models::ModelSpec;
use airshadow_core::rng::derive_seed;
use airshadow_core::DeviceId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub seed: u64,
    /// Device order of the feature layout; inferred from the data when absent.
    pub devices: Option<Vec<DeviceId>>,
    /// Alignment grid step, seconds.
    pub step: f64,
    /// Gaps longer than this split telemetry into separate segments, seconds.
    pub split_gap: f64,
    /// Sliding-window stride for `predict`, seconds.
    pub stride: f64,
    /// Seconds of telemetry kept around each scripted event by `simulate`;
    /// absent means the full trace for scenarios up to two days long.
    pub margin: Option<f64>,
    pub window: WindowConfig,
    pub protocol: Protocol,
    /// Benchmark grid; the reference grid when absent.
    pub models: Option<Vec<ModelSpec>>,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            devices: None,
            step: 1.0,
            split_gap: 60.0,
            stride: 60.0,
            margin: None,
            window: WindowConfig::default(),
            protocol: Protocol::default(),
            models: None,
        }
    }
}

impl GlobalConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        for (name, v) in [("step", self.step), ("split_gap", self.split_gap), ("stride", self.stride)] {
            anyhow::ensure!(v.is_finite() && v > 0.0, "{name} must be positive, got {v}");
        }
        if let Some(m) = self.margin {
            anyhow::ensure!(m.is_finite() && m >= 0.0, "margin must be non-negative, got {m}");
        }
        self.window.features.validate()?;
        if let Some(models) = &self.models {
            anyhow::ensure!(!models.is_empty(), "models list is empty");
            for m in models {
                m.validate()?;
            }
        }
        Ok(())
    }

    /// Named substream seeds, all derived from the one user-visible seed.
    pub fn seed_for(&self, stream: Stream) -> u64 {
        derive_seed(self.seed, stream.name())
    }

    pub fn benchmark_protocol(&self) -> Protocol {
        Protocol {
            seed: self.seed_for(Stream::Split),
            ..self.protocol.clone()
        }
    }

    pub fn grid(&self) -> Vec<ModelSpec> {
        self.models.clone().unwrap_or_else(ModelSpec::reference_grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Scenario,
    Simulation,
    Split,
    Model,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Scenario => "scenario",
            Stream::Simulation => "simulation",
            Stream::Split => "split",
            Stream::Model => "model",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let text = r#"
seed = 7
devices = ["d1", "d2", "d3", "d4"]
stride = 60.0

[window]
placement = "centered"
[window.features]
tau = 600.0

[protocol]
train_frac = 0.7
k = 5

[[models]]
family = "random_forest"
n_estimators = 50
"#;
        let cfg: GlobalConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.devices.as_ref().unwrap().len(), 4);
        assert_eq!(cfg.grid().len(), 1);
        assert_ne!(cfg.seed_for(Stream::Split), cfg.seed_for(Stream::Model));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(toml::from_str::<GlobalConfig>("sed = 1").is_err());
        let cfg: GlobalConfig = toml::from_str("stride = 0.0").unwrap();
        assert!(cfg.validate().is_err());
        assert_eq!(GlobalConfig::default().grid().len(), 17);
    }
}
