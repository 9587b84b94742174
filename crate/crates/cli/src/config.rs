//! Run configuration: a JSON document whose fields all have defaults,
//! merged with command-line overrides. The effective config is echoed
//! into every output directory.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spinecarve_core::{BuildConfig, EvolutionConfig, MethodKind};

use crate::fail::{fail, Failure, EXIT_IO, EXIT_SPEC};

pub const CONFIG_VERSION: u32 = 1;

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_method() -> MethodKind {
    MethodKind::Full
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub evolution: EvolutionConfig,
    pub build: BuildConfig,
    pub method: MethodKind,
    pub seed: u64,
    /// Worker threads; 0 picks one per CPU.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: default_version(),
            evolution: EvolutionConfig::default(),
            build: BuildConfig::default(),
            method: default_method(),
            seed: 0,
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| fail(EXIT_IO, format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| fail(EXIT_SPEC, format!("bad config {}: {e}", path.display())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(fail(
                EXIT_SPEC,
                format!(
                    "config version {} is not supported (expected {CONFIG_VERSION})",
                    cfg.version
                ),
            ));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the effective configuration next to a command's outputs.
    pub fn echo_into(&self, dir: &Path) -> Result<(), Failure> {
        let path = dir.join("config_used.json");
        std::fs::write(&path, self.to_json())
            .map_err(|e| fail(EXIT_IO, format!("cannot write {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_json() {
        let mut cfg = RunConfig::default();
        cfg.evolution.w_shape = 1500.0;
        cfg.seed = 9;
        cfg.method = MethodKind::DataContext;
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_keys_take_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.method, MethodKind::Full);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 7}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"evolution": {"w_dta": 1.0}}"#).is_err());
    }

    #[test]
    fn bandwidths_accept_auto_or_number() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"build": {"intensity_bandwidth": 0.05, "spatial_bandwidth": "auto"}}"#,
        )
        .unwrap();
        assert_eq!(
            cfg.build.intensity_bandwidth,
            spinecarve_core::Bandwidth::Fixed(0.05)
        );
        assert_eq!(
            cfg.build.spatial_bandwidth,
            spinecarve_core::Bandwidth::Auto
        );
    }
}
