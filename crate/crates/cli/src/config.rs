//! Run configuration: a TOML file with one section per subcommand. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use rgw_vp::cwt::ScaleSpacing;
use rgw_vp::fit::FitMethod;
use rgw_vp::net::NetworkConfig;
use rgw_vp::MotherKind;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub network: NetworkConfig,
    pub data: DataConfig,
    pub render: RenderConfig,
    pub reconstruct: ReconstructConfig,
    pub scalogram: ScalogramConfig,
    pub gradcheck: GradcheckConfig,
    pub boundcheck: BoundcheckConfig,
    pub evaluate: EvaluateConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// Heartbeat sources. Without file paths, synthetic beats are generated.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub validation_fraction: f64,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub veb_fraction: f64,
    pub noise_level: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            validation_fraction: 0.2,
            synthetic_train: 2000,
            synthetic_test: 1000,
            veb_fraction: 0.2,
            noise_level: 0.05,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub mother: MotherKind,
    pub p: usize,
    pub n: usize,
    /// Explicit zeros; drawn at random when absent.
    pub zeros: Option<Vec<f64>>,
    /// Explicit `[a, b_raw]` pole pairs; drawn at random when absent.
    pub poles: Option<Vec<[f64; 2]>>,
    pub points: usize,
    pub half_width: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            mother: MotherKind::Rational,
            p: 10,
            n: 3,
            zeros: None,
            poles: None,
            points: 4096,
            half_width: 8.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    /// Signal file; a synthetic VEB beat is used when absent.
    pub signal: Option<PathBuf>,
    /// Record index when the signal file holds heartbeat rows.
    pub record: usize,
    pub mother: MotherKind,
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub method: FitMethod,
    /// Also fit a frozen Ricker mother from the same scales and translations.
    pub compare_ricker: bool,
    pub noise_level: f64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            signal: None,
            record: 0,
            mother: MotherKind::Rational,
            m: 8,
            p: 3,
            n: 4,
            steps: 2000,
            learning_rate: 1e-3,
            method: FitMethod::Adam,
            compare_ricker: true,
            noise_level: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalogramConfig {
    pub signal: Option<PathBuf>,
    pub record: usize,
    pub mother: MotherKind,
    pub p: usize,
    pub n: usize,
    pub scales: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub spacing: ScaleSpacing,
}

impl Default for ScalogramConfig {
    fn default() -> Self {
        Self {
            signal: None,
            record: 0,
            mother: MotherKind::Rational,
            p: 3,
            n: 4,
            scales: 25,
            scale_min: 0.1,
            scale_max: 1.5,
            spacing: ScaleSpacing::Linear,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub draws: usize,
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub signal_len: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Also check the network loss gradient on a small synthetic batch per draw.
    pub network: bool,
    pub network_tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            draws: 10,
            m: 4,
            p: 3,
            n: 4,
            signal_len: 120,
            step: 1e-6,
            tolerance: 1e-5,
            network: true,
            network_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundcheckConfig {
    pub signals: usize,
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub signal_len: usize,
}

impl Default for BoundcheckConfig {
    fn default() -> Self {
        Self {
            signals: 20,
            m: 3,
            p: 3,
            n: 4,
            signal_len: 300,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Defaults to `model.json` in the output directory.
    pub model: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.network, NetworkConfig::default());
        assert_eq!(c.render.points, 4096);
        assert!(c.seed.is_none());
    }

    #[test]
    fn sections_and_enums() {
        let c = RunConfig::parse(
            "seed = 4\n[network]\nm = 6\nmother = \"ricker\"\n[scalogram]\nspacing = \"octave\"\n[reconstruct]\nmethod = \"levenberg_marquardt\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(4));
        assert_eq!(c.network.m, 6);
        assert_eq!(c.network.mother, MotherKind::Ricker);
        assert_eq!(c.scalogram.spacing, ScaleSpacing::Octave);
        assert_eq!(c.reconstruct.method, FitMethod::LevenbergMarquardt);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("colour = 1").is_err());
        assert!(RunConfig::parse("[network]\nhiden_units = 3").is_err());
        assert!(RunConfig::parse("[plot]\nx = 1").is_err());
    }
}
