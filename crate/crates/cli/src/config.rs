use std::path::{Path, PathBuf};

use cityproj_core::detect::DetectParams;
use cityproj_core::engine::{EngineConfig, ModelSet, NbFitMode, DEFAULT_SIZE_THRESHOLDS};
use cityproj_core::landprice::LandPriceConfig;
use cityproj_core::powerlaw::DEFAULT_N_BOOT;
use cityproj_core::synth::SynthSpec;
use cityproj_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Contents of a `--config` TOML file. Every key is optional; flags given on
/// the command line override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub detect: DetectParams,
    pub engine: EngineSection,
    pub synth: SynthSpec,
    pub landprice: LandPriceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    /// Epochs to project; the whole scenario when absent.
    pub horizon: Option<usize>,
    pub smoothing: bool,
    pub nb_fit_mode: NbFitMode,
    pub clamp_negative: bool,
    pub n_boot: usize,
    pub seed: u64,
    pub models: ModelSet,
    /// City-size cutoffs of the summary table.
    pub size_thresholds: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("."),
            threads: 0,
            detect: DetectParams::default(),
            engine: EngineSection::default(),
            synth: SynthSpec::default(),
            landprice: LandPriceConfig::default(),
        }
    }
}

impl Default for EngineSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        Self {
            horizon: e.horizon,
            smoothing: e.smoothing,
            nb_fit_mode: e.nb_fit_mode,
            clamp_negative: e.clamp_negative,
            n_boot: DEFAULT_N_BOOT,
            seed: e.seed,
            models: e.models,
            size_thresholds: DEFAULT_SIZE_THRESHOLDS.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn engine_config(&self) -> Result<EngineConfig> {
        let e = &self.engine;
        let config = EngineConfig {
            detect: self.detect,
            horizon: e.horizon,
            smoothing: e.smoothing,
            nb_fit_mode: e.nb_fit_mode,
            clamp_negative: e.clamp_negative,
            n_boot: e.n_boot,
            seed: e.seed,
            models: e.models,
        };
        config.validate()?;
        if e.size_thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidInput("size_thresholds must be positive numbers".into()));
        }
        Ok(config)
    }
}
