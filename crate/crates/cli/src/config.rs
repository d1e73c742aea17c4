//! Application configuration: one JSON file, unknown keys rejected.

use std::path::{Path, PathBuf};

use ladbnet::dataset::{SplitRatios, SynthProfile};
use ladbnet::eval::HorizonMode;
use ladbnet::features::FeatureConfig;
use ladbnet::model::ModelConfig;
use ladbnet::trainer::TrainConfig;
use ladbnet::{Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variable consulted when `--config` is absent.
pub const CONFIG_ENV: &str = "LADBNET_CONFIG";

/// Evaluation, robustness and benchmark knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub horizon_mode: HorizonMode,
    /// Evenly spaced test windows to score; `None` scores all.
    pub max_windows: Option<usize>,
    pub robustness_rates: Vec<f64>,
    pub bench_iterations: usize,
    pub bench_warmup: usize,
    /// Training windows used to calibrate activation ranges.
    pub calibration_windows: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            horizon_mode: HorizonMode::Cumulative,
            max_windows: None,
            robustness_rates: vec![0.05, 0.10, 0.20],
            bench_iterations: 1000,
            bench_warmup: 10,
            calibration_windows: ladbnet::quant::CALIBRATION_WINDOWS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub data: PathBuf,
    pub model: PathBuf,
    /// Holiday list, one `YYYY-MM-DD` per line; none by default.
    pub calendar: Option<PathBuf>,
    /// Rows produced by `gen-data`.
    pub rows: usize,
    /// Seeds data generation and weight initialization.
    pub seed: u64,
    pub model_config: ModelConfig,
    pub train: TrainConfig,
    pub generator: SynthProfile,
    pub features: FeatureConfig,
    pub split: SplitRatios,
    pub port: u16,
    pub eval: EvalOptions,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            data: "data.csv".into(),
            model: "model.ladb".into(),
            calendar: None,
            rows: 90_720,
            seed: 42,
            model_config: ModelConfig::default(),
            train: TrainConfig::default(),
            generator: SynthProfile::default(),
            features: FeatureConfig::default(),
            split: SplitRatios::default(),
            port: 8080,
            eval: EvalOptions::default(),
        }
    }
}

impl AppConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: AppConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// `explicit`, else `$LADBNET_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config.validate()?;
        self.train.validate()?;
        if self.eval.calibration_windows == 0 {
            return Err(Error::Config("calibration_windows must be >= 1".into()));
        }
        Ok(())
    }
}
