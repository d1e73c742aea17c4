//! Metrics, multi-horizon reports, baselines, robustness and latency.

mod ablation;
mod bench;
mod metrics;
mod report;
mod robustness;

pub use ablation::{ablation_table, run_ablation, AblationRow};
pub use bench::{latency_bench, nearest_rank, LatencyReport};
pub use metrics::{mape, mape_with_floor, r_squared, CompensatedSum, MAPE_FLOOR};
pub use report::{
    horizons_for, multi_horizon_report, predict_kw, report_from_predictions, seasonal_naive,
    seasonal_naive_predictions, ForecastReport, HorizonMetrics, HorizonMode, DAY_STEPS, HORIZONS,
};
pub use robustness::{robustness_missing, RobustnessConfig, RobustnessReport, RobustnessRow};

use crate::dataset::{ScalerParams, WindowedDataset};
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::quant::QuantizedModel;

/// Anything that maps normalized windows to normalized forecasts.
pub trait Forecaster: Sync {
    /// `"float"` or `"int8"`.
    fn kind(&self) -> &'static str;
    fn config(&self) -> &ModelConfig;
    fn scaler(&self) -> Option<&ScalerParams>;
    /// Normalized forecasts for `batch` windows `[batch, seq_len, n_features]`.
    fn forward(&self, x: &[f32], batch: usize) -> Result<Vec<f32>>;
    fn predict_normalized(&self, ds: &WindowedDataset, idx: &[usize]) -> Result<Vec<f32>>;

    fn horizon(&self) -> usize {
        self.config().horizon
    }

    fn label(&self) -> String {
        format!("{}/{}", self.config().variant, self.kind())
    }
}

impl Forecaster for Model {
    fn kind(&self) -> &'static str {
        "float"
    }
    fn config(&self) -> &ModelConfig {
        &self.config
    }
    fn scaler(&self) -> Option<&ScalerParams> {
        self.scaler.as_ref()
    }
    fn forward(&self, x: &[f32], batch: usize) -> Result<Vec<f32>> {
        Model::forward(self, x, batch)
    }
    fn predict_normalized(&self, ds: &WindowedDataset, idx: &[usize]) -> Result<Vec<f32>> {
        self.predict(ds, idx)
    }
}

impl Forecaster for QuantizedModel {
    fn kind(&self) -> &'static str {
        "int8"
    }
    fn config(&self) -> &ModelConfig {
        &self.config
    }
    fn scaler(&self) -> Option<&ScalerParams> {
        self.scaler.as_ref()
    }
    fn forward(&self, x: &[f32], batch: usize) -> Result<Vec<f32>> {
        QuantizedModel::forward(self, x, batch)
    }
    fn predict_normalized(&self, ds: &WindowedDataset, idx: &[usize]) -> Result<Vec<f32>> {
        self.predict(ds, idx)
    }
}
