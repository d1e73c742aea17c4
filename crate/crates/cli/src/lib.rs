//! Command-line front end and HTTP prediction service for `ladbnet`.

pub mod commands;
pub mod config;
pub mod service;

use std::path::Path;

use ladbnet::dataset::{
    load_csv, make_windows, prepare, Prepared, RawFrame, Split, WindowShape, WindowedDataset,
};
use ladbnet::eval::Forecaster;
use ladbnet::features::HolidayCalendar;
use ladbnet::model::io::Container;
use ladbnet::model::Model;
use ladbnet::quant::{quantize_model, QuantizedModel};
use ladbnet::{Error, Result};
use serde::Serialize;

pub use commands::{run, Cli, Command};
pub use config::AppConfig;

/// A model file of either kind, detected from the container header.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Float(Model),
    Int8(QuantizedModel),
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        match c.kind.as_str() {
            "float" => Ok(LoadedModel::Float(Model::from_container(c)?)),
            "int8" => Ok(LoadedModel::Int8(QuantizedModel::from_container(c)?)),
            other => Err(Error::Format {
                section: "header",
                msg: format!("unknown model kind {other:?}"),
            }),
        }
    }

    pub fn forecaster(&self) -> &dyn Forecaster {
        match self {
            LoadedModel::Float(m) => m,
            LoadedModel::Int8(q) => q,
        }
    }

    pub fn metadata(&self) -> ModelInfo {
        let f = self.forecaster();
        let c = f.config();
        ModelInfo {
            kind: f.kind().to_string(),
            variant: c.variant.to_string(),
            seq_len: c.seq_len,
            horizon: c.horizon,
            parameters: match self {
                LoadedModel::Float(m) => m.count_params(),
                LoadedModel::Int8(q) => q.layers().map(|l| l.weight.len() + l.bias.len()).sum(),
            },
        }
    }
}

/// Model description attached to reports and service responses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub kind: String,
    pub variant: String,
    pub seq_len: usize,
    pub horizon: usize,
    pub parameters: usize,
}

pub fn load_calendar(cfg: &AppConfig) -> Result<HolidayCalendar> {
    match &cfg.calendar {
        Some(p) => HolidayCalendar::load(p),
        None => Ok(HolidayCalendar::default()),
    }
}

/// Raw frame plus the prepared splits for `shape`.
pub fn prepare_data(
    cfg: &AppConfig,
    data: &Path,
    shape: WindowShape,
) -> Result<(RawFrame, Prepared)> {
    let frame = load_csv(data)?;
    let cal = load_calendar(cfg)?;
    let p = prepare(&frame, &cal, &cfg.features, cfg.split, shape)?;
    Ok((frame, p))
}

pub fn shape_of(f: &dyn Forecaster) -> WindowShape {
    WindowShape {
        seq_len: f.config().seq_len,
        horizon: f.config().horizon,
    }
}

/// Windows of `split` scaled with the model's own scaler, so a model is
/// always fed the normalization it was trained with.
pub fn windows_for(f: &dyn Forecaster, p: &Prepared, split: Split) -> Result<WindowedDataset> {
    let scaler = f
        .scaler()
        .ok_or_else(|| Error::State("model carries no scaler".into()))?;
    if *scaler == p.scaler {
        return Ok(match split {
            Split::Train => p.train.clone(),
            Split::Val => p.val.clone(),
            Split::Test => p.test.clone(),
        });
    }
    let rows = match split {
        Split::Train => p.segments.train.clone(),
        Split::Val => p.segments.val.clone(),
        Split::Test => p.segments.test.clone(),
    };
    make_windows(&p.features, scaler, rows, split, shape_of(f))
}

/// Converts a float model to int8, calibrating on its training windows.
pub fn quantize_loaded(
    m: &Model,
    p: &Prepared,
    calibration_windows: usize,
) -> Result<QuantizedModel> {
    let train = windows_for(m, p, Split::Train)?;
    quantize_model(m, &train, calibration_windows)
}

/// `x` rounded to `digits` significant digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .unwrap_or(x)
}
