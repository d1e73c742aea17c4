//! Online forecasting from raw sensor records.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::dataset::{impute_linear, RawFrame, RawRecord, STEP_MINUTES};
use crate::error::{Error, Result};
use crate::eval::Forecaster;
use crate::features::{assemble, FeatureConfig, HolidayCalendar, N_INPUTS, VALID_FROM};

/// Records needed by the default model: 144 lag rows plus a 144-step window.
pub const MIN_HISTORY: usize = 288;

/// Records needed for a model reading `seq_len` steps.
pub fn min_history(seq_len: usize) -> usize {
    VALID_FROM + seq_len
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    /// Timestamp of the last record used.
    pub issued_at: NaiveDateTime,
    pub forecast_kw: Vec<f64>,
    pub horizon_minutes: Vec<u32>,
}

/// Records -> impute -> features -> scaled window -> forward -> kW.
///
/// Records may arrive unordered; grid gaps are filled by linear
/// interpolation. Only the most recent `min_history` rows are used.
pub fn forecast_from_records(
    f: &dyn Forecaster,
    records: Vec<RawRecord>,
    calendar: &HolidayCalendar,
    feature_cfg: &FeatureConfig,
) -> Result<Forecast> {
    let cfg = f.config();
    let need = min_history(cfg.seq_len);
    if records.len() < need {
        return Err(Error::InsufficientData(format!(
            "at least {need} records required, got {}",
            records.len()
        )));
    }
    let scaler = f
        .scaler()
        .ok_or_else(|| Error::State("model carries no scaler".into()))?;
    let frame = RawFrame::from_unordered(records)?;
    let frame = frame.slice(frame.len() - need..frame.len());
    let frame = impute_linear(&frame)?;
    let fm = assemble(&frame, calendar, feature_cfg)?;
    let mut x = vec![0f32; cfg.seq_len * N_INPUTS];
    for (j, r) in (fm.n_rows() - cfg.seq_len..fm.n_rows()).enumerate() {
        scaler.scale_inputs(fm.row(r), &mut x[j * N_INPUTS..(j + 1) * N_INPUTS]);
    }
    let y = f.forward(&x, 1)?;
    let issued_at = *fm.timestamps.last().expect("non-empty frame");
    Ok(Forecast {
        issued_at,
        forecast_kw: y.iter().map(|&v| scaler.invert_target(v as f64)).collect(),
        horizon_minutes: (1..=cfg.horizon as u32)
            .map(|h| h * STEP_MINUTES as u32)
            .collect(),
    })
}
