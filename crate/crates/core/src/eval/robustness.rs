//! Missing-data robustness: mask raw rows, re-impute, re-evaluate.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::{predict_kw, report_from_predictions, HorizonMode};
use super::Forecaster;
use crate::dataset::{impute_linear, make_windows, RawFrame, RawRecord, Split, WindowShape};
use crate::error::{Error, Result};
use crate::features::{assemble, FeatureConfig, HolidayCalendar, VALID_FROM};
use crate::trainer::spaced_indices;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub rates: Vec<f64>,
    pub seed: u64,
    /// Evenly spaced subset of test windows to score; `None` scores all.
    pub max_windows: Option<usize>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            rates: vec![0.05, 0.10, 0.20],
            seed: 42,
            max_windows: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub rate: f64,
    pub masked_rows: usize,
    pub mape_1h: f64,
    /// `mape_1h` minus the clean MAPE(1h), in percentage points.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub model: String,
    pub seed: u64,
    pub windows: usize,
    pub clean_mape_1h: f64,
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{} missing-data robustness ({} windows, seed {}), clean MAPE(1h) {:.3}\n{:>6}{:>9}{:>12}{:>10}\n",
            self.model, self.windows, self.seed, self.clean_mape_1h, "rate", "masked", "MAPE(1h)", "delta"
        );
        for r in &self.rows {
            s += &format!(
                "{:>5.0}%{:>9}{:>12.3}{:>+10.3}\n",
                r.rate * 100.0,
                r.masked_rows,
                r.mape_1h,
                r.delta
            );
        }
        s
    }
}

/// Scores `f` on the test rows after masking a fraction of raw rows.
///
/// `frame` is the full raw series and `test_rows` the test segment in
/// feature-row coordinates (feature row `i` is raw row `i`). The segment
/// is evaluated with its 144 preceding lag rows. Masks are nested: the
/// rows hidden at a lower rate are also hidden at every higher rate, and
/// the first and last rows are never hidden so interpolation stays
/// defined. Errors are always measured against the clean kW.
#[allow(clippy::too_many_arguments)]
pub fn robustness_missing(
    f: &dyn Forecaster,
    frame: &RawFrame,
    test_rows: Range<usize>,
    calendar: &HolidayCalendar,
    feature_cfg: &FeatureConfig,
    cfg: &RobustnessConfig,
) -> Result<RobustnessReport> {
    for &r in &cfg.rates {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::Config(format!("missing rate {r} must be in [0, 1)")));
        }
    }
    if test_rows.start < VALID_FROM || test_rows.end > frame.len() {
        return Err(Error::InsufficientData(format!(
            "test rows {test_rows:?} need {VALID_FROM} preceding rows within {} raw rows",
            frame.len()
        )));
    }
    let scaler = f
        .scaler()
        .ok_or_else(|| Error::State("model carries no scaler".into()))?;
    let c = f.config();
    let shape = WindowShape {
        seq_len: c.seq_len,
        horizon: c.horizon,
    };
    let base = impute_linear(&frame.slice(test_rows.start - VALID_FROM..test_rows.end))?;
    let n = base.len();
    let mut order: Vec<usize> = (1..n - 1).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let clean_fm = assemble(&base, calendar, feature_cfg)?;
    let clean = make_windows(&clean_fm, scaler, VALID_FROM..n, Split::Test, shape)?;
    let idx = spaced_indices(clean.n_windows(), cfg.max_windows);
    let evaluate = |masked: usize| -> Result<f64> {
        let mut records = base.records.clone();
        for &i in &order[..masked] {
            records[i] = RawRecord::missing(records[i].datetime);
        }
        let imputed = impute_linear(&RawFrame { records })?;
        let fm = assemble(&imputed, calendar, feature_cfg)?;
        let ds = make_windows(&fm, scaler, VALID_FROM..n, Split::Test, shape)?;
        let pred = predict_kw(f, &ds, &idx)?;
        // score against the clean series, not the re-imputed one
        let rep = report_from_predictions(&clean, &idx, &pred, "", HorizonMode::Cumulative)?;
        Ok(rep.mape_1h())
    };

    let clean_mape = evaluate(0)?;
    let mut rows = Vec::with_capacity(cfg.rates.len());
    for &rate in &cfg.rates {
        let masked = ((rate * order.len() as f64).round() as usize).min(order.len());
        let m = if masked == 0 {
            clean_mape
        } else {
            evaluate(masked)?
        };
        rows.push(RobustnessRow {
            rate,
            masked_rows: masked,
            mape_1h: m,
            delta: m - clean_mape,
        });
    }
    Ok(RobustnessReport {
        model: f.label(),
        seed: cfg.seed,
        windows: idx.len(),
        clean_mape_1h: clean_mape,
        rows,
    })
}
