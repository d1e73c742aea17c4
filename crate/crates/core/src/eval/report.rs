//! Multi-horizon forecast reports and the seasonal-naive baseline.

use chrono::{Datelike, Weekday};
use serde::{Deserialize, Serialize};

use super::metrics::{mape, r_squared};
use super::Forecaster;
use crate::dataset::WindowedDataset;
use crate::error::{Error, Result};

/// Reported horizons: label and number of 10-minute steps.
pub const HORIZONS: [(&str, usize); 5] =
    [("1h", 6), ("2h", 12), ("4h", 24), ("8h", 48), ("12h", 72)];

/// Steps per day at 10-minute resolution.
pub const DAY_STEPS: usize = 144;

/// How the steps of a horizon are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonMode {
    /// Steps `1..=k` pooled across windows.
    #[default]
    Cumulative,
    /// Only step `k`.
    PerStep,
}

impl std::str::FromStr for HorizonMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cumulative" => Ok(HorizonMode::Cumulative),
            "per_step" | "per-step" => Ok(HorizonMode::PerStep),
            other => Err(Error::Config(format!("unknown horizon mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub label: String,
    pub steps: usize,
    pub mape: f64,
    /// `None` when undefined (fewer than two values or constant actuals).
    pub r2: Option<f64>,
    /// MAPE over windows whose first forecast step falls Monday-Friday.
    pub weekday_mape: Option<f64>,
    /// MAPE over windows starting on Saturday or Sunday.
    pub weekend_mape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub model: String,
    pub split: String,
    pub mode: HorizonMode,
    /// Number of windows evaluated.
    pub n: usize,
    pub horizons: Vec<HorizonMetrics>,
}

impl ForecastReport {
    pub fn horizon(&self, label: &str) -> Option<&HorizonMetrics> {
        self.horizons.iter().find(|h| h.label == label)
    }

    /// MAPE of the first (shortest) horizon.
    pub fn mape_1h(&self) -> f64 {
        self.horizons[0].mape
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{} on {} ({} windows, {:?})\n{:<8}{:>6}{:>10}{:>9}{:>10}{:>10}\n",
            self.model,
            self.split,
            self.n,
            self.mode,
            "horizon",
            "steps",
            "MAPE %",
            "R2",
            "weekday",
            "weekend"
        );
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        for h in &self.horizons {
            s += &format!(
                "{:<8}{:>6}{:>10.2}{:>9}{:>10}{:>10}\n",
                h.label,
                h.steps,
                h.mape,
                h.r2.map_or("-".to_string(), |v| format!("{v:.3}")),
                opt(h.weekday_mape),
                opt(h.weekend_mape)
            );
        }
        s
    }
}

/// Horizons that fit within a model horizon of `h` steps; a model shorter
/// than one hour reports its full horizon only.
pub fn horizons_for(h: usize) -> Vec<(String, usize)> {
    let v: Vec<_> = HORIZONS
        .iter()
        .filter(|(_, k)| *k <= h)
        .map(|(l, k)| (l.to_string(), *k))
        .collect();
    if v.is_empty() {
        vec![(format!("{h}steps"), h)]
    } else {
        v
    }
}

fn is_weekend(d: Weekday) -> bool {
    matches!(d, Weekday::Sat | Weekday::Sun)
}

/// Builds a report from kW predictions laid out `[n_windows, horizon]`
/// for windows `0..n_windows` of `ds`.
pub fn report_from_predictions(
    ds: &WindowedDataset,
    idx: &[usize],
    predicted_kw: &[f64],
    model: &str,
    mode: HorizonMode,
) -> Result<ForecastReport> {
    let h = ds.shape.horizon;
    if idx.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} split has no windows",
            ds.split.name()
        )));
    }
    if predicted_kw.len() != idx.len() * h {
        return Err(Error::Dimension(format!(
            "{} predictions for {} windows of horizon {h}",
            predicted_kw.len(),
            idx.len()
        )));
    }
    let mut horizons = Vec::new();
    for (label, k) in horizons_for(h) {
        let steps = match mode {
            HorizonMode::Cumulative => 0..k,
            HorizonMode::PerStep => k - 1..k,
        };
        let mut groups: [(Vec<f64>, Vec<f64>); 3] = Default::default();
        for (w, &i) in idx.iter().enumerate() {
            let g = if is_weekend(ds.forecast_start(i).weekday()) {
                2
            } else {
                1
            };
            let actual = &ds.actual_kw(i)[steps.clone()];
            let pred = &predicted_kw[w * h + steps.start..w * h + steps.end];
            for gi in [0, g] {
                groups[gi].0.extend_from_slice(actual);
                groups[gi].1.extend_from_slice(pred);
            }
        }
        let sub = |g: &(Vec<f64>, Vec<f64>)| -> Result<Option<f64>> {
            if g.0.is_empty() {
                Ok(None)
            } else {
                mape(&g.0, &g.1).map(Some)
            }
        };
        let (a, p) = &groups[0];
        horizons.push(HorizonMetrics {
            label,
            steps: k,
            mape: mape(a, p)?,
            r2: r_squared(a, p).ok(),
            weekday_mape: sub(&groups[1])?,
            weekend_mape: sub(&groups[2])?,
        });
    }
    Ok(ForecastReport {
        model: model.to_string(),
        split: ds.split.name().to_string(),
        mode,
        n: idx.len(),
        horizons,
    })
}

/// Denormalized kW predictions of `f` for the given windows.
pub fn predict_kw(f: &dyn Forecaster, ds: &WindowedDataset, idx: &[usize]) -> Result<Vec<f64>> {
    let scaler = f
        .scaler()
        .ok_or_else(|| Error::State("model carries no scaler; cannot denormalize".into()))?;
    Ok(f.predict_normalized(ds, idx)?
        .into_iter()
        .map(|y| scaler.invert_target(y as f64))
        .collect())
}

/// Evaluates `f` on every window of `ds` (or evenly spaced `max_windows`).
pub fn multi_horizon_report(
    f: &dyn Forecaster,
    ds: &WindowedDataset,
    mode: HorizonMode,
    max_windows: Option<usize>,
) -> Result<ForecastReport> {
    if f.horizon() != ds.shape.horizon {
        return Err(Error::Dimension(format!(
            "model horizon {} vs dataset horizon {}",
            f.horizon(),
            ds.shape.horizon
        )));
    }
    let idx = crate::trainer::spaced_indices(ds.n_windows(), max_windows);
    let pred = predict_kw(f, ds, &idx)?;
    report_from_predictions(ds, &idx, &pred, &f.label(), mode)
}

/// Same-time-yesterday forecasts: step `t+h` predicts `kW[t+h-144]`.
pub fn seasonal_naive_predictions(ds: &WindowedDataset, idx: &[usize]) -> Result<Vec<f64>> {
    let (seq, h) = (ds.shape.seq_len, ds.shape.horizon);
    if seq < DAY_STEPS || h > DAY_STEPS {
        return Err(Error::Config(format!(
            "seasonal naive needs seq_len >= {DAY_STEPS} and horizon <= {DAY_STEPS}"
        )));
    }
    let mut out = Vec::with_capacity(idx.len() * h);
    for &i in idx {
        // forecast step s sits at window row seq + s; yesterday is seq + s - 144
        out.extend_from_slice(&ds.history_kw(i)[seq - DAY_STEPS..seq - DAY_STEPS + h]);
    }
    Ok(out)
}

pub fn seasonal_naive(
    ds: &WindowedDataset,
    mode: HorizonMode,
    max_windows: Option<usize>,
) -> Result<ForecastReport> {
    let idx = crate::trainer::spaced_indices(ds.n_windows(), max_windows);
    let pred = seasonal_naive_predictions(ds, &idx)?;
    report_from_predictions(ds, &idx, &pred, "seasonal_naive", mode)
}
