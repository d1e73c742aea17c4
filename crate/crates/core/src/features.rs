//! Per-timestep feature table: cyclic calendar encodings, contextual flags,
//! load lags, trailing rolling statistics and a temperature/humidity
//! interaction term.
//!
//! Column order is frozen (see [`FEATURE_COLUMNS`]); it is recorded in
//! every model file through the scaler record.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::dataset::RawFrame;
use crate::error::{Error, Result};

/// Lags of the load series, in 10-minute steps (1 h, 2 h, 4 h, 12 h, 24 h).
pub const LAGS: [usize; 5] = [6, 12, 24, 72, 144];

/// First row whose lags and rolling windows are all defined.
pub const VALID_FROM: usize = 144;

/// The 27 model inputs followed by the target column.
pub const FEATURE_COLUMNS: [&str; 28] = [
    "kW",
    "DBT",
    "RH",
    "hour_sin",
    "hour_cos",
    "dayofweek_sin",
    "dayofweek_cos",
    "month_sin",
    "month_cos",
    "weekend",
    "is_holiday",
    "is_business_hours",
    "is_night",
    "is_morning_peak",
    "is_evening_peak",
    "kW_lag_6",
    "kW_lag_12",
    "kW_lag_24",
    "kW_lag_72",
    "kW_lag_144",
    "kW_rolling_mean_6",
    "kW_rolling_mean_12",
    "kW_rolling_mean_24",
    "kW_rolling_std_12",
    "kW_rolling_max_24",
    "kW_rolling_min_24",
    "temp_humidity_interaction",
    "kW_target",
];

pub const N_INPUTS: usize = 27;
pub const N_COLUMNS: usize = 28;
/// Index of the target column.
pub const TARGET: usize = 27;

/// Column index by name.
pub fn column_index(name: &str) -> Option<usize> {
    FEATURE_COLUMNS.iter().position(|c| *c == name)
}

/// Half-open time-of-day range in minutes; wraps past midnight when
/// `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourRange {
    pub start_min: u32,
    pub end_min: u32,
}

impl HourRange {
    pub const fn hours(start: u32, end: u32) -> Self {
        HourRange {
            start_min: start * 60,
            end_min: end * 60,
        }
    }

    pub fn contains(&self, minute_of_day: u32) -> bool {
        if self.start_min <= self.end_min {
            (self.start_min..self.end_min).contains(&minute_of_day)
        } else {
            minute_of_day >= self.start_min || minute_of_day < self.end_min
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub night: HourRange,
    pub business_hours: HourRange,
    pub morning_peak: HourRange,
    pub evening_peak: HourRange,
    /// Population (`true`) or sample (`false`) denominator for rolling std.
    pub population_std: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            night: HourRange::hours(22, 6),
            business_hours: HourRange::hours(8, 18),
            morning_peak: HourRange::hours(7, 9),
            evening_peak: HourRange::hours(17, 20),
            population_std: true,
        }
    }
}

/// Dates treated as public holidays.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HolidayCalendar {
    dates: BTreeSet<NaiveDate>,
}

impl HolidayCalendar {
    pub fn new(dates: impl IntoIterator<Item = NaiveDate>) -> Self {
        HolidayCalendar {
            dates: dates.into_iter().collect(),
        }
    }

    /// One ISO date (`YYYY-MM-DD`) per line; blank lines and `#` comments
    /// are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dates = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let d = NaiveDate::parse_from_str(line, "%Y-%m-%d").map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("bad holiday date {line:?}: {e}"),
            })?;
            dates.insert(d);
        }
        Ok(HolidayCalendar { dates })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.dates.contains(&d)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

fn cyc(value: f64, period: f64) -> (f64, f64) {
    let a = 2.0 * PI * value / period;
    (a.sin(), a.cos())
}

/// hour (fractional), day-of-week and month encodings, in column order.
pub fn cyclic_encode(dt: NaiveDateTime) -> [f64; 6] {
    let hour = dt.hour() as f64 + dt.minute() as f64 / 60.0;
    let (hs, hc) = cyc(hour, 24.0);
    let (ds, dc) = cyc(dt.weekday().num_days_from_monday() as f64, 7.0);
    let (ms, mc) = cyc(dt.month0() as f64, 12.0);
    [hs, hc, ds, dc, ms, mc]
}

/// weekend, is_holiday, is_business_hours, is_night, is_morning_peak,
/// is_evening_peak.
pub fn contextual_flags(dt: NaiveDateTime, cal: &HolidayCalendar, cfg: &FeatureConfig) -> [f64; 6] {
    let minute = dt.hour() * 60 + dt.minute();
    let weekend = matches!(dt.weekday(), Weekday::Sat | Weekday::Sun);
    let holiday = cal.contains(dt.date());
    let business = !weekend && !holiday && cfg.business_hours.contains(minute);
    let b = |v: bool| if v { 1.0 } else { 0.0 };
    [
        b(weekend),
        b(holiday),
        b(business),
        b(cfg.night.contains(minute)),
        b(cfg.morning_peak.contains(minute)),
        b(cfg.evening_peak.contains(minute)),
    ]
}

/// `kw[t - lag]` for each lag in [`LAGS`]; `NaN` before the lag exists.
pub fn lag_features(kw: &[f64]) -> Vec<[f64; 5]> {
    (0..kw.len())
        .map(|t| LAGS.map(|k| if t >= k { kw[t - k] } else { f64::NAN }))
        .collect()
}

/// Trailing windows ending at `t` inclusive: mean 6/12/24, std 12,
/// max 24, min 24. `NaN` until the window is full.
pub fn rolling_stats(kw: &[f64], population_std: bool) -> Vec<[f64; 6]> {
    let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
    (0..kw.len())
        .map(|t| {
            let win = |n: usize| (t + 1 >= n).then(|| &kw[t + 1 - n..=t]);
            let m6 = win(6).map(mean).unwrap_or(f64::NAN);
            let m12 = win(12).map(mean).unwrap_or(f64::NAN);
            let m24 = win(24).map(mean).unwrap_or(f64::NAN);
            let s12 = win(12)
                .map(|w| {
                    let m = mean(w);
                    let ss: f64 = w.iter().map(|v| (v - m) * (v - m)).sum();
                    let denom = if population_std { w.len() } else { w.len() - 1 };
                    (ss / denom as f64).sqrt()
                })
                .unwrap_or(f64::NAN);
            let (mx, mn) = win(24)
                .map(|w| {
                    w.iter()
                        .fold((f64::NEG_INFINITY, f64::INFINITY), |(a, b), &v| {
                            (a.max(v), b.min(v))
                        })
                })
                .unwrap_or((f64::NAN, f64::NAN));
            [m6, m12, m24, s12, mx, mn]
        })
        .collect()
}

pub fn interaction(dbt: f64, rh: f64) -> f64 {
    dbt * rh / 100.0
}

/// The assembled 28-column table. Rows before `valid_from` carry `NaN`
/// lags and are never windowed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub timestamps: Vec<NaiveDateTime>,
    /// Row-major, [`N_COLUMNS`] values per row.
    pub data: Vec<f64>,
    pub valid_from: usize,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_valid(&self) -> usize {
        self.n_rows().saturating_sub(self.valid_from)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * N_COLUMNS..(i + 1) * N_COLUMNS]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.data.chunks(N_COLUMNS).map(|r| r[c]).collect()
    }

    pub fn columns(&self) -> &'static [&'static str; 28] {
        &FEATURE_COLUMNS
    }

    /// Writes the valid rows as CSV with a `datetime` column first.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w =
            csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        let mut header = vec!["datetime".to_string()];
        header.extend(FEATURE_COLUMNS.iter().map(|s| s.to_string()));
        let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        w.write_record(&header).map_err(io)?;
        for i in self.valid_from..self.n_rows() {
            let mut rec = vec![self.timestamps[i]
                .format(crate::dataset::TIME_FORMAT)
                .to_string()];
            rec.extend(self.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Builds every column for a complete (imputed) raw frame.
pub fn assemble(
    frame: &RawFrame,
    cal: &HolidayCalendar,
    cfg: &FeatureConfig,
) -> Result<FeatureMatrix> {
    let n = frame.len();
    if n < VALID_FROM + 1 {
        return Err(Error::InsufficientData(format!(
            "feature assembly needs at least {} rows, got {n}",
            VALID_FROM + 1
        )));
    }
    let (dbt, rh, kw) = frame.complete_columns()?;
    let lags = lag_features(&kw);
    let rolls = rolling_stats(&kw, cfg.population_std);
    let mut data = Vec::with_capacity(n * N_COLUMNS);
    for t in 0..n {
        let dt = frame.records[t].datetime;
        data.extend_from_slice(&[kw[t], dbt[t], rh[t]]);
        data.extend_from_slice(&cyclic_encode(dt));
        data.extend_from_slice(&contextual_flags(dt, cal, cfg));
        data.extend_from_slice(&lags[t]);
        data.extend_from_slice(&rolls[t]);
        data.push(interaction(dbt[t], rh[t]));
        data.push(kw[t]);
    }
    Ok(FeatureMatrix {
        timestamps: frame.records.iter().map(|r| r.datetime).collect(),
        data,
        valid_from: VALID_FROM,
    })
}
