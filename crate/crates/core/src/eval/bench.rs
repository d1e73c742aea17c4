//! End-to-end single-window latency benchmark.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::Forecaster;
use crate::dataset::RawRecord;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, HolidayCalendar};
use crate::inference::forecast_from_records;

/// Minimum timed iterations.
pub const MIN_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub model_kind: String,
    pub model: String,
    pub iterations: usize,
    pub warmup: usize,
    /// Always false: one window per request.
    pub batch: bool,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    /// Predictions per second in single-stream mode.
    pub throughput_per_s: f64,
}

impl LatencyReport {
    /// Summarizes raw per-request latencies in milliseconds.
    pub fn from_samples(
        samples: &[f64],
        model_kind: &str,
        model: &str,
        warmup: usize,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Metric("no latency samples".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        Ok(LatencyReport {
            model_kind: model_kind.to_string(),
            model: model.to_string(),
            iterations: samples.len(),
            warmup,
            batch: false,
            mean_ms: mean,
            p50_ms: nearest_rank(&sorted, 50.0),
            p95_ms: nearest_rank(&sorted, 95.0),
            p99_ms: nearest_rank(&sorted, 99.0),
            throughput_per_s: if mean > 0.0 {
                1000.0 / mean
            } else {
                f64::INFINITY
            },
        })
    }

    pub fn to_table(&self) -> String {
        format!(
            "{} ({}) latency over {} iterations\n{:>10}{:>10}{:>10}{:>10}{:>14}\n{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>14.1}\n",
            self.model,
            self.model_kind,
            self.iterations,
            "mean ms",
            "P50",
            "P95",
            "P99",
            "pred/s",
            self.mean_ms,
            self.p50_ms,
            self.p95_ms,
            self.p99_ms,
            self.throughput_per_s
        )
    }
}

/// Nearest-rank percentile of ascending `sorted`: element `ceil(p/100 * n)`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Times `forecast_from_records` (features, scaling, forward,
/// denormalization) on the same history, one request at a time.
pub fn latency_bench(
    f: &dyn Forecaster,
    history: &[RawRecord],
    calendar: &HolidayCalendar,
    feature_cfg: &FeatureConfig,
    iterations: usize,
    warmup: usize,
) -> Result<LatencyReport> {
    if iterations < MIN_ITERATIONS {
        return Err(Error::Config(format!(
            "latency bench needs at least {MIN_ITERATIONS} iterations, got {iterations}"
        )));
    }
    for _ in 0..warmup {
        forecast_from_records(f, history.to_vec(), calendar, feature_cfg)?;
    }
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let records = history.to_vec();
        let t = Instant::now();
        let out = forecast_from_records(f, records, calendar, feature_cfg)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    LatencyReport::from_samples(&samples, f.kind(), &f.label(), warmup)
}
