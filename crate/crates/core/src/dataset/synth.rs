use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{RawFrame, RawRecord, STEP_MINUTES};

/// Shape of the synthetic building load.
///
/// Defaults are tuned so a 90,720-row series has kW mean ≈ 65 and
/// std ≈ 29, with DBT and RH inside their logged ranges
/// (15.2–32.8 °C, 32–95 %).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthProfile {
    pub start: NaiveDateTime,
    pub base_kw: f64,
    /// Load added by occupancy on working days.
    pub business_uplift_kw: f64,
    /// Fraction of the uplift retained on weekends.
    pub weekend_occupancy: f64,
    pub daily_amp_kw: f64,
    pub weekly_amp_kw: f64,
    /// Cooling load per °C above `cooling_threshold_c`.
    pub temp_coeff_kw: f64,
    pub cooling_threshold_c: f64,
    /// Persistence of the slowly drifting load component, per step.
    pub drift_coeff: f64,
    pub drift_sigma_kw: f64,
    pub noise_kw: f64,
    pub clamp_floor_kw: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            start: NaiveDate::from_ymd_opt(2023, 1, 2)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
            base_kw: 40.0,
            business_uplift_kw: 52.0,
            weekend_occupancy: 0.25,
            daily_amp_kw: 4.0,
            weekly_amp_kw: 3.0,
            temp_coeff_kw: 3.0,
            cooling_threshold_c: 22.0,
            drift_coeff: 0.998,
            drift_sigma_kw: 0.9,
            noise_kw: 3.0,
            clamp_floor_kw: 5.0,
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Deterministic synthetic sensor log of `rows` 10-minute steps.
pub fn synth_generate(rows: usize, seed: u64, p: &SynthProfile) -> RawFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let step = Duration::minutes(STEP_MINUTES);
    let (mut dbt_drift, mut rh_drift, mut load_drift) = (0.0f64, 0.0f64, 0.0f64);
    let mut out = Vec::with_capacity(rows);
    let mut dt = p.start;
    for _ in 0..rows {
        let hour = dt.hour() as f64 + dt.minute() as f64 / 60.0;
        let doy = dt.ordinal0() as f64;
        let dow = dt.weekday().num_days_from_monday() as f64;
        let weekend = matches!(dt.weekday(), Weekday::Sat | Weekday::Sun);

        dbt_drift = 0.995 * dbt_drift + 0.12 * normal();
        let annual = (2.0 * PI * (doy - 35.0) / 365.25).cos();
        let dbt = (24.3 + 2.2 * annual + 3.0 * (2.0 * PI * (hour - 9.0) / 24.0).sin() + dbt_drift)
            .clamp(15.2, 32.8);

        rh_drift = 0.99 * rh_drift + 0.8 * normal();
        let rh = (68.5 - 2.4 * (dbt - 24.3) + rh_drift).clamp(32.0, 95.0);

        let mut occ = logistic((hour - 8.0) / 0.5) - logistic((hour - 18.5) / 0.6);
        if weekend {
            occ *= p.weekend_occupancy;
        }
        load_drift = p.drift_coeff * load_drift + p.drift_sigma_kw * normal();
        let kw = p.base_kw
            + p.business_uplift_kw * occ
            + p.daily_amp_kw * (2.0 * PI * (hour - 14.0) / 24.0).sin()
            + p.weekly_amp_kw * (2.0 * PI * dow / 7.0).cos()
            + p.temp_coeff_kw * (dbt - p.cooling_threshold_c).max(0.0)
            + load_drift
            + p.noise_kw * normal();
        let kw = kw.max(p.clamp_floor_kw);

        // 0.1 resolution like a building logger
        let r1 = |v: f64| (v * 10.0).round() / 10.0;
        out.push(RawRecord::complete(
            dt,
            r1(dbt),
            r1(rh),
            r1(kw).max(p.clamp_floor_kw),
        ));
        dt += step;
    }
    RawFrame { records: out }
}
