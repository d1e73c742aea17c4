//! Variant comparison on one prepared dataset.

use serde::{Deserialize, Serialize};

use super::report::{multi_horizon_report, ForecastReport, HorizonMode};
use crate::dataset::Prepared;
use crate::error::Result;
use crate::model::{Model, ModelConfig, Variant};
use crate::trainer::{train, TrainConfig, TrainHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub history: TrainHistory,
    pub report: ForecastReport,
}

/// Trains and evaluates each variant from the same data, model seed and
/// training seed.
pub fn run_ablation(
    prepared: &Prepared,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    variants: &[Variant],
    model_seed: u64,
    max_eval_windows: Option<usize>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let mut m = Model::build(base.clone().with_variant(v), model_seed)?;
        m.scaler = Some(prepared.scaler.clone());
        log::info!("ablation: training {v} ({} parameters)", m.count_params());
        let params = m.count_params();
        let (m, history) = train(m, &prepared.train, &prepared.val, train_cfg, |_| {})?;
        let report = multi_horizon_report(
            &m,
            &prepared.test,
            HorizonMode::Cumulative,
            max_eval_windows,
        )?;
        rows.push(AblationRow {
            variant: v,
            params,
            history,
            report,
        });
    }
    Ok(rows)
}

/// One line per variant: MAPE per horizon plus the change in MAPE(1h)
/// against the first row.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let mut s = format!("{:<14}{:>10}", "variant", "params");
    for h in &first.report.horizons {
        s += &format!("{:>9}", format!("MAPE {}", h.label));
    }
    s += &format!("{:>10}\n", "d(1h)");
    let base = first.report.mape_1h();
    for r in rows {
        s += &format!("{:<14}{:>10}", r.variant.name(), r.params);
        for h in &r.report.horizons {
            s += &format!("{:>9.2}", h.mape);
        }
        s += &format!("{:>+10.2}\n", r.report.mape_1h() - base);
    }
    s
}
