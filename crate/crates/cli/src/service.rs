//! HTTP prediction service.
//!
//! `POST /v1/predict`, `GET /v1/health`, `GET /v1/metrics`. The model is
//! loaded once and shared read-only; forecasts run on the blocking pool.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ladbnet::dataset::{parse_timestamp, RawRecord, TIME_FORMAT};
use ladbnet::eval::LatencyReport;
use ladbnet::features::{FeatureConfig, HolidayCalendar};
use ladbnet::inference::{forecast_from_records, min_history};
use ladbnet::{Error, Result};
use serde::Deserialize;
use serde_json::json;

use crate::commands::{load_model, Flags};
use crate::config::AppConfig;
use crate::{load_calendar, round_sig, LoadedModel, ModelInfo};

/// Latencies kept for `/v1/metrics`.
pub const METRICS_WINDOW: usize = 1000;

pub struct AppState {
    model: LoadedModel,
    info: ModelInfo,
    calendar: HolidayCalendar,
    features: FeatureConfig,
    latencies_ms: Mutex<VecDeque<f64>>,
}

impl AppState {
    pub fn new(model: LoadedModel, calendar: HolidayCalendar, features: FeatureConfig) -> Self {
        AppState {
            info: model.metadata(),
            model,
            calendar,
            features,
            latencies_ms: Mutex::new(VecDeque::with_capacity(METRICS_WINDOW)),
        }
    }

    fn record_latency(&self, ms: f64) {
        let mut q = self.latencies_ms.lock().unwrap_or_else(|p| p.into_inner());
        if q.len() == METRICS_WINDOW {
            q.pop_front();
        }
        q.push_back(ms);
    }
}

#[derive(Debug, Deserialize)]
struct PredictRequest {
    records: Vec<RecordIn>,
}

/// Request row; readings may be `null` to mark them missing.
#[derive(Debug, Deserialize)]
struct RecordIn {
    datetime: String,
    #[serde(rename = "DBT")]
    dbt: Option<f64>,
    #[serde(rename = "RH")]
    rh: Option<f64>,
    #[serde(rename = "kW")]
    kw: Option<f64>,
}

fn error_response(status: StatusCode, kind: &str, message: String) -> Response {
    (status, Json(json!({ "error": kind, "message": message }))).into_response()
}

fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::InsufficientData(_)
        | Error::Schema(_)
        | Error::Parse { .. }
        | Error::Contract(_)
        | Error::Dimension(_) => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/predict", post(predict))
        .route("/v1/health", get(health))
        .route("/v1/metrics", get(metrics))
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn metrics(State(s): State<Arc<AppState>>) -> Response {
    let samples: Vec<f64> = {
        let q = s.latencies_ms.lock().unwrap_or_else(|p| p.into_inner());
        q.iter().copied().collect()
    };
    let label = format!("{}/{}", s.info.variant, s.info.kind);
    match LatencyReport::from_samples(&samples, &s.info.kind, &label, 0) {
        Ok(r) => Json(r).into_response(),
        Err(_) => Json(json!({ "model_kind": s.info.kind, "model": label, "iterations": 0 }))
            .into_response(),
    }
}

async fn predict(State(s): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: PredictRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "malformed_json", e.to_string()),
    };
    let mut records = Vec::with_capacity(req.records.len());
    for (i, r) in req.records.into_iter().enumerate() {
        let Some(datetime) = parse_timestamp(&r.datetime) else {
            return error_response(
                StatusCode::BAD_REQUEST,
                "malformed_json",
                format!("records[{i}].datetime {:?} is not a timestamp", r.datetime),
            );
        };
        records.push(RawRecord {
            datetime,
            dbt: r.dbt,
            rh: r.rh,
            kw: r.kw,
        });
    }
    let need = min_history(s.info.seq_len);
    if records.len() < need {
        return (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(json!({
                "error": "insufficient_data",
                "message": format!("at least {need} records required, got {}", records.len()),
                "required": need,
            })),
        )
            .into_response();
    }

    let started = Instant::now();
    let st = Arc::clone(&s);
    let joined = tokio::task::spawn_blocking(move || {
        forecast_from_records(st.model.forecaster(), records, &st.calendar, &st.features)
    })
    .await;
    match joined {
        Ok(Ok(fc)) => {
            s.record_latency(started.elapsed().as_secs_f64() * 1e3);
            Json(json!({
                "issued_at": fc.issued_at.format(TIME_FORMAT).to_string(),
                "forecast_kw": fc.forecast_kw.iter().map(|&v| round_sig(v, 6)).collect::<Vec<_>>(),
                "horizon_minutes": fc.horizon_minutes,
                "model": s.info,
            }))
            .into_response()
        }
        Ok(Err(e)) => error_response(status_for(&e), e.kind(), e.to_string()),
        Err(e) => error_response(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            format!("prediction task failed: {e}"),
        ),
    }
}

/// Loads the model and serves until interrupted.
pub fn serve_blocking(cfg: &AppConfig, flags: &Flags) -> Result<()> {
    let model = load_model(cfg, flags)?;
    let state = Arc::new(AppState::new(model, load_calendar(cfg)?, cfg.features));
    let addr = SocketAddr::from(([0, 0, 0, 0], cfg.port));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Internal(format!("runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::Internal(format!("bind {addr}: {e}")))?;
        log::info!("serving {} on {addr}", cfg.model.display());
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::Internal(format!("server: {e}")))
    })
}
