//! Subcommands. Every command writes its result as JSON on stdout
//! (`ablate` writes its comparison table) and fails with one JSON line on
//! stderr.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ladbnet::dataset::{
    load_csv, synth_generate, write_csv, Prepared, RawFrame, Split, SplitReport, WindowShape,
};
use ladbnet::eval::{
    ablation_table, latency_bench, multi_horizon_report, robustness_missing, run_ablation,
    seasonal_naive, RobustnessConfig,
};
use ladbnet::inference::{forecast_from_records, min_history};
use ladbnet::model::{Model, Variant};
use ladbnet::trainer::train;
use ladbnet::{Error, Result};
use serde_json::{json, Value};

use crate::config::AppConfig;
use crate::{
    load_calendar, prepare_data, quantize_loaded, round_sig, shape_of, windows_for, LoadedModel,
};

#[derive(Debug, Parser)]
#[command(
    name = "ladbnet",
    version,
    about = "Dual-branch lag/TCN load forecaster"
)]
pub struct Cli {
    #[command(flatten)]
    pub flags: Flags,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON config file (falls back to $LADBNET_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Sensor CSV (datetime,DBT,RH,kW).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Model container.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub rows: Option<usize>,
    #[arg(long, global = true)]
    pub port: Option<u16>,
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    /// full, lag_only, tcn_only, no_dilated or no_dual_pool.
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    /// Run the int8 model; a float model is quantized on the fly.
    #[arg(long, global = true)]
    pub quantized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic sensor log.
    GenData,
    /// Impute, build features and split; report row counts.
    Prepare,
    /// Train a model and write it with a `.history.json` sidecar.
    Train,
    /// Multi-horizon test report plus the seasonal-naive baseline.
    Eval,
    /// Train and compare all five variants.
    Ablate,
    /// Fold batch norm and convert a float model to int8.
    Quantize,
    /// Single-window latency percentiles.
    Bench,
    /// Forecast the 72 steps after the last record of --data.
    Predict,
    /// Test MAPE(1h) with 5/10/20% of rows removed.
    Robustness,
    /// HTTP prediction service.
    Serve,
}

/// Config file merged with command-line overrides.
pub fn effective_config(flags: &Flags) -> Result<AppConfig> {
    let mut cfg = AppConfig::resolve(flags.config.as_deref())?;
    if let Some(s) = flags.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(p) = &flags.data {
        cfg.data = p.clone();
    }
    if let Some(p) = &flags.model {
        cfg.model = p.clone();
    }
    if let Some(r) = flags.rows {
        cfg.rows = r;
    }
    if let Some(p) = flags.port {
        cfg.port = p;
    }
    if let Some(v) = flags.variant {
        cfg.model_config.variant = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one command and returns its stdout text.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = effective_config(&cli.flags)?;
    let flags = &cli.flags;
    match cli.command {
        Command::GenData => gen_data(&cfg, flags),
        Command::Prepare => prepare_cmd(&cfg, flags),
        Command::Train => train_cmd(&cfg, flags),
        Command::Eval => eval_cmd(&cfg, flags),
        Command::Ablate => ablate_cmd(&cfg, flags),
        Command::Quantize => quantize_cmd(&cfg, flags),
        Command::Bench => bench_cmd(&cfg, flags),
        Command::Predict => predict_cmd(&cfg, flags),
        Command::Robustness => robustness_cmd(&cfg, flags),
        Command::Serve => crate::service::serve_blocking(&cfg, flags).map(|_| String::new()),
    }
}

fn pretty(v: &Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `--out` if given, else `fallback`.
fn out_path(flags: &Flags, fallback: &Path) -> PathBuf {
    flags.out.clone().unwrap_or_else(|| fallback.to_path_buf())
}

fn history_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".history.json");
    PathBuf::from(s)
}

fn default_shape(cfg: &AppConfig) -> WindowShape {
    WindowShape {
        seq_len: cfg.model_config.seq_len,
        horizon: cfg.model_config.horizon,
    }
}

/// Loads `--model`, quantizing a float model when `--quantized` is set
/// (calibrated on the training split of `--data`).
pub fn load_model(cfg: &AppConfig, flags: &Flags) -> Result<LoadedModel> {
    match LoadedModel::load(&cfg.model)? {
        LoadedModel::Float(m) if flags.quantized => {
            let (_, p) = prepare_data(cfg, &cfg.data, shape_of(&m))?;
            log::info!("quantizing {} on the fly", cfg.model.display());
            Ok(LoadedModel::Int8(quantize_loaded(
                &m,
                &p,
                cfg.eval.calibration_windows,
            )?))
        }
        m => Ok(m),
    }
}

/// Model plus data prepared with the model's own window shape.
fn model_and_data(cfg: &AppConfig, flags: &Flags) -> Result<(LoadedModel, RawFrame, Prepared)> {
    let m = match LoadedModel::load(&cfg.model)? {
        LoadedModel::Float(m) if flags.quantized => {
            let (frame, p) = prepare_data(cfg, &cfg.data, shape_of(&m))?;
            let q = quantize_loaded(&m, &p, cfg.eval.calibration_windows)?;
            return Ok((LoadedModel::Int8(q), frame, p));
        }
        m => m,
    };
    let (frame, p) = prepare_data(cfg, &cfg.data, shape_of(m.forecaster()))?;
    Ok((m, frame, p))
}

fn gen_data(cfg: &AppConfig, flags: &Flags) -> Result<String> {
    let out = out_path(flags, &cfg.data);
    let frame = synth_generate(cfg.rows, cfg.seed, &cfg.generator);
    write_csv(&frame, &out)?;
    pretty(&json!({ "path": out, "rows": frame.len(), "seed": cfg.seed }))
}

fn prepare_cmd(cfg: &AppConfig, flags: &Flags) -> Result<String> {
    let (_, p) = prepare_data(cfg, &cfg.data, default_shape(cfg))?;
    if let Some(out) = &flags.out {
        p.features.write_csv(out)?;
    }
    let r: &SplitReport = &p.report;
    pretty(&json!({
        "report": r,
        "feature_columns": p.features.columns(),
        "constant_columns": p.scaler.constant_columns(),
    }))
}

fn train_cmd(cfg: &AppConfig, flags: &Flags) -> Result<String> {
    let out = out_path(flags, &cfg.model);
    let (_, p) = prepare_data(cfg, &cfg.data, default_shape(cfg))?;
    let mut model = Model::build(cfg.model_config.clone(), cfg.seed)?;
    model.scaler = Some(p.scaler.clone());
    let params = model.count_params();
    log::info!(
        "training {} ({params} parameters)",
        cfg.model_config.variant
    );
    let (model, history) = train(model, &p.train, &p.val, &cfg.train, |_| {})?;
    model.save(&out)?;
    let hist = history_path(&out);
    write_text(&hist, &(serde_json::to_string_pretty(&history)? + "\n"))?;
    pretty(&json!({
        "model": out,
        "history": hist,
        "variant": cfg.model_config.variant,
        "parameters": params,
        "epochs": history.epochs.len(),
        "best_epoch": history.best_epoch,
        "best_val_loss": history.best_val_loss,
        "stopped_early": history.stopped_early,
    }))
}

fn eval_cmd(cfg: &AppConfig, flags: &Flags) -> Result<String> {
    let (m, _, p) = model_and_data(cfg, flags)?;
    let f = m.forecaster();
    let test = windows_for(f, &p, Split::Test)?;
    let report = multi_horizon_report(f, &test, cfg.eval.horizon_mode, cfg.eval.max_windows)?;
    let baseline = seasonal_naive(&test, cfg.eval.horizon_mode, cfg.eval.max_windows)?;
    let text = pretty(&json!({
        "model_info": m.metadata(),
        "model": report,
        "seasonal_naive": baseline,
    }))?;
    if let Some(out) = &flags.out {
        write_text(out, &text)?;
    }
    Ok(text)
}

fn ablate_cmd(cfg: &AppConfig, flags: &Flags) -> Result<String> {
    let (_, p) = prepare_data(cfg, &cfg.data, default_shape(cfg))?;
    let rows = run_ablation(
        &p,
        &cfg.model_config,
        &cfg.train,
        &Variant::ALL,
        cfg.seed,
        cfg.eval.max_windows,
    )?;
    if let Some(out) = &flags.out {
        write_text(out, &(serde_json::to_string_pretty(&rows)? + "\n"))?;
    }
    Ok(ablation_table(&rows))
}

fn quantize_cmd(cfg: &AppConfig, flags: &Flags) -> Result<String> {
    let LoadedModel::Float(m) = LoadedModel::load(&cfg.model)? else {
        return Err(Error::State(format!(
            "{} is already quantized",
            cfg.model.display()
        )));
    };
    let (_, p) = prepare_data(cfg, &cfg.data, shape_of(&m))?;
    let q = quantize_loaded(&m, &p, cfg.eval.calibration_windows)?;
    let out = match &flags.out {
        Some(o) => o.clone(),
        None => cfg.model.with_extension("int8.ladb"),
    };
    q.save(&out)?;
    let float_bytes = m.to_container()?.payload_bytes();
    let int8_bytes = q.to_container()?.payload_bytes();
    pretty(&json!({
        "model": out,
        "float_payload_bytes": float_bytes,
        "int8_payload_bytes": int8_bytes,
        "payload_ratio": int8_bytes as f64 / float_bytes as f64,
    }))
}

fn bench_cmd(cfg: &AppConfig, flags: &Flags) -> Result<String> {
    let frame = load_csv(&cfg.data)?;
    let m = load_model(cfg, flags)?;
    let f = m.forecaster();
    let need = min_history(f.config().seq_len);
    if frame.len() < need {
        return Err(Error::InsufficientData(format!(
            "at least {need} records required, got {}",
            frame.len()
        )));
    }
    let history = &frame.records[frame.len() - need..];
    let iterations = flags.iterations.unwrap_or(cfg.eval.bench_iterations);
    let report = latency_bench(
        f,
        history,
        &load_calendar(cfg)?,
        &cfg.features,
        iterations,
        cfg.eval.bench_warmup,
    )?;
    pretty(&serde_json::to_value(report)?)
}

fn predict_cmd(cfg: &AppConfig, flags: &Flags) -> Result<String> {
    let frame = load_csv(&cfg.data)?;
    let m = load_model(cfg, flags)?;
    let fc = forecast_from_records(
        m.forecaster(),
        frame.records,
        &load_calendar(cfg)?,
        &cfg.features,
    )?;
    pretty(&json!({
        "issued_at": fc.issued_at.format(ladbnet::dataset::TIME_FORMAT).to_string(),
        "forecast_kw": fc.forecast_kw.iter().map(|&v| round_sig(v, 6)).collect::<Vec<_>>(),
        "horizon_minutes": fc.horizon_minutes,
        "model": m.metadata(),
    }))
}

fn robustness_cmd(cfg: &AppConfig, flags: &Flags) -> Result<String> {
    let (m, frame, p) = model_and_data(cfg, flags)?;
    let rcfg = RobustnessConfig {
        rates: cfg.eval.robustness_rates.clone(),
        seed: cfg.seed,
        max_windows: cfg.eval.max_windows,
    };
    let report = robustness_missing(
        m.forecaster(),
        &frame,
        p.segments.test.clone(),
        &load_calendar(cfg)?,
        &cfg.features,
        &rcfg,
    )?;
    pretty(&serde_json::to_value(report)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_sidecar_name() {
        assert_eq!(
            history_path(Path::new("out/m.ladb")),
            PathBuf::from("out/m.ladb.history.json")
        );
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "ladbnet",
            "train",
            "--seed",
            "7",
            "--variant",
            "lag_only",
            "--rows",
            "10",
        ])
        .unwrap();
        let cfg = effective_config(&cli.flags).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.rows, 10);
        assert_eq!(cfg.model_config.variant, Variant::LagOnly);
    }

    #[test]
    fn unknown_command_and_flag_are_usage_errors() {
        assert!(Cli::try_parse_from(["ladbnet", "fly"]).is_err());
        assert!(Cli::try_parse_from(["ladbnet", "train", "--speed", "3"]).is_err());
        assert!(Cli::try_parse_from(["ladbnet", "train", "--variant", "huge"]).is_err());
    }
}
