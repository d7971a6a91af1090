use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use samrank_core::diagnostics::{feature_matrix, rank_report};
use samrank_core::experiments::{make_teacher_student, run_cell, run_prop1_battery, run_sweep, BatteryOptions, Prop1Fault, SweepResult};
use samrank_core::io::{csvlog, fmat, netfile};
use samrank_core::linalg::covariance_spectrum;
use samrank_core::{CheckpointRecord, Model, TrainLog};
use serde_json::{json, Map, Value};

use crate::config::{ConfigError, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files (exit 2).
    Usage(String),
    Config(ConfigError),
    Core(samrank_core::Error),
    Io { path: PathBuf, source: std::io::Error },
    /// A checked property did not hold (exit 1).
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invariant(_) => 1,
            _ => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Invariant(m) => f.write_str(m),
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<samrank_core::Error> for CliError {
    fn from(e: samrank_core::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn ranks_json(thresholds: &[f64], ranks: &[usize]) -> Value {
    let map: Map<String, Value> = thresholds.iter().zip(ranks).map(|(t, k)| (t.to_string(), json!(k))).collect();
    Value::Object(map)
}

fn record_json(r: &CheckpointRecord) -> Value {
    json!({
        "step": r.step,
        "train_loss": r.train_loss,
        "test_loss": r.test_loss,
        "ranks": ranks_json(&r.rank.thresholds, &r.rank.ranks),
        "active_units": r.activity.active_units,
        "total_units": r.activity.total_units,
        "weight_norm": r.weight_norm,
        "knn_error": r.knn_error,
    })
}

/// Overrides applied on top of the configuration file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub thresholds: Option<Vec<f64>>,
    pub center: Option<bool>,
    pub jobs: Option<usize>,
}

pub fn load_config(path: Option<&Path>, ov: &Overrides) -> CliResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &ov.out {
        cfg.output_dir = out.clone();
    }
    if let Some(t) = &ov.thresholds {
        cfg.run.diag.thresholds = t.clone();
    }
    if let Some(c) = ov.center {
        cfg.run.diag.center = c;
    }
    if let Some(j) = ov.jobs {
        cfg.jobs = j;
    }
    cfg.validate().map_err(CliError::Usage)?;
    Ok(cfg)
}

fn log_text(log: &TrainLog, cfg: &RunConfig, extra: Vec<(String, String)>) -> CliResult<String> {
    Ok(csvlog::encode(log, &cfg.run.diag.thresholds, &extra)?)
}

/// Trains one student; writes `train_log.csv`, `summary.json` and, unless
/// the run diverged, `net.bin` and `features.fmat`.
pub fn train(mut cfg: RunConfig, seed: Option<u64>) -> CliResult<Value> {
    if let Some(s) = seed {
        cfg.ts.seed = s;
        cfg.run.optim.seed = s;
    }
    let hash = cfg.hash();
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;

    let (net, log) = run_cell(&cfg.ts, &cfg.run)?;
    let meta = vec![
        ("config_hash".to_string(), hash.clone()),
        ("method".to_string(), cfg.run.method.to_string()),
        ("rho".to_string(), cfg.run.sam.rho.to_string()),
        ("seed".to_string(), cfg.ts.seed.to_string()),
    ];
    write_file(&dir.join("train_log.csv"), log_text(&log, &cfg, meta)?)?;

    if !log.diverged() {
        let extra = vec![("config_hash".to_string(), hash.clone())];
        write_file(&dir.join("net.bin"), netfile::encode(&net, cfg.ts.seed, &extra)?)?;
        let task = make_teacher_student(&cfg.ts)?;
        let block = cfg.run.diag.block.unwrap_or(net.num_blocks() - 1);
        let features = feature_matrix(&net, &task.train, block)?;
        write_file(&dir.join("features.fmat"), fmat::encode(&features))?;
    }

    let summary = json!({
        "config_hash": hash,
        "config": cfg.resolved(),
        "diverged_at": log.diverged_at,
        "checkpoints": log.records.len(),
        "final": log.last().map(record_json),
    });
    write_file(&dir.join("summary.json"), json_text(&summary))?;
    Ok(summary)
}

fn sweep_row_prefix(out: &mut String, rho: f64, seed: u64) {
    write!(out, "{rho},{seed}").expect("write to String");
}

fn results_csv(result: &SweepResult, hash: &str) -> String {
    let mut out = format!("# config_hash={hash}\nrho,seed,diverged_at,");
    out.push_str(&csvlog::header(&result.thresholds));
    out.push('\n');
    for cell in &result.cells {
        sweep_row_prefix(&mut out, cell.rho, cell.seed);
        let div = cell.log.diverged_at.map(|s| s.to_string()).unwrap_or_default();
        match cell.log.last() {
            Some(r) if !cell.log.diverged() => {
                write!(out, ",{div},{},{},{}", r.step, csvlog::fmt_real(r.train_loss), csvlog::fmt_real(r.test_loss)).expect("write to String");
                for k in &r.rank.ranks {
                    write!(out, ",{k}").expect("write to String");
                }
                let knn = r.knn_error.map(csvlog::fmt_real).unwrap_or_default();
                writeln!(out, ",{},{},{knn}", r.activity.active_units, csvlog::fmt_real(r.weight_norm)).expect("write to String");
            }
            _ => {
                out.push(',');
                out.push_str(&div);
                out.push_str(&",".repeat(6 + result.thresholds.len()));
                out.push('\n');
            }
        }
    }
    out
}

fn medians_csv(result: &SweepResult, hash: &str) -> String {
    let mut out = format!("# config_hash={hash}\nrho,runs,diverged,train_loss,test_loss");
    for t in &result.thresholds {
        write!(out, ",rank@{t}").expect("write to String");
    }
    out.push_str(",active_units,weight_norm,knn_error\n");
    for m in &result.medians {
        write!(out, "{},{},{},{},{}", m.rho, m.runs, m.diverged, csvlog::fmt_real(m.train_loss), csvlog::fmt_real(m.test_loss)).expect("write to String");
        for k in &m.ranks {
            write!(out, ",{}", csvlog::fmt_real(*k)).expect("write to String");
        }
        writeln!(
            out,
            ",{},{},{}",
            csvlog::fmt_real(m.active_units),
            csvlog::fmt_real(m.weight_norm),
            csvlog::fmt_real(m.knn_error)
        )
        .expect("write to String");
    }
    out
}

/// Runs the ρ × seed grid; writes `sweep_results.csv` (final record per
/// cell), `sweep_medians.csv`, `sweep_summary.json` and one training log per
/// cell under `cells/`.
pub fn sweep(mut cfg: RunConfig, seed: Option<u64>) -> CliResult<SweepResult> {
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let hash = cfg.hash();
    let dir = cfg.output_dir.clone();
    let cells_dir = dir.join("cells");
    create_dir(&cells_dir)?;

    let result = run_sweep(&cfg.sweep_spec(), &cfg.ts, &cfg.run, cfg.jobs)?;
    for cell in &result.cells {
        let meta = vec![
            ("config_hash".to_string(), hash.clone()),
            ("method".to_string(), cfg.run.method.to_string()),
            ("rho".to_string(), cell.rho.to_string()),
            ("seed".to_string(), cell.seed.to_string()),
        ];
        let name = format!("rho={}_seed={}.csv", cell.rho, cell.seed);
        write_file(&cells_dir.join(name), log_text(&cell.log, &cfg, meta)?)?;
    }
    write_file(&dir.join("sweep_results.csv"), results_csv(&result, &hash))?;
    write_file(&dir.join("sweep_medians.csv"), medians_csv(&result, &hash))?;

    let medians: Vec<Value> = result
        .medians
        .iter()
        .map(|m| {
            let ranks: Map<String, Value> = result.thresholds.iter().zip(&m.ranks).map(|(t, k)| (t.to_string(), json!(k))).collect();
            json!({
                "rho": m.rho,
                "runs": m.runs,
                "diverged": m.diverged,
                "train_loss": m.train_loss,
                "test_loss": m.test_loss,
                "ranks": ranks,
                "active_units": m.active_units,
                "weight_norm": m.weight_norm,
                "knn_error": m.knn_error,
            })
        })
        .collect();
    let summary = json!({
        "config_hash": hash,
        "config": cfg.resolved(),
        "cells": result.cells.len(),
        "medians": medians,
    });
    write_file(&dir.join("sweep_summary.json"), json_text(&summary))?;
    Ok(result)
}

/// Where `rank` writes its report: `<out>/rank.json` or `<matrix>.rank.json`.
pub fn rank_output_path(matrix: &Path, out: Option<&Path>) -> PathBuf {
    match out {
        Some(dir) => dir.join("rank.json"),
        None => {
            let mut name = matrix.as_os_str().to_owned();
            name.push(".rank.json");
            PathBuf::from(name)
        }
    }
}

/// Feature rank of an FMAT matrix at each threshold.
pub fn rank(matrix: &Path, cfg: &RunConfig, out: Option<&Path>) -> CliResult<Value> {
    let (thresholds, center) = (&cfg.run.diag.thresholds, cfg.run.diag.center);
    let bytes = fs::read(matrix).map_err(|source| CliError::Io { path: matrix.to_path_buf(), source })?;
    let features = fmat::decode(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", matrix.display())))?;
    let report = rank_report(covariance_spectrum(&features, center)?, thresholds)?;
    let spectrum = report.spectrum.as_ref().expect("rank_report keeps the spectrum");
    let value = json!({
        "config_hash": cfg.hash(),
        "matrix": matrix.display().to_string(),
        "rows": features.rows(),
        "cols": features.cols(),
        "center": center,
        "ranks": ranks_json(&report.thresholds, &report.ranks),
        "eigenvalues": spectrum.eigenvalues,
        "total_variance": spectrum.total,
    });
    if let Some(dir) = out {
        create_dir(dir)?;
    }
    write_file(&rank_output_path(matrix, out), json_text(&value))?;
    Ok(value)
}

/// Runs the step-decomposition battery; returns its table and whether every
/// check passed.
pub fn check(trials: usize, seed: u64, fault: Prop1Fault) -> CliResult<(String, bool)> {
    let opts = BatteryOptions {
        trials,
        seed,
        fault,
        ..BatteryOptions::default()
    };
    let report = run_prop1_battery(&opts).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut table = String::new();
    for c in &report.checks {
        writeln!(table, "{c}").expect("write to String");
    }
    Ok((table, report.all_passed()))
}
