//! Training logs as CSV.
//!
//! Leading `# key=value` comment lines carry metadata, then a header
//! `step,train_loss,test_loss,rank@<t>...,active_units,weight_norm,knn_error`
//! and one row per checkpoint. Reals are written with 17 significant digits
//! so they parse back to the same `f64`; a missing k-NN error is an empty
//! field.

use std::fmt::Write as _;

use crate::diagnostics::{ActivityMode, ActivityReport, RankReport};
use crate::error::{Error, Result};
use crate::log::{CheckpointRecord, TrainLog};

/// A real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn header(thresholds: &[f64]) -> String {
    let mut h = String::from("step,train_loss,test_loss");
    for t in thresholds {
        write!(h, ",rank@{t}").expect("write to String");
    }
    h.push_str(",active_units,weight_norm,knn_error");
    h
}

fn metadata(log: &TrainLog, extra: &[(String, String)]) -> Vec<(String, String)> {
    let mut meta = extra.to_vec();
    if let Some(first) = log.records.first() {
        meta.push(("total_units".into(), first.activity.total_units.to_string()));
        meta.push(("activity_mode".into(), first.activity.mode.to_string()));
    }
    if let Some(step) = log.diverged_at {
        meta.push(("diverged_at".into(), step.to_string()));
    }
    meta
}

/// Renders `log`; `extra` metadata is written first, in order.
pub fn encode(log: &TrainLog, thresholds: &[f64], extra: &[(String, String)]) -> Result<String> {
    let mut out = String::new();
    for (k, v) in metadata(log, extra) {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::invalid(format!("metadata `{k}` cannot be written as a comment line")));
        }
        writeln!(out, "# {k}={v}").expect("write to String");
    }
    out.push_str(&header(thresholds));
    out.push('\n');
    for r in &log.records {
        if r.rank.ranks.len() != thresholds.len() {
            return Err(Error::invalid(format!(
                "record at step {} has {} ranks for {} thresholds",
                r.step,
                r.rank.ranks.len(),
                thresholds.len()
            )));
        }
        write!(out, "{},{},{}", r.step, fmt_real(r.train_loss), fmt_real(r.test_loss)).expect("write to String");
        for k in &r.rank.ranks {
            write!(out, ",{k}").expect("write to String");
        }
        let knn = r.knn_error.map(fmt_real).unwrap_or_default();
        writeln!(out, ",{},{},{knn}", r.activity.active_units, fmt_real(r.weight_norm)).expect("write to String");
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedLog {
    pub metadata: Vec<(String, String)>,
    pub thresholds: Vec<f64>,
    /// Rank reports carry no spectrum.
    pub log: TrainLog,
}

impl ParsedLog {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn line_err(line: usize, message: impl Into<String>) -> Error {
    Error::invalid(format!("line {line}: {}", message.into()))
}

fn parse_num<T: std::str::FromStr>(raw: &str, line: usize, column: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| line_err(line, format!("bad value `{raw}` in column {column}")))
}

pub fn decode(text: &str) -> Result<ParsedLog> {
    let mut metadata = Vec::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    while let Some((n, l)) = lines.next_if(|(_, l)| l.starts_with('#')) {
        let (k, v) = l[1..]
            .trim_start()
            .split_once('=')
            .ok_or_else(|| line_err(n, "comment line is not key=value"))?;
        metadata.push((k.to_string(), v.to_string()));
    }
    let (n, head) = lines.next().ok_or_else(|| Error::invalid("missing CSV header"))?;
    let cols: Vec<&str> = head.split(',').collect();
    if cols.len() < 6 || cols[..3] != ["step", "train_loss", "test_loss"] || cols[cols.len() - 3..] != ["active_units", "weight_norm", "knn_error"] {
        return Err(line_err(n, format!("unexpected header `{head}`")));
    }
    let thresholds = cols[3..cols.len() - 3]
        .iter()
        .map(|c| {
            c.strip_prefix("rank@")
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or_else(|| line_err(n, format!("bad rank column `{c}`")))
        })
        .collect::<Result<Vec<_>>>()?;

    let meta = |key: &str| metadata.iter().find(|(k, _)| k == key).map(|(_, v): &(String, String)| v.as_str());
    let total_units: usize = meta("total_units").map(|v| parse_num(v, 0, "total_units")).transpose()?.unwrap_or(0);
    let mode: ActivityMode = meta("activity_mode").map(str::parse).transpose()?.unwrap_or_default();
    let diverged_at = meta("diverged_at").map(|v| parse_num(v, 0, "diverged_at")).transpose()?;

    let mut records = Vec::new();
    for (n, l) in lines {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != cols.len() {
            return Err(line_err(n, format!("expected {} fields, found {}", cols.len(), f.len())));
        }
        let k = thresholds.len();
        let ranks = f[3..3 + k]
            .iter()
            .zip(&cols[3..3 + k])
            .map(|(v, c)| parse_num(v, n, c))
            .collect::<Result<Vec<usize>>>()?;
        let knn_raw = f[f.len() - 1];
        records.push(CheckpointRecord {
            step: parse_num(f[0], n, "step")?,
            train_loss: parse_num(f[1], n, "train_loss")?,
            test_loss: parse_num(f[2], n, "test_loss")?,
            rank: RankReport {
                spectrum: None,
                thresholds: thresholds.clone(),
                ranks,
            },
            activity: ActivityReport {
                total_units,
                active_units: parse_num(f[3 + k], n, "active_units")?,
                mode,
            },
            weight_norm: parse_num(f[4 + k], n, "weight_norm")?,
            knn_error: if knn_raw.is_empty() {
                None
            } else {
                Some(parse_num(knn_raw, n, "knn_error")?)
            },
        });
    }
    if records.windows(2).any(|w| w[0].step >= w[1].step) {
        return Err(Error::invalid("checkpoint steps are not strictly increasing"));
    }
    Ok(ParsedLog {
        metadata: metadata
            .iter()
            .filter(|(k, _)| !matches!(k.as_str(), "total_units" | "activity_mode" | "diverged_at"))
            .cloned()
            .collect(),
        thresholds,
        log: TrainLog { records, diverged_at },
    })
}
