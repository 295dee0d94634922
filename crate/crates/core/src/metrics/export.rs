use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MetricsLog, RoundRecord};
use crate::error::{Error, Result};

pub const ACCURACY_CSV: &str = "accuracy.csv";
pub const COSINE_CSV: &str = "cosine.csv";
pub const GRADNORM_CSV: &str = "gradnorm.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// 17 significant digits: enough for any f64 to parse back to itself.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `accuracy.csv`, `cosine.csv` and `gradnorm.csv` into `dir`.
pub fn export_csv(log: &MetricsLog, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut acc = String::from("round,mean_accuracy\n");
    let mut cos = String::from("round,layer,cosine\n");
    let mut grad = String::from("round,layer,mean_grad_norm\n");
    for r in &log.rounds {
        acc.push_str(&format!("{},{}\n", r.round, fmt_f64(r.mean_accuracy)));
        for (layer, c) in &r.cosine {
            cos.push_str(&format!("{},{},{}\n", r.round, layer, fmt_f64(*c)));
        }
        for (layer, g) in &r.grad_norm {
            grad.push_str(&format!("{},{},{}\n", r.round, layer, fmt_f64(*g)));
        }
    }
    write_file(&dir.join(ACCURACY_CSV), &acc)?;
    write_file(&dir.join(COSINE_CSV), &cos)?;
    write_file(&dir.join(GRADNORM_CSV), &grad)
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let bad = |msg: String| Error::Config(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let got = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(bad(format!("unexpected header {got:?}")));
    }
    reader
        .records()
        .map(|r| r.map_err(|e| bad(e.to_string())))
        .collect()
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Config(format!("{}: malformed row {rec:?}", path.display())))
}

/// Parses the three CSV files written by [`export_csv`] back into a log.
pub fn read_csv(dir: impl AsRef<Path>) -> Result<MetricsLog> {
    let dir = dir.as_ref();
    let path = dir.join(ACCURACY_CSV);
    let mut log = MetricsLog::new();
    for rec in read_rows(&path, &["round", "mean_accuracy"])? {
        log.rounds.push(RoundRecord {
            round: field(&rec, 0, &path)?,
            mean_accuracy: field(&rec, 1, &path)?,
            cosine: Vec::new(),
            grad_norm: Vec::new(),
        });
    }
    for (file, header, is_cos) in [
        (COSINE_CSV, ["round", "layer", "cosine"], true),
        (GRADNORM_CSV, ["round", "layer", "mean_grad_norm"], false),
    ] {
        let path = dir.join(file);
        for rec in read_rows(&path, &header)? {
            let round: usize = field(&rec, 0, &path)?;
            let layer: String = field(&rec, 1, &path)?;
            let value: f64 = field(&rec, 2, &path)?;
            let r = log
                .rounds
                .iter_mut()
                .find(|r| r.round == round)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "{}: round {round} missing from accuracy",
                        path.display()
                    ))
                })?;
            if is_cos {
                &mut r.cosine
            } else {
                &mut r.grad_norm
            }
            .push((layer, value));
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryLayer {
    pub layer: String,
    pub cosine: f64,
}

/// Final-round numbers for machine comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rounds: usize,
    pub final_mean_accuracy: Option<f64>,
    /// Model order; empty when the run never reached the reference round.
    pub final_cosine: Vec<SummaryLayer>,
}

impl Summary {
    pub fn from_log(log: &MetricsLog) -> Self {
        let last = log.last();
        Summary {
            rounds: log.rounds.len(),
            final_mean_accuracy: last.map(|r| r.mean_accuracy),
            final_cosine: last
                .map(|r| {
                    r.cosine
                        .iter()
                        .map(|(l, c)| SummaryLayer {
                            layer: l.clone(),
                            cosine: *c,
                        })
                        .collect()
                })
                .unwrap_or_default(),
        }
    }
}

pub fn write_summary(log: &MetricsLog, dir: impl AsRef<Path>) -> Result<()> {
    let path = dir.as_ref().join(SUMMARY_JSON);
    let mut text = serde_json::to_string_pretty(&Summary::from_log(log))
        .map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    write_file(&path, &text)
}
