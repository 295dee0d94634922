//! Layer-wise diagnostics and their CSV/JSON exports.

mod export;

pub use export::{
    export_csv, read_csv, write_summary, Summary, SummaryLayer, ACCURACY_CSV, COSINE_CSV,
    GRADNORM_CSV, SUMMARY_JSON,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{predict, ModelParams};
use crate::numerics::Tensor;

/// Samples per forward pass during evaluation.
const EVAL_CHUNK: usize = 256;

/// `dot(a, b) / (‖a‖·‖b‖)`, clamped to `[-1, 1]` against rounding.
pub fn layer_cosine(w_t: &[f64], w_ref: &[f64]) -> Result<f64> {
    if w_t.len() != w_ref.len() {
        return Err(Error::shape("layer_cosine", &[w_t.len()], &[w_ref.len()]));
    }
    let dot: f64 = w_t.iter().zip(w_ref).map(|(a, b)| a * b).sum();
    let na = w_t.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = w_ref.iter().map(|b| b * b).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Fraction of rows whose argmax (first maximum on ties) equals the label.
pub fn accuracy_from_logits(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::shape("accuracy", s, &[labels.len()]));
    }
    if labels.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let correct = logits
        .data()
        .chunks(s[1])
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode accuracy of `model` (including its own BN statistics) on the
/// given indices of `dataset`.
pub fn evaluate_accuracy(model: &ModelParams, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let mut correct = 0.0;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, y) = dataset.batch(chunk);
        correct += accuracy_from_logits(&predict(model, &x)?, &y)? * chunk.len() as f64;
    }
    Ok(correct / indices.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub mean_accuracy: f64,
    /// Empty before the reference round.
    pub cosine: Vec<(String, f64)>,
    pub grad_norm: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub rounds: Vec<RoundRecord>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last(&self) -> Option<&RoundRecord> {
        self.rounds.last()
    }
}

/// Appends one round. `grad_norms[i]` is client `i`'s per-layer mean step
/// norm, aligned with the model's weight layers. Cosines are computed only
/// when a reference snapshot exists.
pub fn record_round(
    log: &mut MetricsLog,
    round: usize,
    accuracies: &[f64],
    global: &ModelParams,
    reference: Option<&ModelParams>,
    grad_norms: &[Vec<f64>],
) -> Result<()> {
    if accuracies.is_empty() {
        return Err(Error::Empty("client accuracies"));
    }
    let names = global.weight_layer_names();
    let mean_accuracy = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let cosine = match reference {
        None => Vec::new(),
        Some(r) => names
            .iter()
            .map(|n| {
                Ok((
                    n.clone(),
                    layer_cosine(global.layer(n)?.weight.data(), r.layer(n)?.weight.data())?,
                ))
            })
            .collect::<Result<_>>()?,
    };
    let mut grad_norm = Vec::with_capacity(names.len());
    for (l, name) in names.iter().enumerate() {
        let mut sum = 0.0;
        for g in grad_norms {
            if g.len() != names.len() {
                return Err(Error::shape("grad norms", &[g.len()], &[names.len()]));
            }
            sum += g[l];
        }
        let mean = if grad_norms.is_empty() {
            0.0
        } else {
            sum / grad_norms.len() as f64
        };
        grad_norm.push((name.clone(), mean));
    }
    log.rounds.push(RoundRecord {
        round,
        mean_accuracy,
        cosine,
        grad_norm,
    });
    Ok(())
}
