//! Logit ensembling and evaluation: per-source GNN outputs are combined by
//! elementwise mean (probability averaging available behind a flag) and
//! scored by masked argmax accuracy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::DenseMatrix;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot ensemble an empty list of logit matrices")]
    EmptyEnsemble,
    #[error("logit matrices disagree on shape: {a_rows}x{a_cols} vs {b_rows}x{b_cols}")]
    ShapeMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
    #[error("mask is empty")]
    EmptyMask,
    #[error("node {node} labeled {label}, outside {classes} classes")]
    BadLabel {
        node: usize,
        label: i64,
        classes: usize,
    },
}

/// Elementwise arithmetic mean of equally shaped matrices.
pub fn ensemble_mean(logits_list: &[DenseMatrix]) -> Result<DenseMatrix, EvalError> {
    let first = logits_list.first().ok_or(EvalError::EmptyEnsemble)?;
    for m in logits_list {
        if m.rows() != first.rows() || m.cols() != first.cols() {
            return Err(EvalError::ShapeMismatch {
                a_rows: first.rows(),
                a_cols: first.cols(),
                b_rows: m.rows(),
                b_cols: m.cols(),
            });
        }
    }
    let mut out = DenseMatrix::zeros(first.rows(), first.cols());
    let n = logits_list.len() as f64;
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let sum: f64 = logits_list.iter().map(|m| m.data()[i] as f64).sum();
        *v = (sum / n) as f32;
    }
    Ok(out)
}

/// Row-wise softmax, for probability-space averaging.
pub fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let denom: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let out_row = out.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            out_row[j] = ((v as f64 - max).exp() / denom) as f32;
        }
    }
    out
}

/// Row argmax with ties broken toward the lowest class index.
pub fn argmax_row(row: &[f32]) -> usize {
    let mut best = 0usize;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of masked nodes whose argmax matches the label.
pub fn accuracy(logits: &DenseMatrix, labels: &[i64], mask: &[usize]) -> Result<f64, EvalError> {
    if mask.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    let classes = logits.cols();
    let mut correct = 0usize;
    for &n in mask {
        let label = labels[n];
        if label < 0 || label as usize >= classes {
            return Err(EvalError::BadLabel {
                node: n,
                label,
                classes,
            });
        }
        if argmax_row(logits.row(n)) == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / mask.len() as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n-1) standard deviation; 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Val/test accuracies across the seed list for one source (or the ensemble).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub val: Vec<f64>,
    pub test: Vec<f64>,
}

impl SourceStats {
    pub fn push(&mut self, val: f64, test: f64) {
        self.val.push(val);
        self.test.push(test);
    }

    pub fn val_mean(&self) -> f64 {
        mean(&self.val)
    }

    pub fn val_std(&self) -> f64 {
        sample_std(&self.val)
    }

    pub fn test_mean(&self) -> f64 {
        mean(&self.test)
    }

    pub fn test_std(&self) -> f64 {
        sample_std(&self.test)
    }
}

/// Full experiment outcome: per-source and ensemble accuracy over the seed
/// list, plus provenance and stage timings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Keyed by source name ("orig" | "expl" | "pred").
    pub sources: BTreeMap<String, SourceStats>,
    pub ensemble: SourceStats,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    /// Stage name -> wall seconds.
    pub timings: BTreeMap<String, f64>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(body: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(body)
    }

    /// Plain-text table: rows val/test, one column per source plus the
    /// ensemble, each cell mean ± sample std over the seed list.
    pub fn render_table(&self) -> String {
        let mut cols: Vec<(&str, &SourceStats)> =
            self.sources.iter().map(|(k, v)| (k.as_str(), v)).collect();
        cols.sort_by_key(|(name, _)| match *name {
            "orig" => 0,
            "expl" => 1,
            "pred" => 2,
            _ => 3,
        });
        cols.push(("ensemble", &self.ensemble));
        let mut out = String::new();
        out.push_str(&format!("{:<6}", ""));
        for (name, _) in &cols {
            out.push_str(&format!(" {:>11}", format!("h_{name}")));
        }
        out.push('\n');
        for (row_name, pick) in [
            ("val", true),
            ("test", false),
        ] {
            out.push_str(&format!("{row_name:<6}"));
            for (_, stats) in &cols {
                let (m, s) = if pick {
                    (stats.val_mean(), stats.val_std())
                } else {
                    (stats.test_mean(), stats.test_std())
                };
                out.push_str(&format!(" {m:.4}±{s:.4}"));
            }
            out.push('\n');
        }
        out
    }
}
