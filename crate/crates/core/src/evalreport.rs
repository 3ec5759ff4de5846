//! Accuracy, confusion matrices, and comparison reports.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict, ModelParams, Prediction};
use crate::textdata::{truncate, Dataset};

/// Predictions for every example, in dataset order. Parallel over examples
/// when called inside a multi-thread pool; the output order is fixed.
pub fn predict_all(params: &ModelParams, ds: &Dataset, max_len: usize) -> Result<Vec<Prediction>> {
    ds.examples
        .par_iter()
        .map(|ex| predict(params, &truncate(&ex.token_ids, max_len)))
        .collect()
}

pub fn accuracy(params: &ModelParams, ds: &Dataset, max_len: usize) -> Result<f64> {
    Ok(evaluate(params, ds, max_len)?.accuracy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExamplePrediction {
    pub id: usize,
    pub gold: usize,
    pub pred: usize,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub n: usize,
    /// Row = gold class, column = predicted class.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    #[serde(skip)]
    pub predictions: Vec<ExamplePrediction>,
}

impl EvalResult {
    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }

    /// `trace(confusion) / n`.
    pub fn confusion_accuracy(&self) -> f64 {
        let correct: usize = (0..self.num_classes()).map(|i| self.confusion[i][i]).sum();
        correct as f64 / self.n as f64
    }
}

pub fn evaluate(params: &ModelParams, test: &Dataset, max_len: usize) -> Result<EvalResult> {
    if test.is_empty() {
        return Err(Error::contract(format!(
            "evaluation set {:?} is empty",
            test.name
        )));
    }
    test.validate(params.vocab_size(), true)?;
    let c = params.num_classes();
    if test.num_classes > c {
        return Err(Error::Dimension(format!(
            "{:?} has {} classes, model has {c}",
            test.name, test.num_classes
        )));
    }
    let preds = predict_all(params, test, max_len)?;
    let mut confusion = vec![vec![0usize; c]; c];
    let mut predictions = Vec::with_capacity(preds.len());
    let mut correct = 0usize;
    for (id, (ex, p)) in test.examples.iter().zip(&preds).enumerate() {
        let gold = ex.label.expect("validated");
        confusion[gold][p.class] += 1;
        if gold == p.class {
            correct += 1;
        }
        predictions.push(ExamplePrediction {
            id,
            gold,
            pred: p.class,
            confidence: p.confidence,
        });
    }
    let per_class = (0..c)
        .map(|k| {
            let tp = confusion[k][k] as f64;
            let support: usize = confusion[k].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[k]).sum();
            ClassMetrics {
                precision: if predicted == 0 {
                    0.0
                } else {
                    tp / predicted as f64
                },
                recall: if support == 0 {
                    0.0
                } else {
                    tp / support as f64
                },
                support,
            }
        })
        .collect();
    Ok(EvalResult {
        accuracy: correct as f64 / preds.len() as f64,
        n: preds.len(),
        confusion,
        per_class,
        predictions,
    })
}

pub fn write_predictions(path: &Path, result: &EvalResult) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in &result.predictions {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub accuracy: f64,
    /// Points relative to the first row; absent for the first row.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_points: Option<f64>,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<EvalResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub num_classes: usize,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, Default)]
pub struct ReportMeta {
    pub title: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
}

/// Builds a comparison of named results, in the given order.
pub fn compare_report(results: &[(String, EvalResult)], meta: ReportMeta) -> Result<Report> {
    let num_classes = results.first().map(|(_, r)| r.num_classes()).unwrap_or(0);
    if let Some((name, _)) = results.iter().find(|(_, r)| r.num_classes() != num_classes) {
        return Err(Error::contract(format!(
            "result {name:?} does not share the class count {num_classes}"
        )));
    }
    let rows = results
        .iter()
        .map(|(name, r)| (name.clone(), r.accuracy, r.n, Some(r.clone())))
        .collect();
    report_from_rows(rows, num_classes, meta)
}

/// Builds a report from `(name, accuracy, n, optional detail)` rows.
pub fn report_from_rows(
    rows: Vec<(String, f64, usize, Option<EvalResult>)>,
    num_classes: usize,
    meta: ReportMeta,
) -> Result<Report> {
    let mut seen = HashSet::new();
    for (name, ..) in &rows {
        if !seen.insert(name.clone()) {
            return Err(Error::contract(format!("duplicate result name {name:?}")));
        }
    }
    let base = rows.first().map(|r| r.1);
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, (name, accuracy, n, result))| ReportRow {
            name,
            accuracy,
            delta_points: if i == 0 {
                None
            } else {
                base.map(|b| (accuracy - b) * 100.0)
            },
            n,
            result,
        })
        .collect();
    Ok(Report {
        title: meta.title,
        num_classes,
        config_hash: meta.config_hash,
        seeds: meta.seeds,
        rows,
        extra: BTreeMap::new(),
    })
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text table; the delta column appears only with two or
    /// more rows.
    pub fn to_table(&self) -> String {
        let with_delta = self.rows.len() > 1;
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.chars().count())
            .chain(std::iter::once("condition".len()))
            .max()
            .unwrap_or(9);
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&self.title);
            out.push('\n');
        }
        let mut header = format!("{:<name_w$}  {:>8}", "condition", "acc(%)");
        if with_delta {
            header.push_str(&format!("  {:>7}", "delta"));
        }
        out.push_str(header.trim_end());
        out.push('\n');
        out.push_str(&"-".repeat(header.trim_end().len()));
        out.push('\n');
        for r in &self.rows {
            let mut line = format!("{:<name_w$}  {:>8.2}", r.name, r.accuracy * 100.0);
            if with_delta {
                match r.delta_points {
                    Some(d) => line.push_str(&format!("  {:>+7.1}", d)),
                    None => line.push_str(&format!("  {:>7}", "")),
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out.push_str(&format!("config {}\n", self.config_hash));
        for (k, v) in &self.seeds {
            out.push_str(&format!("seed {k} = {v}\n"));
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.txt` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()? + "\n").map_err(|e| Error::io(&json, e))?;
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.to_table()).map_err(|e| Error::io(&txt, e))
    }
}
