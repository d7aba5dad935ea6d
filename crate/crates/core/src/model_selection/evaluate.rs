use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::classifiers::{ModelFile, TrainedModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub name: String,
    /// Test rows of this class.
    pub support: u64,
    /// `None` when nothing was predicted as this class.
    pub precision: Option<f64>,
    /// `None` when the class has no test rows.
    pub recall: Option<f64>,
}

/// Where the evaluated model came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub family: Option<String>,
    pub training_dataset_hash: Option<String>,
    pub reduction: Option<String>,
    pub standardizer_id: Option<String>,
    pub params: Option<serde_json::Value>,
    pub seed: Option<u64>,
}

impl ReportProvenance {
    pub fn from_model_file(file: &ModelFile) -> Self {
        let p = &file.provenance;
        ReportProvenance {
            family: Some(p.family.to_string()),
            training_dataset_hash: Some(p.dataset_hash.clone()),
            reduction: p.pipeline.as_ref().map(|pl| match &pl.reduction {
                crate::features::FittedReduction::Covariance(o) => {
                    crate::features::Reduction::Covariance(*o).label()
                }
                crate::features::FittedReduction::Pca(m) => format!("pca{}", m.k),
            }),
            standardizer_id: p.pipeline.as_ref().map(|pl| pl.standardizer.id()),
            params: serde_json::to_value(p.params).ok(),
            seed: Some(p.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent of test rows classified correctly.
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
    pub dataset_id: String,
    pub model_provenance: ReportProvenance,
}

/// Percent accuracy straight from prediction/label pairs.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = predictions.iter().zip(labels).filter(|(a, b)| a == b).count();
    100.0 * correct as f64 / labels.len() as f64
}

pub fn evaluate_predictions(
    predictions: &[usize],
    labels: &[usize],
    class_names: &[String],
    dataset_id: &str,
    provenance: ReportProvenance,
) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let k = class_names.len();
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c >= k) {
        return Err(Error::ShapeMismatch(format!("class {bad} outside the {k}-class table")));
    }
    let mut confusion = vec![vec![0u64; k]; k];
    for (&p, &t) in predictions.iter().zip(labels) {
        confusion[t][p] += 1;
    }
    let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
    let total = labels.len() as u64;
    let per_class = (0..k)
        .map(|c| {
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = (0..k).map(|t| confusion[t][c]).sum();
            let tp = confusion[c][c] as f64;
            ClassMetrics {
                class: c,
                name: class_names[c].clone(),
                support,
                precision: (predicted > 0).then(|| tp / predicted as f64),
                recall: (support > 0).then(|| tp / support as f64),
            }
        })
        .collect();
    Ok(EvalReport {
        accuracy: if total == 0 { 0.0 } else { 100.0 * correct as f64 / total as f64 },
        correct,
        total,
        confusion,
        per_class,
        dataset_id: dataset_id.to_string(),
        model_provenance: provenance,
    })
}

pub fn evaluate(
    model: &TrainedModel,
    x_test: ArrayView2<f64>,
    y_test: &[usize],
    class_names: &[String],
    dataset_id: &str,
    provenance: ReportProvenance,
) -> Result<EvalReport> {
    if x_test.nrows() != y_test.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} test rows but {} labels",
            x_test.nrows(),
            y_test.len()
        )));
    }
    let pred = model.predict(x_test)?;
    evaluate_predictions(&pred, y_test, class_names, dataset_id, provenance)
}

impl EvalReport {
    /// One JSON record per line: a summary, one per class, one per
    /// confusion-matrix row.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        let summary = json!({
            "record": "summary",
            "dataset_id": self.dataset_id,
            "accuracy": self.accuracy,
            "correct": self.correct,
            "total": self.total,
            "classes": self.per_class.len(),
            "provenance": self.model_provenance,
        });
        out.push_str(&serde_json::to_string(&summary)?);
        out.push('\n');
        for m in &self.per_class {
            let mut v = serde_json::to_value(m)?;
            v["record"] = json!("class");
            out.push_str(&serde_json::to_string(&v)?);
            out.push('\n');
        }
        for (c, row) in self.confusion.iter().enumerate() {
            out.push_str(&serde_json::to_string(&json!({"record": "confusion", "class": c, "predicted": row}))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x));
        let width = self.per_class.iter().map(|m| m.name.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "dataset   {}", self.dataset_id);
        let _ = writeln!(s, "accuracy  {:.2}% ({}/{})", self.accuracy, self.correct, self.total);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<width$}  {:>7}  {:>9}  {:>7}", "class", "support", "precision", "recall");
        for m in &self.per_class {
            let _ = writeln!(
                s,
                "{:<width$}  {:>7}  {:>9}  {:>7}",
                m.name,
                m.support,
                fmt(m.precision),
                fmt(m.recall)
            );
        }
        s
    }
}
