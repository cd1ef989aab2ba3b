use std::fmt;

use serde::Serialize;

use crate::error::{Result, SlideError};
use crate::svm::distinct_sorted;

/// Classification metrics. `confusion[i][j]` counts samples of class
/// `classes[i]` predicted as `classes[j]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    pub error_rate: f64,
    pub classes: Vec<i64>,
    pub per_class_error: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(predictions: &[i64], labels: &[i64]) -> Result<Metrics> {
    if predictions.is_empty() {
        return Err(SlideError::EmptyDataset("no predictions to evaluate".into()));
    }
    if predictions.len() != labels.len() {
        return Err(SlideError::Shape(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let classes = distinct_sorted(&[labels, predictions].concat());
    let pos = |c: i64| classes.binary_search(&c).expect("class present");
    let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
    for (&p, &l) in predictions.iter().zip(labels) {
        confusion[pos(l)][pos(p)] += 1;
    }
    let n = labels.len();
    let correct: usize = (0..classes.len()).map(|k| confusion[k][k]).sum();
    let accuracy = correct as f64 / n as f64;
    let per_class_error = confusion
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                (total - row[k]) as f64 / total as f64
            }
        })
        .collect();
    Ok(Metrics { n, accuracy, error_rate: 1.0 - accuracy, classes, per_class_error, confusion })
}

impl fmt::Display for Metrics {
    /// `key=value` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n={}", self.n)?;
        writeln!(f, "accuracy={}", self.accuracy)?;
        if self.classes.len() <= 2 {
            writeln!(f, "error_rate={}", self.error_rate)?;
        }
        for (c, e) in self.classes.iter().zip(&self.per_class_error) {
            writeln!(f, "class_error[{c}]={e}")?;
        }
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(f, "confusion[{c}]={}", cells.join(","))?;
        }
        Ok(())
    }
}
