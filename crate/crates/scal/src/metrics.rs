//! Imbalance-aware evaluation: accuracy, per-class and macro F1,
//! confusion matrices, and size/time cost accounting. Macro (unweighted)
//! F1 is the headline metric; minority-class effects are invisible under
//! accuracy alone.

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
    /// Classes absent from both truth and prediction (scored F1 = 0).
    pub absent_classes: Vec<usize>,
    pub model_bytes: u64,
    pub n_nodes_total: u64,
    pub train_seconds: f64,
}

/// Confusion-matrix metrics for predictions already computed.
pub fn report_from_predictions(truth: &[usize], preds: &[usize], n_classes: usize) -> EvalReport {
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(preds.iter()) {
        confusion[t][p] += 1;
    }
    let total: u64 = truth.len() as u64;
    let correct: u64 = (0..n_classes).map(|c| confusion[c][c]).sum();
    let mut per_class_f1 = Vec::with_capacity(n_classes);
    let mut absent_classes = Vec::new();
    #[allow(clippy::needless_range_loop)] // diagonal + column access
    for c in 0..n_classes {
        let tp = confusion[c][c];
        let fn_: u64 = confusion[c].iter().sum::<u64>() - tp;
        let fp: u64 = (0..n_classes).map(|t| confusion[t][c]).sum::<u64>() - tp;
        if tp + fn_ + fp == 0 {
            absent_classes.push(c);
            per_class_f1.push(0.0);
        } else if tp == 0 {
            per_class_f1.push(0.0);
        } else {
            let p = tp as f64 / (tp + fp) as f64;
            let r = tp as f64 / (tp + fn_) as f64;
            per_class_f1.push(2.0 * p * r / (p + r));
        }
    }
    let macro_f1 = per_class_f1.iter().sum::<f64>() / n_classes as f64;
    EvalReport {
        accuracy: correct as f64 / total as f64,
        macro_f1,
        per_class_f1,
        confusion,
        absent_classes,
        model_bytes: 0,
        n_nodes_total: 0,
        train_seconds: 0.0,
    }
}

/// Evaluate any classifier (given as a prediction closure) on a test set.
pub fn evaluate<F>(predict: F, test: &Dataset) -> Result<EvalReport>
where
    F: Fn(&[f64]) -> Result<usize>,
{
    if test.is_empty() {
        return Err(Error::EmptyDataset("cannot evaluate on empty test set".into()));
    }
    let truth: Vec<usize> = test.records.iter().map(|r| r.label_index).collect();
    let preds = test
        .records
        .iter()
        .map(|r| predict(&r.values))
        .collect::<Result<Vec<usize>>>()?;
    Ok(report_from_predictions(&truth, &preds, test.n_classes()))
}

/// Per-class F1 deltas (scal − global), sorted descending; classes with
/// |delta| > 0.05 are flagged.
pub fn compare_local_gains(
    global: &EvalReport,
    scal: &EvalReport,
    classes: &[String],
) -> Result<Vec<(String, f64, bool)>> {
    if global.per_class_f1.len() != scal.per_class_f1.len()
        || global.per_class_f1.len() != classes.len()
    {
        return Err(Error::ClassDomainMismatch(format!(
            "reports cover {} and {} classes, class list has {}",
            global.per_class_f1.len(),
            scal.per_class_f1.len(),
            classes.len()
        )));
    }
    let mut deltas: Vec<(String, f64, bool)> = classes
        .iter()
        .zip(scal.per_class_f1.iter().zip(global.per_class_f1.iter()))
        .map(|(name, (&s, &g))| {
            let d = s - g;
            (name.clone(), d, d.abs() > 0.05)
        })
        .collect();
    deltas.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(deltas)
}

/// One row of the cost table.
#[derive(Debug, Clone)]
pub struct CostEntry {
    pub name: String,
    pub bytes: u64,
    pub n_nodes: u64,
    pub train_seconds: f64,
}

/// Size/time table with a ratio column relative to the named reference
/// model (the divide-and-conquer cascade, in the paper's comparisons).
pub fn cost_report(models: &[CostEntry], reference: &str) -> Vec<(CostEntry, f64)> {
    let ref_bytes = models
        .iter()
        .find(|m| m.name == reference)
        .map(|m| m.bytes)
        .unwrap_or_else(|| models.last().map(|m| m.bytes).unwrap_or(1));
    models
        .iter()
        .map(|m| (m.clone(), m.bytes as f64 / ref_bytes.max(1) as f64))
        .collect()
}

/// CSV rendering of a report; floats at 9 significant digits so the file
/// round-trips losslessly.
pub fn report_to_csv(report: &EvalReport, classes: &[String]) -> String {
    let mut s = String::new();
    s.push_str("metric,value\n");
    s.push_str(&format!("accuracy,{:.9e}\n", report.accuracy));
    s.push_str(&format!("macro_f1,{:.9e}\n", report.macro_f1));
    s.push_str(&format!("model_bytes,{}\n", report.model_bytes));
    s.push_str(&format!("n_nodes_total,{}\n", report.n_nodes_total));
    for (c, f1) in report.per_class_f1.iter().enumerate() {
        s.push_str(&format!("f1_{},{:.9e}\n", classes[c], f1));
    }
    for (t, row) in report.confusion.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            if n > 0 {
                s.push_str(&format!("confusion_{}_{},{}\n", classes[t], classes[p], n));
            }
        }
    }
    s
}
