//! Confusion-based metrics, ROC curves and AUC.
//!
//! A sample is predicted positive iff its probability is `>= threshold`.
//! ROC thresholds are the distinct scores in descending order, so tied
//! scores move the curve diagonally and AUC gives ties half credit.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::contract("no predictions to evaluate"));
    }
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "scores vs labels",
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    Ok(())
}

pub fn confusion(probabilities: &[f64], labels: &[bool], threshold: f64) -> Result<Confusion> {
    check_inputs(probabilities, labels)?;
    let mut c = Confusion::default();
    for (&p, &y) in probabilities.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub acc: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Set when some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

pub fn metrics(c: &Confusion) -> Metrics {
    let mut degenerate = false;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let acc = ratio(c.tp + c.tn, c.total());
    let recall = ratio(c.tp, c.tp + c.fn_);
    let precision = ratio(c.tp, c.tp + c.fp);
    let f1 = if recall + precision > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate = true;
        0.0
    };
    Metrics {
        acc,
        recall,
        precision,
        f1,
        degenerate,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are called positive; the first point uses `+inf`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::contract("ROC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a curve ordered by nondecreasing FPR.
pub fn auc(curve: &[RocPoint]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
}

pub fn evaluate(probabilities: &[f64], labels: &[bool], threshold: f64) -> Result<MetricsReport> {
    let confusion = confusion(probabilities, labels, threshold)?;
    let roc = roc_points(probabilities, labels)?;
    Ok(MetricsReport {
        confusion,
        metrics: metrics(&confusion),
        auc: auc(&roc),
        roc,
    })
}

pub fn write_roc_csv(curve: &[RocPoint], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for p in curve {
        w.serialize(p).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Published metric values, rounded as printed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PublishedMetrics {
    /// Percent with two decimals.
    pub acc_percent: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

fn rounds_to(value: f64, printed: f64, decimals: i32) -> bool {
    (value - printed).abs() <= 0.5 * 10f64.powi(-decimals) + 1e-12
}

impl PublishedMetrics {
    /// Whether `m` prints as these values (ACC to 2 decimals in percent, the
    /// rest to 4 decimals).
    pub fn matches(&self, m: &Metrics) -> bool {
        rounds_to(100.0 * m.acc, self.acc_percent, 2)
            && rounds_to(m.recall, self.recall, 4)
            && rounds_to(m.precision, self.precision, 4)
            && rounds_to(m.f1, self.f1, 4)
    }
}

/// Every integer confusion matrix with the given class totals whose ACC,
/// Recall and Precision print as `published`. F1 is not used to solve.
pub fn back_solve_confusion(published: &PublishedMetrics, positives: usize, negatives: usize) -> Vec<Confusion> {
    let mut out = Vec::new();
    for tp in 0..=positives {
        let c0 = Confusion {
            tp,
            fp: 0,
            tn: negatives,
            fn_: positives - tp,
        };
        if !rounds_to(metrics(&c0).recall, published.recall, 4) {
            continue;
        }
        for fp in 0..=negatives {
            let c = Confusion {
                fp,
                tn: negatives - fp,
                ..c0
            };
            let m = metrics(&c);
            if rounds_to(100.0 * m.acc, published.acc_percent, 2) && rounds_to(m.precision, published.precision, 4) {
                out.push(c);
            }
        }
    }
    out
}
