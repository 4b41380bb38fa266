//! Confusion matrix and classification report for the three news classes.
//!
//! The text layout follows the familiar scikit-learn report: one row per
//! class, then `accuracy`, `macro avg` and `weighted avg`, metrics printed
//! with two decimals.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} true labels vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("label {0} outside 0..3")]
    BadLabel(usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("cannot parse report: {0}")]
    Parse(String),
}

/// `counts[t][p]`: documents of true class `t` predicted as `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize]) -> Result<ConfusionMatrix, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(MetricsError::EmptyMatrix);
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for l in [t, p] {
            if l >= NUM_CLASSES {
                return Err(MetricsError::BadLabel(l));
            }
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

pub fn confusion_labels(y_true: &[Label], y_pred: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    let t: Vec<usize> = y_true.iter().map(|l| l.code()).collect();
    let p: Vec<usize> = y_pred.iter().map(|l| l.code()).collect();
    confusion(&t, &p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// No predictions of this class; precision reported as 0.
    pub precision_zero_division: bool,
    /// No true instances of this class; recall reported as 0.
    pub recall_zero_division: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: [ClassMetrics; NUM_CLASSES],
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total_support: u64,
}

impl ClassificationReport {
    pub fn any_zero_division(&self) -> bool {
        self.classes
            .iter()
            .any(|c| c.precision_zero_division || c.recall_zero_division)
    }
}

/// Unweighted mean.
pub fn macro_average(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn report(cm: &ConfusionMatrix) -> Result<ClassificationReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let classes: [ClassMetrics; NUM_CLASSES] = std::array::from_fn(|c| {
        let tp = cm.counts[c][c];
        let (precision, pz) = ratio(tp, cm.col_sum(c));
        let (recall, rz) = ratio(tp, cm.row_sum(c));
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support: cm.row_sum(c),
            precision_zero_division: pz,
            recall_zero_division: rz,
        }
    });
    let pick = |f: fn(&ClassMetrics) -> f64| -> (f64, f64) {
        let vals: Vec<f64> = classes.iter().map(f).collect();
        let weighted = classes
            .iter()
            .map(|c| c.support as f64 * f(c))
            .sum::<f64>()
            / total as f64;
        (macro_average(&vals), weighted)
    };
    let (mp, wp) = pick(|c| c.precision);
    let (mr, wr) = pick(|c| c.recall);
    let (mf, wf) = pick(|c| c.f1);
    Ok(ClassificationReport {
        classes,
        accuracy: cm.trace() as f64 / total as f64,
        macro_avg: Averages {
            precision: mp,
            recall: mr,
            f1: mf,
        },
        weighted_avg: Averages {
            precision: wp,
            recall: wr,
            f1: wf,
        },
        total_support: total,
    })
}

const NAME_WIDTH: usize = 12; // len("weighted avg")

/// Fixed-width text table. Rounding is half-to-even on the exact binary
/// value, which is what `{:.2}` does.
pub fn format_report(r: &ClassificationReport) -> String {
    let w = NAME_WIDTH;
    let mut s = String::new();
    let _ = write!(s, "{:>w$} ", "");
    for h in ["precision", "recall", "f1-score", "support"] {
        let _ = write!(s, " {h:>9}");
    }
    s.push_str("\n\n");
    let row = |s: &mut String, name: &str, p: f64, rc: f64, f: f64, sup: u64| {
        let _ = writeln!(s, "{name:>w$}  {p:>9.2} {rc:>9.2} {f:>9.2} {sup:>9}");
    };
    for (c, m) in r.classes.iter().enumerate() {
        row(&mut s, &c.to_string(), m.precision, m.recall, m.f1, m.support);
    }
    s.push('\n');
    let _ = writeln!(
        s,
        "{:>w$}  {:>9} {:>9} {:>9.2} {:>9}",
        "accuracy", "", "", r.accuracy, r.total_support
    );
    let m = r.macro_avg;
    row(&mut s, "macro avg", m.precision, m.recall, m.f1, r.total_support);
    let m = r.weighted_avg;
    row(&mut s, "weighted avg", m.precision, m.recall, m.f1, r.total_support);
    s
}

/// Values recovered from a formatted report.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReport {
    /// `(name, precision, recall, f1, support)` per class row.
    pub classes: Vec<(String, f64, f64, f64, u64)>,
    pub accuracy: f64,
    pub accuracy_support: u64,
    pub macro_avg: (f64, f64, f64, u64),
    pub weighted_avg: (f64, f64, f64, u64),
}

pub fn parse_report(text: &str) -> Result<ParsedReport, MetricsError> {
    let bad = |m: &str| MetricsError::Parse(m.to_string());
    let num = |t: &str| t.parse::<f64>().map_err(|_| bad(t));
    let int = |t: &str| t.parse::<u64>().map_err(|_| bad(t));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
    if header != ["precision", "recall", "f1-score", "support"] {
        return Err(bad("header"));
    }
    let mut classes = Vec::new();
    let mut accuracy = None;
    let mut macro_avg = None;
    let mut weighted_avg = None;
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.first() == Some(&"accuracy") {
            if toks.len() != 3 {
                return Err(bad(line));
            }
            accuracy = Some((num(toks[1])?, int(toks[2])?));
            continue;
        }
        if toks.len() < 5 {
            return Err(bad(line));
        }
        let k = toks.len() - 4;
        let name = toks[..k].join(" ");
        let vals = (num(toks[k])?, num(toks[k + 1])?, num(toks[k + 2])?, int(toks[k + 3])?);
        match name.as_str() {
            "macro avg" => macro_avg = Some(vals),
            "weighted avg" => weighted_avg = Some(vals),
            _ => classes.push((name, vals.0, vals.1, vals.2, vals.3)),
        }
    }
    let (accuracy, accuracy_support) = accuracy.ok_or_else(|| bad("missing accuracy"))?;
    Ok(ParsedReport {
        classes,
        accuracy,
        accuracy_support,
        macro_avg: macro_avg.ok_or_else(|| bad("missing macro avg"))?,
        weighted_avg: weighted_avg.ok_or_else(|| bad("missing weighted avg"))?,
    })
}

/// JSON export: full-precision values plus the formatted text block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportExport {
    pub name: String,
    pub confusion: ConfusionMatrix,
    pub report: ClassificationReport,
    pub text: String,
}

impl ReportExport {
    pub fn new(name: impl Into<String>, cm: ConfusionMatrix) -> Result<Self, MetricsError> {
        let report = report(&cm)?;
        let text = format_report(&report);
        Ok(Self {
            name: name.into(),
            confusion: cm,
            report,
            text,
        })
    }
}
