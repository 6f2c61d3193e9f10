use serde::{Deserialize, Serialize};

/// Confusion counts with violation as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean; 0 when both inputs are 0. Works for fractions or percentages.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn compute_metrics(tp: usize, fp: usize, fn_: usize, tn: usize) -> Metrics {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Metrics {
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

impl Metrics {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// One row of a comparison table. Precision and recall are fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub model: String,
    pub precision: f64,
    pub recall: f64,
    /// F1 as printed elsewhere, in percent, checked against the computed one.
    pub external_f1: Option<f64>,
}

impl TableRow {
    pub fn from_metrics(model: impl Into<String>, m: &Metrics) -> Self {
        Self {
            model: model.into(),
            precision: m.precision,
            recall: m.recall,
            external_f1: None,
        }
    }

    pub fn from_percent(model: impl Into<String>, precision: f64, recall: f64, external_f1: Option<f64>) -> Self {
        Self {
            model: model.into(),
            precision: precision / 100.0,
            recall: recall / 100.0,
            external_f1,
        }
    }

    /// Computed F1 in percent.
    pub fn f1_percent(&self) -> f64 {
        100.0 * f1_score(self.precision, self.recall)
    }

    /// `Some(external)` when it differs from the computed F1 by one point or more.
    pub fn mismatch(&self) -> Option<f64> {
        self.external_f1
            .filter(|ext| (ext - self.f1_percent()).abs() >= 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub text: String,
    pub csv: String,
    /// One message per row whose external F1 disagrees.
    pub flags: Vec<String>,
}

/// Percentages with one decimal, rows in the given order.
pub fn report_table(rows: &[TableRow]) -> Table {
    let width = rows
        .iter()
        .map(|r| r.model.chars().count())
        .chain(std::iter::once(5))
        .max()
        .unwrap_or(5);
    let mut text = format!("{:<width$}  {:>9}  {:>6}  {:>5}\n", "model", "precision", "recall", "f1");
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["model", "precision", "recall", "f1"])
        .expect("in-memory write");
    let mut flags = Vec::new();
    for r in rows {
        let (p, rc, f1) = (
            format!("{:.1}", 100.0 * r.precision),
            format!("{:.1}", 100.0 * r.recall),
            format!("{:.1}", r.f1_percent()),
        );
        text.push_str(&format!("{:<width$}  {p:>9}  {rc:>6}  {f1:>5}", r.model));
        if let Some(ext) = r.mismatch() {
            let msg = format!("{}: computed F1 {f1} differs from reported {ext:.1}", r.model);
            text.push_str(&format!("  (reported {ext:.1})"));
            flags.push(msg);
        }
        text.push('\n');
        csv.write_record([r.model.as_str(), &p, &rc, &f1])
            .expect("in-memory write");
    }
    Table {
        text,
        csv: String::from_utf8(csv.into_inner().expect("flush")).expect("utf-8 csv"),
        flags,
    }
}
