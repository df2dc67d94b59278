//! Confusion matrices, one-vs-rest precision/recall/F1 and macro averages.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn zeros(class_names: &[&str]) -> Self {
        let c = class_names.len();
        Self {
            counts: vec![vec![0; c]; c],
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

fn default_names(c: usize) -> Vec<String> {
    if c == crate::dataset::NUM_CLASSES {
        crate::dataset::CLASS_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..c).map(|i| format!("class {i}")).collect()
    }
}

/// Tallies `(true, predicted)` pairs. Class names default to the four
/// engagement levels when `c == 4`.
pub fn confusion(trues: &[usize], preds: &[usize], c: usize) -> Result<ConfusionMatrix> {
    if trues.len() != preds.len() {
        return Err(Error::Contract(format!(
            "{} true labels but {} predictions",
            trues.len(),
            preds.len()
        )));
    }
    let mut counts = vec![vec![0u64; c]; c];
    for (i, (&t, &p)) in trues.iter().zip(preds).enumerate() {
        if t >= c || p >= c {
            return Err(Error::Contract(format!(
                "pair {i}: labels ({t}, {p}) outside 0..{c}"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts, class_names: default_names(c) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `a / b`, or 0 when `b` is 0.
fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

pub fn per_class(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let total = cm.total();
    (0..cm.n_classes())
        .map(|c| {
            let tp = cm.counts[c][c];
            let fp = cm.col_sum(c) - tp;
            let fn_ = cm.row_sum(c) - tp;
            let tn = total - tp - fp - fn_;
            let precision = ratio(tp as f64, (tp + fp) as f64);
            let recall = ratio(tp as f64, (tp + fn_) as f64);
            ClassMetrics { tp, fp, fn_, tn, precision, recall, f1: f1_score(precision, recall) }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    ratio(sum, n as f64)
}

pub fn report(cm: &ConfusionMatrix) -> Result<EvalReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Contract("cannot report on an empty confusion matrix".into()));
    }
    let per_class = per_class(cm);
    Ok(EvalReport {
        macro_precision: mean(per_class.iter().map(|m| m.precision)),
        macro_recall: mean(per_class.iter().map(|m| m.recall)),
        macro_f1: mean(per_class.iter().map(|m| m.f1)),
        accuracy: cm.trace() as f64 / total as f64,
        confusion: cm.clone(),
        per_class,
    })
}

/// Rounds half away from zero at `digits` decimals, after snapping away
/// binary representation error so that e.g. 0.125 and 0.795 go up.
pub fn round_half_up(x: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    let scaled = x * scale;
    // nudge values that sit on a .5 boundary in decimal but just below it in binary
    let snapped = (scaled * 1e9).round() / 1e9;
    snapped.signum() * (snapped.abs() + 0.5).floor() / scale
}

pub fn fmt_rounded(x: f64, digits: u32) -> String {
    format!("{:.*}", digits as usize, round_half_up(x, digits))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!("unknown report format {other:?} (table|csv|json)"))),
        }
    }
}

/// Confusion counts as CSV, one true class per line.
pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    cm.counts
        .iter()
        .map(|row| row.iter().map(u64::to_string).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
}

fn table(r: &EvalReport) -> String {
    let width = r.confusion.class_names.iter().map(String::len).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>5}  {:>5}  {:>5}  {:>5}", "Class", "Prec", "Rec", "F1", "Acc");
    for (i, (name, m)) in r.confusion.class_names.iter().zip(&r.per_class).enumerate() {
        let acc = if i == 0 { fmt_rounded(r.accuracy, 2) } else { String::new() };
        let _ = writeln!(
            out,
            "{name:<width$}  {:>5}  {:>5}  {:>5}  {acc:>5}",
            fmt_rounded(m.precision, 2),
            fmt_rounded(m.recall, 2),
            fmt_rounded(m.f1, 2),
        );
    }
    let _ = writeln!(
        out,
        "{:<width$}  {:>5}  {:>5}  {:>5}",
        "Macro",
        fmt_rounded(r.macro_precision, 2),
        fmt_rounded(r.macro_recall, 2),
        fmt_rounded(r.macro_f1, 2),
    );
    out
}

fn csv(r: &EvalReport) -> String {
    let mut out = String::from("class,precision,recall,f1,tp,fp,fn,tn\n");
    for (name, m) in r.confusion.class_names.iter().zip(&r.per_class) {
        let _ = writeln!(out, "{name},{},{},{},{},{},{},{}", m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_, m.tn);
    }
    let _ = writeln!(out, "macro,{},{},{},,,,", r.macro_precision, r.macro_recall, r.macro_f1);
    let _ = writeln!(out, "accuracy,{}", r.accuracy);
    out.push('\n');
    out.push_str(&confusion_csv(&r.confusion));
    out.push('\n');
    out
}

pub fn emit(r: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => table(r),
        ReportFormat::Csv => csv(r),
        ReportFormat::Json => serde_json::to_string_pretty(r).expect("report serializes") + "\n",
    }
}

/// Binary PGM (P5) rendering of the row-normalized matrix, `cell` pixels
/// per entry. Black is 0, white is the full row.
pub fn confusion_pgm(cm: &ConfusionMatrix, cell: usize) -> Vec<u8> {
    let c = cm.n_classes();
    let side = c * cell.max(1);
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    for y in 0..side {
        let t = y / cell.max(1);
        let row_total = cm.row_sum(t);
        for x in 0..side {
            let p = x / cell.max(1);
            let v = ratio(cm.counts[t][p] as f64, row_total as f64);
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}
