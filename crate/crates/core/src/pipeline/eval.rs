use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::ztree::{predict, Normalizer, ZTreeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrAccuracy {
    pub snr_db: f64,
    pub total: u64,
    pub correct: u64,
    pub accuracy: f64,
}

/// Misclassification rates between two classes at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRate {
    pub snr_db: f64,
    pub n_a: u64,
    pub a_to_b: f64,
    pub n_b: u64,
    pub b_to_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// Classes never predicted; their precision is reported as 0.
    pub precision_undefined: Vec<bool>,
    /// Classes absent from the test set; their recall is reported as 0.
    pub recall_undefined: Vec<bool>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub total: u64,
    pub per_snr: Vec<SnrAccuracy>,
    /// Keyed by `"A->B"` class names.
    pub pair_series: BTreeMap<String, Vec<PairRate>>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn check_lengths(truth: &[u8], pred: &[u16], snr: Option<&[f64]>, classes: usize) -> Result<()> {
    if truth.len() != pred.len() || snr.is_some_and(|s| s.len() != truth.len()) {
        return Err(Error::Input("label, prediction and SNR lengths differ".into()));
    }
    if truth.iter().any(|&t| t as usize >= classes) || pred.iter().any(|&p| p as usize >= classes) {
        return Err(Error::Input(format!("label outside {classes} classes")));
    }
    Ok(())
}

/// Build a report from true labels and predictions.
pub fn evaluate_predictions(
    truth: &[u8],
    pred: &[u16],
    snr: Option<&[f64]>,
    class_names: &[String],
) -> Result<EvalReport> {
    let k = class_names.len();
    check_lengths(truth, pred, snr, k)?;
    let mut confusion = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        confusion[t as usize][p as usize] += 1;
    }
    let total = truth.len() as u64;
    let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
    let mut report = EvalReport {
        class_names: class_names.to_vec(),
        precision: Vec::with_capacity(k),
        recall: Vec::with_capacity(k),
        f1: Vec::with_capacity(k),
        precision_undefined: Vec::with_capacity(k),
        recall_undefined: Vec::with_capacity(k),
        macro_precision: 0.0,
        macro_recall: 0.0,
        macro_f1: 0.0,
        accuracy: ratio(correct, total).0,
        total,
        per_snr: Vec::new(),
        pair_series: BTreeMap::new(),
        confusion,
    };
    for c in 0..k {
        let tp = report.confusion[c][c];
        let predicted: u64 = (0..k).map(|r| report.confusion[r][c]).sum();
        let actual: u64 = report.confusion[c].iter().sum();
        let (p, p_undef) = ratio(tp, predicted);
        let (r, r_undef) = ratio(tp, actual);
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        report.precision.push(p);
        report.recall.push(r);
        report.f1.push(f);
        report.precision_undefined.push(p_undef);
        report.recall_undefined.push(r_undef);
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    report.macro_precision = mean(&report.precision);
    report.macro_recall = mean(&report.recall);
    report.macro_f1 = mean(&report.f1);
    if let Some(snr) = snr {
        let mut by: BTreeMap<u64, (f64, u64, u64)> = BTreeMap::new();
        for ((&t, &p), &s) in truth.iter().zip(pred).zip(snr) {
            let e = by.entry(ordered_bits(s)).or_insert((s, 0, 0));
            e.1 += 1;
            e.2 += (t as u16 == p) as u64;
        }
        report.per_snr = by
            .into_values()
            .map(|(snr_db, total, correct)| SnrAccuracy {
                snr_db,
                total,
                correct,
                accuracy: ratio(correct, total).0,
            })
            .collect();
    }
    Ok(report)
}

/// Map an f64 to a u64 whose unsigned order matches numeric order.
fn ordered_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

pub fn evaluate(
    model: &ZTreeModel,
    norm: &Normalizer,
    rows: &[FeatureVector],
    labels: &[u8],
    snr: Option<&[f64]>,
) -> Result<EvalReport> {
    let pred: Vec<u16> = rows.par_iter().map(|r| predict(model, norm, r)).collect();
    evaluate_predictions(labels, &pred, snr, &model.class_names)
}

/// Per-SNR rates of `a` predicted as `b` and of `b` predicted as `a`.
pub fn pair_confusion_by_snr(
    truth: &[u8],
    pred: &[u16],
    snr: &[f64],
    a: u8,
    b: u8,
) -> Result<Vec<PairRate>> {
    if truth.len() != pred.len() || snr.len() != truth.len() {
        return Err(Error::Input("label, prediction and SNR lengths differ".into()));
    }
    // (snr, n_a, a->b, n_b, b->a)
    let mut by: BTreeMap<u64, (f64, u64, u64, u64, u64)> = BTreeMap::new();
    for ((&t, &p), &s) in truth.iter().zip(pred).zip(snr) {
        let e = by.entry(ordered_bits(s)).or_insert((s, 0, 0, 0, 0));
        if t == a {
            e.1 += 1;
            e.2 += (p == b as u16) as u64;
        } else if t == b {
            e.3 += 1;
            e.4 += (p == a as u16) as u64;
        }
    }
    Ok(by
        .into_values()
        .map(|(snr_db, n_a, ab, n_b, ba)| PairRate {
            snr_db,
            n_a,
            a_to_b: ratio(ab, n_a).0,
            n_b,
            b_to_a: ratio(ba, n_b).0,
        })
        .collect())
}

pub fn confusion_vs_snr(
    model: &ZTreeModel,
    norm: &Normalizer,
    rows: &[FeatureVector],
    labels: &[u8],
    snr: &[f64],
    a: u8,
    b: u8,
) -> Result<Vec<PairRate>> {
    if rows.len() != labels.len() {
        return Err(Error::Input("feature rows and labels differ in length".into()));
    }
    let pred: Vec<u16> = rows.par_iter().map(|r| predict(model, norm, r)).collect();
    pair_confusion_by_snr(labels, &pred, snr, a, b)
}

/// Unordered class pairs ranked by total off-diagonal confusion
/// `count(a->b) + count(b->a)`, largest first; ties go to the lower pair.
pub fn top_confusion_pairs(confusion: &[Vec<u64>], k: usize) -> Vec<(usize, usize, u64)> {
    let n = confusion.len();
    let mut pairs: Vec<(usize, usize, u64)> = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .map(|(a, b)| (a, b, confusion[a][b] + confusion[b][a]))
        .collect();
    pairs.sort_by(|x, y| y.2.cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    pairs.truncate(k);
    pairs
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    /// Aligned plain-text rendering of the metrics and confusion matrix.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = self.class_names.iter().map(|n| n.len()).max().unwrap_or(5).max(9);
        let flag = |u: bool| if u { "*" } else { " " };
        writeln!(s, "{:<w$}  {:>10}  {:>10}  {:>10}  {:>8}", "class", "precision", "recall", "f1", "support").unwrap();
        for (c, name) in self.class_names.iter().enumerate() {
            writeln!(
                s,
                "{:<w$}  {:>9.4}{}  {:>9.4}{}  {:>10.4}  {:>8}",
                name,
                self.precision[c],
                flag(self.precision_undefined[c]),
                self.recall[c],
                flag(self.recall_undefined[c]),
                self.f1[c],
                self.confusion[c].iter().sum::<u64>()
            )
            .unwrap();
        }
        writeln!(
            s,
            "{:<w$}  {:>10.4}  {:>10.4}  {:>10.4}  {:>8}",
            "macro avg", self.macro_precision, self.macro_recall, self.macro_f1, self.total
        )
        .unwrap();
        writeln!(s, "{:<w$}  {:>10.4}", "accuracy", self.accuracy).unwrap();
        if self.precision_undefined.iter().chain(&self.recall_undefined).any(|&u| u) {
            writeln!(s, "* undefined (zero denominator), reported as 0").unwrap();
        }
        writeln!(s).unwrap();
        write!(s, "{:<w$}", "true\\pred").unwrap();
        for name in &self.class_names {
            write!(s, " {:>7}", truncate(name, 7)).unwrap();
        }
        writeln!(s).unwrap();
        for (c, row) in self.confusion.iter().enumerate() {
            write!(s, "{:<w$}", self.class_names[c]).unwrap();
            for v in row {
                write!(s, " {v:>7}").unwrap();
            }
            writeln!(s).unwrap();
        }
        if !self.per_snr.is_empty() {
            writeln!(s).unwrap();
            writeln!(s, "{:>8}  {:>8}  {:>8}", "snr_db", "n", "accuracy").unwrap();
            for r in &self.per_snr {
                writeln!(s, "{:>8.1}  {:>8}  {:>8.4}", r.snr_db, r.total, r.accuracy).unwrap();
            }
        }
        for (key, series) in &self.pair_series {
            writeln!(s).unwrap();
            writeln!(s, "{key}").unwrap();
            writeln!(s, "{:>8}  {:>8}  {:>8}", "snr_db", "a->b", "b->a").unwrap();
            for r in series {
                writeln!(s, "{:>8.1}  {:>8.4}  {:>8.4}", r.snr_db, r.a_to_b, r.b_to_a).unwrap();
            }
        }
        s
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
