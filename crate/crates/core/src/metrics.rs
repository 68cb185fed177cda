//! Support-weighted precision, recall, and F1 for binary classification.
//!
//! `w_c = support_c / total`, weighted P = Σ w_c·P_c, weighted R = Σ w_c·R_c,
//! weighted F1 = 2PR/(P+R) taken over the weighted P and R.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no examples")]
    Empty,
    #[error("class {0} is not binary")]
    ClassOutOfRange(usize),
    #[error("counts cover zero examples")]
    EmptyCounts,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: [usize; NUM_CLASSES],
    pub fp: [usize; NUM_CLASSES],
    pub fn_: [usize; NUM_CLASSES],
    pub support: [usize; NUM_CLASSES],
    pub total: usize,
}

impl ConfusionCounts {
    pub fn correct(&self) -> usize {
        self.tp.iter().sum()
    }
}

pub fn confusion_counts(predictions: &[usize], labels: &[usize]) -> Result<ConfusionCounts, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = ConfusionCounts {
        total: labels.len(),
        ..ConfusionCounts::default()
    };
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= NUM_CLASSES {
            return Err(MetricsError::ClassOutOfRange(p));
        }
        if y >= NUM_CLASSES {
            return Err(MetricsError::ClassOutOfRange(y));
        }
        c.support[y] += 1;
        if p == y {
            c.tp[y] += 1;
        } else {
            c.fp[p] += 1;
            c.fn_[y] += 1;
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Precision had a zero denominator and was scored 0.
    pub precision_undefined: bool,
    /// Recall had a zero denominator and was scored 0.
    pub recall_undefined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub weights: [f64; NUM_CLASSES],
    pub per_class: [ClassScores; NUM_CLASSES],
    pub counts: ConfusionCounts,
    /// Weighted sums were further divided by the class count.
    pub literal_eq4: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReportOptions {
    /// Divide the weighted sums by the number of classes, as the formula
    /// is sometimes printed. Off by default.
    pub literal_eq4: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

pub fn weighted_report(counts: &ConfusionCounts) -> Result<ClassificationReport, MetricsError> {
    weighted_report_with(counts, ReportOptions::default())
}

pub fn weighted_report_with(counts: &ConfusionCounts, opts: ReportOptions) -> Result<ClassificationReport, MetricsError> {
    if counts.total == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    let mut per_class = [ClassScores::default(); NUM_CLASSES];
    let mut weights = [0.0; NUM_CLASSES];
    let (mut wp, mut wr) = (0.0, 0.0);
    for c in 0..NUM_CLASSES {
        let (p, pu) = ratio(counts.tp[c], counts.tp[c] + counts.fp[c]);
        let (r, ru) = ratio(counts.tp[c], counts.tp[c] + counts.fn_[c]);
        per_class[c] = ClassScores {
            precision: p,
            recall: r,
            f1: harmonic(p, r),
            support: counts.support[c],
            precision_undefined: pu,
            recall_undefined: ru,
        };
        weights[c] = counts.support[c] as f64 / counts.total as f64;
        wp += weights[c] * p;
        wr += weights[c] * r;
    }
    if opts.literal_eq4 {
        wp /= NUM_CLASSES as f64;
        wr /= NUM_CLASSES as f64;
    }
    Ok(ClassificationReport {
        accuracy: counts.correct() as f64 / counts.total as f64,
        precision: wp,
        recall: wr,
        f1: harmonic(wp, wr),
        weights,
        per_class,
        counts: *counts,
        literal_eq4: opts.literal_eq4,
    })
}

/// Counts plus report in one call.
pub fn evaluate_predictions(predictions: &[usize], labels: &[usize]) -> Result<ClassificationReport, MetricsError> {
    weighted_report(&confusion_counts(predictions, labels)?)
}

impl ClassificationReport {
    pub fn any_undefined(&self) -> bool {
        self.per_class
            .iter()
            .any(|c| c.precision_undefined || c.recall_undefined)
    }
}

/// `Accuracy Precision Recall F1` at six decimals, space separated.
pub fn report_to_table(report: &ClassificationReport) -> String {
    format!(
        "{:.6} {:.6} {:.6} {:.6}",
        report.accuracy, report.precision, report.recall, report.f1
    )
}

/// Aligned multi-row table with a header, one row per named report.
pub fn render_table<S: AsRef<str>>(rows: &[(S, ClassificationReport)]) -> String {
    let width = rows
        .iter()
        .map(|(n, _)| n.as_ref().len())
        .chain(std::iter::once("Model".len()))
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>9} {:>9} {:>9} {:>9}",
        "Model", "Accuracy", "Precision", "Recall", "F1"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.6} {:>9.6} {:>9.6} {:>9.6}",
            name.as_ref(),
            r.accuracy,
            r.precision,
            r.recall,
            r.f1
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report_from(acc: f64, p: f64, r: f64, f1: f64) -> ClassificationReport {
        ClassificationReport {
            accuracy: acc,
            precision: p,
            recall: r,
            f1,
            weights: [0.5, 0.5],
            per_class: [ClassScores::default(); 2],
            counts: ConfusionCounts::default(),
            literal_eq4: false,
        }
    }

    #[test]
    fn counts_examples() {
        let c = confusion_counts(&[0, 1], &[0, 1]).unwrap();
        assert_eq!(c.tp, [1, 1]);
        assert_eq!(c.fp, [0, 0]);
        assert_eq!(c.fn_, [0, 0]);
        let c = confusion_counts(&[1, 1], &[0, 0]).unwrap();
        assert_eq!(c.fn_[0], 2);
        assert_eq!(c.fp[1], 2);
        assert_eq!(
            confusion_counts(&[0, 1, 1], &[0, 1, 1, 0]),
            Err(MetricsError::LengthMismatch {
                predictions: 3,
                labels: 4
            })
        );
        assert_eq!(confusion_counts(&[], &[]), Err(MetricsError::Empty));
        assert_eq!(confusion_counts(&[2], &[0]), Err(MetricsError::ClassOutOfRange(2)));
    }

    #[test]
    fn hand_example() {
        let r = evaluate_predictions(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap();
        assert_eq!(r.per_class[0].precision, 1.0);
        assert!((r.per_class[0].recall - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].precision, 0.5);
        assert_eq!(r.per_class[1].recall, 1.0);
        assert_eq!(r.weights, [0.75, 0.25]);
        assert!((r.precision - 0.875).abs() < 1e-15);
        assert!((r.recall - 0.75).abs() < 1e-15);
        assert!((r.f1 - 2.0 * 0.875 * 0.75 / 1.625).abs() < 1e-15);
        assert_eq!(report_to_table(&r), "0.750000 0.875000 0.750000 0.807692");
    }

    #[test]
    fn perfect_and_constant() {
        let r = evaluate_predictions(&[0, 1, 1, 1, 0], &[0, 1, 1, 1, 0]).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(report_to_table(&r), "1.000000 1.000000 1.000000 1.000000");
        assert!(!r.any_undefined());

        let r = evaluate_predictions(&[1, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        assert_eq!(r.recall, 0.5);
        assert_eq!(r.accuracy, 0.5);
        assert!(r.per_class[0].precision_undefined);
        assert_eq!(r.per_class[0].precision, 0.0);
    }

    #[test]
    fn literal_division_halves() {
        let c = confusion_counts(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap();
        let r = weighted_report_with(&c, ReportOptions { literal_eq4: true }).unwrap();
        assert!((r.precision - 0.4375).abs() < 1e-15);
        assert!((r.recall - 0.375).abs() < 1e-15);
        assert!(r.literal_eq4);
    }

    #[test]
    fn table_formatting() {
        let r = report_from(0.990187, 0.990218, 0.990187, 0.990185);
        assert_eq!(report_to_table(&r), "0.990187 0.990218 0.990187 0.990185");
        let t = render_table(&[("baseline", r.clone()), ("fused", r)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("Accuracy") && lines[0].ends_with("F1"));
        assert_eq!(lines[1].len(), lines[2].len());
    }

    #[test]
    fn empty_counts() {
        assert_eq!(
            weighted_report(&ConfusionCounts::default()),
            Err(MetricsError::EmptyCounts)
        );
    }

    proptest! {
        #[test]
        fn symmetry_and_bounds(pairs in proptest::collection::vec((0usize..2, 0usize..2), 1..50)) {
            let (p, y): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let r = evaluate_predictions(&p, &y).unwrap();
            let flip = |v: &[usize]| v.iter().map(|&x| 1 - x).collect::<Vec<_>>();
            let s = evaluate_predictions(&flip(&p), &flip(&y)).unwrap();
            prop_assert!((r.precision - s.precision).abs() < 1e-12);
            prop_assert!((r.recall - s.recall).abs() < 1e-12);
            prop_assert!((r.f1 - s.f1).abs() < 1e-12);
            prop_assert!((r.accuracy - r.recall).abs() < 1e-12);
            let lo = r.precision.min(r.recall);
            let hi = r.precision.max(r.recall);
            prop_assert!(r.f1 >= lo - 1e-12 && r.f1 <= hi + 1e-12);
            for v in [r.accuracy, r.precision, r.recall, r.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
