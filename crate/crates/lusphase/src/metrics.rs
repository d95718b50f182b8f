//! Confusion-matrix evaluation: accuracy plus per-class precision,
//! recall and F1, with unweighted averaging across folds.
//!
//! Class 1 (COVID) is the positive class of the confusion matrix; the
//! report carries both classes' columns. Degenerate 0/0 ratios are
//! reported as 0 and flagged.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Binary confusion counts with COVID (class 1) positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_positive: u64,
    pub false_positive: u64,
    pub true_negative: u64,
    pub false_negative: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }
}

/// Tallies predictions against labels; values must be class ids in `{0, 1}`.
pub fn confusion(predictions: &[usize], labels: &[usize]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions against {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&v| v > 1) {
        return Err(Error::Domain(format!("class id {bad} outside {{0, 1}}")));
    }
    let mut cm = ConfusionMatrix {
        true_positive: 0,
        false_positive: 0,
        true_negative: 0,
        false_negative: 0,
    };
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (1, 1) => cm.true_positive += 1,
            (1, 0) => cm.false_positive += 1,
            (0, 0) => cm.true_negative += 1,
            (0, 1) => cm.false_negative += 1,
            _ => unreachable!(),
        }
    }
    Ok(cm)
}

/// Precision, recall and F1 of one class treated as positive.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any ratio was 0/0 and substituted with 0.
    pub degenerate: bool,
}

impl ClassMetrics {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> ClassMetrics {
        let mut degenerate = false;
        let mut ratio = |num: u64, den: u64| -> f64 {
            if den == 0 {
                degenerate = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            degenerate = true;
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            degenerate,
        }
    }
}

/// The full metric set of one evaluation: accuracy plus both classes'
/// precision/recall/F1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub covid: ClassMetrics,
    pub non_covid: ClassMetrics,
    pub total: u64,
    /// Number of folds averaged into this report (1 for a single fold).
    pub folds: usize,
}

impl MetricReport {
    pub fn csv_header() -> &'static str {
        "fold,accuracy,precision_covid,precision_non,recall_covid,recall_non,f1_covid,f1_non,degenerate"
    }

    /// One CSV row with percentages at two decimals.
    pub fn csv_row(&self, fold: &str) -> String {
        format!(
            "{fold},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{}",
            self.accuracy * 100.0,
            self.covid.precision * 100.0,
            self.non_covid.precision * 100.0,
            self.covid.recall * 100.0,
            self.non_covid.recall * 100.0,
            self.covid.f1 * 100.0,
            self.non_covid.f1 * 100.0,
            self.covid.degenerate || self.non_covid.degenerate
        )
    }
}

/// Computes the metric report of one confusion matrix.
pub fn summarize(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Domain("empty confusion matrix".into()));
    }
    let accuracy = (cm.true_positive + cm.true_negative) as f64 / total as f64;
    // The non-COVID columns come from swapping the positive class.
    let covid = ClassMetrics::from_counts(cm.true_positive, cm.false_positive, cm.false_negative);
    let non_covid =
        ClassMetrics::from_counts(cm.true_negative, cm.false_negative, cm.false_positive);
    Ok(MetricReport {
        accuracy,
        covid,
        non_covid,
        total,
        folds: 1,
    })
}

/// Unweighted arithmetic mean of the reports across folds.
pub fn aggregate_folds(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::Domain("no fold reports to aggregate".into()));
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mean_class = |pick: &dyn Fn(&MetricReport) -> ClassMetrics| ClassMetrics {
        precision: reports.iter().map(|r| pick(r).precision).sum::<f64>() / n,
        recall: reports.iter().map(|r| pick(r).recall).sum::<f64>() / n,
        f1: reports.iter().map(|r| pick(r).f1).sum::<f64>() / n,
        degenerate: reports.iter().any(|r| pick(r).degenerate),
    };
    Ok(MetricReport {
        accuracy: mean(&|r| r.accuracy),
        covid: mean_class(&|r| r.covid),
        non_covid: mean_class(&|r| r.non_covid),
        total: reports.iter().map(|r| r.total).sum(),
        folds: reports.iter().map(|r| r.folds).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_everything_100() {
        let preds = vec![1, 1, 1, 1, 1, 1, 0, 0, 0, 0];
        let cm = confusion(&preds, &preds).unwrap();
        assert_eq!(cm.true_positive, 6);
        assert_eq!(cm.true_negative, 4);
        assert_eq!(cm.false_positive, 0);
        assert_eq!(cm.false_negative, 0);
        let report = summarize(&cm).unwrap();
        assert_eq!(report.accuracy, 1.0);
        for c in [report.covid, report.non_covid] {
            assert_eq!(c.precision, 1.0);
            assert_eq!(c.recall, 1.0);
            assert_eq!(c.f1, 1.0);
            assert!(!c.degenerate);
        }
    }

    #[test]
    fn inverted_predictions_have_no_true_counts() {
        let labels = vec![1, 1, 0, 0];
        let preds = vec![0, 0, 1, 1];
        let cm = confusion(&preds, &labels).unwrap();
        assert_eq!(cm.true_positive, 0);
        assert_eq!(cm.true_negative, 0);
        assert_eq!(cm.false_positive, 2);
        assert_eq!(cm.false_negative, 2);
    }

    #[test]
    fn hand_tally_mixed_case() {
        let preds = vec![1, 1, 0, 0];
        let labels = vec![1, 0, 0, 1];
        let cm = confusion(&preds, &labels).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix {
                true_positive: 1,
                false_positive: 1,
                true_negative: 1,
                false_negative: 1,
            }
        );
        let report = summarize(&cm).unwrap();
        assert_eq!(report.accuracy, 0.5);
        for c in [report.covid, report.non_covid] {
            assert_eq!(c.precision, 0.5);
            assert_eq!(c.recall, 0.5);
            assert!((c.f1 - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        assert!(matches!(
            confusion(&[1, 0], &[1]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn out_of_range_class_is_domain_error() {
        assert!(matches!(
            confusion(&[2], &[0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn empty_matrix_is_domain_error() {
        let cm = ConfusionMatrix {
            true_positive: 0,
            false_positive: 0,
            true_negative: 0,
            false_negative: 0,
        };
        assert!(matches!(summarize(&cm), Err(Error::Domain(_))));
    }

    #[test]
    fn degenerate_ratios_are_zero_and_flagged() {
        // No positive predictions and no positive labels.
        let cm = confusion(&[0, 0, 0], &[0, 0, 0]).unwrap();
        let report = summarize(&cm).unwrap();
        assert_eq!(report.covid.precision, 0.0);
        assert_eq!(report.covid.recall, 0.0);
        assert_eq!(report.covid.f1, 0.0);
        assert!(report.covid.degenerate);
        assert!(!report.non_covid.degenerate);
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn accuracy_is_exact_ratio_of_counts() {
        let cm = ConfusionMatrix {
            true_positive: 3,
            false_positive: 2,
            true_negative: 4,
            false_negative: 1,
        };
        let report = summarize(&cm).unwrap();
        assert_eq!(report.accuracy, 7.0 / 10.0);
    }

    #[test]
    fn f1_is_harmonic_mean_of_reported_precision_and_recall() {
        for (tp, fp, tn, fn_) in [(5, 3, 7, 2), (1, 0, 9, 4), (8, 8, 1, 1)] {
            let cm = ConfusionMatrix {
                true_positive: tp,
                false_positive: fp,
                true_negative: tn,
                false_negative: fn_,
            };
            let report = summarize(&cm).unwrap();
            for c in [report.covid, report.non_covid] {
                if c.precision + c.recall > 0.0 {
                    let harmonic = 2.0 * c.precision * c.recall / (c.precision + c.recall);
                    assert!((c.f1 - harmonic).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn swapping_positive_class_swaps_columns() {
        let preds = vec![1, 1, 0, 1, 0, 0, 1, 0];
        let labels = vec![1, 0, 0, 1, 1, 0, 1, 1];
        let report = summarize(&confusion(&preds, &labels).unwrap()).unwrap();
        // Swap both prediction and label polarity: class columns trade places.
        let flip = |v: &[usize]| -> Vec<usize> { v.iter().map(|&x| 1 - x).collect() };
        let swapped =
            summarize(&confusion(&flip(&preds), &flip(&labels)).unwrap()).unwrap();
        assert_eq!(report.accuracy, swapped.accuracy);
        assert_eq!(report.covid.precision, swapped.non_covid.precision);
        assert_eq!(report.covid.recall, swapped.non_covid.recall);
        assert_eq!(report.covid.f1, swapped.non_covid.f1);
        assert_eq!(report.non_covid.precision, swapped.covid.precision);
    }

    #[test]
    fn identical_reports_aggregate_to_themselves() {
        let cm = confusion(&[1, 0, 1, 0], &[1, 0, 0, 1]).unwrap();
        let report = summarize(&cm).unwrap();
        let mean = aggregate_folds(&[report.clone(), report.clone()]).unwrap();
        assert_eq!(mean.accuracy, report.accuracy);
        assert_eq!(mean.covid.f1, report.covid.f1);
        assert_eq!(mean.folds, 2);
    }

    #[test]
    fn accuracies_average_unweighted() {
        let mut a = summarize(&confusion(&[1, 1, 0, 0, 1], &[1, 1, 0, 0, 0]).unwrap()).unwrap();
        let mut b = summarize(&confusion(&[1, 0], &[1, 0]).unwrap()).unwrap();
        a.accuracy = 0.8;
        b.accuracy = 0.9;
        let mean = aggregate_folds(&[a, b]).unwrap();
        assert!((mean.accuracy - 0.85).abs() < 1e-12);
    }

    #[test]
    fn five_fold_mean_matches_independent_recomputation() {
        let fixtures = [
            (12, 2, 9, 3),
            (10, 1, 11, 4),
            (14, 3, 7, 2),
            (9, 2, 12, 3),
            (11, 4, 8, 3),
        ];
        let reports: Vec<MetricReport> = fixtures
            .iter()
            .map(|&(tp, fp, tn, fn_)| {
                summarize(&ConfusionMatrix {
                    true_positive: tp,
                    false_positive: fp,
                    true_negative: tn,
                    false_negative: fn_,
                })
                .unwrap()
            })
            .collect();
        let mean = aggregate_folds(&reports).unwrap();
        let expect_acc: f64 = fixtures
            .iter()
            .map(|&(tp, fp, tn, fn_)| (tp + tn) as f64 / (tp + fp + tn + fn_) as f64)
            .sum::<f64>()
            / 5.0;
        assert!((mean.accuracy - expect_acc).abs() < 1e-12);
        let expect_prec_covid: f64 = fixtures
            .iter()
            .map(|&(tp, fp, _, _)| tp as f64 / (tp + fp) as f64)
            .sum::<f64>()
            / 5.0;
        assert!((mean.covid.precision - expect_prec_covid).abs() < 1e-12);
    }

    #[test]
    fn empty_aggregate_is_domain_error() {
        assert!(matches!(aggregate_folds(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn csv_formatting_rounds_to_two_decimals() {
        // A report shaped like the published single-feature baseline row.
        let report = MetricReport {
            accuracy: 0.8994,
            covid: ClassMetrics {
                precision: 0.9248,
                recall: 0.9398,
                f1: 0.9321,
                degenerate: false,
            },
            non_covid: ClassMetrics {
                precision: 0.8249,
                recall: 0.7870,
                f1: 0.8046,
                degenerate: false,
            },
            total: 1752,
            folds: 5,
        };
        let row = report.csv_row("mean");
        assert_eq!(
            row,
            "mean,89.94,92.48,82.49,93.98,78.70,93.21,80.46,false"
        );
    }
}
