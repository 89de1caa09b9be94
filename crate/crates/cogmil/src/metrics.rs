//! Classification metrics: confusion matrix, per-class P/R/F1, weighted F1,
//! and mean ± std aggregation over repeated runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction/gold length mismatch: {predictions} predictions vs {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("label index {index} out of range for {num_labels} labels")]
    LabelOutOfRange { index: usize, num_labels: usize },
    #[error("need at least 2 run scores to summarize, got {0}")]
    TooFewRuns(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Evaluation of one prediction set. Confusion rows are gold labels,
/// columns are predictions, both in schema order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub num_examples: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Counts exact label matches. Per-class F1 is 2PR/(P+R) with 0/0 treated
/// as 0, so zero-support classes report 0 and carry no weight.
pub fn evaluate(
    predictions: &[usize],
    gold: &[usize],
    labels: &[String],
) -> Result<EvalReport, MetricsError> {
    if predictions.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    let c = labels.len();
    let mut confusion = vec![vec![0u64; c]; c];
    for (&p, &g) in predictions.iter().zip(gold) {
        for &idx in [p, g].iter() {
            if idx >= c {
                return Err(MetricsError::LabelOutOfRange {
                    index: idx,
                    num_labels: c,
                });
            }
        }
        confusion[g][p] += 1;
    }

    let mut per_class = Vec::with_capacity(c);
    let mut correct = 0u64;
    for i in 0..c {
        let tp = confusion[i][i];
        correct += tp;
        let support: u64 = confusion[i].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[i]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            label: labels[i].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }

    let total: u64 = per_class.iter().map(|m| m.support).sum();
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        per_class
            .iter()
            .map(|m| m.support as f64 * m.f1)
            .sum::<f64>()
            / total as f64
    };
    Ok(EvalReport {
        labels: labels.to_vec(),
        confusion,
        per_class,
        weighted_f1,
        accuracy: ratio(correct, total),
        num_examples: total,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiRunSummary {
    pub run_scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub formatted: String,
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.3} \u{00b1} {:.3}", mean, std)
}

/// Mean and sample (n-1) standard deviation over run scores.
pub fn summarize_runs(scores: &[f64]) -> Result<MultiRunSummary, MetricsError> {
    if scores.len() < 2 {
        return Err(MetricsError::TooFewRuns(scores.len()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    Ok(MultiRunSummary {
        run_scores: scores.to_vec(),
        mean,
        std,
        formatted: format_mean_std(mean, std),
    })
}

/// Per-class F1 summaries across repeated runs, in schema label order.
pub fn summarize_per_class(
    reports: &[EvalReport],
) -> Result<Vec<(String, MultiRunSummary)>, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::TooFewRuns(reports.len()));
    }
    let labels = &reports[0].labels;
    let mut rows = Vec::with_capacity(labels.len());
    for (i, label) in labels.iter().enumerate() {
        let scores: Vec<f64> = reports.iter().map(|r| r.per_class[i].f1).collect();
        rows.push((label.clone(), summarize_runs(&scores)?));
    }
    Ok(rows)
}

fn render_columns(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut push_row = |cells: &[String]| {
        for (i, cell) in cells.iter().enumerate() {
            out.push_str(cell);
            if i + 1 < cols {
                for _ in 0..widths[i] - cell.chars().count() + 2 {
                    out.push(' ');
                }
            }
        }
        out.push('\n');
    };
    push_row(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    for row in rows {
        push_row(row);
    }
    out
}

/// One row per condition, val and test columns in "m ± s" form.
pub fn render_condition_table(rows: &[(String, MultiRunSummary, MultiRunSummary)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, val, test)| {
            vec![name.clone(), val.formatted.clone(), test.formatted.clone()]
        })
        .collect();
    render_columns(&["Method", "Val F1", "Test F1"], &body)
}

/// One row per distortion type with its F1 summary.
pub fn render_per_class_table(rows: &[(String, MultiRunSummary)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, summary)| vec![label.clone(), summary.formatted.clone()])
        .collect();
    render_columns(&["Cognitive Distortion Type", "F1"], &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("class-{i}")).collect()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gold: Vec<usize> = (0..10).flat_map(|i| std::iter::repeat(i).take(3)).collect();
        let report = evaluate(&gold, &gold, &labels(10)).unwrap();
        assert!((report.weighted_f1 - 1.0).abs() < 1e-12);
        assert!((report.accuracy - 1.0).abs() < 1e-12);
        assert_eq!(report.num_examples, 30);
    }

    #[test]
    fn two_class_balanced_errors_score_half() {
        // TP=FP=FN=TN=1 for both classes.
        let gold = [0, 0, 1, 1];
        let pred = [0, 1, 0, 1];
        let report = evaluate(&pred, &gold, &labels(2)).unwrap();
        for m in &report.per_class {
            assert!((m.precision - 0.5).abs() < 1e-12);
            assert!((m.recall - 0.5).abs() < 1e-12);
            assert!((m.f1 - 0.5).abs() < 1e-12);
            assert_eq!(m.support, 2);
        }
        assert!((report.weighted_f1 - 0.5).abs() < 1e-12);
        assert!((report.accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_class_collapse_over_uniform_gold() {
        // Everything predicted as class 0 over 10 uniform gold classes:
        // class 0 gets P=0.1, R=1, F1=2/11; the rest get 0.
        let gold: Vec<usize> = (0..10).collect();
        let pred = vec![0usize; 10];
        let report = evaluate(&pred, &gold, &labels(10)).unwrap();
        assert!((report.per_class[0].f1 - 2.0 / 11.0).abs() < 1e-12);
        for m in &report.per_class[1..] {
            assert_eq!(m.f1, 0.0);
            assert_eq!(m.support, 1);
        }
        assert!((report.weighted_f1 - 1.0 / 55.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_rows_are_gold_columns_are_predictions() {
        let report = evaluate(&[0], &[1], &labels(2)).unwrap();
        assert_eq!(report.confusion, vec![vec![0, 0], vec![1, 0]]);
        let total: u64 = report.confusion.iter().flatten().sum();
        assert_eq!(total, report.num_examples);
    }

    #[test]
    fn zero_support_class_carries_no_weight() {
        // Class 2 never appears in gold; weighted F1 ignores it entirely.
        let gold = [0, 0, 1, 1];
        let pred = [0, 0, 1, 2];
        let report = evaluate(&pred, &gold, &labels(3)).unwrap();
        assert_eq!(report.per_class[2].support, 0);
        assert_eq!(report.per_class[2].f1, 0.0);
        let f1_0 = 1.0;
        let f1_1 = 2.0 * 1.0 * 0.5 / 1.5;
        assert!((report.weighted_f1 - (2.0 * f1_0 + 2.0 * f1_1) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_is_permutation_invariant() {
        let gold = [0, 1, 2, 1, 0, 2, 2];
        let pred = [0, 2, 2, 1, 1, 0, 2];
        let a = evaluate(&pred, &gold, &labels(3)).unwrap();
        let perm = [6, 3, 0, 5, 2, 4, 1];
        let gold_p: Vec<usize> = perm.iter().map(|&i| gold[i]).collect();
        let pred_p: Vec<usize> = perm.iter().map(|&i| pred[i]).collect();
        let b = evaluate(&pred_p, &gold_p, &labels(3)).unwrap();
        assert_eq!(a.confusion, b.confusion);
        assert!((a.weighted_f1 - b.weighted_f1).abs() < 1e-15);
    }

    #[test]
    fn evaluate_rejects_misaligned_and_out_of_range_inputs() {
        assert!(matches!(
            evaluate(&[0, 1], &[0], &labels(2)),
            Err(MetricsError::LengthMismatch { predictions: 2, gold: 1 })
        ));
        assert!(matches!(
            evaluate(&[5], &[0], &labels(2)),
            Err(MetricsError::LabelOutOfRange { index: 5, num_labels: 2 })
        ));
    }

    #[test]
    fn summarize_constant_scores() {
        let s = summarize_runs(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(s.formatted, "0.500 \u{00b1} 0.000");
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn summarize_two_scores_uses_sample_std() {
        let s = summarize_runs(&[0.4, 0.6]).unwrap();
        assert!((s.mean - 0.5).abs() < 1e-12);
        assert!((s.std - 0.1414213562373095).abs() < 1e-12);
        assert_eq!(s.formatted, "0.500 \u{00b1} 0.141");
    }

    #[test]
    fn summarize_rejects_single_run() {
        assert!(matches!(summarize_runs(&[0.5]), Err(MetricsError::TooFewRuns(1))));
    }

    #[test]
    fn per_class_summary_tracks_label_order() {
        let gold = [0, 1];
        let r1 = evaluate(&[0, 1], &gold, &labels(2)).unwrap();
        let r2 = evaluate(&[0, 0], &gold, &labels(2)).unwrap();
        let rows = summarize_per_class(&[r1, r2]).unwrap();
        assert_eq!(rows[0].0, "class-0");
        assert!((rows[0].1.mean - 1.0 * 0.5 - (2.0 / 3.0) * 0.5).abs() < 1e-12);
        assert!((rows[1].1.mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tables_align_and_carry_summaries() {
        let val = summarize_runs(&[0.5, 0.5]).unwrap();
        let test = summarize_runs(&[0.4, 0.6]).unwrap();
        let table = render_condition_table(&[
            ("Baseline".into(), val.clone(), test.clone()),
            ("ELB + Salience".into(), test.clone(), val.clone()),
        ]);
        let expected = "Method          Val F1         Test F1\n\
                        Baseline        0.500 \u{00b1} 0.000  0.500 \u{00b1} 0.141\n\
                        ELB + Salience  0.500 \u{00b1} 0.141  0.500 \u{00b1} 0.000\n";
        assert_eq!(table, expected);

        let per_class = render_per_class_table(&[("Labeling".into(), val)]);
        assert!(per_class.starts_with("Cognitive Distortion Type  F1"));
        assert!(per_class.contains("Labeling"));
    }
}
