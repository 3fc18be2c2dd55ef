//! Binary-classification evaluation: confusion matrix, per-class and
//! aggregate metrics, the textual classification report and history export.

use std::fmt;

use crate::data::{BatchConfig, DataSource};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::SequentialModel;
use crate::train::{bce_loss, EpochRecord};

/// 2x2 count table: rows are true class indices, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[usize; 2]; 2],
    class_names: [String; 2],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[usize; 2]; 2], class_names: [String; 2]) -> Self {
        ConfusionMatrix {
            counts,
            class_names,
        }
    }

    /// Tally true/predicted label pairs. Labels must be 0 or 1 and the two
    /// sequences must be equal-length and non-empty.
    pub fn from_labels(
        y_true: &[usize],
        y_pred: &[usize],
        class_names: [String; 2],
    ) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Validation(format!(
                "label sequences differ in length: {} vs {}",
                y_true.len(),
                y_pred.len()
            )));
        }
        if y_true.is_empty() {
            return Err(Error::Validation("cannot evaluate an empty label set".into()));
        }
        let mut counts = [[0usize; 2]; 2];
        for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
            if t > 1 || p > 1 {
                return Err(Error::Validation(format!(
                    "sample {i}: labels must be 0 or 1, got ({t}, {p})"
                )));
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix {
            counts,
            class_names,
        })
    }

    pub fn counts(&self) -> &[[usize; 2]; 2] {
        &self.counts
    }

    pub fn class_names(&self) -> &[String; 2] {
        &self.class_names
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Row sum: number of samples whose true class is `class`.
    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .class_names
            .iter()
            .map(|n| n.len())
            .max()
            .unwrap_or(0)
            .max(6);
        write!(f, "{:>w$}", "", w = width + 6)?;
        for name in &self.class_names {
            write!(f, "  pred {name:>w$}", w = width)?;
        }
        writeln!(f)?;
        for (t, row) in self.counts.iter().enumerate() {
            write!(f, "true {:>w$}", self.class_names[t], w = width)?;
            for &v in row {
                write!(f, "  {v:>w$}", w = width + 5)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-class and aggregate metric table.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub class_names: [String; 2],
    pub classes: [ClassMetrics; 2],
    pub accuracy: f64,
    /// Unweighted class means of (precision, recall, f1).
    pub macro_avg: (f64, f64, f64),
    /// Support-weighted means of (precision, recall, f1).
    pub weighted_avg: (f64, f64, f64),
    pub total: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Derive the classification report. Zero denominators yield 0 by convention.
pub fn metrics(cm: &ConfusionMatrix) -> ClassificationReport {
    let counts = cm.counts();
    let total = cm.total();
    let mut classes = [ClassMetrics {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        support: 0,
    }; 2];
    for c in 0..2 {
        let tp = counts[c][c];
        let col: usize = counts[0][c] + counts[1][c];
        let row: usize = cm.support(c);
        let precision = ratio(tp, col);
        let recall = ratio(tp, row);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        classes[c] = ClassMetrics {
            precision,
            recall,
            f1,
            support: row,
        };
    }
    let accuracy = ratio(counts[0][0] + counts[1][1], total);
    let macro_avg = (
        (classes[0].precision + classes[1].precision) / 2.0,
        (classes[0].recall + classes[1].recall) / 2.0,
        (classes[0].f1 + classes[1].f1) / 2.0,
    );
    let weigh = |f: fn(&ClassMetrics) -> f64| {
        (f(&classes[0]) * classes[0].support as f64 + f(&classes[1]) * classes[1].support as f64)
            / total as f64
    };
    let weighted_avg = (
        weigh(|m| m.precision),
        weigh(|m| m.recall),
        weigh(|m| m.f1),
    );
    ClassificationReport {
        class_names: cm.class_names().clone(),
        classes,
        accuracy,
        macro_avg,
        weighted_avg,
        total,
    }
}

/// Round half away from zero at two decimals (display only).
fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Render the report as a fixed-width table: per-class rows keyed by class
/// index, then accuracy, macro avg and weighted avg. Metric cells show two
/// decimals, rounded half away from zero.
pub fn render_report(report: &ClassificationReport) -> String {
    let mut out = String::new();
    let cell = |v: f64| format!("{:.2}", round2(v));
    out.push_str(&format!(
        "{:>13}{:>10}{:>10}{:>10}{:>10}\n\n",
        "", "precision", "recall", "f1-score", "support"
    ));
    for (c, m) in report.classes.iter().enumerate() {
        out.push_str(&format!(
            "{:>13}{:>10}{:>10}{:>10}{:>10}\n",
            c,
            cell(m.precision),
            cell(m.recall),
            cell(m.f1),
            m.support
        ));
    }
    out.push('\n');
    out.push_str(&format!(
        "{:>13}{:>10}{:>10}{:>10}{:>10}\n",
        "accuracy",
        "",
        "",
        cell(report.accuracy),
        report.total
    ));
    out.push_str(&format!(
        "{:>13}{:>10}{:>10}{:>10}{:>10}\n",
        "macro avg",
        cell(report.macro_avg.0),
        cell(report.macro_avg.1),
        cell(report.macro_avg.2),
        report.total
    ));
    out.push_str(&format!(
        "{:>13}{:>10}{:>10}{:>10}{:>10}\n",
        "weighted avg",
        cell(report.weighted_avg.0),
        cell(report.weighted_avg.1),
        cell(report.weighted_avg.2),
        report.total
    ));
    out
}

/// Infer-mode evaluation over rows in index order: mean BCE loss plus the
/// confusion matrix and report at the 0.5 prediction threshold.
pub fn evaluate_model(
    model: &mut SequentialModel<f32>,
    data: &DataSource,
    indices: &[usize],
    batch_size: usize,
) -> Result<(f64, ConfusionMatrix, ClassificationReport)> {
    if indices.is_empty() {
        return Err(Error::Validation("cannot evaluate an empty row set".into()));
    }
    let names = model.class_names();
    let class_names: [String; 2] = if names.len() == 2 {
        [names[0].clone(), names[1].clone()]
    } else {
        ["0".into(), "1".into()]
    };

    let mut loss_sum = 0.0;
    let mut seen = 0usize;
    let mut y_true = Vec::with_capacity(indices.len());
    let mut y_pred = Vec::with_capacity(indices.len());
    for batch in data.batches(indices, &BatchConfig::evaluation(batch_size))? {
        let batch = batch?;
        let p = model.forward(&batch.inputs, Mode::Infer, None)?;
        let (loss, _) = bce_loss(&p, &batch.targets)?;
        loss_sum += loss * batch.len() as f64;
        seen += batch.len();
        for (&pv, &yv) in p.data().iter().zip(batch.targets.data()) {
            y_pred.push(usize::from(pv > 0.5));
            y_true.push(yv as usize);
        }
    }
    let cm = ConfusionMatrix::from_labels(&y_true, &y_pred, class_names)?;
    let report = metrics(&cm);
    Ok((loss_sum / seen as f64, cm, report))
}

/// Serialize epoch records as comma-separated text with full round-trip
/// float precision.
pub fn export_history(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc,lr\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr
        ));
    }
    out
}

/// Parse text produced by [`export_history`]. Wall-clock times are not
/// serialized and come back as zero.
pub fn parse_history(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Validation("history text is empty".into()))?;
    if header != "epoch,train_loss,train_acc,val_loss,val_acc,lr" {
        return Err(Error::Validation(format!(
            "unexpected history header '{header}'"
        )));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Validation(format!(
                "history line {}: expected 6 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Validation(format!("history line {}: bad number '{s}'", i + 2)))
        };
        records.push(EpochRecord {
            epoch: num(fields[0])? as usize,
            train_loss: num(fields[1])?,
            train_acc: num(fields[2])?,
            val_loss: num(fields[3])?,
            val_acc: num(fields[4])?,
            lr: num(fields[5])?,
            wall_ms: 0,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> [String; 2] {
        ["Female".to_string(), "Male".to_string()]
    }

    /// The test-set matrix reported by the experiment: 100 class-0 samples
    /// with 7 errors, 60 class-1 samples with 13 errors.
    fn paper_cm() -> ConfusionMatrix {
        ConfusionMatrix::from_counts([[93, 7], [13, 47]], names())
    }

    #[test]
    fn confusion_matrix_from_labels() {
        let y_true = [0, 0, 0, 1, 1];
        let y_pred = [0, 0, 0, 1, 1];
        let cm = ConfusionMatrix::from_labels(&y_true, &y_pred, names()).unwrap();
        assert_eq!(cm.counts(), &[[3, 0], [0, 2]]);

        let all_one = [1usize; 5];
        let cm = ConfusionMatrix::from_labels(&y_true, &all_one, names()).unwrap();
        assert_eq!(cm.counts()[0][0], 0);
        assert_eq!(cm.counts()[1][0], 0);
    }

    #[test]
    fn test_set_counts_reconstruct() {
        let mut y_true = vec![0usize; 100];
        y_true.extend(vec![1usize; 60]);
        let mut y_pred = vec![0usize; 93];
        y_pred.extend(vec![1usize; 7]);
        y_pred.extend(vec![0usize; 13]);
        y_pred.extend(vec![1usize; 47]);
        let cm = ConfusionMatrix::from_labels(&y_true, &y_pred, names()).unwrap();
        assert_eq!(cm.counts(), paper_cm().counts());
    }

    #[test]
    fn mismatched_or_empty_labels_are_rejected() {
        assert!(ConfusionMatrix::from_labels(&[0, 1], &[0], names()).is_err());
        assert!(ConfusionMatrix::from_labels(&[], &[], names()).is_err());
        assert!(ConfusionMatrix::from_labels(&[2], &[0], names()).is_err());
    }

    #[test]
    fn report_metrics_match_direct_formulas() {
        let r = metrics(&paper_cm());
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(r.classes[0].precision, 93.0 / 106.0));
        assert!(close(r.classes[0].recall, 0.93));
        assert!(close(r.classes[0].f1, 2.0 * (93.0 / 106.0) * 0.93 / (93.0 / 106.0 + 0.93)));
        assert!(close(r.classes[1].precision, 47.0 / 54.0));
        assert!(close(r.classes[1].recall, 47.0 / 60.0));
        assert!(close(r.accuracy, 0.875));
        assert!(close(r.macro_avg.0, (93.0 / 106.0 + 47.0 / 54.0) / 2.0));
        assert!(close(
            r.weighted_avg.1,
            (0.93 * 100.0 + 47.0 / 60.0 * 60.0) / 160.0
        ));
        assert_eq!(r.classes[0].support, 100);
        assert_eq!(r.classes[1].support, 60);
    }

    #[test]
    fn perfect_diagonal_is_all_ones() {
        let cm = ConfusionMatrix::from_counts([[5, 0], [0, 3]], names());
        let r = metrics(&cm);
        for m in &r.classes {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_avg, (1.0, 1.0, 1.0));
        assert_eq!(r.weighted_avg, (1.0, 1.0, 1.0));
    }

    #[test]
    fn degenerate_harmonic_mean_is_zero() {
        // class 1: precision 1, recall 0 -> f1 = 0 is impossible (p=1 needs tp>0),
        // so exercise the defined degenerate case: no predictions and no hits
        let cm = ConfusionMatrix::from_counts([[4, 0], [2, 0]], names());
        let r = metrics(&cm);
        assert_eq!(r.classes[1].precision, 0.0);
        assert_eq!(r.classes[1].recall, 0.0);
        assert_eq!(r.classes[1].f1, 0.0);
    }

    #[test]
    fn weighted_recall_equals_accuracy() {
        for counts in [[[93, 7], [13, 47]], [[1, 9], [3, 2]], [[5, 0], [0, 0]]] {
            let r = metrics(&ConfusionMatrix::from_counts(counts, names()));
            assert!((r.weighted_avg.1 - r.accuracy).abs() < 1e-15);
        }
    }

    #[test]
    fn rendered_report_reproduces_the_reference_grid() {
        let text = render_report(&metrics(&paper_cm()));
        let line = |needle: &str| {
            text.lines()
                .find(|l| l.trim_start().starts_with(needle))
                .unwrap_or_else(|| panic!("no line starting with '{needle}' in:\n{text}"))
                .to_string()
        };
        let fields = |l: &str| l.split_whitespace().map(String::from).collect::<Vec<_>>();

        assert_eq!(fields(&line("0")), ["0", "0.88", "0.93", "0.90", "100"]);
        assert_eq!(fields(&line("1")), ["1", "0.87", "0.78", "0.82", "60"]);
        assert_eq!(fields(&line("accuracy")), ["accuracy", "0.88", "160"]);
        assert_eq!(
            fields(&line("macro avg")),
            ["macro", "avg", "0.87", "0.86", "0.86", "160"]
        );
        assert_eq!(
            fields(&line("weighted avg")),
            ["weighted", "avg", "0.87", "0.88", "0.87", "160"]
        );
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(format!("{:.2}", round2(0.875)), "0.88");
        assert_eq!(format!("{:.2}", round2(0.125)), "0.13");
        assert_eq!(format!("{:.2}", round2(-0.125)), "-0.13");
        assert_eq!(format!("{:.2}", round2(0.874999)), "0.87");
    }

    #[test]
    fn display_contains_the_counts() {
        let text = paper_cm().to_string();
        for v in ["93", "7", "13", "47"] {
            assert!(text.contains(v), "{text}");
        }
    }

    #[test]
    fn history_round_trip() {
        let records = vec![
            EpochRecord {
                epoch: 1,
                train_loss: 0.6931471805599453,
                train_acc: 0.5,
                val_loss: 0.7000000000000001,
                val_acc: 0.4375,
                lr: 1e-3,
                wall_ms: 123,
            },
            EpochRecord {
                epoch: 2,
                train_loss: 0.1,
                train_acc: 0.96875,
                val_loss: 0.2,
                val_acc: 0.875,
                lr: 5e-4,
                wall_ms: 99,
            },
        ];
        let text = export_history(&records);
        assert_eq!(text.lines().count(), 3);
        let back = parse_history(&text).unwrap();
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.epoch, b.epoch);
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.train_acc, b.train_acc);
            assert_eq!(a.val_loss, b.val_loss);
            assert_eq!(a.val_acc, b.val_acc);
            assert_eq!(a.lr, b.lr);
        }
    }

    #[test]
    fn empty_history_is_header_only() {
        let text = export_history(&[]);
        assert_eq!(text, "epoch,train_loss,train_acc,val_loss,val_acc,lr\n");
        assert!(parse_history(&text).unwrap().is_empty());
    }

    #[test]
    fn metrics_agree_with_a_brute_force_oracle() {
        let mut rng = crate::rng::Rng::new(12, 0);
        for _ in 0..20 {
            let n = 2 + rng.next_below(100) as usize;
            let y_true: Vec<usize> = (0..n).map(|_| rng.next_below(2) as usize).collect();
            let y_pred: Vec<usize> = (0..n).map(|_| rng.next_below(2) as usize).collect();
            let Ok(cm) = ConfusionMatrix::from_labels(&y_true, &y_pred, names()) else {
                continue;
            };
            let r = metrics(&cm);

            // recompute everything from the raw pairs
            for c in 0..2 {
                let tp = y_true
                    .iter()
                    .zip(&y_pred)
                    .filter(|(&t, &p)| t == c && p == c)
                    .count();
                let pred_c = y_pred.iter().filter(|&&p| p == c).count();
                let true_c = y_true.iter().filter(|&&t| t == c).count();
                let precision = if pred_c == 0 { 0.0 } else { tp as f64 / pred_c as f64 };
                let recall = if true_c == 0 { 0.0 } else { tp as f64 / true_c as f64 };
                assert!((r.classes[c].precision - precision).abs() < 1e-12);
                assert!((r.classes[c].recall - recall).abs() < 1e-12);
                assert_eq!(r.classes[c].support, true_c);
            }
            let correct = y_true.iter().zip(&y_pred).filter(|(t, p)| t == p).count();
            assert!((r.accuracy - correct as f64 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn f1_sits_between_precision_and_recall() {
        let mut rng = crate::rng::Rng::new(13, 0);
        for _ in 0..50 {
            let counts = [
                [rng.next_below(50) as usize, rng.next_below(50) as usize],
                [rng.next_below(50) as usize, rng.next_below(50) as usize],
            ];
            if counts.iter().flatten().sum::<usize>() == 0 {
                continue;
            }
            let r = metrics(&ConfusionMatrix::from_counts(counts, names()));
            for m in &r.classes {
                assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
                assert!(m.f1 >= m.precision.min(m.recall) - 1e-12 || m.f1 == 0.0);
                if (m.precision - m.recall).abs() < 1e-15 {
                    assert!((m.f1 - m.precision).abs() < 1e-12);
                }
            }
            assert_eq!(r.classes[0].support + r.classes[1].support, r.total);
        }
    }
}
