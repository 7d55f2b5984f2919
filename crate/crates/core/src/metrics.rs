//! Confusion-matrix metrics, ranked average precision and text reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::Prediction;
use crate::ops::Label;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Counts with accident as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn from_labels(predicted: &[Label], actual: &[Label]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::invalid(format!(
                "{} predictions for {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let mut c = Confusion::default();
        for (p, a) in predicted.iter().zip(actual) {
            match (p, a) {
                (Label::Accident, Label::Accident) => c.tp += 1,
                (Label::Accident, Label::Normal) => c.fp += 1,
                (Label::Normal, Label::Accident) => c.fn_ += 1,
                (Label::Normal, Label::Normal) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Zero when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

/// Average precision of a ranking: sort by descending score (ties keep
/// input order) and sum `(R_k − R_{k−1})·P_k` over the positive positions.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.is_empty() || scores.len() != positive.len() {
        return Err(Error::invalid(format!(
            "average precision needs equal nonempty inputs, got {} scores and {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("ranking score {bad}")));
    }
    let total = positive.iter().filter(|&&p| p).count();
    if total == 0 {
        return Err(Error::Data("average precision is undefined without positive examples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            ap += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(ap / total as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Macro mean of the two per-class APs.
    pub map: f64,
    pub ap_accident: f64,
    pub ap_normal: f64,
    pub confusion: Confusion,
}

impl MetricsReport {
    pub fn from_predictions(predictions: &[Prediction], labels: &[Label], threshold: f64) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::Data("cannot evaluate an empty split".into()));
        }
        let predicted: Vec<Label> = predictions.iter().map(|p| p.label(threshold)).collect();
        let confusion = Confusion::from_labels(&predicted, labels)?;
        let acc_scores: Vec<f64> = predictions.iter().map(|p| p.p_accident).collect();
        let norm_scores: Vec<f64> = predictions.iter().map(|p| p.p_normal).collect();
        let is_acc: Vec<bool> = labels.iter().map(|&l| l == Label::Accident).collect();
        let is_norm: Vec<bool> = is_acc.iter().map(|b| !b).collect();
        let ap_accident = average_precision(&acc_scores, &is_acc)?;
        let ap_normal = average_precision(&norm_scores, &is_norm)?;
        Ok(Self {
            accuracy: confusion.accuracy(),
            precision: confusion.precision(),
            recall: confusion.recall(),
            f1: confusion.f1(),
            map: (ap_accident + ap_normal) / 2.0,
            ap_accident,
            ap_normal,
            confusion,
        })
    }

    /// `#variant=` header, one `key=value` line per field, then a table row
    /// in the order precision, recall, f1, accuracy, map.
    pub fn to_report(&self, variant: &str) -> String {
        let c = &self.confusion;
        let mut s = format!("#variant={variant}\n");
        for (k, v) in [
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("accuracy", self.accuracy),
            ("map", self.map),
            ("ap_accident", self.ap_accident),
            ("ap_normal", self.ap_normal),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        for (k, v) in [("tp", c.tp), ("fp", c.fp), ("fn", c.fn_), ("tn", c.tn), ("count", c.total())] {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "{}", TABLE_HEADER);
        let _ = writeln!(s, "{}", self.table_row(variant));
        s
    }

    pub fn table_row(&self, variant: &str) -> String {
        format!(
            "| {variant} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
            self.precision, self.recall, self.f1, self.accuracy, self.map
        )
    }

    /// Inverse of [`to_report`](Self::to_report); table lines are ignored.
    pub fn parse_report(text: &str) -> Result<(String, Self)> {
        let mut variant = None;
        let mut get = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(v) = line.strip_prefix("#variant=") {
                variant = Some(v.to_string());
                continue;
            }
            if line.is_empty() || line.starts_with('|') || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                what: "metrics report",
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            get.insert(k.to_string(), v.to_string());
        }
        let f = |k: &str| -> Result<f64> {
            get.get(k)
                .ok_or_else(|| Error::Data(format!("report lacks {k}")))?
                .parse()
                .map_err(|_| Error::Data(format!("report value {k} is not a number")))
        };
        let u = |k: &str| -> Result<usize> {
            get.get(k)
                .ok_or_else(|| Error::Data(format!("report lacks {k}")))?
                .parse()
                .map_err(|_| Error::Data(format!("report value {k} is not a count")))
        };
        let report = Self {
            accuracy: f("accuracy")?,
            precision: f("precision")?,
            recall: f("recall")?,
            f1: f("f1")?,
            map: f("map")?,
            ap_accident: f("ap_accident")?,
            ap_normal: f("ap_normal")?,
            confusion: Confusion {
                tp: u("tp")?,
                fp: u("fp")?,
                fn_: u("fn")?,
                tn: u("tn")?,
            },
        };
        Ok((variant.ok_or_else(|| Error::Data("report lacks #variant".into()))?, report))
    }
}

pub const TABLE_HEADER: &str = "| variant | precision | recall | f1 | accuracy | map |";

/// Side-by-side rows for several variants, in the given order.
pub fn comparison_table(rows: &[(String, MetricsReport)]) -> String {
    let mut s = format!("{TABLE_HEADER}\n");
    for (name, r) in rows {
        s.push_str(&r.table_row(name));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_arithmetic() {
        let c = Confusion {
            tp: 8,
            fp: 2,
            fn_: 2,
            tn: 8,
        };
        for v in [c.precision(), c.recall(), c.f1(), c.accuracy()] {
            assert!((v - 0.8).abs() < 1e-12);
        }
        assert_eq!(Confusion::default().f1(), 0.0);
    }

    #[test]
    fn hand_evaluated_average_precision() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        // Reversing a palindromic ranking changes nothing.
        let rev = average_precision(&[0.7, 0.8, 0.9], &[true, false, true]).unwrap();
        assert_eq!(rev, ap);
        let late = average_precision(&[0.9, 0.8, 0.7], &[false, true, true]).unwrap();
        assert!((late - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert!(average_precision(&[0.3], &[false]).is_err());
        assert!(average_precision(&[], &[]).is_err());
    }

    #[test]
    fn ties_keep_input_order() {
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    }

    #[test]
    fn report_round_trip() {
        let preds: Vec<Prediction> = [0.9, 0.2, 0.6, 0.4]
            .iter()
            .map(|&p| Prediction {
                p_accident: p,
                p_normal: 1.0 - p,
                logits: [0.0; 2],
            })
            .collect();
        let labels = [Label::Accident, Label::Normal, Label::Normal, Label::Accident];
        let r = MetricsReport::from_predictions(&preds, &labels, 0.5).unwrap();
        let text = r.to_report("rgb_only");
        let (v, back) = MetricsReport::parse_report(&text).unwrap();
        assert_eq!(v, "rgb_only");
        assert_eq!(back, r);
        assert_eq!(comparison_table(&[("a".into(), r.clone()), ("b".into(), r)]).lines().count(), 3);
    }
}
