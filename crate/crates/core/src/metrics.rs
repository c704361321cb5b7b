use serde_json::{json, Map, Value};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Classification summary; `confusion[t][p]` counts true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    /// Derives every metric from a square confusion matrix.
    ///
    /// Precision, recall and F1 with a zero denominator are 0. Classes without
    /// support carry zero weight in the weighted F1.
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let r = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..r).map(|c| confusion[c][c]).sum();
        let per_class: Vec<ClassMetrics> = (0..r)
            .map(|c| {
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[c]).sum();
                let tp = confusion[c][c];
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        let weighted_f1 = if total == 0 {
            0.0
        } else {
            per_class.iter().map(|m| m.support as f64 * m.f1).sum::<f64>() / total as f64
        };
        Self {
            accuracy: ratio(correct, total),
            weighted_f1,
            per_class,
            confusion,
        }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], num_labels: usize) -> Self {
        let mut confusion = vec![vec![0usize; num_labels]; num_labels];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn to_json(&self, labels: &[String]) -> Value {
        let mut per_class = Map::new();
        for (name, m) in labels.iter().zip(&self.per_class) {
            per_class.insert(
                name.clone(),
                json!({
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                }),
            );
        }
        json!({
            "accuracy": self.accuracy,
            "weighted_f1": self.weighted_f1,
            "per_class": per_class,
            "confusion": self.confusion,
        })
    }

    /// Inverse of [`Metrics::to_json`]; returns `None` on schema mismatch.
    pub fn from_json(value: &Value) -> Option<(Vec<String>, Self)> {
        let confusion: Vec<Vec<usize>> = serde_json::from_value(value.get("confusion")?.clone()).ok()?;
        let labels = value
            .get("per_class")?
            .as_object()?
            .keys()
            .cloned()
            .collect();
        Some((labels, Self::from_confusion(confusion)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = Metrics::from_predictions(&[0, 1, 2, 1], &[0, 1, 2, 1], 3);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.weighted_f1, 1.0);
    }

    #[test]
    fn hand_worked_two_class_case() {
        let m = Metrics::from_confusion(vec![vec![2, 0], vec![1, 1]]);
        assert_eq!(m.accuracy, 0.75);
        assert!((m.per_class[0].f1 - 0.8).abs() < 1e-15);
        assert!((m.per_class[1].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.weighted_f1 - (2.0 * 0.8 + 2.0 * 2.0 / 3.0) / 4.0).abs() < 1e-15);
        assert!((m.weighted_f1 - 0.7333).abs() < 1e-4);
    }

    #[test]
    fn absent_class_has_zero_weight() {
        let with_absent = Metrics::from_confusion(vec![vec![2, 0, 0], vec![1, 1, 0], vec![0, 0, 0]]);
        let without = Metrics::from_confusion(vec![vec![2, 0], vec![1, 1]]);
        assert_eq!(with_absent.per_class[2].f1, 0.0);
        assert_eq!(with_absent.per_class[2].support, 0);
        assert_eq!(with_absent.weighted_f1, without.weighted_f1);
    }

    #[test]
    fn json_layout() {
        let m = Metrics::from_confusion(vec![vec![2, 0], vec![1, 1]]);
        let labels = vec!["sad".to_string(), "angry".to_string()];
        let v = m.to_json(&labels);
        let text = v.to_string();
        assert!(text.starts_with(r#"{"accuracy":0.75,"weighted_f1":"#), "{text}");
        assert!(text.find("\"sad\"").unwrap() < text.find("\"angry\"").unwrap());
        assert_eq!(v["per_class"]["angry"]["support"], 2);
        let (back_labels, back) = Metrics::from_json(&v).unwrap();
        assert_eq!(back_labels, labels);
        assert_eq!(back, m);
    }
}
