use serde::{Deserialize, Serialize};

use super::PipelineError;

/// Classification metrics derived from a confusion matrix whose rows are true
/// classes and columns predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    /// `P = TP/(TP+FP)`, `R = TP/(TP+FN)`, `F1 = 2PR/(P+R)`; a ratio with a
    /// zero denominator is 0, as is F1 when `P + R = 0`.
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self, PipelineError> {
        let k = confusion.len();
        if k == 0 || confusion.iter().any(|r| r.len() != k) {
            return Err(PipelineError::Data(
                "confusion matrix must be square and non-empty".into(),
            ));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(PipelineError::Data("confusion matrix is empty".into()));
        }
        let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let mut precision = Vec::with_capacity(k);
        let mut recall = Vec::with_capacity(k);
        let mut f1 = Vec::with_capacity(k);
        for c in 0..k {
            let tp = confusion[c][c];
            let predicted: u64 = (0..k).map(|r| confusion[r][c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            let p = if predicted == 0 {
                0.0
            } else {
                tp as f64 / predicted as f64
            };
            let r = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
            precision.push(p);
            recall.push(r);
            f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        }
        let macro_f1 = f1.iter().sum::<f64>() / k as f64;
        Ok(Self {
            accuracy: trace as f64 / total as f64,
            precision,
            recall,
            f1,
            macro_f1,
            confusion,
        })
    }

    pub fn from_predictions(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<Self, PipelineError> {
        if truth.len() != pred.len() {
            return Err(PipelineError::Data("truth and predictions differ in length".into()));
        }
        let mut confusion = vec![vec![0u64; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= n_classes || p >= n_classes {
                return Err(PipelineError::Data(format!(
                    "label out of range for {n_classes} classes"
                )));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let m = MetricsReport::from_confusion(vec![vec![1, 1], vec![0, 1]]).unwrap();
        assert_eq!(m.precision, vec![1.0, 0.5]);
        assert_eq!(m.recall, vec![0.5, 1.0]);
        assert!((m.f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let m = MetricsReport::from_predictions(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!((m.accuracy, m.macro_f1), (1.0, 1.0));
        let m = MetricsReport::from_predictions(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.f1[1], 0.0);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(MetricsReport::from_confusion(vec![]).is_err());
        assert!(MetricsReport::from_confusion(vec![vec![0, 0], vec![0, 0]]).is_err());
        assert!(MetricsReport::from_confusion(vec![vec![1], vec![0, 1]]).is_err());
        assert!(MetricsReport::from_predictions(&[0], &[2], 2).is_err());
    }
}
