use crate::error::{Error, Result};
use crate::graph::YearSplit;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Self {
        assert_eq!(predicted.len(), actual.len(), "prediction / label length");
        let mut c = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Zero when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Zero when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; zero whenever `tp == 0`.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * (p * r) / (p + r)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub lambda: f64,
    pub loss_trace: Vec<f64>,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion) -> Self {
        Self {
            precision: confusion.precision(),
            recall: confusion.recall(),
            f1: confusion.f1(),
            confusion,
            lambda: f64::NAN,
            loss_trace: Vec::new(),
        }
    }
}

/// Scores `logits[rows]` against `labels` (aligned with `rows`), predicting
/// positive when `σ(z) > 0.5`, i.e. `z > 0`.
pub fn evaluate(logits: &[f64], labels: &[bool], rows: &[usize]) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    assert_eq!(labels.len(), rows.len(), "one label per evaluated row");
    let predicted: Vec<bool> = rows.iter().map(|&r| logits[r] > 0.0).collect();
    Ok(EvalReport::from_confusion(Confusion::from_predictions(&predicted, labels)))
}

/// `(1 / V_all) * (E_p / (E_all - E_p)) * 100`; infinite when the split has
/// no target edges.
pub fn lambda_predictivity(split: &YearSplit) -> f64 {
    lambda_from_counts(split.node_count(), split.edge_count(), split.prior_edges.len())
}

pub fn lambda_from_counts(v_all: usize, e_all: usize, e_prior: usize) -> f64 {
    if e_all <= e_prior {
        return f64::INFINITY;
    }
    (1.0 / v_all as f64) * (e_prior as f64 / (e_all - e_prior) as f64) * 100.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let c = Confusion::from_predictions(&[true, false, true], &[true, false, true]);
        assert_eq!(c.f1(), 1.0);
    }

    #[test]
    fn half_and_half() {
        let c = Confusion {
            tp: 1,
            fp: 1,
            tn: 0,
            fn_: 1,
        };
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.5, 0.5, 0.5));
    }

    #[test]
    fn no_true_positives_is_zero() {
        let c = Confusion::from_predictions(&[false, true], &[true, false]);
        assert_eq!(c.f1(), 0.0);
        let none = Confusion::from_predictions(&[false, false], &[false, false]);
        assert_eq!((none.precision(), none.recall(), none.f1()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn evaluate_thresholds_at_zero_logit() {
        let r = evaluate(&[2.0, -1.0, 0.0, 5.0], &[true, true, false], &[0, 1, 2]).unwrap();
        assert_eq!(
            r.confusion,
            Confusion {
                tp: 1,
                fp: 0,
                tn: 1,
                fn_: 1
            }
        );
        assert!(matches!(evaluate(&[1.0], &[], &[]), Err(Error::EmptyEvaluationSet)));
    }

    #[test]
    fn lambda_examples() {
        assert!((lambda_from_counts(100, 100, 50) - 1.0).abs() < 1e-12);
        // Frozen from an independent evaluation: 100 * 3000 / (2669 * 1591).
        let icml = 0.070_648_427_754_564_54;
        assert!((lambda_from_counts(2669, 4591, 3000) - icml).abs() < 1e-12);
        assert_eq!(lambda_from_counts(10, 5, 5), f64::INFINITY);
    }
}
