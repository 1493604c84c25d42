//! Precision / recall / F1 shared by the classifier and matcher evaluations.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Standard definitions; any ratio with a zero denominator is 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    pub fn add(&self, other: &Prf) -> Prf {
        Prf::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)
    }

    /// `P=0.64, R=0.64, F1=0.64`
    pub fn summary(&self) -> String {
        format!("P={:.2}, R={:.2}, F1={:.2}", self.precision, self.recall, self.f1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reported_operating_point() {
        let m = Prf::from_counts(16, 9, 9);
        assert!((m.precision - 0.64).abs() < 1e-12);
        assert!((m.recall - 0.64).abs() < 1e-12);
        assert!((m.f1 - 0.64).abs() < 1e-12);
        assert_eq!(m.summary(), "P=0.64, R=0.64, F1=0.64");
    }

    #[test]
    fn degenerate_counts() {
        let m = Prf::from_counts(0, 0, 5);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = Prf::from_counts(0, 0, 0);
        assert_eq!(m.f1, 0.0);
    }
}
