//! Classification metrics over integer class labels.

use serde::Serialize;

/// `counts[truth][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    /// Panics if a label is out of range or the slices differ in length.
    pub fn from_labels(truth: &[usize], predicted: &[usize], num_classes: usize) -> Self {
        assert_eq!(truth.len(), predicted.len(), "label slices differ in length");
        let mut m = Self::new(num_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.counts[t][p] += 1;
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    fn col_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.num_classes).map(|k| self.counts[k][k]).sum::<u64>() as f64 / total as f64
    }

    pub fn recall(&self, k: usize) -> f64 {
        ratio(self.counts[k][k], self.row_sum(k))
    }

    pub fn precision(&self, k: usize) -> f64 {
        ratio(self.counts[k][k], self.col_sum(k))
    }

    pub fn f1(&self, k: usize) -> f64 {
        let (p, r) = (self.precision(k), self.recall(k));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn macro_f1(&self) -> f64 {
        (0..self.num_classes).map(|k| self.f1(k)).sum::<f64>() / self.num_classes as f64
    }

    /// F1 averaged with class support as weights.
    pub fn weighted_f1(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.num_classes)
            .map(|k| self.f1(k) * self.row_sum(k) as f64)
            .sum::<f64>()
            / total as f64
    }

    /// Cohen's kappa.
    pub fn kappa(&self) -> f64 {
        let total = self.total() as f64;
        if total == 0.0 {
            return 0.0;
        }
        let po = self.accuracy();
        let pe = (0..self.num_classes)
            .map(|k| self.row_sum(k) as f64 * self.col_sum(k) as f64)
            .sum::<f64>()
            / (total * total);
        if pe == 1.0 {
            return if po == 1.0 { 1.0 } else { 0.0 };
        }
        (po - pe) / (1.0 - pe)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed() {
        let truth = [0, 0, 0, 1, 1, 2];
        let pred = [0, 0, 1, 1, 2, 2];
        let m = ConfusionMatrix::from_labels(&truth, &pred, 3);
        assert_eq!(m.counts, vec![vec![2, 1, 0], vec![0, 1, 1], vec![0, 0, 1]]);
        assert!((m.accuracy() - 4.0 / 6.0).abs() < 1e-12);
        assert!((m.recall(0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.precision(1) - 0.5).abs() < 1e-12);
        // f1: 0.8, 0.5, 2/3
        assert!((m.macro_f1() - (0.8 + 0.5 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        // po = 4/6, pe = (3*2 + 2*2 + 1*2)/36 = 1/3
        assert!((m.kappa() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_agreement() {
        let m = ConfusionMatrix::from_labels(&[0, 1, 1], &[0, 1, 1], 2);
        assert_eq!(m.kappa(), 1.0);
        assert_eq!(m.macro_f1(), 1.0);
        assert_eq!(m.weighted_f1(), 1.0);
    }
}
