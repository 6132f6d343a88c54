use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Pixel counts; rows are actual classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::Shape(format!("{} counts for {num_classes} classes", counts.len())));
        }
        Ok(Self { num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.num_classes + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    fn check(&self, id: u8) -> Result<usize> {
        let id = id as usize;
        if id >= self.num_classes {
            return Err(Error::ClassOutOfRange {
                id,
                num_classes: self.num_classes,
            });
        }
        Ok(id)
    }

    pub fn add(&mut self, actual: u8, predicted: u8) -> Result<()> {
        let (a, p) = (self.check(actual)?, self.check(predicted)?);
        self.counts[a * self.num_classes + p] += 1;
        Ok(())
    }

    pub fn accumulate(&mut self, actual: &[u8], predicted: &[u8]) -> Result<()> {
        if actual.len() != predicted.len() {
            return Err(Error::Shape(format!("{} labels vs {} predictions", actual.len(), predicted.len())));
        }
        for (&a, &p) in actual.iter().zip(predicted) {
            self.add(a, p)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.get(c, c)).sum()
    }

    /// Per-class actual totals `a_c`.
    pub fn actual_totals(&self) -> Vec<u64> {
        (0..self.num_classes).map(|r| (0..self.num_classes).map(|c| self.get(r, c)).sum()).collect()
    }

    /// Per-class predicted totals `b_c`.
    pub fn predicted_totals(&self) -> Vec<u64> {
        (0..self.num_classes).map(|c| (0..self.num_classes).map(|r| self.get(r, c)).sum()).collect()
    }

    /// The matrix without pixels whose actual class is in `ignore`.
    pub fn without_actual(&self, ignore: &[usize]) -> Self {
        let mut out = self.clone();
        for &r in ignore.iter().filter(|&&r| r < self.num_classes) {
            for c in 0..self.num_classes {
                out.counts[r * self.num_classes + c] = 0;
            }
        }
        out
    }
}

/// Accuracy, agreement and per-class scores derived from a confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub oa: f64,
    pub kappa: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// One-vs-rest F1 per class.
    pub f1: Vec<f64>,
    /// Mean F1 over classes not ignored.
    pub macro_f1: f64,
    pub support: Vec<u64>,
    pub total: u64,
    pub ignored: Vec<usize>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricReport {
    /// Pixels whose actual class is in `ignore` are dropped before scoring.
    /// A class absent from both truth and prediction has nothing to get wrong
    /// and scores F1 = 1. If chance agreement is total, Kappa is 1 for a
    /// perfect matrix and 0 otherwise.
    pub fn from_confusion(cm: &ConfusionMatrix, ignore: &[usize]) -> Self {
        let cm = cm.without_actual(ignore);
        let n = cm.total();
        let k = cm.num_classes();
        let a = cm.actual_totals();
        let b = cm.predicted_totals();
        let oa = ratio(cm.trace(), n);
        let nf = n as f64;
        let pe = if n == 0 {
            0.0
        } else {
            a.iter().zip(&b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() / (nf * nf)
        };
        let kappa = if (1.0 - pe).abs() < f64::EPSILON {
            if oa == 1.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (oa - pe) / (1.0 - pe)
        };
        let mut precision = Vec::with_capacity(k);
        let mut recall = Vec::with_capacity(k);
        let mut f1 = Vec::with_capacity(k);
        for c in 0..k {
            let tp = cm.get(c, c);
            let (p, r) = (ratio(tp, b[c]), ratio(tp, a[c]));
            precision.push(p);
            recall.push(r);
            f1.push(if a[c] == 0 && b[c] == 0 {
                1.0
            } else if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            });
        }
        let kept: Vec<usize> = (0..k).filter(|c| !ignore.contains(c)).collect();
        let macro_f1 = kept.iter().map(|&c| f1[c]).sum::<f64>() / kept.len().max(1) as f64;
        Self {
            oa,
            kappa,
            precision,
            recall,
            f1,
            macro_f1,
            support: a,
            total: n,
            ignored: ignore.to_vec(),
        }
    }

    /// One row per class and a final `all` row with the summary metrics.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,support,precision,recall,f1,oa,kappa\n");
        for c in 0..self.f1.len() {
            let tag = if self.ignored.contains(&c) { " (ignored)" } else { "" };
            let _ = writeln!(
                s,
                "{c}{tag},{},{},{},{},,",
                self.support[c], self.precision[c], self.recall[c], self.f1[c]
            );
        }
        let _ = writeln!(s, "all,{},,,{},{},{}", self.total, self.macro_f1, self.oa, self.kappa);
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "pixels  {}\nOA      {:.4}\nKappa   {:.4}\nmacroF1 {:.4}\n",
            self.total, self.oa, self.kappa, self.macro_f1
        );
        for (c, f) in self.f1.iter().enumerate() {
            let _ = writeln!(s, "F1[{c}]   {f:.4}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_two_class_matrix() {
        let cm = ConfusionMatrix::from_counts(2, vec![40, 10, 20, 30]).unwrap();
        let r = MetricReport::from_confusion(&cm, &[]);
        assert!((r.oa - 0.70).abs() < 1e-12);
        assert!((r.kappa - 0.40).abs() < 1e-12);
        assert!((r.f1[0] - 8.0 / 11.0).abs() < 1e-12);
        assert!((r.f1[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[0, 0, 1, 2, 2, 2], &[0, 0, 1, 2, 2, 2]).unwrap();
        let r = MetricReport::from_confusion(&cm, &[]);
        assert_eq!((r.oa, r.kappa), (1.0, 1.0));
        assert!(r.f1.iter().all(|&f| f == 1.0));
        let mut one = ConfusionMatrix::new(2);
        one.accumulate(&[1, 1], &[1, 1]).unwrap();
        assert_eq!(MetricReport::from_confusion(&one, &[]).kappa, 1.0);
    }

    #[test]
    fn rejects_out_of_range_ids() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(matches!(cm.add(2, 0), Err(Error::ClassOutOfRange { id: 2, num_classes: 2 })));
    }

    #[test]
    fn ignore_list_drops_actual_pixels() {
        let cm = ConfusionMatrix::from_counts(3, vec![5, 0, 1, 0, 4, 0, 3, 3, 3]).unwrap();
        let r = MetricReport::from_confusion(&cm, &[2]);
        assert_eq!(r.total, 10);
        assert!((r.oa - 0.9).abs() < 1e-12);
        assert!(r.to_csv().contains("2 (ignored)"));
    }
}
