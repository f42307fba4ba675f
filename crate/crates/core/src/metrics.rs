//! Confusion matrices and the OA / AA / Kappa summary.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts indexed `[true][predicted]`, classes 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.len();
        let mut cm = Self::new(classes);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != classes {
                return Err(Error::Metrics(format!("row {t} has {} entries, expected {classes}", row.len())));
            }
            cm.counts[t * classes..][..classes].copy_from_slice(row);
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.classes;
        if truth >= k || predicted >= k {
            return Err(Error::LabelOutOfRange {
                label: truth.max(predicted) + 1,
                classes: k,
            });
        }
        self.counts[truth * k + predicted] += 1;
        Ok(())
    }

    /// Elementwise sum, for combining shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Metrics(format!(
                "cannot merge {}-class matrix into {}-class matrix",
                other.classes, self.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..][..self.classes].iter().sum()
    }

    pub fn col_total(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, predicted)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    /// Recall of each true class; `None` for classes with no samples.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|k| match self.row_total(k) {
                0 => None,
                n => Some(self.get(k, k) as f64 / n as f64),
            })
            .collect()
    }

    pub fn metrics(&self) -> Result<Metrics> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Metrics("confusion matrix is empty".into()));
        }
        let recalls = self.recalls();
        if let Some(k) = recalls.iter().position(Option::is_none) {
            return Err(Error::Metrics(format!("class {} has no samples, average accuracy undefined", k + 1)));
        }
        let n = total as f64;
        let oa = self.trace() as f64 / n;
        let aa = recalls.iter().flatten().sum::<f64>() / self.classes as f64;
        let chance: u128 = (0..self.classes)
            .map(|k| self.row_total(k) as u128 * self.col_total(k) as u128)
            .sum();
        // (oa - pe) / (1 - pe) scaled by total^2, so only the last division rounds.
        let t = total as i128;
        let agree = (t * self.trace() as i128 - chance as i128) as f64;
        let spread = (t * t - chance as i128) as f64;
        // spread == 0 only when every sample sits in one cell of one class,
        // which is perfect agreement.
        let kappa = if spread == 0.0 { 1.0 } else { agree / spread };
        Ok(Metrics { oa, aa, kappa })
    }

    /// Per-class recall table with an OA / AA / Kappa footer, in percent.
    pub fn report(&self) -> Result<String> {
        let m = self.metrics()?;
        let mut out = String::new();
        let _ = writeln!(out, "{:>6}  {:>8}  {:>8}  {:>10}", "class", "correct", "samples", "recall(%)");
        for (k, r) in self.recalls().iter().enumerate() {
            let _ = writeln!(
                out,
                "{:>6}  {:>8}  {:>8}  {:>10.2}",
                k + 1,
                self.get(k, k),
                self.row_total(k),
                r.unwrap_or(0.0) * 100.0
            );
        }
        let _ = writeln!(out, "{:>6}  {:>8}  {:>8}  {:>10.2}", "OA", self.trace(), self.total(), m.oa * 100.0);
        let _ = writeln!(out, "{:>6}  {:>8}  {:>8}  {:>10.2}", "AA", "", "", m.aa * 100.0);
        let _ = writeln!(out, "{:>6}  {:>8}  {:>8}  {:>10.2}", "Kappa", "", "", m.kappa * 100.0);
        Ok(out)
    }

    /// `class,recall` rows followed by `oa`, `aa`, `kappa` rows, as fractions.
    pub fn metrics_csv(&self) -> Result<String> {
        let m = self.metrics()?;
        let mut out = String::from("key,value\n");
        for (k, r) in self.recalls().iter().enumerate() {
            let _ = writeln!(out, "class_{},{}", k + 1, r.unwrap_or(0.0));
        }
        let _ = writeln!(out, "oa,{}\naa,{}\nkappa,{}", m.oa, m.aa, m.kappa);
        Ok(out)
    }

    /// Raw counts, one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for k in 0..self.classes {
            let _ = write!(out, ",{}", k + 1);
        }
        out.push('\n');
        for t in 0..self.classes {
            let _ = write!(out, "{}", t + 1);
            for p in 0..self.classes {
                let _ = write!(out, ",{}", self.get(t, p));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows: Vec<Vec<u64>> = text
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .skip(1)
                    .map(|v| v.trim().parse().map_err(|_| Error::Metrics(format!("bad count `{v}`"))))
                    .collect()
            })
            .collect::<Result<_>>()?;
        Self::from_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_perfect() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 1]]).unwrap();
        assert_eq!(cm.metrics().unwrap(), Metrics { oa: 1.0, aa: 1.0, kappa: 1.0 });
    }

    #[test]
    fn chance_level() {
        let m = ConfusionMatrix::from_rows(&[vec![25, 25], vec![25, 25]]).unwrap().metrics().unwrap();
        assert_eq!((m.oa, m.kappa), (0.5, 0.0));
    }

    #[test]
    fn worked_example() {
        let m = ConfusionMatrix::from_rows(&[vec![40, 10], vec![20, 30]]).unwrap().metrics().unwrap();
        assert!((m.oa - 0.7).abs() < 1e-15);
        assert!((m.aa - 0.7).abs() < 1e-15);
        assert_eq!((m.oa, m.aa, m.kappa), (0.7, 0.7, 0.4));
    }

    #[test]
    fn single_class_has_unit_kappa() {
        let m = ConfusionMatrix::from_rows(&[vec![7]]).unwrap().metrics().unwrap();
        assert_eq!(m, Metrics { oa: 1.0, aa: 1.0, kappa: 1.0 });
    }

    #[test]
    fn errors() {
        assert!(ConfusionMatrix::new(3).metrics().is_err());
        let cm = ConfusionMatrix::from_rows(&[vec![4, 0], vec![0, 0]]).unwrap();
        assert!(matches!(cm.metrics(), Err(Error::Metrics(_))));
        assert!(ConfusionMatrix::new(2).add(2, 0).is_err());
        assert!(ConfusionMatrix::new(2).merge(&ConfusionMatrix::new(3)).is_err());
    }

    #[test]
    fn merge_adds_counts() {
        let mut a = ConfusionMatrix::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
        a.merge(&ConfusionMatrix::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap()).unwrap();
        assert_eq!(a, ConfusionMatrix::from_rows(&[vec![2, 2], vec![3, 5]]).unwrap());
    }

    #[test]
    fn csv_round_trip_and_report() {
        let cm = ConfusionMatrix::from_rows(&[vec![40, 10], vec![20, 30]]).unwrap();
        assert_eq!(ConfusionMatrix::from_csv(&cm.to_csv()).unwrap(), cm);
        let report = cm.report().unwrap();
        assert!(report.contains("80.00"), "{report}");
        assert!(report.lines().any(|l| l.trim_start().starts_with("Kappa") && l.ends_with("40.00")));
        assert!(cm.metrics_csv().unwrap().contains("oa,0.7"));
    }
}
