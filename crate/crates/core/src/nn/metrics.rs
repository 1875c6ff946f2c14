use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// Binary classification metrics with malicious as the positive class.
/// Zero denominators yield 0 (e.g. precision is 0 when nothing is predicted positive).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
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

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            f1,
            tp,
            fp,
            tn,
            fn_,
        }
    }

    /// Counts from (predicted, actual) class indices, 1 = malicious.
    pub fn from_predictions<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (pred, actual) in pairs {
            match (pred == 1, actual == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `accuracy,f1,precision,recall,tp,fp,tn,fn` header plus one row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "accuracy",
            "f1",
            "precision",
            "recall",
            "tp",
            "fp",
            "tn",
            "fn",
        ])?;
        w.write_record([
            format!("{:.6}", self.accuracy),
            format!("{:.6}", self.f1),
            format!("{:.6}", self.precision),
            format!("{:.6}", self.recall),
            self.tp.to_string(),
            self.fp.to_string(),
            self.tn.to_string(),
            self.fn_.to_string(),
        ])?;
        w.flush().map_err(|e| crate::Error::Csv(e.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counts() {
        let m = Metrics::from_counts(3, 1, 5, 1);
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 0.75).abs() < 1e-12);
        assert!((m.f1 - 0.75).abs() < 1e-12);
        assert!((m.accuracy - 0.8).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_all_benign() {
        let perfect = Metrics::from_predictions([(1, 1), (0, 0), (1, 1), (0, 0)]);
        assert_eq!(
            (
                perfect.accuracy,
                perfect.precision,
                perfect.recall,
                perfect.f1
            ),
            (1.0, 1.0, 1.0, 1.0)
        );
        let benign = Metrics::from_predictions([(0, 1), (0, 0), (0, 1), (0, 0)]);
        assert_eq!(benign.recall, 0.0);
        assert_eq!(benign.precision, 0.0);
        assert_eq!(benign.accuracy, 0.5);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        Metrics::from_counts(3, 1, 5, 1)
            .write_csv(&mut buf)
            .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "accuracy,f1,precision,recall,tp,fp,tn,fn\n0.800000,0.750000,0.750000,0.750000,3,1,5,1\n"
        );
    }
}
