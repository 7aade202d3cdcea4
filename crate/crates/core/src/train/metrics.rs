use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fieldio::FieldDataset;
use crate::mpinn::MpinnModel;

/// Error summary of a prediction against reference values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub mse: f64,
    pub rmse: f64,
    /// `||pred - truth||_2 / ||truth||_2`; `None` when the truth is all zero.
    pub rel_l2: Option<f64>,
    pub max_abs_err: f64,
    pub n: usize,
}

impl Metrics {
    pub fn from_predictions(pred: &[f64], truth: &[f64]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Dimension {
                context: "metrics".into(),
                expected: truth.len(),
                got: pred.len(),
            });
        }
        if truth.is_empty() {
            return Err(Error::InvalidDataset("no values to compare".into()));
        }
        let mut sq = 0.0;
        let mut truth_sq = 0.0;
        let mut max_abs: f64 = 0.0;
        for (p, t) in pred.iter().zip(truth) {
            let e = p - t;
            sq += e * e;
            truth_sq += t * t;
            max_abs = max_abs.max(e.abs());
        }
        let n = truth.len();
        let mse = sq / n as f64;
        Ok(Metrics {
            mse,
            rmse: mse.sqrt(),
            rel_l2: (truth_sq > 0.0).then(|| (sq / truth_sq).sqrt()),
            max_abs_err: max_abs,
            n,
        })
    }
}

/// Single-line `key=value` form, e.g. for log scraping.
impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} mse={} rmse={} rel_l2=",
            self.n, self.mse, self.rmse
        )?;
        match self.rel_l2 {
            Some(r) => write!(f, "{r}")?,
            None => write!(f, "undefined")?,
        }
        write!(f, " max_abs_err={}", self.max_abs_err)
    }
}

/// Metrics of the model's high-fidelity prediction on the truth's own nodes.
pub fn evaluate(model: &MpinnModel, truth: &FieldDataset) -> Result<Metrics> {
    let pred = model.predict_field(truth.nodes())?;
    Metrics::from_predictions(pred.values(), truth.values())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let m = Metrics::from_predictions(&[1.0, -2.0], &[1.0, -2.0]).unwrap();
        assert_eq!(
            (m.mse, m.rmse, m.rel_l2, m.max_abs_err, m.n),
            (0.0, 0.0, Some(0.0), 0.0, 2)
        );
    }

    #[test]
    fn zero_prediction_has_unit_relative_error() {
        let m = Metrics::from_predictions(&[0.0; 3], &[3.0, -4.0, 12.0]).unwrap();
        assert_eq!(m.rel_l2, Some(1.0));
        assert_eq!(m.max_abs_err, 12.0);
    }

    #[test]
    fn matches_direct_formulas() {
        let pred = [1.5, 2.0, -0.25, 4.0];
        let truth = [1.0, 2.5, 0.25, 3.0];
        let m = Metrics::from_predictions(&pred, &truth).unwrap();
        // errors: 0.5, -0.5, -0.5, 1.0
        assert_eq!(m.mse, (0.25 + 0.25 + 0.25 + 1.0) / 4.0);
        assert_eq!(m.rmse, (1.75f64 / 4.0).sqrt());
        let truth_norm = (1.0f64 + 6.25 + 0.0625 + 9.0).sqrt();
        assert!((m.rel_l2.unwrap() - 1.75f64.sqrt() / truth_norm).abs() < 1e-15);
        assert_eq!(m.max_abs_err, 1.0);
    }

    #[test]
    fn zero_truth_leaves_relative_error_undefined() {
        let m = Metrics::from_predictions(&[1.0], &[0.0]).unwrap();
        assert_eq!(m.rel_l2, None);
        assert!(m.to_string().contains("rel_l2=undefined"));
        assert!(Metrics::from_predictions(&[], &[]).is_err());
        assert!(Metrics::from_predictions(&[1.0], &[1.0, 2.0]).is_err());
    }
}
