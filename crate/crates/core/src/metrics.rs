//! Regression metrics, computed per state variable in physical units.
//!
//! MAPE is reported in percent and RMSPE as a plain ratio. Both divide by the
//! truth value with no guard, so a zero in the truth gives `inf`.

use std::fmt;

use thiserror::Error;

use crate::integrate::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("series lengths differ: prediction {pred}, truth {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("need at least 2 points, got {0}")]
    TooShort(usize),
    #[error("truth series is constant; R² is undefined")]
    ConstantTruth,
}

/// The seven statistics for one variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarMetrics {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub mape_percent: f64,
    pub rmspe: f64,
    /// `None` when the truth is constant.
    pub r2: Option<f64>,
    pub max_err: f64,
}

impl VarMetrics {
    pub fn r2_value(&self) -> Result<f64, MetricsError> {
        self.r2.ok_or(MetricsError::ConstantTruth)
    }
}

/// Formats an R² cell; constant truth becomes `undefined`.
pub fn format_r2(r2: Option<f64>) -> String {
    match r2 {
        Some(x) => format!("{x}"),
        None => "undefined".to_string(),
    }
}

pub fn compute_metrics(pred: &[f64], truth: &[f64]) -> Result<VarMetrics, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    let n = truth.len();
    if n < 2 {
        return Err(MetricsError::TooShort(n));
    }
    let nf = n as f64;
    let mean_truth = truth.iter().sum::<f64>() / nf;
    let (mut ss_res, mut abs, mut pct, mut pct_sq, mut max_err, mut ss_tot) = (0.0, 0.0, 0.0, 0.0, 0.0f64, 0.0);
    for (&p, &y) in pred.iter().zip(truth) {
        let e = y - p;
        ss_res += e * e;
        abs += e.abs();
        max_err = max_err.max(e.abs());
        let rel = e / y;
        pct += rel.abs();
        pct_sq += rel * rel;
        let d = y - mean_truth;
        ss_tot += d * d;
    }
    let mse = ss_res / nf;
    let constant = truth.iter().all(|&y| y == truth[0]);
    Ok(VarMetrics {
        mse,
        rmse: mse.sqrt(),
        mae: abs / nf,
        mape_percent: 100.0 * pct / nf,
        rmspe: (pct_sq / nf).sqrt(),
        r2: if constant { None } else { Some(1.0 - ss_res / ss_tot) },
        max_err,
    })
}

/// Metrics for both variables of a trajectory pair plus run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub v: VarMetrics,
    pub n: VarMetrics,
    pub total_mse: f64,
    pub n_points: usize,
    pub wall_time_s: f64,
    pub epochs: usize,
    pub method: String,
    pub regime: String,
}

impl MetricsReport {
    pub fn new(pred: &Trajectory, truth: &Trajectory) -> Result<Self, MetricsError> {
        if pred.len() != truth.len() {
            return Err(MetricsError::LengthMismatch { pred: pred.len(), truth: truth.len() });
        }
        let v = compute_metrics(&pred.voltages(), &truth.voltages())?;
        let n = compute_metrics(&pred.gates(), &truth.gates())?;
        Ok(MetricsReport {
            v,
            n,
            total_mse: v.mse + n.mse,
            n_points: truth.len(),
            wall_time_s: 0.0,
            epochs: 0,
            method: String::new(),
            regime: String::new(),
        })
    }

    pub fn with_run(mut self, method: &str, regime: &str, epochs: usize, wall_time_s: f64) -> Self {
        self.method = method.to_string();
        self.regime = regime.to_string();
        self.epochs = epochs;
        self.wall_time_s = wall_time_s;
        self
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {} epochs={} points={}", self.method, self.regime, self.epochs, self.n_points)?;
        for (name, m) in [("V", &self.v), ("N", &self.n)] {
            writeln!(
                f,
                "  {name}: mse={:.4e} rmse={:.4e} mae={:.4e} mape={:.4e}% rmspe={:.4e} r2={} max={:.4e}",
                m.mse,
                m.rmse,
                m.mae,
                m.mape_percent,
                m.rmspe,
                format_r2(m.r2),
                m.max_err
            )?;
        }
        write!(f, "  total_mse={:.4e} time={:.2}s", self.total_mse, self.wall_time_s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let y = [1.0, -2.0, 3.5, 0.25];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!((m.mse, m.rmse, m.mae, m.max_err, m.mape_percent, m.rmspe), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(m.r2, Some(1.0));
    }

    #[test]
    fn hand_example() {
        let m = compute_metrics(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((m.mse - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.mae - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.max_err, 1.0);
        assert!((m.r2.unwrap() - 0.5).abs() < 1e-15);
        assert!((m.mape_percent - 100.0 / 9.0).abs() < 1e-12);
        assert!((m.rmspe - (1.0f64 / 27.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mean_prediction_has_zero_r2() {
        let truth = [2.0, 4.0, 9.0, -1.0];
        let pred = [3.5; 4];
        assert!(compute_metrics(&pred, &truth).unwrap().r2.unwrap().abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(compute_metrics(&[1.0], &[1.0, 2.0]), Err(MetricsError::LengthMismatch { pred: 1, truth: 2 }));
        assert_eq!(compute_metrics(&[1.0], &[1.0]), Err(MetricsError::TooShort(1)));
        let m = compute_metrics(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!(m.r2, None);
        assert_eq!(m.r2_value(), Err(MetricsError::ConstantTruth));
        let z = compute_metrics(&[1.0, 2.0], &[0.0, 2.0]).unwrap();
        assert!(z.mape_percent.is_infinite() && z.rmspe.is_infinite());
    }

    #[test]
    fn percentage_errors_are_asymmetric() {
        let a = [1.0, 2.0];
        let b = [2.0, 4.0];
        let ab = compute_metrics(&a, &b).unwrap();
        let ba = compute_metrics(&b, &a).unwrap();
        assert_eq!(ab.mse, ba.mse);
        assert_eq!(ab.mae, ba.mae);
        assert_eq!(ab.max_err, ba.max_err);
        assert!((ab.mape_percent - 50.0).abs() < 1e-12);
        assert!((ba.mape_percent - 100.0).abs() < 1e-12);
        assert_ne!(ab.rmspe, ba.rmspe);
    }

    fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0f64..100.0, n),
                prop::collection::vec(prop_oneof![-100.0f64..-0.5, 0.5f64..100.0], n),
            )
        })
    }

    proptest! {
        #[test]
        fn structural_invariants((pred, truth) in series()) {
            let m = compute_metrics(&pred, &truth).unwrap();
            prop_assert!((m.rmse - m.mse.sqrt()).abs() <= 1e-12 * m.rmse.max(1.0));
            prop_assert!(m.max_err >= m.mae && m.mae >= 0.0);
            prop_assert!(m.r2.unwrap() <= 1.0);
            let s = compute_metrics(&truth, &pred).unwrap();
            prop_assert!((s.mse - m.mse).abs() <= 1e-12 * m.mse.max(1.0));
            prop_assert_eq!(s.max_err, m.max_err);
        }

        #[test]
        fn scaling_behaviour((pred, truth) in series(), k in 0.1f64..10.0) {
            let m = compute_metrics(&pred, &truth).unwrap();
            let sp: Vec<f64> = pred.iter().map(|x| x * k).collect();
            let st: Vec<f64> = truth.iter().map(|x| x * k).collect();
            let s = compute_metrics(&sp, &st).unwrap();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12);
            prop_assert!(close(s.rmse, k * m.rmse));
            prop_assert!(close(s.mae, k * m.mae));
            prop_assert!(close(s.max_err, k * m.max_err));
            prop_assert!(close(s.r2.unwrap(), m.r2.unwrap()));
            prop_assert!(close(s.mape_percent, m.mape_percent));
            prop_assert!(close(s.rmspe, m.rmspe));
        }
    }
}
