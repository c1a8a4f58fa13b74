use serde::{Deserialize, Serialize};

use super::Decision;
use crate::error::{Error, Result};

pub const DEFAULT_QUANTILE: f64 = 0.995;

/// Calibrated anomaly threshold. Only obtainable from [`fit_threshold`] or
/// from a validated bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThreshold")]
pub struct ThresholdModel {
    theta: f64,
    quantile: f64,
    calibration_size: usize,
}

#[derive(Deserialize)]
struct RawThreshold {
    theta: f64,
    quantile: f64,
    calibration_size: usize,
}

impl TryFrom<RawThreshold> for ThresholdModel {
    type Error = Error;

    fn try_from(r: RawThreshold) -> Result<Self> {
        check_quantile(r.quantile)?;
        if !r.theta.is_finite() {
            return Err(Error::invalid("threshold must be finite"));
        }
        Ok(ThresholdModel {
            theta: r.theta,
            quantile: r.quantile,
            calibration_size: r.calibration_size,
        })
    }
}

fn check_quantile(q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("quantile must be in (0, 1], got {q}")));
    }
    Ok(())
}

impl ThresholdModel {
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn quantile(&self) -> f64 {
        self.quantile
    }

    pub fn calibration_size(&self) -> usize {
        self.calibration_size
    }

    /// Anomalous only when `loss` is strictly above theta.
    pub fn decide(&self, loss: f64) -> Decision {
        // NaN compares false; treat it as anomalous too
        if loss > self.theta || loss.is_nan() {
            Decision::Anomalous
        } else {
            Decision::Normal
        }
    }
}

/// Nearest-rank empirical quantile: the value at index
/// `ceil(quantile * n) - 1` of the ascending losses.
pub fn fit_threshold(benign_losses: &[f64], quantile: f64) -> Result<ThresholdModel> {
    check_quantile(quantile)?;
    if benign_losses.is_empty() {
        return Err(Error::invalid("cannot fit a threshold on an empty loss list"));
    }
    if benign_losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("calibration losses must be finite"));
    }
    let mut sorted = benign_losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // the slack keeps decimal quantiles exact, e.g. 0.07 * 100 = 7.000000000000001
    let rank = ((quantile * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    Ok(ThresholdModel {
        theta: sorted[rank - 1],
        quantile,
        calibration_size: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nearest_rank_examples() {
        let losses: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(fit_threshold(&losses, 0.95).unwrap().theta(), 95.0);
        assert_eq!(fit_threshold(&losses, 1.0).unwrap().theta(), 100.0);
        assert_eq!(fit_threshold(&[2.5; 7], 0.3).unwrap().theta(), 2.5);
        assert_eq!(fit_threshold(&losses, 0.07).unwrap().theta(), 7.0);
    }

    #[test]
    fn errors() {
        assert!(fit_threshold(&[], 0.9).is_err());
        assert!(fit_threshold(&[1.0], 0.0).is_err());
        assert!(fit_threshold(&[1.0], 1.5).is_err());
        assert!(fit_threshold(&[f64::INFINITY], 0.5).is_err());
    }

    #[test]
    fn equality_is_normal() {
        let t = fit_threshold(&[1.0, 2.0, 3.0], 1.0).unwrap();
        assert_eq!(t.decide(3.0), Decision::Normal);
        assert_eq!(t.decide(3.0 + 1e-12), Decision::Anomalous);
        assert_eq!(t.decide(f64::INFINITY), Decision::Anomalous);
    }

    #[test]
    fn infinite_theta_rejected_on_load() {
        let json = r#"{"theta":1e400,"quantile":0.5,"calibration_size":3}"#;
        assert!(serde_json::from_str::<ThresholdModel>(json).is_err());
        let ok = r#"{"theta":1.5,"quantile":0.5,"calibration_size":3}"#;
        assert_eq!(serde_json::from_str::<ThresholdModel>(ok).unwrap().theta(), 1.5);
    }

    proptest! {
        #[test]
        fn monotone_in_quantile(
            losses in prop::collection::vec(0.0f64..10.0, 1..60),
            q1 in 0.01f64..1.0,
            q2 in 0.01f64..1.0,
            probe in 0.0f64..10.0,
        ) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let a = fit_threshold(&losses, lo).unwrap();
            let b = fit_threshold(&losses, hi).unwrap();
            prop_assert!(a.theta() <= b.theta());
            if a.decide(probe) == Decision::Normal {
                prop_assert_eq!(b.decide(probe), Decision::Normal);
            }
        }
    }
}
