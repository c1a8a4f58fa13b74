//! Confusion counts, detection rates, ROC curves and AUC. Attack is the
//! positive class.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Tallies predictions against truth (`true` = attack).
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::invalid("prediction and label counts differ"));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    /// Predicts attack when `score > threshold`.
    pub fn at_threshold(scores: &[f64], actual: &[bool], threshold: f64) -> Result<Self> {
        let predicted: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
        Self::from_predictions(&predicted, actual)
    }
}

/// Which rate denominators were zero (the rate is then reported as 0).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroDenominators {
    pub tpr: bool,
    pub fpr: bool,
    pub precision: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
    pub recall: f64,
    pub undefined: ZeroDenominators,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// TPR = TP/(TP+FN), FPR = FP/(FP+TN), precision = TP/(TP+FP), recall = TPR.
pub fn rates(c: &ConfusionCounts) -> Rates {
    let (tpr, z_tpr) = ratio(c.tp, c.tp + c.fn_);
    let (fpr, z_fpr) = ratio(c.fp, c.fp + c.tn);
    let (precision, z_prec) = ratio(c.tp, c.tp + c.fp);
    Rates {
        tpr,
        fpr,
        precision,
        recall: tpr,
        undefined: ZeroDenominators {
            tpr: z_tpr,
            fpr: z_fpr,
            precision: z_prec,
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    /// Scores strictly above this are called attacks.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Step ROC curve over every distinct score.
///
/// The first point uses a `+inf` threshold (nothing positive). Each further
/// threshold is the next distinct score in descending order, so the point
/// for it counts every item scoring strictly above it; the last point uses
/// `-inf` (everything positive). Tied scores therefore share one point.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::invalid("scores and labels must be non-empty and equal length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores must not be NaN"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("roc_curve needs both attack and benign labels"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut threshold = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        points.push(RocPoint {
            threshold: if points.is_empty() { f64::INFINITY } else { threshold },
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        threshold = order.get(i).map_or(f64::NEG_INFINITY, |&j| scores[j]);
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    Ok(RocCurve { points })
}

/// Trapezoidal area under the curve.
pub fn auc(r: &RocCurve) -> f64 {
    r.points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{t:.6}")
    }
}

/// CSV with header `threshold,fpr,tpr`, six decimals per value.
pub fn write_roc_csv(r: &RocCurve, mut out: impl Write) -> Result<()> {
    writeln!(out, "threshold,fpr,tpr")?;
    for p in &r.points {
        writeln!(out, "{},{:.6},{:.6}", fmt_threshold(p.threshold), p.fpr, p.tpr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Probability that a random attack outscores a random benign item,
    /// ties counting half. Equals the trapezoidal ROC area.
    fn rank_auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if si > sj {
                        wins += 1.0;
                    } else if si == sj {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn reported_counts() {
        let r = rates(&ConfusionCounts {
            tp: 1097,
            fn_: 0,
            fp: 7,
            tn: 2193,
        });
        assert_eq!(r.tpr, 1.0);
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.fpr, 7.0 / 2200.0);
        assert_eq!((r.fpr * 10_000.0).round() / 10_000.0, 0.0032);
    }

    #[test]
    fn zero_denominator_flagged() {
        let r = rates(&ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 5,
            fn_: 3,
        });
        assert_eq!(r.precision, 0.0);
        assert!(r.undefined.precision);
        assert!(!r.undefined.tpr);
        let r = rates(&ConfusionCounts::default());
        assert!(r.undefined.tpr && r.undefined.fpr && r.undefined.precision);
    }

    #[test]
    fn perfect_separation() {
        let r = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert!(r.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(auc(&r), 1.0);
    }

    #[test]
    fn identical_scores_give_diagonal() {
        let r = roc_curve(&[0.4; 6], &[true, false, true, false, false, true]).unwrap();
        let pts: Vec<_> = r.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auc(&r), 0.5);
    }

    #[test]
    fn four_score_example_points() {
        let scores = [0.9, 0.8, 0.7, 0.6];
        let labels = [true, false, true, false];
        let r = roc_curve(&scores, &labels).unwrap();
        let pts: Vec<_> = r.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(
            pts,
            vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
        );
        let thresholds: Vec<_> = r.points.iter().map(|p| p.threshold).collect();
        assert_eq!(thresholds, vec![f64::INFINITY, 0.8, 0.7, 0.6, f64::NEG_INFINITY]);
        // area of those points, and the pairwise-ranking value
        let oracle = rank_auc_oracle(&scores, &labels);
        assert_eq!(oracle, 0.75);
        assert_eq!(auc(&r), oracle);
    }

    #[test]
    fn single_class_rejected() {
        assert!(roc_curve(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_curve(&[], &[]).is_err());
        assert!(roc_curve(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn csv_format() {
        let r = roc_curve(&[0.9, 0.1], &[true, false]).unwrap();
        let mut buf = Vec::new();
        write_roc_csv(&r, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "threshold,fpr,tpr\ninf,0.000000,0.000000\n0.100000,0.000000,1.000000\n-inf,1.000000,1.000000\n"
        );
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        prop::collection::vec((0u8..12, any::<bool>()), 2..40)
            .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
            .prop_map(|v| v.into_iter().map(|(s, l)| (f64::from(s) / 4.0, l)).unzip())
    }

    proptest! {
        #[test]
        fn curve_invariants((scores, labels) in scored()) {
            let r = roc_curve(&scores, &labels).unwrap();
            let first = r.points.first().unwrap();
            let last = r.points.last().unwrap();
            prop_assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            for w in r.points.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
            let mut distinct = scores.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            prop_assert!(r.points.len() <= distinct.len() + 2);

            let a = auc(&r);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - rank_auc_oracle(&scores, &labels)).abs() < 1e-12);
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let b = auc(&roc_curve(&scores, &flipped).unwrap());
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn rates_scale_invariant(tp in 0u64..500, fp in 0u64..500, tn in 0u64..500, fn_ in 0u64..500, k in 1u64..20) {
            let c = ConfusionCounts { tp, fp, tn, fn_ };
            let s = ConfusionCounts { tp: tp * k, fp: fp * k, tn: tn * k, fn_: fn_ * k };
            let (a, b) = (rates(&c), rates(&s));
            prop_assert!((a.tpr - b.tpr).abs() < 1e-12);
            prop_assert!((a.fpr - b.fpr).abs() < 1e-12);
            prop_assert!((a.precision - b.precision).abs() < 1e-12);
        }
    }
}
