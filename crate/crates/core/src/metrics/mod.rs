//! Binary classification metrics, ROC curves and their file formats.

mod emit;

pub use emit::{
    metrics_csv, parse_metrics_csv, parse_roc_csv, read_metrics_csv, roc_csv, roc_svg, write_metrics_csv,
    write_roc_csv, METRICS_HEADER, ROC_HEADER,
};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Contract("no scores to evaluate".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Contract(format!("label {bad} is not 0 or 1")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN score".into()));
    }
    Ok(())
}

/// A sample is predicted positive iff its score is at least `threshold`.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion> {
    check_inputs(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Ratios with a zero denominator, reported as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Undefined {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl Undefined {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub direction: String,
    pub strategy: String,
    pub counts: Confusion,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub auc: f64,
    pub undefined: Undefined,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedMetrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub undefined: Undefined,
}

pub fn derive_metrics(c: &Confusion) -> Result<DerivedMetrics> {
    if c.total() == 0 {
        return Err(Error::Contract("metrics of an empty confusion matrix".into()));
    }
    let ratio = |num: u64, den: u64| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
    let accuracy = (c.tp + c.tn) as f64 / c.total() as f64;
    let (precision, p_undef) = ratio(c.tp, c.tp + c.fp);
    let (recall, r_undef) = ratio(c.tp, c.tp + c.fn_);
    let f1_undef = p_undef || r_undef || precision + recall == 0.0;
    let f1 = if f1_undef {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(DerivedMetrics {
        accuracy,
        recall,
        precision,
        f1,
        undefined: Undefined {
            precision: p_undef,
            recall: r_undef,
            f1: f1_undef,
        },
    })
}

impl MetricsReport {
    pub fn from_counts(direction: &str, strategy: &str, counts: Confusion, auc: f64) -> Result<Self> {
        let d = derive_metrics(&counts)?;
        Ok(MetricsReport {
            direction: direction.into(),
            strategy: strategy.into(),
            counts,
            accuracy: d.accuracy,
            recall: d.recall,
            precision: d.precision,
            f1: d.f1,
            auc,
            undefined: d.undefined,
        })
    }

    /// Confusion at `threshold` plus ROC AUC.
    pub fn evaluate(direction: &str, strategy: &str, scores: &[f64], labels: &[u8], threshold: f64) -> Result<(Self, RocCurve)> {
        let counts = confusion(scores, labels, threshold)?;
        let (roc, auc) = roc_auc(scores, labels)?;
        Ok((Self::from_counts(direction, strategy, counts, auc)?, roc))
    }

    /// `Accuracy 0.856 / Recall 0.726 / Precision 0.855 / F1 0.785`
    pub fn summary(&self) -> String {
        format!(
            "Accuracy {:.3} / Recall {:.3} / Precision {:.3} / F1 {:.3}",
            self.accuracy, self.recall, self.precision, self.f1
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores at or above this are called positive; `+inf` for the origin.
    pub threshold: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// ROC over the distinct scores taken as thresholds in descending order, and
/// its trapezoidal area. Tied scores move the curve diagonally, which makes
/// the area equal to `P(s+ > s-) + P(s+ = s-) / 2`.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<(RocCurve, f64)> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateData(format!(
            "ROC AUC needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Integrate in counts and normalize once to keep rounding low.
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold,
        });
    }
    Ok((RocCurve { points }, area / (pos as f64 * neg as f64)))
}
