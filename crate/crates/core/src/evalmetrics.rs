//! Segmentation scoring: confusion counts, Dice, precision/recall/F-measure,
//! and ROC area.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segment::BinaryMask;
use crate::texture::TextureMap;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("masks or maps differ in size")]
    DimensionMismatch,
    #[error("reference contains no positive pixel in the evaluation region")]
    NoPositives,
    #[error("reference contains no negative pixel in the evaluation region")]
    NoNegatives,
}

/// Pixels inside the disk `(x−cx)² + (y−cy)² ≤ r²`.
pub fn circle_mask(width: usize, height: usize, cx: i64, cy: i64, r: f64) -> BinaryMask {
    let r2 = r * r;
    BinaryMask::from_fn(width, height, |x, y| {
        let (dx, dy) = ((x as i64 - cx) as f64, (y as i64 - cy) as f64);
        dx * dx + dy * dy <= r2
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts, EvalError> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(EvalError::DimensionMismatch);
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.bits().iter().zip(truth.bits()) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Metrics whose denominator was zero; each is reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedMetrics {
    pub dice: bool,
    pub precision: bool,
    pub recall: bool,
    pub specificity: bool,
    pub f_measure: bool,
}

impl UndefinedMetrics {
    pub fn any(&self) -> bool {
        self.dice || self.precision || self.recall || self.specificity || self.f_measure
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f_measure: f64,
    pub counts: ConfusionCounts,
    pub undefined: UndefinedMetrics,
    /// ROC area of the score map, when one was computed.
    pub az: Option<f64>,
}

/// Harmonic mean `2 / (1/precision + 1/recall)`; `None` unless both are
/// positive.
pub fn harmonic_f_measure(precision: f64, recall: f64) -> Option<f64> {
    (precision > 0.0 && recall > 0.0).then(|| 2.0 / (1.0 / precision + 1.0 / recall))
}

/// Dice, precision, recall, specificity and F-measure from counts.
///
/// F-measure is evaluated as `2tp / (2tp + fp + fn)`, which is the harmonic
/// mean of precision and recall rewritten over the counts; it is therefore
/// the same number as Dice.
pub fn metrics(c: &ConfusionCounts) -> EvalReport {
    let mut undefined = UndefinedMetrics::default();
    let take = |value: Option<f64>, flag: &mut bool| {
        value.unwrap_or_else(|| {
            *flag = true;
            0.0
        })
    };
    let overlap = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    let precision = take(ratio(c.tp, c.tp + c.fp), &mut undefined.precision);
    let recall = take(c.tpr(), &mut undefined.recall);
    let specificity = take(c.fpr().map(|f| 1.0 - f), &mut undefined.specificity);
    let dice = take(overlap, &mut undefined.dice);
    // the harmonic mean needs both precision and recall to be positive
    let f_measure = take(overlap.filter(|_| c.tp > 0), &mut undefined.f_measure);
    EvalReport { dice, precision, recall, specificity, f_measure, counts: *c, undefined, az: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub az: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (f, t) in &self.points {
            out.push_str(&format!("{f},{t}\n"));
        }
        out
    }
}

/// ROC over every distinct score (score ≥ t is positive), integrated with
/// the trapezoid rule. Tied scores form one diagonal step.
pub fn roc_az(scores: &TextureMap, truth: &BinaryMask, region: Option<&BinaryMask>) -> Result<RocCurve, EvalError> {
    if scores.width() != truth.width() || scores.height() != truth.height() {
        return Err(EvalError::DimensionMismatch);
    }
    if let Some(r) = region {
        if r.width() != truth.width() || r.height() != truth.height() {
            return Err(EvalError::DimensionMismatch);
        }
    }
    let mut samples: Vec<(f64, bool)> = scores
        .values()
        .iter()
        .zip(truth.bits())
        .enumerate()
        .filter(|(k, _)| region.is_none_or(|r| r.bits()[*k]))
        .map(|(_, (&s, &t))| (s, t))
        .collect();
    let positives = samples.iter().filter(|s| s.1).count() as u64;
    let negatives = samples.len() as u64 - positives;
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    if negatives == 0 {
        return Err(EvalError::NoNegatives);
    }
    samples.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut az = 0.0;
    let mut i = 0;
    while i < samples.len() {
        let score = samples[i].0;
        while i < samples.len() && samples[i].0.total_cmp(&score).is_eq() {
            if samples[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let next = (fp as f64 / negatives as f64, tp as f64 / positives as f64);
        let prev = *points.last().expect("curve starts at origin");
        az += (next.0 - prev.0) * (next.1 + prev.1) / 2.0;
        points.push(next);
    }
    Ok(RocCurve { points, az })
}
