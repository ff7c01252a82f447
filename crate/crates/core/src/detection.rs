//! Percentile thresholds on reconstruction errors, classification and ROC analysis.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderModel;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Percentiles swept by default when tabulating detection rates.
pub const DEFAULT_ALPHAS: [f64; 6] = [96.0, 97.0, 98.0, 99.0, 99.5, 100.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// Percentile in `(0, 100]`.
    pub alpha: f64,
    pub tau: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Attack,
}

/// Nearest-rank `alpha`-th percentile of `val_errors`: the `⌈αn/100⌉`-th
/// smallest value, so `alpha = 100` gives the maximum.
pub fn compute_threshold(val_errors: &[f64], alpha: f64) -> Result<Threshold> {
    if val_errors.is_empty() {
        return Err(Error::Empty("validation errors"));
    }
    if !(alpha > 0.0 && alpha <= 100.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 100], got {alpha}")));
    }
    if val_errors.iter().any(|e| e.is_nan()) {
        return Err(Error::InvalidArgument("NaN reconstruction error".into()));
    }
    let mut sorted = val_errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // the small slack keeps e.g. 99% of 100 at rank 99 despite rounding in α·n/100
    let rank = libm::ceil(alpha * n as f64 / 100.0 - 1e-9).clamp(1.0, n as f64) as usize;
    Ok(Threshold {
        alpha,
        tau: sorted[rank - 1],
    })
}

/// Attack iff the error strictly exceeds `tau`.
pub fn classify(error: f64, threshold: &Threshold) -> Label {
    if error > threshold.tau {
        Label::Attack
    } else {
        Label::Normal
    }
}

/// Confusion rates normalised per class, with the underlying counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub alpha: f64,
    pub tau: f64,
    pub tp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tn: f64,
    pub fp: f64,
    pub tp_count: usize,
    pub fn_count: usize,
    pub tn_count: usize,
    pub fp_count: usize,
}

/// Rates for precomputed errors of normal and attacked observations.
pub fn evaluate_errors(threshold: &Threshold, normal_errors: &[f64], attack_errors: &[f64]) -> Result<DetectionReport> {
    if normal_errors.is_empty() {
        return Err(Error::Empty("normal set"));
    }
    if attack_errors.is_empty() {
        return Err(Error::Empty("attacked set"));
    }
    let flagged = |errs: &[f64]| errs.iter().filter(|&&e| classify(e, threshold) == Label::Attack).count();
    let tp_count = flagged(attack_errors);
    let fp_count = flagged(normal_errors);
    let (np, nn) = (attack_errors.len(), normal_errors.len());
    Ok(DetectionReport {
        alpha: threshold.alpha,
        tau: threshold.tau,
        tp: tp_count as f64 / np as f64,
        fn_: (np - tp_count) as f64 / np as f64,
        tn: (nn - fp_count) as f64 / nn as f64,
        fp: fp_count as f64 / nn as f64,
        tp_count,
        fn_count: np - tp_count,
        tn_count: nn - fp_count,
        fp_count,
    })
}

/// Scores raw normal and attacked sets with `model` and tabulates the rates.
pub fn evaluate(model: &AutoencoderModel, threshold: &Threshold, normal_set: &Matrix, attacked_set: &Matrix) -> Result<DetectionReport> {
    if normal_set.rows() == 0 {
        return Err(Error::Empty("normal set"));
    }
    if attacked_set.rows() == 0 {
        return Err(Error::Empty("attacked set"));
    }
    evaluate_errors(threshold, &model.scores(normal_set)?, &model.scores(attacked_set)?)
}

/// One report per `alpha`, each threshold taken from `val_errors`.
pub fn threshold_sweep(val_errors: &[f64], alphas: &[f64], normal_errors: &[f64], attack_errors: &[f64]) -> Result<Vec<DetectionReport>> {
    alphas
        .iter()
        .map(|&a| evaluate_errors(&compute_threshold(val_errors, a)?, normal_errors, attack_errors))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fp_rate, tp_rate)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Sweeps the threshold from `+∞` down through every distinct error value;
/// equal values move together, so the curve does not depend on input order.
/// The area is integrated with the trapezoidal rule.
pub fn roc_curve(normal_errors: &[f64], attack_errors: &[f64]) -> Result<RocCurve> {
    if normal_errors.is_empty() {
        return Err(Error::Empty("normal errors"));
    }
    if attack_errors.is_empty() {
        return Err(Error::Empty("attack errors"));
    }
    if normal_errors.iter().chain(attack_errors).any(|e| e.is_nan()) {
        return Err(Error::InvalidArgument("NaN reconstruction error".into()));
    }
    let mut all: Vec<(f64, bool)> = normal_errors
        .iter()
        .map(|&e| (e, false))
        .chain(attack_errors.iter().map(|&e| (e, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (nn, np) = (normal_errors.len() as f64, attack_errors.len() as f64);
    let mut points = alloc::vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / nn, tp as f64 / np));
    }
    let auc = points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
    Ok(RocCurve { points, auc })
}
