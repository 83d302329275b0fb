//! Evaluation metrics for surface-normal predictions: angular error summaries
//! and the slant/tilt error decomposition with its triangle inequality
//! (slant error + wrapped tilt error bounds the geodesic angular error).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::UnitVec3;
use crate::math::pairwise_sum;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot summarize an empty error list")]
    EmptyInput,
}

/// Angular-error thresholds reported by every summary, in degrees.
pub const THRESHOLDS_DEG: [f64; 5] = [5.0, 7.5, 11.25, 22.5, 30.0];

/// Mean / median / RMSE / below-threshold statistics, all in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSummary {
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
    pub p5: f64,
    pub p7_5: f64,
    pub p11_25: f64,
    pub p22_5: f64,
    pub p30: f64,
    pub count: usize,
}

impl EvalSummary {
    pub fn below(&self, threshold_deg: f64) -> Option<f64> {
        THRESHOLDS_DEG
            .iter()
            .position(|t| *t == threshold_deg)
            .map(|i| [self.p5, self.p7_5, self.p11_25, self.p22_5, self.p30][i])
    }
}

/// Slant/tilt error decomposition of one prediction pair, all in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorDecomposition {
    /// Geodesic angular error `acos(pred . gt)`.
    pub delta: f64,
    /// Slant error `|acos||Pi pred|| - acos||Pi gt|||`.
    pub d_theta: f64,
    /// Wrapped tilt error, zero in the degenerate pole case.
    pub d_phi: f64,
    /// True when either input is within `eps` of the pole (tilt undefined).
    pub degenerate: bool,
}

/// `acos(pred . gt)` in `[0, pi]`.
pub fn angular_error(pred: &UnitVec3, gt: &UnitVec3) -> f64 {
    pred.dot(gt).clamp(-1.0, 1.0).acos()
}

/// Summarizes angular errors (radians in, degrees out). Median of an
/// even-length list is the lower of the two central order statistics.
pub fn summarize(errors: &[f64]) -> Result<EvalSummary, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let deg: Vec<f64> = errors.iter().map(|e| e.to_degrees()).collect();
    let n = deg.len() as f64;
    let mean = pairwise_sum(&deg) / n;
    let squares: Vec<f64> = deg.iter().map(|d| d * d).collect();
    let rmse = (pairwise_sum(&squares) / n).sqrt();

    let mut sorted = deg.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[(sorted.len() - 1) / 2];

    let mut below = [0.0; 5];
    for (i, t) in THRESHOLDS_DEG.iter().enumerate() {
        below[i] = deg.iter().filter(|d| **d < *t).count() as f64 / n;
    }
    Ok(EvalSummary {
        mean,
        median,
        rmse,
        p5: below[0],
        p7_5: below[1],
        p11_25: below[2],
        p22_5: below[3],
        p30: below[4],
        count: errors.len(),
    })
}

/// Default pole threshold on the projected norm `||Pi n||`.
pub const DECOMPOSE_EPS: f64 = 1e-9;

/// Decomposes the angular error into slant and tilt parts by dropping the
/// z component (`Pi` projection). When either vector is orthogonal to the
/// image plane the tilt is undefined: the decomposition degenerates to
/// `d_theta = delta`, `d_phi = 0`, which satisfies the inequality trivially.
pub fn slant_tilt_decompose(pred: &UnitVec3, gt: &UnitVec3, eps: f64) -> ErrorDecomposition {
    let delta = angular_error(pred, gt);
    let pp = (pred.x() * pred.x() + pred.y() * pred.y()).sqrt();
    let pg = (gt.x() * gt.x() + gt.y() * gt.y()).sqrt();
    if pp < eps || pg < eps {
        return ErrorDecomposition { delta, d_theta: delta, d_phi: 0.0, degenerate: true };
    }
    let cos_dphi = ((pred.x() * gt.x() + pred.y() * gt.y()) / (pp * pg)).clamp(-1.0, 1.0);
    let d_phi = cos_dphi.acos();
    let d_theta = (pp.clamp(-1.0, 1.0).acos() - pg.clamp(-1.0, 1.0).acos()).abs();
    ErrorDecomposition { delta, d_theta, d_phi, degenerate: false }
}

/// True iff `d_theta + d_phi >= delta - 1e-9` for the pair.
pub fn triangle_check(pred: &UnitVec3, gt: &UnitVec3, eps: f64) -> bool {
    let d = slant_tilt_decompose(pred, gt, eps);
    d.d_theta + d.d_phi >= d.delta - 1e-9
}
