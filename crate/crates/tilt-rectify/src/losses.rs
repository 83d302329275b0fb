//! Training losses on surface normals: L2 (cosine), angular, truncated
//! angular, slant/tilt, slant-angle + tilt-direction (SATD), and per-plane
//! consistency, with hand-derived gradients.
//!
//! Sign convention, used by every `*_grad` here: the returned vector is
//! `d loss / d pred` projected onto the tangent plane at `pred`; callers
//! descend by subtracting it.

use thiserror::Error;

use crate::geometry::{SlantTilt, TiltDirection, UnitVec3};
use crate::math::{pairwise_sum, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    /// The angular-loss gradient diverges as `|pred . gt| -> 1`.
    #[error("angular loss gradient undefined at |pred.gt| = {dot}")]
    GradientUndefined { dot: f64 },
    /// A plane mask referenced no pixels.
    #[error("plane mask {index} is empty")]
    EmptyMask { index: usize },
    /// A batch reduction saw zero valid samples.
    #[error("no valid samples in batch")]
    NoValidSamples,
}

/// A prediction / ground-truth pair of unit normals.
#[derive(Debug, Clone, Copy)]
pub struct LossSample {
    pub pred: UnitVec3,
    pub gt: UnitVec3,
}

/// Truncated-angular-loss clamp threshold.
#[derive(Debug, Clone, Copy)]
pub struct TalConfig {
    pub eps: f64,
}

impl Default for TalConfig {
    fn default() -> Self {
        TalConfig { eps: 1e-6 }
    }
}

#[inline]
fn clamped_dot(pred: &UnitVec3, gt: &UnitVec3) -> f64 {
    pred.dot(gt).clamp(-1.0, 1.0)
}

/// Tangent projection of `gt` at `pred`: `(I - n n^T) n_hat`.
#[inline]
fn tangent_of_gt(pred: &UnitVec3, gt: &UnitVec3) -> Vec3 {
    let n = pred.as_vec3();
    let nh = gt.as_vec3();
    nh - n * n.dot(&nh)
}

/// `1 - pred . gt`, the unit-vector L2 / cosine loss, in `[0, 2]`.
pub fn l2_loss(pred: &UnitVec3, gt: &UnitVec3) -> f64 {
    1.0 - clamped_dot(pred, gt)
}

/// Tangent gradient of [`l2_loss`]: `-(I - n n^T) n_hat`.
pub fn l2_grad(pred: &UnitVec3, gt: &UnitVec3) -> Vec3 {
    -tangent_of_gt(pred, gt)
}

/// `acos(pred . gt)`, the angular loss, in radians.
pub fn angular_loss(pred: &UnitVec3, gt: &UnitVec3) -> f64 {
    clamped_dot(pred, gt).acos()
}

/// Tangent gradient of [`angular_loss`]:
/// `-(1 - c^2)^{-1/2} (I - n n^T) n_hat`. Errors inside the singular band
/// `|c| >= 1 - 1e-9`, where the `acos` scale factor blows up.
pub fn al_grad(pred: &UnitVec3, gt: &UnitVec3) -> Result<Vec3, LossError> {
    let c = clamped_dot(pred, gt);
    if c.abs() >= 1.0 - 1e-9 {
        return Err(LossError::GradientUndefined { dot: c });
    }
    let scale = -1.0 / (1.0 - c * c).sqrt();
    Ok(tangent_of_gt(pred, gt) * scale)
}

/// Truncated angular loss:
/// zero for `c >= 1 - eps`, `acos(c)` for `0 <= c < 1 - eps`, and the linear
/// tail `pi/2 - c` for `c < 0`. Continuous at both branch boundaries.
pub fn truncated_angular_loss(pred: &UnitVec3, gt: &UnitVec3, cfg: TalConfig) -> f64 {
    let c = clamped_dot(pred, gt);
    if c >= 1.0 - cfg.eps {
        0.0
    } else if c >= 0.0 {
        c.acos()
    } else {
        std::f64::consts::FRAC_PI_2 - c
    }
}

/// Tangent gradient of [`truncated_angular_loss`]; total on all inputs.
/// Zero in the clamp region, the angular-loss gradient in the middle, and the
/// derivative of `-c` (unit weight) in the linear region.
pub fn tal_grad(pred: &UnitVec3, gt: &UnitVec3, cfg: TalConfig) -> Vec3 {
    let c = clamped_dot(pred, gt);
    if c >= 1.0 - cfg.eps {
        Vec3::ZERO
    } else if c >= 0.0 {
        tangent_of_gt(pred, gt) * (-1.0 / (1.0 - c * c).sqrt())
    } else {
        -tangent_of_gt(pred, gt)
    }
}

/// Wrapped absolute tilt difference, in `[0, pi]`.
#[inline]
pub fn wrapped_tilt_diff(phi_a: f64, phi_b: f64) -> f64 {
    let d = (phi_a - phi_b).abs();
    d.min(2.0 * std::f64::consts::PI - d)
}

/// Robust slant/tilt loss: `|theta - theta_hat| + min(|dphi|, 2 pi - |dphi|)`.
pub fn slant_tilt_loss(pred: &SlantTilt, gt: &SlantTilt) -> f64 {
    (pred.theta() - gt.theta()).abs() + wrapped_tilt_diff(pred.phi(), gt.phi())
}

/// Slant-angle + tilt-direction loss: `|theta - theta_hat| + lambda ||z - z_hat||_1`.
pub fn satd_loss(
    pred_theta: f64,
    pred_z: &TiltDirection,
    gt_theta: f64,
    gt_z: &TiltDirection,
    lambda: f64,
) -> f64 {
    let l1 = (pred_z.x() - gt_z.x()).abs() + (pred_z.y() - gt_z.y()).abs();
    (pred_theta - gt_theta).abs() + lambda * l1
}

/// Per-plane slant/tilt variation: for each plane, the mean over its pixels of
/// `|theta - theta_bar| + wrap(|phi - phi_bar|)` against the plane's mean
/// angles (circular mean for tilt), summed over planes.
pub fn plane_consistency_loss(
    angles: &[SlantTilt],
    plane_masks: &[Vec<usize>],
) -> Result<f64, LossError> {
    let mut total = 0.0;
    for (index, mask) in plane_masks.iter().enumerate() {
        if mask.is_empty() {
            return Err(LossError::EmptyMask { index });
        }
        let inv = 1.0 / mask.len() as f64;
        let mut theta_mean = 0.0;
        let mut sin_sum = 0.0;
        let mut cos_sum = 0.0;
        for &p in mask {
            let a = &angles[p];
            theta_mean += a.theta() * inv;
            sin_sum += a.phi().sin();
            cos_sum += a.phi().cos();
        }
        let phi_mean = sin_sum.atan2(cos_sum);
        let deviations: Vec<f64> = mask
            .iter()
            .map(|&p| {
                let a = &angles[p];
                (a.theta() - theta_mean).abs() + wrapped_tilt_diff(a.phi(), phi_mean)
            })
            .collect();
        total += pairwise_sum(&deviations) * inv;
    }
    Ok(total)
}

/// Mean of `loss_fn` over the samples marked valid; deterministic pairwise
/// summation in index order.
pub fn batch_reduce<F>(loss_fn: F, samples: &[LossSample], valid: &[bool]) -> Result<f64, LossError>
where
    F: Fn(&UnitVec3, &UnitVec3) -> f64,
{
    let values: Vec<f64> = samples
        .iter()
        .zip(valid)
        .filter(|(_, v)| **v)
        .map(|(s, _)| loss_fn(&s.pred, &s.gt))
        .collect();
    if values.is_empty() {
        return Err(LossError::NoValidSamples);
    }
    Ok(pairwise_sum(&values) / values.len() as f64)
}
