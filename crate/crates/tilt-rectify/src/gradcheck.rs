//! Finite-difference audit of every analytic gradient in the crate: loss
//! gradients, the rotated-normal e-Jacobian, the mixture density gradient,
//! and the full rectifier objective gradient.
//!
//! Central differences are taken along two tangent directions at the
//! perturbed vector (re-normalized), with instances falling inside a
//! gradient's declared singular set (the angular loss near perfect
//! agreement, branch kinks of the truncated loss, interpolation-cell edges
//! of the objective) excluded the same way the tolerances that accompany
//! them are stated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{rotation_between, CameraIntrinsics, UnitVec3};
use crate::losses;
use crate::losses::TalConfig;
use crate::math::Vec3;
use crate::rectifier;
use crate::stats;
use crate::stats::{histogram_from_normals, Binning, GaussianMixture, HISTOGRAM_FLOOR};

/// One audited gradient family.
#[derive(Debug, Clone)]
pub struct GradcheckItem {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub trials: usize,
}

impl GradcheckItem {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub items: Vec<GradcheckItem>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.items.iter().all(GradcheckItem::passed)
    }
}

/// Fault injection for audit self-tests: flips the sign of one gradient so a
/// healthy harness must report the failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultInjection {
    #[default]
    None,
    FlipL2Sign,
}

fn random_unit(rng: &mut ChaCha8Rng) -> UnitVec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n2 = v.norm_squared();
        if n2 > 1e-4 && n2 < 1.0 {
            return UnitVec3::from_vec3(v).unwrap();
        }
    }
}

fn tangent_frame(e: &UnitVec3) -> (Vec3, Vec3) {
    let ev = e.as_vec3();
    let helper = if ev.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let t1 = ev.cross(&helper).normalized().unwrap();
    let t2 = ev.cross(&t1).normalized().unwrap();
    (t1, t2)
}

/// Max relative error of `grad . t` against the central difference of `f`
/// along both tangent directions at `pred`.
fn tangent_fd_rel_err<F>(pred: &UnitVec3, grad: &Vec3, f: F, h: f64) -> f64
where
    F: Fn(&UnitVec3) -> f64,
{
    let n = pred.as_vec3();
    let (t1, t2) = tangent_frame(pred);
    let mut worst = 0.0_f64;
    for t in [t1, t2] {
        let plus = UnitVec3::from_vec3(n + t * h).unwrap();
        let minus = UnitVec3::from_vec3(n - t * h).unwrap();
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let an = grad.dot(&t);
        // Floor above FD noise: zero-gradient directions stay clean.
        let scale = fd.abs().max(an.abs()).max(1e-3);
        worst = worst.max((fd - an).abs() / scale);
    }
    worst
}

fn pair_with_dot(rng: &mut ChaCha8Rng, c: f64) -> (UnitVec3, UnitVec3) {
    let n = random_unit(rng);
    let helper = if n.x().abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let t = n.as_vec3().cross(&helper).normalized().unwrap();
    let s = (1.0 - c * c).max(0.0).sqrt();
    let gt = UnitVec3::from_vec3(n.as_vec3() * c + t * s).unwrap();
    (n, gt)
}

fn check_l2(trials: usize, rng: &mut ChaCha8Rng, fault: FaultInjection) -> GradcheckItem {
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let pred = random_unit(rng);
        let gt = random_unit(rng);
        let mut grad = losses::l2_grad(&pred, &gt);
        if fault == FaultInjection::FlipL2Sign {
            grad = -grad;
        }
        worst = worst.max(tangent_fd_rel_err(&pred, &grad, |p| losses::l2_loss(p, &gt), 1e-6));
    }
    GradcheckItem { name: "l2_grad", max_rel_err: worst, tolerance: 1e-5, trials }
}

fn check_al(trials: usize, rng: &mut ChaCha8Rng) -> GradcheckItem {
    let mut worst = 0.0_f64;
    let mut done = 0;
    while done < trials {
        // Exclude the singular band |c| > 1 - 1e-4.
        let c: f64 = rng.random_range(-0.9999..0.9999);
        if c.abs() > 1.0 - 1e-4 {
            continue;
        }
        let (pred, gt) = pair_with_dot(rng, c);
        let grad = losses::al_grad(&pred, &gt).expect("outside the singular band");
        worst = worst.max(tangent_fd_rel_err(&pred, &grad, |p| losses::angular_loss(p, &gt), 1e-6));
        done += 1;
    }
    GradcheckItem { name: "al_grad", max_rel_err: worst, tolerance: 1e-5, trials }
}

fn check_tal(trials: usize, rng: &mut ChaCha8Rng) -> GradcheckItem {
    let cfg = TalConfig::default();
    let mut worst = 0.0_f64;
    let mut done = 0;
    while done < trials {
        let c: f64 = rng.random_range(-0.9999..0.9999);
        // Branch kinks at c = 0 and c = 1 - eps are non-differentiable points.
        if c.abs() < 1e-3 || c > 1.0 - 10.0 * cfg.eps {
            continue;
        }
        let (pred, gt) = pair_with_dot(rng, c);
        let grad = losses::tal_grad(&pred, &gt, cfg);
        worst = worst.max(tangent_fd_rel_err(
            &pred,
            &grad,
            |p| losses::truncated_angular_loss(p, &gt, cfg),
            1e-6,
        ));
        done += 1;
    }
    GradcheckItem { name: "tal_grad", max_rel_err: worst, tolerance: 1e-5, trials }
}

fn check_rotated_normal(trials: usize, rng: &mut ChaCha8Rng) -> GradcheckItem {
    let h = 1e-6;
    let mut worst = 0.0_f64;
    let mut done = 0;
    while done < trials {
        let g = random_unit(rng);
        let e = random_unit(rng);
        if e.dot(&g) < -0.9 {
            continue;
        }
        let n = random_unit(rng);
        let jt = rectifier::grad_rotated_normal(&e, &g, &n).unwrap().transpose();
        let (t1, t2) = tangent_frame(&e);
        for t in [t1, t2] {
            let ep = UnitVec3::from_vec3(e.as_vec3() + t * h).unwrap();
            let em = UnitVec3::from_vec3(e.as_vec3() - t * h).unwrap();
            let rp = rotation_between(&g, &ep).unwrap().apply(&n.as_vec3());
            let rm = rotation_between(&g, &em).unwrap().apply(&n.as_vec3());
            let fd = (rp - rm) * (1.0 / (2.0 * h));
            let an = jt.mul_vec(&t);
            let scale = fd.norm().max(an.norm()).max(1e-3);
            worst = worst.max((fd - an).norm() / scale);
        }
        done += 1;
    }
    GradcheckItem { name: "grad_rotated_normal", max_rel_err: worst, tolerance: 1e-5, trials }
}

fn check_gmm_density(trials: usize, rng: &mut ChaCha8Rng) -> GradcheckItem {
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let k = rng.random_range(1..5usize);
        let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let means: Vec<Vec3> = (0..k)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let variances: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..0.5)).collect();
        let p = GaussianMixture::from_parts(weights, means, variances).unwrap();
        let x = Vec3::new(
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
        );
        let g = stats::gmm_density_grad(&p, &x);
        for axis in 0..3 {
            let mut step = Vec3::ZERO;
            match axis {
                0 => step.x = h,
                1 => step.y = h,
                _ => step.z = h,
            }
            let fd =
                (stats::gmm_density(&p, &(x + step)) - stats::gmm_density(&p, &(x - step)))
                    / (2.0 * h);
            let an = [g.x, g.y, g.z][axis];
            let scale = fd.abs().max(g.norm()).max(1e-5);
            worst = worst.max((an - fd).abs() / scale);
        }
    }
    GradcheckItem { name: "gmm_density_grad", max_rel_err: worst, tolerance: 1e-6, trials }
}

fn check_objective(trials: usize, rng: &mut ChaCha8Rng) -> GradcheckItem {
    let h = 1e-5;
    let mut worst = 0.0_f64;
    let mut done = 0;
    let k = CameraIntrinsics::new(300.0, 280.0, 160.0, 120.0, 320, 240).unwrap();
    'outer: while done < trials {
        let g = random_unit(rng);
        let samples: Vec<UnitVec3> = (0..16).map(|_| random_unit(rng)).collect();
        let Ok(gmm) = stats::fit_gmm(&samples, 2, 13) else { continue };
        let q_normals: Vec<UnitVec3> = (0..300).map(|_| random_unit(rng)).collect();
        let q = histogram_from_normals(&q_normals, Binning::new(9, 16), HISTOGRAM_FLOOR).unwrap();
        let e = {
            let raw = g.as_vec3()
                + Vec3::new(
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-0.4..0.4),
                );
            UnitVec3::from_vec3(raw).unwrap()
        };
        let lambda = rng.random_range(0.0..0.5);

        // Exclude instances within FD reach of a non-smooth point: a rotated
        // sample near a pole or an interpolation-cell edge, or the area hinge.
        let r = rotation_between(&g, &e).unwrap();
        for n in &samples {
            let x = r.apply(&n.as_vec3());
            let rho = (x.x * x.x + x.y * x.y).sqrt();
            if rho < 1e-3 {
                continue 'outer;
            }
            let theta = x.z.atan2(rho);
            let phi = x.y.atan2(x.x);
            let t = ((theta + std::f64::consts::FRAC_PI_2) / (std::f64::consts::PI / 9.0) - 0.5)
                .rem_euclid(1.0);
            let s = ((phi + std::f64::consts::PI) / (2.0 * std::f64::consts::PI / 16.0) - 0.5)
                .rem_euclid(1.0);
            if t.min(1.0 - t) < 5e-4 || s.min(1.0 - s) < 5e-4 {
                continue 'outer;
            }
        }
        let base = rectifier::objective(&e, &g, &gmm, &samples, &q, &k, lambda).unwrap();
        if !base.is_finite() {
            continue;
        }

        let grad = rectifier::objective_grad(&e, &g, &gmm, &samples, &q, &k, lambda).unwrap();
        let (t1, t2) = tangent_frame(&e);
        for t in [t1, t2] {
            let ep = UnitVec3::from_vec3(e.as_vec3() + t * h).unwrap();
            let em = UnitVec3::from_vec3(e.as_vec3() - t * h).unwrap();
            let fp = rectifier::objective(&ep, &g, &gmm, &samples, &q, &k, lambda).unwrap();
            let fm = rectifier::objective(&em, &g, &gmm, &samples, &q, &k, lambda).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let an = grad.dot(&t);
            let scale = fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max((fd - an).abs() / scale);
        }
        done += 1;
    }
    GradcheckItem { name: "objective_grad", max_rel_err: worst, tolerance: 1e-4, trials }
}

/// Runs every finite-difference suite with `trials` instances each.
pub fn run_gradcheck(trials: usize, seed: u64) -> GradcheckReport {
    run_gradcheck_with_fault(trials, seed, FaultInjection::None)
}

/// [`run_gradcheck`] with optional fault injection (mutation canary for the
/// audit harness itself).
pub fn run_gradcheck_with_fault(
    trials: usize,
    seed: u64,
    fault: FaultInjection,
) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = vec![
        check_l2(trials, &mut rng, fault),
        check_al(trials, &mut rng),
        check_tal(trials, &mut rng),
        check_rotated_normal(trials, &mut rng),
        check_gmm_density(trials, &mut rng),
        check_objective(trials, &mut rng),
    ];
    GradcheckReport { items }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn healthy_build_passes() {
        let report = run_gradcheck(100, 1);
        for item in &report.items {
            assert!(
                item.passed(),
                "{} failed: {} >= {}",
                item.name,
                item.max_rel_err,
                item.tolerance
            );
        }
        assert!(report.all_passed());
    }

    #[test]
    fn sign_flip_canary_fails() {
        let report = run_gradcheck_with_fault(50, 1, FaultInjection::FlipL2Sign);
        assert!(!report.all_passed());
        let l2 = report.items.iter().find(|i| i.name == "l2_grad").unwrap();
        assert!(!l2.passed(), "flipped gradient slipped through the audit");
    }
}
