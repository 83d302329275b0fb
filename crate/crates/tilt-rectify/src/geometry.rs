//! Unit vectors, slant/tilt angles, rotations, and rotation-induced homographies.
//!
//! Conventions used throughout the crate:
//! - camera frame: x right, y down, z forward, so gravity in an upright frame
//!   is `(0, 1, 0)` and the identity rectification uses `e = g`;
//! - a surface normal decomposes into slant `theta` (angle out of the image
//!   plane, `sin(theta) = n_z`) and tilt `phi` (azimuth of the in-plane
//!   projection), with camera-facing normals at `theta` in `[0, pi/2]`;
//! - the rectifying warp is `W = K R K^-1` where `R` is the shortest-arc
//!   rotation taking the gravity direction `g` to the principle direction `e`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{Mat3, Vec3};

/// Errors from constructing or combining geometric primitives.
#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    /// A direction was requested from a (near-)zero vector.
    #[error("cannot normalize a zero-length vector")]
    ZeroVector,
    /// `g` and `e` are antipodal; the shortest-arc rotation is not defined.
    #[error("gravity and principle direction are antipodal (g.e = {dot})")]
    AntipodalInput { dot: f64 },
    /// A warped point left the positive half-space of the image plane.
    #[error("point projects behind the camera (w = {w})")]
    BehindCamera { w: f64 },
    /// Slant or tilt angle outside its declared range.
    #[error("angle out of range: {what} = {value}")]
    AngleOutOfRange { what: &'static str, value: f64 },
    /// A matrix failed the orthonormality / determinant test.
    #[error("matrix is not a proper rotation (err = {err})")]
    NotARotation { err: f64 },
    /// Homography is numerically singular.
    #[error("homography is singular (|det| = {det})")]
    SingularHomography { det: f64 },
    /// Intrinsics violate fx, fy > 0 or width, height >= 1.
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// A 3D direction of unit length (surface normal, gravity, principle direction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec3(Vec3);

impl UnitVec3 {
    /// Normalizes the input; rejects vectors with norm below `1e-12`.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        Self::from_vec3(Vec3::new(x, y, z))
    }

    pub fn from_vec3(v: Vec3) -> Result<Self, GeometryError> {
        v.normalized().map(UnitVec3).ok_or(GeometryError::ZeroVector)
    }

    /// Unit +x / +y / +z axes.
    pub fn x_axis() -> Self {
        UnitVec3(Vec3::new(1.0, 0.0, 0.0))
    }
    pub fn y_axis() -> Self {
        UnitVec3(Vec3::new(0.0, 1.0, 0.0))
    }
    pub fn z_axis() -> Self {
        UnitVec3(Vec3::new(0.0, 0.0, 1.0))
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }
    pub fn y(&self) -> f64 {
        self.0.y
    }
    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn as_vec3(&self) -> Vec3 {
        self.0
    }

    pub fn dot(&self, other: &UnitVec3) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn flipped(&self) -> UnitVec3 {
        UnitVec3(-self.0)
    }
}

/// Slant (polar) and tilt (azimuth) angle pair for a surface normal.
///
/// `theta` is in `[-pi/2, pi/2]`, `phi` in `(-pi, pi]`. Camera-facing
/// (visible) normals have `theta` in `[0, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlantTilt {
    theta: f64,
    phi: f64,
}

impl SlantTilt {
    pub fn new(theta: f64, phi: f64) -> Result<Self, GeometryError> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let pi = std::f64::consts::PI;
        if !(-half_pi..=half_pi).contains(&theta) || !theta.is_finite() {
            return Err(GeometryError::AngleOutOfRange { what: "theta", value: theta });
        }
        if !(phi > -pi && phi <= pi) {
            return Err(GeometryError::AngleOutOfRange { what: "phi", value: phi });
        }
        Ok(SlantTilt { theta, phi })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn phi(&self) -> f64 {
        self.phi
    }
}

/// Unit 2-vector `(cos phi, sin phi)` standing in for the tilt azimuth, or
/// exactly `(0, 0)` at the slant pole where the tilt is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltDirection {
    x: f64,
    y: f64,
}

impl TiltDirection {
    /// The degenerate pole value, exactly `(0, 0)`.
    pub fn zero() -> Self {
        TiltDirection { x: 0.0, y: 0.0 }
    }

    /// Normalizes `(x, y)`; rejects near-zero input (use [`TiltDirection::zero`]
    /// for the pole case).
    pub fn new(x: f64, y: f64) -> Result<Self, GeometryError> {
        let n = (x * x + y * y).sqrt();
        if n < 1e-12 {
            return Err(GeometryError::ZeroVector);
        }
        Ok(TiltDirection { x: x / n, y: y / n })
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn is_zero(&self) -> bool {
        self.x == 0.0 && self.y == 0.0
    }

    /// Azimuth `atan2(y, x)`; defined as `0` at the pole.
    pub fn phi(&self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            self.y.atan2(self.x)
        }
    }
}

/// A proper rotation: `R^T R = I`, `det R = 1` (both within `1e-9`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Mat3);

impl Rotation3 {
    pub fn identity() -> Self {
        Rotation3(Mat3::IDENTITY)
    }

    /// Validates orthonormality and determinant before wrapping.
    pub fn from_matrix(m: Mat3) -> Result<Self, GeometryError> {
        let ortho_err = m.transpose().mul_mat(&m).sub(&Mat3::IDENTITY).max_abs();
        let det_err = (m.det() - 1.0).abs();
        let err = ortho_err.max(det_err);
        if err > 1e-9 {
            return Err(GeometryError::NotARotation { err });
        }
        Ok(Rotation3(m))
    }

    /// Rotation about the x axis (pitch).
    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation3(Mat3::from_rows([
            [1.0, 0.0, 0.0],
            [0.0, c, -s],
            [0.0, s, c],
        ]))
    }

    /// Rotation about the y axis (yaw).
    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation3(Mat3::from_rows([
            [c, 0.0, s],
            [0.0, 1.0, 0.0],
            [-s, 0.0, c],
        ]))
    }

    /// Rotation about the z axis (roll).
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation3(Mat3::from_rows([
            [c, -s, 0.0],
            [s, c, 0.0],
            [0.0, 0.0, 1.0],
        ]))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Rotation3 {
        Rotation3(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation3) -> Rotation3 {
        Rotation3(self.0.mul_mat(&other.0))
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0.mul_vec(v)
    }

    /// Geodesic angle of the rotation, in radians.
    pub fn angle(&self) -> f64 {
        let tr = self.0.m[0][0] + self.0.m[1][1] + self.0.m[2][2];
        ((tr - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }
}

/// Pinhole intrinsics; serializes as `{fx, fy, cx, cy, width, height}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = CameraIntrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.fx.is_nan() || self.fx <= 0.0 || !self.fx.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(format!("fx must be > 0, got {}", self.fx)));
        }
        if self.fy.is_nan() || self.fy <= 0.0 || !self.fy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(format!("fy must be > 0, got {}", self.fy)));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics("cx/cy must be finite".into()));
        }
        if self.width < 1 || self.height < 1 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "width and height must be >= 1, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::from_rows([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::from_rows([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])
    }
}

/// A plane-projective warp induced by a pure rotation, `h = K R K^-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Mat3);

impl Homography {
    pub fn identity() -> Self {
        Homography(Mat3::IDENTITY)
    }

    pub fn from_matrix(m: Mat3) -> Result<Self, GeometryError> {
        let det = m.det();
        if det.abs() <= 1e-12 {
            return Err(GeometryError::SingularHomography { det });
        }
        Ok(Homography(m))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn inverse(&self) -> Homography {
        // Construction guarantees invertibility.
        Homography(self.0.inverse().expect("homography invariant: invertible"))
    }

    pub fn compose(&self, other: &Homography) -> Homography {
        Homography(self.0.mul_mat(&other.0))
    }

    /// Maps pixel `(u, v)` through the homography; `None` when the warped
    /// homogeneous depth drops to `w <= 1e-9` (behind the camera).
    pub fn apply_pixel(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        let q = self.0.mul_vec(&Vec3::new(u, v, 1.0));
        if q.z <= 1e-9 {
            None
        } else {
            Some((q.x / q.z, q.y / q.z))
        }
    }
}

/// Builds the unit normal `(cos t cos p, cos t sin p, sin t)` from slant/tilt.
pub fn normal_from_slant_tilt(angles: SlantTilt) -> UnitVec3 {
    let (st, ct) = angles.theta().sin_cos();
    let (sp, cp) = angles.phi().sin_cos();
    // theta = +-pi/2 leaves a ~1e-17 in-plane residue; normalization absorbs it.
    UnitVec3::new(ct * cp, ct * sp, st).expect("slant-tilt normal is never zero")
}

/// Decomposes a unit normal into `(theta, z)`: slant angle plus tilt direction.
///
/// With `xi = n_x^2 + n_y^2`: below `eps` the tilt is undefined, so `z` is
/// forced to exactly `(0, 0)` and `theta` snaps to the signed pole
/// `sign(n_z) * pi/2`; otherwise `z = (n_x, n_y)/sqrt(xi)` and
/// `theta = atan2(n_z, sqrt(xi))`.
pub fn slant_tilt_from_normal(n: &UnitVec3, eps: f64) -> (f64, TiltDirection) {
    let xi = n.x() * n.x() + n.y() * n.y();
    if xi < eps {
        let theta = if n.z() >= 0.0 {
            std::f64::consts::FRAC_PI_2
        } else {
            -std::f64::consts::FRAC_PI_2
        };
        (theta, TiltDirection::zero())
    } else {
        let r = xi.sqrt();
        let theta = n.z().atan2(r);
        (theta, TiltDirection { x: n.x() / r, y: n.y() / r })
    }
}

/// Default pole threshold for [`slant_tilt_from_normal`].
pub const SLANT_TILT_EPS: f64 = 1e-12;

/// Convenience wrapper returning slant/tilt as angles (`phi = 0` at the pole).
pub fn slant_tilt_angles(n: &UnitVec3) -> SlantTilt {
    let (theta, z) = slant_tilt_from_normal(n, SLANT_TILT_EPS);
    SlantTilt { theta, phi: z.phi() }
}

/// Shortest-arc rotation taking `g` onto `e`:
/// `R = I + 2 e g^T - (e + g)(e + g)^T / (1 + e^T g)`.
///
/// Antipodal pairs (`g^T e <= -1 + 1e-9`) are rejected: the formula is
/// singular there and the rectifier never needs a 180-degree warp.
pub fn rotation_between(g: &UnitVec3, e: &UnitVec3) -> Result<Rotation3, GeometryError> {
    let dot = e.dot(g);
    if dot <= -1.0 + 1e-9 {
        return Err(GeometryError::AntipodalInput { dot });
    }
    let gv = g.as_vec3();
    let ev = e.as_vec3();
    let sum = ev + gv;
    let m = Mat3::IDENTITY
        .add(&Mat3::outer(&ev, &gv).scale(2.0))
        .sub(&Mat3::outer(&sum, &sum).scale(1.0 / (1.0 + dot)));
    Ok(Rotation3(m))
}

/// `h = K R K^-1`; its inverse is `K R^T K^-1`.
pub fn homography_from_rotation(k: &CameraIntrinsics, r: &Rotation3) -> Homography {
    let m = k.matrix().mul_mat(r.matrix()).mul_mat(&k.inverse_matrix());
    Homography(m)
}

/// Pinhole projection of a rotated pixel: the homogeneous pixel is lifted to
/// its camera ray, rotated, and re-projected, `Pi(K R K^-1 [u, v, 1]^T)` --
/// the rotation homography applied to the pixel, so the identity rotation
/// maps every pixel to itself.
pub fn project_pixel(
    k: &CameraIntrinsics,
    r: &Rotation3,
    p: &Vec3,
) -> Result<[f64; 2], GeometryError> {
    let ray = k.inverse_matrix().mul_vec(p);
    let q = k.matrix().mul_vec(&r.apply(&ray));
    if q.z <= 1e-9 {
        return Err(GeometryError::BehindCamera { w: q.z });
    }
    Ok([q.x / q.z, q.y / q.z])
}

/// Signed shoelace area of the quad `A, B, C, D` (given in top-left, top-right,
/// bottom-right, bottom-left order). Callers that only need the magnitude take
/// the absolute value; the rectifier also uses the sign as the |area|
/// subgradient factor.
pub fn quad_area(corners: &[[f64; 2]; 4]) -> f64 {
    let mut sum = 0.0;
    for i in 0..4 {
        let [xa, ya] = corners[i];
        let [xb, yb] = corners[(i + 1) % 4];
        sum += xa * yb - xb * ya;
    }
    0.5 * sum
}

/// Partial derivatives of [`quad_area`] with respect to each corner.
pub fn quad_area_grad(corners: &[[f64; 2]; 4]) -> [[f64; 2]; 4] {
    let mut grad = [[0.0; 2]; 4];
    for i in 0..4 {
        let [x_next, y_next] = corners[(i + 1) % 4];
        let [x_prev, y_prev] = corners[(i + 3) % 4];
        grad[i][0] = 0.5 * (y_next - y_prev);
        grad[i][1] = 0.5 * (x_prev - x_next);
    }
    grad
}

/// `R n`, re-normalized to absorb rounding.
pub fn rotate_normal(r: &Rotation3, n: &UnitVec3) -> UnitVec3 {
    UnitVec3::from_vec3(r.apply(&n.as_vec3())).expect("rotating a unit vector stays unit")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

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

    /// Quaternion shortest-arc rotation, used only as a test oracle.
    fn quaternion_shortest_arc(g: &UnitVec3, e: &UnitVec3) -> Mat3 {
        let gv = g.as_vec3();
        let ev = e.as_vec3();
        let w = 1.0 + gv.dot(&ev);
        let xyz = gv.cross(&ev);
        let norm = (w * w + xyz.norm_squared()).sqrt();
        let (w, x, y, z) = (w / norm, xyz.x / norm, xyz.y / norm, xyz.z / norm);
        Mat3::from_rows([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])
    }

    #[test]
    fn normal_from_slant_tilt_axis_cases() {
        let pole = normal_from_slant_tilt(SlantTilt::new(FRAC_PI_2, 0.3).unwrap());
        assert!((pole.as_vec3() - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);

        let x = normal_from_slant_tilt(SlantTilt::new(0.0, 0.0).unwrap());
        assert!((x.as_vec3() - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn normal_from_slant_tilt_pi_6_case() {
        // Direct evaluation: (cos(pi/6)cos(pi/2), cos(pi/6)sin(pi/2), sin(pi/6)).
        let n = normal_from_slant_tilt(SlantTilt::new(FRAC_PI_6, FRAC_PI_2).unwrap());
        assert_relative_eq!(n.x(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(n.y(), 3.0_f64.sqrt() / 2.0, epsilon = 1e-12);
        assert_relative_eq!(n.z(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn slant_tilt_from_normal_cases() {
        let (theta, z) = slant_tilt_from_normal(&UnitVec3::z_axis(), SLANT_TILT_EPS);
        assert_eq!(theta, FRAC_PI_2);
        assert!(z.is_zero());

        let (theta, z) = slant_tilt_from_normal(&UnitVec3::x_axis(), SLANT_TILT_EPS);
        assert_eq!(theta, 0.0);
        assert_relative_eq!(z.x(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(z.y(), 0.0, epsilon = 1e-12);

        let n = UnitVec3::new(0.0, 3.0_f64.sqrt() / 2.0, 0.5).unwrap();
        let (theta, z) = slant_tilt_from_normal(&n, SLANT_TILT_EPS);
        assert_relative_eq!(theta, FRAC_PI_6, epsilon = 1e-12);
        assert_relative_eq!(z.x(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(z.y(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn slant_tilt_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let theta = rng.random_range(0.0..FRAC_PI_2 - 1e-6);
            let phi = rng.random_range(-PI..PI);
            let n = normal_from_slant_tilt(SlantTilt::new(theta, phi).unwrap());
            let back = slant_tilt_angles(&n);
            assert!((back.theta() - theta).abs() < 1e-10);
            let dphi = (back.phi() - phi).abs();
            assert!(dphi.min(2.0 * PI - dphi) < 1e-10);
        }
    }

    #[test]
    fn visibility_constraint_sign_equivalence() {
        // n_z > 0 iff theta in (0, pi/2].
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100_000 {
            let n = random_unit(&mut rng);
            let (theta, _) = slant_tilt_from_normal(&n, SLANT_TILT_EPS);
            assert_eq!(n.z() > 0.0, theta > 0.0 && theta <= FRAC_PI_2);
        }
    }

    #[test]
    fn rotation_between_identity_case() {
        let g = UnitVec3::z_axis();
        let r = rotation_between(&g, &g).unwrap();
        assert!(r.matrix().sub(&Mat3::IDENTITY).max_abs() < 1e-12);
    }

    #[test]
    fn rotation_between_axis_case_matches_axis_angle() {
        // z -> y is a -90 degree rotation about x.
        let r = rotation_between(&UnitVec3::z_axis(), &UnitVec3::y_axis()).unwrap();
        let expected = Mat3::from_rows([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]]);
        assert!(r.matrix().sub(&expected).max_abs() < 1e-12);
        let oracle = Rotation3::about_x(-FRAC_PI_2);
        assert!(r.matrix().sub(oracle.matrix()).max_abs() < 1e-12);
    }

    #[test]
    fn rotation_between_random_pairs_vs_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100_000 {
            let g = random_unit(&mut rng);
            let e = random_unit(&mut rng);
            if g.dot(&e) <= -1.0 + 1e-6 {
                continue;
            }
            let r = rotation_between(&g, &e).unwrap();
            // Maps g to e.
            assert!((r.apply(&g.as_vec3()) - e.as_vec3()).norm() < 1e-9);
            // Proper rotation.
            let m = r.matrix();
            assert!(m.transpose().mul_mat(m).sub(&Mat3::IDENTITY).max_abs() < 1e-9);
            assert!((m.det() - 1.0).abs() < 1e-9);
            // Agrees with the quaternion shortest-arc oracle.
            assert!(m.sub(&quaternion_shortest_arc(&g, &e)).max_abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_between_rejects_antipodal() {
        let g = UnitVec3::z_axis();
        let e = g.flipped();
        assert!(matches!(
            rotation_between(&g, &e),
            Err(GeometryError::AntipodalInput { .. })
        ));
    }

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0, 320, 240).unwrap()
    }

    #[test]
    fn homography_identity_and_composition() {
        let k = test_intrinsics();
        let h = homography_from_rotation(&k, &Rotation3::identity());
        assert!(h.matrix().sub(&Mat3::IDENTITY).max_abs() < 1e-12);

        let r1 = Rotation3::about_z(0.3);
        let r2 = Rotation3::about_x(-0.2);
        let lhs = homography_from_rotation(&k, &r2).compose(&homography_from_rotation(&k, &r1));
        let rhs = homography_from_rotation(&k, &r2.compose(&r1));
        assert!(lhs.matrix().sub(rhs.matrix()).max_abs() < 1e-8);
    }

    #[test]
    fn homography_inverse_is_transpose_rotation() {
        let k = test_intrinsics();
        let r = Rotation3::about_x(0.4).compose(&Rotation3::about_z(-0.7));
        let inv = homography_from_rotation(&k, &r).inverse();
        let via_transpose = homography_from_rotation(&k, &r.transpose());
        assert!(inv.matrix().sub(via_transpose.matrix()).max_abs() < 1e-8);
    }

    #[test]
    fn homography_explicit_product_oracle() {
        let k = test_intrinsics();
        let r = rotation_between(&UnitVec3::z_axis(), &UnitVec3::y_axis()).unwrap();
        let h = homography_from_rotation(&k, &r);
        let oracle = k.matrix().mul_mat(r.matrix()).mul_mat(&k.inverse_matrix());
        assert!(h.matrix().sub(&oracle).max_abs() < 1e-12);
    }

    #[test]
    fn project_pixel_identity_and_corner() {
        let k = test_intrinsics();
        let p = Vec3::new(12.0, 34.0, 1.0);
        let xy = project_pixel(&k, &Rotation3::identity(), &p).unwrap();
        assert_relative_eq!(xy[0], 12.0, epsilon = 1e-12);
        assert_relative_eq!(xy[1], 34.0, epsilon = 1e-12);

        // Corner (0, 0) under the z->y rotation, against the explicit
        // K R K^-1 hand product.
        let r = rotation_between(&UnitVec3::z_axis(), &UnitVec3::y_axis()).unwrap();
        let h = k.matrix().mul_mat(r.matrix()).mul_mat(&k.inverse_matrix());
        let q = h.mul_vec(&Vec3::new(0.0, 0.0, 1.0));
        let expected = [q.x / q.z, q.y / q.z];
        let got = project_pixel(&k, &r, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(got[0], expected[0], epsilon = 1e-12);
        assert_relative_eq!(got[1], expected[1], epsilon = 1e-12);
    }

    #[test]
    fn project_pixel_behind_camera_errors() {
        let k = test_intrinsics();
        // Rotating by pi/2 about x sends the principal ray to +y: w collapses.
        let r = Rotation3::about_x(FRAC_PI_2);
        let out = project_pixel(&k, &r, &Vec3::new(k.cx, k.cy, 1.0));
        assert!(matches!(out, Err(GeometryError::BehindCamera { .. })));
    }

    #[test]
    fn quad_area_rectangle_and_degenerate() {
        let rect = [[0.0, 0.0], [320.0, 0.0], [320.0, 240.0], [0.0, 240.0]];
        assert_eq!(quad_area(&rect).abs(), 76_800.0);

        let collinear = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        assert_relative_eq!(quad_area(&collinear), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn quad_area_matches_triangulation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10_000 {
            // Random convex quad: four angularly sorted points on a noisy circle.
            let mut angles: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let cx = rng.random_range(-50.0..50.0);
            let cy = rng.random_range(-50.0..50.0);
            let corners: Vec<[f64; 2]> = angles
                .iter()
                .map(|a| {
                    let r = rng.random_range(10.0..100.0);
                    [cx + r * a.cos(), cy + r * a.sin()]
                })
                .collect();
            let quad = [corners[0], corners[1], corners[2], corners[3]];
            // Triangulation oracle: split along the A-C diagonal.
            let tri = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
                0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
            };
            let oracle = tri(quad[0], quad[1], quad[2]) + tri(quad[0], quad[2], quad[3]);
            let area = quad_area(&quad);
            assert!(
                (area - oracle).abs() <= 1e-9 * oracle.abs().max(1.0),
                "area {area} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn quad_area_grad_matches_finite_differences() {
        let quad = [[1.0, 2.0], [40.0, -3.0], [55.0, 60.0], [-2.0, 48.0]];
        let grad = quad_area_grad(&quad);
        let h = 1e-6;
        for i in 0..4 {
            for c in 0..2 {
                let mut plus = quad;
                let mut minus = quad;
                plus[i][c] += h;
                minus[i][c] -= h;
                let fd = (quad_area(&plus) - quad_area(&minus)) / (2.0 * h);
                assert_relative_eq!(grad[i][c], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn rotate_normal_cases() {
        let n = UnitVec3::new(0.3, -0.4, 0.86).unwrap();
        let same = rotate_normal(&Rotation3::identity(), &n);
        assert!((same.as_vec3() - n.as_vec3()).norm() < 1e-15);

        let r = rotation_between(&UnitVec3::z_axis(), &UnitVec3::y_axis()).unwrap();
        let rotated = rotate_normal(&r, &UnitVec3::z_axis());
        assert!((rotated.as_vec3() - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..1000 {
            let n = random_unit(&mut rng);
            let r = Rotation3::about_z(rng.random_range(-1.0..1.0))
                .compose(&Rotation3::about_x(rng.random_range(-1.0..1.0)));
            assert!((rotate_normal(&r, &n).as_vec3().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(-1.0, 300.0, 0.0, 0.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(300.0, 300.0, 0.0, 0.0, 0, 10).is_err());
    }
}
