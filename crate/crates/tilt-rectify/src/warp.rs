//! Homography warps for images and normal maps, visibility tracking, and the
//! rectify -> estimate -> unrectify composition.
//!
//! Warps are output-driven: each output pixel `x` is pushed through the
//! homography to find its source sample, so no iterative inversion is needed.
//! Pixels whose source lands outside the grid, or whose warped homogeneous
//! depth drops below `1e-9`, carry value zero and an explicit `visible = false`
//! flag; the invisible count is therefore exact regardless of scene content.

use thiserror::Error;

use crate::geometry::{
    homography_from_rotation, rotation_between, CameraIntrinsics, GeometryError, Homography,
    Rotation3, UnitVec3,
};
use crate::math::Vec3;

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("estimator output is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    EstimatorShapeMismatch {
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Row-major interleaved image samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: u32,
    height: u32,
    channels: u32,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(width: u32, height: u32, channels: u32) -> Self {
        ImageGrid {
            width,
            height,
            channels,
            data: vec![0.0; (width * height * channels) as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, channels: u32, data: Vec<f64>) -> Option<Self> {
        if data.len() != (width * height * channels) as usize {
            return None;
        }
        Some(ImageGrid { width, height, channels, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn channels(&self) -> u32 {
        self.channels
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn idx(&self, x: u32, y: u32, c: u32) -> usize {
        ((y * self.width + x) * self.channels + c) as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u32) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u32, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }
}

/// Per-pixel unit normals with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: u32,
    height: u32,
    normals: Vec<Vec3>,
    valid: Vec<bool>,
}

impl NormalMap {
    pub fn invalid(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        NormalMap {
            width,
            height,
            normals: vec![Vec3::ZERO; n],
            valid: vec![false; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    #[inline]
    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.valid[self.idx(x, y)]
    }

    /// The stored vector, including the zero placeholder on invalid pixels.
    #[inline]
    pub fn raw(&self, x: u32, y: u32) -> Vec3 {
        self.normals[self.idx(x, y)]
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<UnitVec3> {
        if self.is_valid(x, y) {
            UnitVec3::from_vec3(self.raw(x, y)).ok()
        } else {
            None
        }
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, n: UnitVec3) {
        let i = self.idx(x, y);
        self.normals[i] = n.as_vec3();
        self.valid[i] = true;
    }

    #[inline]
    pub fn set_invalid(&mut self, x: u32, y: u32) {
        let i = self.idx(x, y);
        self.normals[i] = Vec3::ZERO;
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// All valid normals in row-major order.
    pub fn valid_normals(&self) -> Vec<UnitVec3> {
        let mut out = Vec::with_capacity(self.valid_count());
        for y in 0..self.height {
            for x in 0..self.width {
                if let Some(n) = self.get(x, y) {
                    out.push(n);
                }
            }
        }
        out
    }
}

/// Interpolation used when sampling the source grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Bilinear,
}

/// A warped grid plus the per-pixel visibility mask (false exactly where the
/// source lookup fell outside the source rectangle or behind the camera).
#[derive(Debug, Clone)]
pub struct WarpResult<T> {
    pub data: T,
    pub visible: Vec<bool>,
}

/// Number of pixels with `visible = false`.
pub fn invisible_count<T>(w: &WarpResult<T>) -> usize {
    w.visible.iter().filter(|v| !**v).count()
}

/// Source coordinates for output pixel `(u, v)`, or `None` if invisible.
#[inline]
fn source_coords(h: &Homography, u: u32, v: u32) -> Option<(f64, f64)> {
    h.apply_pixel(u as f64, v as f64)
}

/// Tolerance for source coordinates that land a rounding error beyond the
/// border (e.g. `K K^-1` is not the exact identity in floats).
const EDGE_EPS: f64 = 1e-9;

/// Bilinear neighborhood: up to four `(x, y, weight)` taps with nonzero weight.
#[inline]
fn bilinear_taps(x: f64, y: f64, width: u32, height: u32) -> Option<[(u32, u32, f64); 4]> {
    if x < -EDGE_EPS || y < -EDGE_EPS || x > (width - 1) as f64 + EDGE_EPS
        || y > (height - 1) as f64 + EDGE_EPS
    {
        return None;
    }
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor().min((width - 1) as f64);
    let y0 = y.floor().min((height - 1) as f64);
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as u32;
    let y0 = y0 as u32;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    Some([
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ])
}

#[inline]
fn nearest_tap(x: f64, y: f64, width: u32, height: u32) -> Option<(u32, u32)> {
    let xi = (x + 0.5).floor().clamp(0.0, (width - 1) as f64);
    let yi = (y + 0.5).floor().clamp(0.0, (height - 1) as f64);
    if x < -0.5 - EDGE_EPS || y < -0.5 - EDGE_EPS
        || x > (width - 1) as f64 + 0.5 + EDGE_EPS
        || y > (height - 1) as f64 + 0.5 + EDGE_EPS
    {
        return None;
    }
    Some((xi as u32, yi as u32))
}

/// Warps an image by a homography: output pixel `x` samples the source at
/// `h(x)`. Out-of-grid or behind-camera pixels get value 0, `visible = false`.
pub fn warp_image(src: &ImageGrid, h: &Homography, interp: Interpolation) -> WarpResult<ImageGrid> {
    let (w, ht, ch) = (src.width(), src.height(), src.channels());
    let mut out = ImageGrid::zeros(w, ht, ch);
    let mut visible = vec![false; (w * ht) as usize];
    for v in 0..ht {
        for u in 0..w {
            let Some((sx, sy)) = source_coords(h, u, v) else {
                continue;
            };
            match interp {
                Interpolation::Nearest => {
                    if let Some((xi, yi)) = nearest_tap(sx, sy, w, ht) {
                        for c in 0..ch {
                            out.set(u, v, c, src.get(xi, yi, c));
                        }
                        visible[(v * w + u) as usize] = true;
                    }
                }
                Interpolation::Bilinear => {
                    if let Some(taps) = bilinear_taps(sx, sy, w, ht) {
                        for c in 0..ch {
                            let mut acc = 0.0;
                            for &(tx, ty, wgt) in &taps {
                                if wgt != 0.0 {
                                    acc += wgt * src.get(tx, ty, c);
                                }
                            }
                            out.set(u, v, c, acc);
                        }
                        visible[(v * w + u) as usize] = true;
                    }
                }
            }
        }
    }
    WarpResult { data: out, visible }
}

/// Warps a normal map: coordinates exactly as [`warp_image`] with
/// `h = K R K^-1`, and the sampled vectors additionally rotated by `R` and
/// re-normalized. Invalid or out-of-bounds lookups propagate invalidity.
pub fn warp_normal_map(
    src: &NormalMap,
    r: &Rotation3,
    k: &CameraIntrinsics,
    interp: Interpolation,
) -> WarpResult<NormalMap> {
    let h = homography_from_rotation(k, r);
    let (w, ht) = (src.width(), src.height());
    let mut out = NormalMap::invalid(w, ht);
    let mut visible = vec![false; (w * ht) as usize];
    for v in 0..ht {
        for u in 0..w {
            let Some((sx, sy)) = source_coords(&h, u, v) else {
                continue;
            };
            let sampled: Option<Vec3> = match interp {
                Interpolation::Nearest => nearest_tap(sx, sy, w, ht).and_then(|(xi, yi)| {
                    if src.is_valid(xi, yi) {
                        Some(src.raw(xi, yi))
                    } else {
                        None
                    }
                }),
                Interpolation::Bilinear => bilinear_taps(sx, sy, w, ht).and_then(|taps| {
                    let mut acc = Vec3::ZERO;
                    for &(tx, ty, wgt) in &taps {
                        if wgt == 0.0 {
                            continue;
                        }
                        if !src.is_valid(tx, ty) {
                            return None;
                        }
                        acc = acc + src.raw(tx, ty) * wgt;
                    }
                    Some(acc)
                }),
            };
            if let Some(vec) = sampled {
                if let Ok(n) = UnitVec3::from_vec3(r.apply(&vec)) {
                    out.set(u, v, n);
                    visible[(v * w + u) as usize] = true;
                }
            }
        }
    }
    WarpResult { data: out, visible }
}

/// The full rectification composition: warp `img` into the rectified frame
/// with `h = K R K^-1` (`R` the shortest arc from `g` to `e`), run the
/// estimator there, then rotate its predictions by `R^T` and warp them back to
/// the tilted frame. Pixels unseen in the rectified frame come back invalid.
pub fn rectify_estimate_unrectify<F>(
    img: &ImageGrid,
    g: &UnitVec3,
    e: &UnitVec3,
    k: &CameraIntrinsics,
    estimator: F,
) -> Result<NormalMap, WarpError>
where
    F: FnOnce(&ImageGrid) -> NormalMap,
{
    let r = rotation_between(g, e)?;
    let h = homography_from_rotation(k, &r);
    let rectified = warp_image(img, &h, Interpolation::Bilinear);

    let mut pred = estimator(&rectified.data);
    if pred.width() != img.width() || pred.height() != img.height() {
        return Err(WarpError::EstimatorShapeMismatch {
            want_w: img.width(),
            want_h: img.height(),
            got_w: pred.width(),
            got_h: pred.height(),
        });
    }
    // Predictions on pixels the rectified frame never saw are meaningless.
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if !rectified.visible[(y * pred.width() + x) as usize] {
                pred.set_invalid(x, y);
            }
        }
    }
    // Back to the tilted frame: n_tilted = R^T f(W^-1(x)).
    let back = warp_normal_map(&pred, &r.transpose(), k, Interpolation::Bilinear);
    Ok(back.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_pixel;

    fn test_intrinsics(w: u32, h: u32) -> CameraIntrinsics {
        // Focal length scaled to the grid keeps modest rotations on-grid.
        CameraIntrinsics::new(w as f64, w as f64, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    fn gradient_card(w: u32, h: u32) -> ImageGrid {
        let mut img = ImageGrid::zeros(w, h, 2);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, 0, x as f64 / w as f64);
                img.set(x, y, 1, (x + 7 * y) as f64 % 5.0);
            }
        }
        img
    }

    #[test]
    fn identity_warp_is_bit_exact_under_nearest() {
        let src = gradient_card(16, 12);
        let out = warp_image(&src, &Homography::identity(), Interpolation::Nearest);
        assert_eq!(out.data, src);
        assert_eq!(invisible_count(&out), 0);
    }

    #[test]
    fn identity_warp_bilinear_all_visible() {
        let src = gradient_card(16, 12);
        let out = warp_image(&src, &Homography::identity(), Interpolation::Bilinear);
        assert_eq!(invisible_count(&out), 0);
        for i in 0..src.data().len() {
            assert!((out.data.data()[i] - src.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_warp_matches_per_pixel_oracle() {
        // Independent oracle: apply project_pixel per output pixel and
        // resample with a scalar nearest-neighbor loop.
        let k = test_intrinsics(4, 4);
        let r = Rotation3::about_z(0.35);
        let h = homography_from_rotation(&k, &r);
        let src = gradient_card(4, 4);
        let out = warp_image(&src, &h, Interpolation::Nearest);

        for v in 0..4u32 {
            for u in 0..4u32 {
                let oracle = project_pixel(&k, &r, &Vec3::new(u as f64, v as f64, 1.0)).ok();
                let idx = (v * 4 + u) as usize;
                match oracle {
                    Some([x, y]) => {
                        let xi = (x + 0.5).floor();
                        let yi = (y + 0.5).floor();
                        let inside = (0.0..=3.0).contains(&xi) && (0.0..=3.0).contains(&yi);
                        assert_eq!(out.visible[idx], inside);
                        if inside {
                            for c in 0..2 {
                                assert_eq!(out.data.get(u, v, c), src.get(xi as u32, yi as u32, c));
                            }
                        }
                    }
                    None => assert!(!out.visible[idx]),
                }
            }
        }
    }

    #[test]
    fn fully_out_of_bounds_warp() {
        let src = gradient_card(320, 240);
        // Large pure translation in homography form.
        let m = crate::math::Mat3::from_rows([
            [1.0, 0.0, 10_000.0],
            [0.0, 1.0, 10_000.0],
            [0.0, 0.0, 1.0],
        ]);
        let h = Homography::from_matrix(m).unwrap();
        let out = warp_image(&src, &h, Interpolation::Bilinear);
        assert_eq!(invisible_count(&out), 320 * 240);
        assert!(out.data.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn invisible_count_45_degree_roll_matches_polygon_oracle() {
        let n = 64u32;
        let k = test_intrinsics(n, n);
        let r = Rotation3::about_z(std::f64::consts::FRAC_PI_4);
        let h = homography_from_rotation(&k, &r);
        let src = gradient_card(n, n);
        let out = warp_image(&src, &h, Interpolation::Nearest);

        // Oracle: a pixel is invisible iff its mapped source center leaves the
        // [-0.5, n-0.5] square; count with a rasterized point-in-square test.
        let mut oracle = 0usize;
        let mut boundary = 0usize;
        for v in 0..n {
            for u in 0..n {
                let (x, y) = h.apply_pixel(u as f64, v as f64).unwrap();
                let lim = (n - 1) as f64 + 0.5;
                let inside = x >= -0.5 && y >= -0.5 && x < lim && y < lim;
                if !inside {
                    oracle += 1;
                }
                let d = [x + 0.5, y + 0.5, lim - x, lim - y]
                    .into_iter()
                    .fold(f64::INFINITY, f64::min);
                if d.abs() < 1.0 {
                    boundary += 1;
                }
            }
        }
        let got = invisible_count(&out);
        assert!(
            got.abs_diff(oracle) <= boundary,
            "got {got}, oracle {oracle}, boundary budget {boundary}"
        );
        assert!(got > 0);
    }

    fn constant_map(w: u32, h: u32, n: UnitVec3) -> NormalMap {
        let mut m = NormalMap::invalid(w, h);
        for y in 0..h {
            for x in 0..w {
                m.set(x, y, n);
            }
        }
        m
    }

    #[test]
    fn normal_warp_identity_unchanged() {
        let k = test_intrinsics(8, 8);
        let src = constant_map(8, 8, UnitVec3::new(0.1, -0.3, 0.9).unwrap());
        let out = warp_normal_map(&src, &Rotation3::identity(), &k, Interpolation::Nearest);
        // Bit-identity is not available here: K K^-1 and the re-normalization
        // each perturb the last ulp. Everything else must match exactly.
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(out.data.is_valid(x, y), src.is_valid(x, y));
                let d = out.data.raw(x, y) - src.raw(x, y);
                assert!(d.norm() < 1e-14);
            }
        }
        assert_eq!(invisible_count(&out), 0);
    }

    #[test]
    fn normal_warp_constant_field_rotates() {
        let k = test_intrinsics(32, 32);
        let n0 = UnitVec3::new(0.2, 0.5, 0.8).unwrap();
        let src = constant_map(32, 32, n0);
        let r = Rotation3::about_z(0.4).compose(&Rotation3::about_x(-0.2));
        let out = warp_normal_map(&src, &r, &k, Interpolation::Bilinear);
        let expected = r.apply(&n0.as_vec3());
        let mut checked = 0;
        for y in 0..32 {
            for x in 0..32 {
                if let Some(n) = out.data.get(x, y) {
                    assert!((n.as_vec3() - expected).norm() < 1e-9);
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn normal_warp_preserves_unit_norm() {
        let k = test_intrinsics(24, 24);
        let mut src = NormalMap::invalid(24, 24);
        for y in 0..24u32 {
            for x in 0..24u32 {
                let n = UnitVec3::new(
                    (x as f64 * 0.37).sin(),
                    (y as f64 * 0.21).cos(),
                    1.0 + (x + y) as f64 * 0.01,
                )
                .unwrap();
                src.set(x, y, n);
            }
        }
        let r = Rotation3::about_x(0.3);
        let out = warp_normal_map(&src, &r, &k, Interpolation::Bilinear);
        for y in 0..24 {
            for x in 0..24 {
                if let Some(n) = out.data.get(x, y) {
                    assert!((n.as_vec3().norm() - 1.0).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn invalid_pixels_block_bilinear_taps() {
        let k = test_intrinsics(8, 8);
        let mut src = constant_map(8, 8, UnitVec3::z_axis());
        src.set_invalid(4, 4);
        // Half-pixel shift makes every output sample straddle two columns.
        let m = crate::math::Mat3::from_rows([
            [1.0, 0.0, 0.5],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ]);
        let _h = Homography::from_matrix(m).unwrap();
        // warp_normal_map builds its own homography from R and K; emulate the
        // shift by checking the tap helper directly instead.
        let taps = bilinear_taps(3.5, 4.0, 8, 8).unwrap();
        assert!(taps.iter().any(|&(x, y, w)| x == 4 && y == 4 && w > 0.0));

        let out = warp_normal_map(&src, &Rotation3::identity(), &k, Interpolation::Bilinear);
        // Identity leaves the invalid pixel in place.
        assert!(!out.data.is_valid(4, 4));
    }

    #[test]
    fn estimator_shape_mismatch_detected() {
        let k = test_intrinsics(8, 8);
        let img = gradient_card(8, 8);
        let g = UnitVec3::y_axis();
        let out = rectify_estimate_unrectify(&img, &g, &g, &k, |_| NormalMap::invalid(4, 4));
        assert!(matches!(out, Err(WarpError::EstimatorShapeMismatch { .. })));
    }

    #[test]
    fn identity_rectification_passes_estimator_through() {
        let k = test_intrinsics(8, 8);
        let img = gradient_card(8, 8);
        let g = UnitVec3::y_axis();
        let truth = constant_map(8, 8, UnitVec3::new(0.0, 0.6, 0.8).unwrap());
        let truth_clone = truth.clone();
        let out = rectify_estimate_unrectify(&img, &g, &g, &k, move |_| truth_clone).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let got = out.get(x, y).unwrap();
                let want = truth.get(x, y).unwrap();
                assert!((got.as_vec3() - want.as_vec3()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_estimator_comes_back_rotated() {
        // Estimator that always answers global +y: the tilted-frame output
        // must be the constant R^T (0, 1, 0) on valid pixels.
        let k = test_intrinsics(32, 32);
        let img = gradient_card(32, 32);
        let g = UnitVec3::new(0.2, 0.9, 0.1).unwrap();
        let e = UnitVec3::y_axis();
        let r = rotation_between(&g, &e).unwrap();
        let expected = r.transpose().apply(&UnitVec3::y_axis().as_vec3());

        let out = rectify_estimate_unrectify(&img, &g, &e, &k, |rect: &ImageGrid| {
            constant_map(rect.width(), rect.height(), UnitVec3::y_axis())
        })
        .unwrap();
        let mut seen = 0;
        for y in 0..32 {
            for x in 0..32 {
                if let Some(n) = out.get(x, y) {
                    assert!((n.as_vec3() - expected).norm() < 1e-9);
                    seen += 1;
                }
            }
        }
        assert!(seen > 0, "no valid pixels after round trip");
    }
}
