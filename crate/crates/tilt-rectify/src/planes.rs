//! Plane-annotation refinement: strict RANSAC plane fitting on back-projected
//! depth, followed by normal-guided region growing, keeping a refined mask
//! only when it covers enough of the original annotation.

use std::collections::BTreeSet;
use std::collections::VecDeque;

use thiserror::Error;

use crate::geometry::{CameraIntrinsics, UnitVec3};
use crate::math::{symmetric_eigen3, Mat3, Vec3};
use crate::warp::NormalMap;

#[derive(Debug, Error, PartialEq)]
pub enum PlaneError {
    #[error("need at least 3 non-collinear points, got {got}")]
    DegenerateInput { got: usize },
    #[error("seed mask is empty")]
    EmptySeed,
    #[error("mask/map dimensions disagree: {0}")]
    DimensionMismatch(String),
}

/// Per-pixel metric depth with a validity mask (valid pixels have depth > 0).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn invalid(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        DepthMap { width, height, depth: vec![0.0; n], valid: vec![false; n] }
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

    /// Depth in meters, or `None` on invalid pixels.
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        if self.is_valid(x, y) {
            Some(self.depth[self.idx(x, y)])
        } else {
            None
        }
    }

    /// Raw stored value (0.0 on invalid pixels).
    #[inline]
    pub fn raw(&self, x: u32, y: u32) -> f64 {
        self.depth[self.idx(x, y)]
    }

    /// Sets a valid depth; non-positive values mark the pixel invalid.
    pub fn set(&mut self, x: u32, y: u32, depth: f64) {
        let i = self.idx(x, y);
        if depth > 0.0 && depth.is_finite() {
            self.depth[i] = depth;
            self.valid[i] = true;
        } else {
            self.depth[i] = 0.0;
            self.valid[i] = false;
        }
    }
}

/// The plane `{ p : normal . p = offset }` in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: UnitVec3,
    pub offset: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.as_vec3().dot(p) - self.offset
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.signed_distance(p).abs()
    }

    /// Flips so the normal faces the camera at the origin (offset <= 0), the
    /// same orientation the renderer gives map normals.
    fn oriented_toward_camera(self) -> Plane {
        if self.offset > 0.0 {
            Plane { normal: self.normal.flipped(), offset: -self.offset }
        } else {
            self
        }
    }
}

/// A set of pixel coordinates belonging to one plane instance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PlaneMask {
    pixels: BTreeSet<(u32, u32)>,
}

impl PlaneMask {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pixels<I: IntoIterator<Item = (u32, u32)>>(pixels: I) -> Self {
        PlaneMask { pixels: pixels.into_iter().collect() }
    }

    pub fn insert(&mut self, x: u32, y: u32) {
        self.pixels.insert((x, y));
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.pixels.contains(&(x, y))
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(u32, u32)> {
        self.pixels.iter()
    }

    pub fn in_bounds(&self, width: u32, height: u32) -> bool {
        self.pixels.iter().all(|&(x, y)| x < width && y < height)
    }

    /// Intersection-over-union against another mask.
    pub fn iou(&self, other: &PlaneMask) -> f64 {
        let inter = self.pixels.intersection(&other.pixels).count();
        let union = self.pixels.union(&other.pixels).count();
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Back-projects pixel `(u, v)` at the given depth: `depth * K^-1 (u, v, 1)`.
pub fn unproject(k: &CameraIntrinsics, u: f64, v: f64, depth: f64) -> Vec3 {
    Vec3::new(
        depth * (u - k.cx) / k.fx,
        depth * (v - k.cy) / k.fy,
        depth,
    )
}

/// Least-squares plane through the points: centroid plus the scatter matrix's
/// smallest eigenvector. `None` for degenerate (rank-deficient) point sets.
fn fit_plane_lsq(points: &[Vec3], indices: &[usize]) -> Option<Plane> {
    if indices.len() < 3 {
        return None;
    }
    let inv = 1.0 / indices.len() as f64;
    let mut centroid = Vec3::ZERO;
    for &i in indices {
        centroid = centroid + points[i] * inv;
    }
    let mut scatter = Mat3::zeros();
    for &i in indices {
        let d = points[i] - centroid;
        scatter = scatter.add(&Mat3::outer(&d, &d));
    }
    let (vals, vecs) = symmetric_eigen3(&scatter);
    // Collinear points leave two near-zero eigenvalues.
    if vals[1] < 1e-12 * vals[2].max(1e-300) {
        return None;
    }
    let normal = Vec3::new(vecs.m[0][0], vecs.m[1][0], vecs.m[2][0]);
    let normal = UnitVec3::from_vec3(normal).ok()?;
    let offset = normal.as_vec3().dot(&centroid);
    Some(Plane { normal, offset }.oriented_toward_camera())
}

fn count_inliers(points: &[Vec3], plane: &Plane, thresh: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| plane.distance(p) <= thresh)
        .map(|(i, _)| i)
        .collect()
}

/// RANSAC plane fit: best of `iters` random 3-point hypotheses by inlier
/// count (point-plane distance <= `inlier_thresh`), then a least-squares
/// refit on the winning inliers. Deterministic for a given seed. The refit is
/// kept only if it does not lose inliers; otherwise the best hypothesis plane
/// is returned, so the result's inlier count dominates every sampled
/// hypothesis.
pub fn ransac_plane(
    points: &[Vec3],
    inlier_thresh: f64,
    iters: usize,
    seed: u64,
) -> Result<(Plane, Vec<usize>), PlaneError> {
    use rand::Rng;
    use rand::SeedableRng;

    if points.len() < 3 {
        return Err(PlaneError::DegenerateInput { got: points.len() });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Plane, Vec<usize>)> = None;
    for _ in 0..iters {
        let a = points[rng.random_range(0..points.len())];
        let b = points[rng.random_range(0..points.len())];
        let c = points[rng.random_range(0..points.len())];
        let normal = (b - a).cross(&(c - a));
        let Ok(unit) = UnitVec3::from_vec3(normal) else {
            continue; // coincident or collinear triple
        };
        let plane = Plane { normal: unit, offset: unit.as_vec3().dot(&a) }.oriented_toward_camera();
        let inliers = count_inliers(points, &plane, inlier_thresh);
        if best.as_ref().is_none_or(|(_, prev)| inliers.len() > prev.len()) {
            best = Some((plane, inliers));
        }
    }
    let (hypothesis, hypothesis_inliers) = best.ok_or(PlaneError::DegenerateInput {
        got: points.len(),
    })?;
    if let Some(refit) = fit_plane_lsq(points, &hypothesis_inliers) {
        let refit_inliers = count_inliers(points, &refit, inlier_thresh);
        if refit_inliers.len() >= hypothesis_inliers.len() {
            return Ok((refit, refit_inliers));
        }
    }
    Ok((hypothesis, hypothesis_inliers))
}

/// Breadth-first region growing through 4-connected neighbors. A seed pixel
/// enters the region if its back-projected point passes the distance test; a
/// neighbor joins only if it also agrees with the plane normal within
/// `angle_thresh`. Growth never crosses invalid-depth pixels.
pub fn region_grow(
    seed_mask: &PlaneMask,
    plane: &Plane,
    depth: &DepthMap,
    normals: &NormalMap,
    k: &CameraIntrinsics,
    dist_thresh: f64,
    angle_thresh: f64,
) -> Result<PlaneMask, PlaneError> {
    if seed_mask.is_empty() {
        return Err(PlaneError::EmptySeed);
    }
    if depth.width() != normals.width() || depth.height() != normals.height() {
        return Err(PlaneError::DimensionMismatch(format!(
            "depth {}x{} vs normals {}x{}",
            depth.width(),
            depth.height(),
            normals.width(),
            normals.height()
        )));
    }
    if !seed_mask.in_bounds(depth.width(), depth.height()) {
        return Err(PlaneError::DimensionMismatch("seed pixel out of image bounds".into()));
    }
    let (w, h) = (depth.width(), depth.height());
    let passes_distance = |x: u32, y: u32| -> bool {
        depth
            .get(x, y)
            .map(|d| plane.distance(&unproject(k, x as f64, y as f64, d)) < dist_thresh)
            .unwrap_or(false)
    };
    let cos_thresh = angle_thresh.cos();
    let passes_angle = |x: u32, y: u32| -> bool {
        normals
            .get(x, y)
            .map(|n| n.dot(&plane.normal) > cos_thresh)
            .unwrap_or(false)
    };

    let mut region = PlaneMask::new();
    let mut queue = VecDeque::new();
    for &(x, y) in seed_mask.iter() {
        if passes_distance(x, y) {
            region.insert(x, y);
            queue.push_back((x, y));
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        let neighbors = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbors {
            if nx >= w || ny >= h || region.contains(nx, ny) {
                continue;
            }
            if passes_distance(nx, ny) && passes_angle(nx, ny) {
                region.insert(nx, ny);
                queue.push_back((nx, ny));
            }
        }
    }
    Ok(region)
}

/// Thresholds for [`refine_masks`]; the defaults are the strict 2 cm RANSAC
/// inlier distance, 20 cm growth distance, and 30-degree normal agreement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub inlier_thresh: f64,
    pub dist_thresh: f64,
    pub angle_thresh: f64,
    /// Keep a refined mask iff |refined| / |original| exceeds this.
    pub keep_ratio: f64,
    pub ransac_iters: usize,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            inlier_thresh: 0.02,
            dist_thresh: 0.20,
            angle_thresh: 30.0_f64.to_radians(),
            keep_ratio: 0.5,
            ransac_iters: 500,
            seed: 0,
        }
    }
}

/// Outcome of refining one input mask.
#[derive(Debug, Clone)]
pub enum RefineStatus {
    Kept { mask: PlaneMask, plane: Plane, inliers: usize, ratio: f64 },
    Discarded { inliers: usize, grown: usize, ratio: f64 },
    Failed { error: String },
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub index: usize,
    pub status: RefineStatus,
}

/// Refines each mask independently (one bad mask never aborts the batch):
/// RANSAC on the mask's back-projected valid pixels, region growing from the
/// inliers, then the keep-ratio gate.
pub fn refine_masks(
    masks: &[PlaneMask],
    depth: &DepthMap,
    normals: &NormalMap,
    k: &CameraIntrinsics,
    cfg: &RefineConfig,
) -> Vec<RefineOutcome> {
    masks
        .iter()
        .enumerate()
        .map(|(index, mask)| RefineOutcome {
            index,
            status: refine_one(mask, depth, normals, k, cfg, cfg.seed.wrapping_add(index as u64)),
        })
        .collect()
}

fn refine_one(
    mask: &PlaneMask,
    depth: &DepthMap,
    normals: &NormalMap,
    k: &CameraIntrinsics,
    cfg: &RefineConfig,
    seed: u64,
) -> RefineStatus {
    if mask.is_empty() {
        return RefineStatus::Failed { error: PlaneError::EmptySeed.to_string() };
    }
    if !mask.in_bounds(depth.width(), depth.height()) {
        return RefineStatus::Failed {
            error: PlaneError::DimensionMismatch("mask pixel out of bounds".into()).to_string(),
        };
    }
    let mut pixels = Vec::new();
    let mut points = Vec::new();
    for &(x, y) in mask.iter() {
        if let Some(d) = depth.get(x, y) {
            pixels.push((x, y));
            points.push(unproject(k, x as f64, y as f64, d));
        }
    }
    let (plane, inlier_idx) = match ransac_plane(&points, cfg.inlier_thresh, cfg.ransac_iters, seed)
    {
        Ok(v) => v,
        Err(e) => return RefineStatus::Failed { error: e.to_string() },
    };
    let seed_mask = PlaneMask::from_pixels(inlier_idx.iter().map(|&i| pixels[i]));
    let grown = match region_grow(
        &seed_mask,
        &plane,
        depth,
        normals,
        k,
        cfg.dist_thresh,
        cfg.angle_thresh,
    ) {
        Ok(m) => m,
        Err(e) => return RefineStatus::Failed { error: e.to_string() },
    };
    let ratio = grown.len() as f64 / mask.len() as f64;
    if ratio > cfg.keep_ratio {
        RefineStatus::Kept { mask: grown, plane, inliers: inlier_idx.len(), ratio }
    } else {
        RefineStatus::Discarded { inliers: inlier_idx.len(), grown: grown.len(), ratio }
    }
}
