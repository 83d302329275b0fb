//! Direction distributions on the sphere: discrete slant/tilt histograms and
//! isotropic Gaussian mixtures, with densities, gradients, and KL divergence.

use thiserror::Error;

use crate::geometry::{slant_tilt_from_normal, UnitVec3, SLANT_TILT_EPS};
use crate::math::{pairwise_sum, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("input sample list is empty")]
    EmptyInput,
    #[error("histogram binnings differ: {0}x{1} vs {2}x{3}")]
    BinningMismatch(u32, u32, u32, u32),
    #[error("need at least {need} samples to fit {need} modes, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("invalid histogram mass: {0}")]
    InvalidMass(String),
}

/// Equal-angle grid resolution over slant in `[-pi/2, pi/2]` and tilt in
/// `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binning {
    pub n_theta: u32,
    pub n_phi: u32,
}

impl Binning {
    pub fn new(n_theta: u32, n_phi: u32) -> Self {
        assert!(n_theta >= 1 && n_phi >= 1, "binning must be at least 1x1");
        Binning { n_theta, n_phi }
    }

    pub fn bin_count(&self) -> usize {
        (self.n_theta * self.n_phi) as usize
    }

    /// Row-major (slant row, tilt column) bin index for an angle pair.
    pub fn bin_index(&self, theta: f64, phi: f64) -> usize {
        let pi = std::f64::consts::PI;
        let ti = ((theta + pi / 2.0) / pi * self.n_theta as f64).floor();
        let ti = (ti.max(0.0) as u32).min(self.n_theta - 1);
        let pj = ((phi + pi) / (2.0 * pi) * self.n_phi as f64).floor();
        let pj = (pj.max(0.0) as u32).min(self.n_phi - 1);
        (ti * self.n_phi + pj) as usize
    }

    pub fn bin_of(&self, n: &UnitVec3) -> usize {
        let (theta, z) = slant_tilt_from_normal(n, SLANT_TILT_EPS);
        self.bin_index(theta, z.phi())
    }
}

impl Default for Binning {
    /// 18 slant x 36 tilt bins (10-degree cells).
    fn default() -> Self {
        Binning { n_theta: 18, n_phi: 36 }
    }
}

/// Default per-bin floor mass added before normalization.
pub const HISTOGRAM_FLOOR: f64 = 1e-8;

/// Discrete probability mass over slant/tilt bins. Every bin is strictly
/// positive (the floor guarantees it) and the masses sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalHistogram {
    binning: Binning,
    floor: f64,
    mass: Vec<f64>,
}

impl SphericalHistogram {
    pub fn binning(&self) -> Binning {
        self.binning
    }
    pub fn floor(&self) -> f64 {
        self.floor
    }
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn mass_at(&self, bin: usize) -> f64 {
        self.mass[bin]
    }

    /// Builds a histogram from explicit per-bin mass (e.g. read from disk).
    /// Entries must be positive; they are re-normalized to sum exactly one.
    pub fn from_mass(
        binning: Binning,
        floor: f64,
        mass: Vec<f64>,
    ) -> Result<Self, StatsError> {
        if mass.len() != binning.bin_count() {
            return Err(StatsError::InvalidMass(format!(
                "expected {} bins, got {}",
                binning.bin_count(),
                mass.len()
            )));
        }
        if mass.iter().any(|m| m.is_nan() || *m <= 0.0 || !m.is_finite()) {
            return Err(StatsError::InvalidMass(
                "all bin masses must be strictly positive and finite".into(),
            ));
        }
        let total = pairwise_sum(&mass);
        let mass = mass.into_iter().map(|m| m / total).collect();
        Ok(SphericalHistogram { binning, floor, mass })
    }

    /// Log-mass at the bin containing the angle pair (piecewise constant).
    pub fn log_mass(&self, theta: f64, phi: f64) -> f64 {
        self.mass[self.binning.bin_index(theta, phi)].ln()
    }

    /// Mass-conserving separable blur: `iterations` passes of a [1, 2, 1]/4
    /// binomial kernel, periodic along tilt and reflecting at the slant ends
    /// (t passes approximate a Gaussian of sigma^2 = t/2 bins^2).
    ///
    /// A histogram built from sharply clustered normals is flat at floor
    /// level between its peaks, which starves gradient descent of any pull
    /// more than a bin away; optimizing against progressively less-blurred
    /// copies (coarse to fine) restores a global basin without touching the
    /// distribution the exact KL reports against.
    pub fn blurred(&self, iterations: usize) -> SphericalHistogram {
        let (nt, np) = (self.binning.n_theta as usize, self.binning.n_phi as usize);
        let mut mass = self.mass.clone();
        let mut next = vec![0.0; mass.len()];
        for _ in 0..iterations {
            // Tilt axis, periodic.
            for i in 0..nt {
                for j in 0..np {
                    let left = mass[i * np + (j + np - 1) % np];
                    let mid = mass[i * np + j];
                    let right = mass[i * np + (j + 1) % np];
                    next[i * np + j] = 0.25 * left + 0.5 * mid + 0.25 * right;
                }
            }
            // Slant axis, reflecting.
            for j in 0..np {
                for i in 0..nt {
                    let up = next[i.saturating_sub(1).min(nt - 1) * np + j];
                    let mid = next[i * np + j];
                    let down = next[(i + 1).min(nt - 1) * np + j];
                    mass[i * np + j] = 0.25 * up + 0.5 * mid + 0.25 * down;
                }
            }
        }
        let total = pairwise_sum(&mass);
        let mass = mass.into_iter().map(|m| m / total).collect();
        SphericalHistogram { binning: self.binning, floor: self.floor, mass }
    }

    /// Smooth log-mass lookup: bilinear interpolation of `ln(mass)` over bin
    /// centers, wrapping in tilt and clamping at the slant poles. Returns the
    /// value and its partial derivatives with respect to `theta` and `phi`.
    ///
    /// The exact bin lookup has an almost-everywhere-zero derivative, which
    /// makes it useless as a pull toward the reference distribution; this
    /// interpolant is the smooth surrogate the optimizer differentiates
    /// (mirroring the smooth area surrogate that stands in for the exact
    /// invisible-pixel count).
    pub fn log_mass_bilinear(&self, theta: f64, phi: f64) -> (f64, f64, f64) {
        let pi = std::f64::consts::PI;
        let nt = self.binning.n_theta as f64;
        let np = self.binning.n_phi as f64;
        let dt = pi / nt;
        let dp = 2.0 * pi / np;

        // Slant axis: clamp to the center range; constant beyond the ends.
        let t = ((theta + pi / 2.0) / dt - 0.5).clamp(0.0, nt - 1.0);
        let i0 = (t.floor() as u32).min(self.binning.n_theta - 1);
        let i1 = (i0 + 1).min(self.binning.n_theta - 1);
        let ft = t - i0 as f64;

        // Tilt axis: periodic.
        let s = ((phi + pi) / dp - 0.5).rem_euclid(np);
        let j0 = (s.floor() as u32).min(self.binning.n_phi - 1);
        let j1 = (j0 + 1) % self.binning.n_phi;
        let fs = s - j0 as f64;

        let ln = |i: u32, j: u32| self.mass[(i * self.binning.n_phi + j) as usize].ln();
        let (a, b, c, d) = (ln(i0, j0), ln(i0, j1), ln(i1, j0), ln(i1, j1));

        let top = a + (b - a) * fs;
        let bot = c + (d - c) * fs;
        let value = top + (bot - top) * ft;

        // Chain through the axis scalings; zero along clamped slant ends.
        let dv_dt = if t <= 0.0 || t >= nt - 1.0 { 0.0 } else { (bot - top) / dt };
        let dv_dp = ((b - a) + ((d - c) - (b - a)) * ft) / dp;
        (value, dv_dt, dv_dp)
    }
}

/// Bins normals by slant/tilt, adds `floor` to every bin, and normalizes.
/// The floor must be positive: it is what keeps every bin's mass nonzero
/// (and the KL terms finite).
pub fn histogram_from_normals(
    normals: &[UnitVec3],
    binning: Binning,
    floor: f64,
) -> Result<SphericalHistogram, StatsError> {
    if normals.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if floor.is_nan() || floor <= 0.0 || !floor.is_finite() {
        return Err(StatsError::InvalidMass(format!(
            "floor must be a positive finite mass, got {floor}"
        )));
    }
    let mut counts = vec![floor; binning.bin_count()];
    for n in normals {
        counts[binning.bin_of(n)] += 1.0;
    }
    let total = pairwise_sum(&counts);
    let mass = counts.into_iter().map(|c| c / total).collect();
    Ok(SphericalHistogram { binning, floor, mass })
}

/// `D_KL(P || Q) = sum_b P_b ln(P_b / Q_b)`; non-negative, zero iff `P = Q`.
pub fn kl_divergence(p: &SphericalHistogram, q: &SphericalHistogram) -> Result<f64, StatsError> {
    if p.binning != q.binning {
        return Err(StatsError::BinningMismatch(
            p.binning.n_theta,
            p.binning.n_phi,
            q.binning.n_theta,
            q.binning.n_phi,
        ));
    }
    let terms: Vec<f64> = p
        .mass
        .iter()
        .zip(&q.mass)
        .map(|(pb, qb)| pb * (pb / qb).ln())
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Minimum isotropic variance kept by the EM fit.
pub const GMM_VARIANCE_FLOOR: f64 = 1e-6;

/// Isotropic Gaussian mixture in ambient R^3.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec3>,
    variances: Vec<f64>,
}

impl GaussianMixture {
    /// Component count.
    pub fn k(&self) -> usize {
        self.weights.len()
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn means(&self) -> &[Vec3] {
        &self.means
    }
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn from_parts(
        weights: Vec<f64>,
        means: Vec<Vec3>,
        variances: Vec<f64>,
    ) -> Result<Self, StatsError> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
            return Err(StatsError::InvalidMass("mismatched mixture part lengths".into()));
        }
        let total = pairwise_sum(&weights);
        if total.is_nan() || total <= 0.0 {
            return Err(StatsError::InvalidMass("weights must sum to a positive value".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        let variances = variances
            .into_iter()
            .map(|v| v.max(GMM_VARIANCE_FLOOR))
            .collect();
        Ok(GaussianMixture { weights, means, variances })
    }
}

/// Mixture density `sum_j w_j (2 pi s_j^2)^{-3/2} exp(-||x - mu_j||^2 / (2 s_j^2))`.
pub fn gmm_density(p: &GaussianMixture, x: &Vec3) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut acc = 0.0;
    for j in 0..p.k() {
        let s2 = p.variances[j];
        let d2 = (*x - p.means[j]).norm_squared();
        acc += p.weights[j] * (two_pi * s2).powf(-1.5) * (-d2 / (2.0 * s2)).exp();
    }
    acc
}

/// Gradient of [`gmm_density`]: `sum_j w_j N_j(x) (mu_j - x) / s_j^2`.
pub fn gmm_density_grad(p: &GaussianMixture, x: &Vec3) -> Vec3 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut acc = Vec3::ZERO;
    for j in 0..p.k() {
        let s2 = p.variances[j];
        let diff = p.means[j] - *x;
        let nj = (two_pi * s2).powf(-1.5) * (-diff.norm_squared() / (2.0 * s2)).exp();
        acc = acc + diff * (p.weights[j] * nj / s2);
    }
    acc
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Expectation-maximization fit with k-means++ initialization and isotropic
/// covariances: fixed 50 iterations or log-likelihood change below `1e-8`,
/// deterministic for a given seed. Also returns the per-iteration
/// log-likelihood trace.
pub fn fit_gmm_detailed(
    normals: &[UnitVec3],
    k: usize,
    seed: u64,
) -> Result<(GaussianMixture, Vec<f64>), StatsError> {
    use rand::Rng;
    use rand::SeedableRng;

    if k == 0 || normals.len() < k {
        return Err(StatsError::TooFewSamples { need: k.max(1), got: normals.len() });
    }
    let xs: Vec<Vec3> = normals.iter().map(|n| n.as_vec3()).collect();
    let n = xs.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut means: Vec<Vec3> = Vec::with_capacity(k);
    means.push(xs[rng.random_range(0..n)]);
    let mut d2 = vec![0.0_f64; n];
    while means.len() < k {
        let mut total = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let best = means
                .iter()
                .map(|m| (*x - *m).norm_squared())
                .fold(f64::INFINITY, f64::min);
            d2[i] = best;
            total += best;
        }
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        means.push(xs[next]);
    }

    let mut weights = vec![1.0 / k as f64; k];
    let mut variances = vec![0.1_f64; k];
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    let mut resp = vec![0.0_f64; k];

    for _ in 0..50 {
        // E step (log space), accumulating the M-step sufficient statistics.
        let mut sum_r = vec![0.0_f64; k];
        let mut sum_rx = vec![Vec3::ZERO; k];
        let mut sum_rxx = vec![0.0_f64; k];
        let mut ll = 0.0;
        for x in &xs {
            for j in 0..k {
                let s2 = variances[j];
                let d2 = (*x - means[j]).norm_squared();
                resp[j] = weights[j].ln() - 1.5 * (two_pi * s2).ln() - d2 / (2.0 * s2);
            }
            let lse = log_sum_exp(&resp);
            ll += lse;
            for j in 0..k {
                let r = (resp[j] - lse).exp();
                sum_r[j] += r;
                sum_rx[j] = sum_rx[j] + *x * r;
                sum_rxx[j] += r * x.norm_squared();
            }
        }
        // M step; sum_j r ||x - mu_new||^2 = sum_j r ||x||^2 - ||mu_new||^2 sum_j r.
        for j in 0..k {
            if sum_r[j] < 1e-12 {
                continue; // starved component keeps its parameters
            }
            means[j] = sum_rx[j] * (1.0 / sum_r[j]);
            weights[j] = sum_r[j] / n as f64;
            let scatter = (sum_rxx[j] - means[j].norm_squared() * sum_r[j]).max(0.0);
            variances[j] = (scatter / (3.0 * sum_r[j])).max(GMM_VARIANCE_FLOOR);
        }
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }

        trace.push(ll);
        if (ll - prev_ll).abs() < 1e-8 {
            break;
        }
        prev_ll = ll;
    }

    let mixture = GaussianMixture { weights, means, variances };
    Ok((mixture, trace))
}

/// [`fit_gmm_detailed`] without the log-likelihood trace.
pub fn fit_gmm(normals: &[UnitVec3], k: usize, seed: u64) -> Result<GaussianMixture, StatsError> {
    fit_gmm_detailed(normals, k, seed).map(|(m, _)| m)
}

/// Deterministic seeded subsample: truncates `items` to `cap` elements chosen
/// uniformly without replacement (no-op when `cap` covers the input).
pub fn seeded_subsample<T>(items: &mut Vec<T>, cap: usize, seed: u64) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if cap == 0 || items.len() <= cap {
        return;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    items.partial_shuffle(&mut rng, cap);
    items.truncate(cap);
}
