//! Spatial rectification of tilted-camera imagery.
//!
//! A tilted camera presents surface-normal estimators with a direction
//! distribution they were never trained on. This crate builds the machinery
//! to undo that: the shortest-arc rotation from the gravity direction `g` to
//! a principle direction `e` induces the homography `W = K R K^-1` that warps
//! a tilted image into a rectified one, and the best `e` is found by gradient
//! descent on the unit sphere, matching the rectified normal distribution
//! against a reference while penalizing pixels pushed out of view.
//!
//! Modules:
//! - [`geometry`]: unit vectors, slant/tilt angles, rotations, homographies;
//! - [`warp`]: image / normal-map warping and the
//!   rectify -> estimate -> unrectify composition;
//! - [`stats`]: spherical histograms, Gaussian mixtures, KL divergence;
//! - [`rectifier`]: the principle-direction objective, closed-form gradients,
//!   and the projected gradient descent solver;
//! - [`losses`]: L2 / angular / truncated-angular / slant-tilt losses with
//!   gradients;
//! - [`metrics`]: angular-error summaries and the slant/tilt decomposition;
//! - [`planes`]: RANSAC plane fitting and region-grown mask refinement;
//! - [`synth`]: procedural box-room scenes and tilted-sample generation;
//! - [`io`]: 16-bit PNG maps and canonical JSON/CSV formats;
//! - [`gradcheck`]: finite-difference audit of every analytic gradient.

pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod planes;
pub mod rectifier;
pub mod stats;
pub mod synth;
pub mod warp;

pub use geometry::{CameraIntrinsics, Homography, Rotation3, SlantTilt, TiltDirection, UnitVec3};
pub use math::{Mat3, Vec3};
