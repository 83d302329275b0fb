//! `refine-planes`: refine noisy plane-instance masks against depth and
//! normals, writing the kept masks plus a kept/discarded manifest.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use tilt_rectify::io;
use tilt_rectify::planes::{refine_masks, RefineConfig, RefineStatus};

use crate::manifest::ManifestBuilder;
use crate::util::expand_glob;
use crate::CliError;

#[derive(Args)]
pub struct RefinePlanesArgs {
    /// Depth map (16-bit grayscale PNG, millimeters).
    #[arg(long)]
    pub depth: PathBuf,
    /// Normal map (16-bit RGB PNG).
    #[arg(long)]
    pub normals: PathBuf,
    /// Plane mask glob (8-bit grayscale PNG, nonzero = in-mask).
    #[arg(long)]
    pub masks: String,
    /// Camera intrinsics JSON.
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Keep a refined mask iff |refined| / |original| exceeds this.
    #[arg(long, default_value_t = 0.5)]
    pub keep_ratio: f64,
    /// RANSAC inlier threshold, meters.
    #[arg(long, default_value_t = 0.02)]
    pub inlier_thresh: f64,
    /// Region-growth point-plane distance, meters.
    #[arg(long, default_value_t = 0.20)]
    pub dist_thresh: f64,
    /// Region-growth normal agreement, degrees.
    #[arg(long, default_value_t = 30.0)]
    pub angle_deg: f64,
    #[arg(long, default_value_t = 500)]
    pub ransac_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: RefinePlanesArgs) -> Result<(), CliError> {
    let depth = io::read_depth_map(&args.depth)?;
    let normals = io::read_normal_map(&args.normals)?;
    let k = io::read_intrinsics(&args.intrinsics)?;
    let mask_paths = expand_glob(&args.masks)?;
    if depth.width() != normals.width() || depth.height() != normals.height() {
        return Err(CliError::Usage(format!(
            "depth is {}x{} but normals are {}x{}",
            depth.width(),
            depth.height(),
            normals.width(),
            normals.height()
        )));
    }

    let mut masks = Vec::new();
    for path in &mask_paths {
        let (mask, w, h) = io::read_mask(path)?;
        if w != depth.width() || h != depth.height() {
            return Err(CliError::Usage(format!(
                "mask {} is {w}x{h} but depth is {}x{}",
                path.display(),
                depth.width(),
                depth.height()
            )));
        }
        masks.push(mask);
    }

    let cfg = RefineConfig {
        inlier_thresh: args.inlier_thresh,
        dist_thresh: args.dist_thresh,
        angle_thresh: args.angle_deg.to_radians(),
        keep_ratio: args.keep_ratio,
        ransac_iters: args.ransac_iters,
        seed: args.seed,
    };
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", args.out.display())))?;

    let outcomes = refine_masks(&masks, &depth, &normals, &k, &cfg);

    let mut manifest = ManifestBuilder::new(
        "refine-planes",
        json!({
            "depth": args.depth.display().to_string(),
            "normals": args.normals.display().to_string(),
            "masks": args.masks,
            "intrinsics": args.intrinsics.display().to_string(),
            "keep_ratio": args.keep_ratio,
            "inlier_thresh": args.inlier_thresh,
            "dist_thresh": args.dist_thresh,
            "angle_deg": args.angle_deg,
            "ransac_iters": args.ransac_iters,
            "seed": args.seed,
            "out": args.out.display().to_string(),
        }),
        Some(args.seed),
    );
    manifest.input(&args.depth);
    manifest.input(&args.normals);
    manifest.input(&args.intrinsics);

    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for outcome in &outcomes {
        let source = mask_paths[outcome.index].display().to_string();
        match &outcome.status {
            RefineStatus::Kept { mask, plane, inliers, ratio } => {
                let out_path = args.out.join(format!("refined_{:04}.png", outcome.index));
                io::write_mask(mask, depth.width(), depth.height(), &out_path)?;
                manifest.output(&out_path);
                kept.push(json!({
                    "index": outcome.index,
                    "source": source,
                    "refined": out_path.display().to_string(),
                    "pixels": mask.len(),
                    "ransac_inliers": inliers,
                    "ratio": ratio,
                    "plane_normal": [plane.normal.x(), plane.normal.y(), plane.normal.z()],
                    "plane_offset": plane.offset,
                }));
            }
            RefineStatus::Discarded { inliers, grown, ratio } => {
                discarded.push(json!({
                    "index": outcome.index,
                    "source": source,
                    "ransac_inliers": inliers,
                    "grown_pixels": grown,
                    "ratio": ratio,
                }));
            }
            RefineStatus::Failed { error } => {
                discarded.push(json!({
                    "index": outcome.index,
                    "source": source,
                    "error": error,
                }));
            }
        }
    }
    let kept_count = kept.len();
    let report = json!({"kept": kept, "discarded": discarded});
    let report_path = args.out.join("refined.json");
    io::write_text(
        &report_path,
        &serde_json::to_string_pretty(&report).expect("report json"),
    )?;
    manifest.output(&report_path);
    println!(
        "kept {} of {} mask(s)",
        kept_count,
        outcomes.len()
    );
    manifest.write(&args.out.join("manifest.json"))
}
