//! `rectify`: warp an image and its normal map into the rectified frame for
//! a given gravity / principle-direction pair, recording visibility stats.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use tilt_rectify::geometry::{homography_from_rotation, rotation_between};
use tilt_rectify::io;
use tilt_rectify::warp::{invisible_count, warp_image, warp_normal_map, Interpolation};

use crate::manifest::ManifestBuilder;
use crate::util::parse_vec3;
use crate::CliError;

#[derive(Args)]
pub struct RectifyArgs {
    /// Tilted input image (16-bit RGB PNG).
    #[arg(long)]
    pub image: PathBuf,
    /// Tilted normal map (16-bit RGB PNG).
    #[arg(long)]
    pub normals: PathBuf,
    /// Gravity direction "x,y,z".
    #[arg(long)]
    pub g: String,
    /// Principle direction "x,y,z".
    #[arg(long)]
    pub e: String,
    /// Camera intrinsics JSON.
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: RectifyArgs) -> Result<(), CliError> {
    let g = parse_vec3(&args.g)?;
    let e = parse_vec3(&args.e)?;
    let image = io::read_image(&args.image)?;
    let normals = io::read_normal_map(&args.normals)?;
    let k = io::read_intrinsics(&args.intrinsics)?;
    if k.width != image.width() || k.height != image.height() {
        return Err(CliError::Usage(format!(
            "intrinsics are {}x{} but image is {}x{}",
            k.width,
            k.height,
            image.width(),
            image.height()
        )));
    }
    let r = rotation_between(&g, &e).map_err(|err| CliError::Usage(err.to_string()))?;
    let h = homography_from_rotation(&k, &r);

    std::fs::create_dir_all(&args.out)
        .map_err(|err| CliError::Usage(format!("cannot create {}: {err}", args.out.display())))?;

    let rectified_image = warp_image(&image, &h, Interpolation::Bilinear);
    let rectified_normals = warp_normal_map(&normals, &r, &k, Interpolation::Bilinear);
    let invisible_image = invisible_count(&rectified_image);
    let invisible_normals = invisible_count(&rectified_normals);

    let image_path = args.out.join("image.png");
    let normals_path = args.out.join("normals.png");
    let stats_path = args.out.join("stats.json");
    io::write_image(&rectified_image.data, &image_path)?;
    io::write_normal_map(&rectified_normals.data, &normals_path)?;
    let stats = format!(
        "{{\"height\":{},\"invisible_image\":{},\"invisible_normals\":{},\"width\":{}}}",
        k.height, invisible_image, invisible_normals, k.width
    );
    io::write_text(&stats_path, &stats)?;

    let mut manifest = ManifestBuilder::new(
        "rectify",
        json!({
            "image": args.image.display().to_string(),
            "normals": args.normals.display().to_string(),
            "g": args.g,
            "e": args.e,
            "intrinsics": args.intrinsics.display().to_string(),
            "out": args.out.display().to_string(),
        }),
        None,
    );
    manifest.input(&args.image);
    manifest.input(&args.normals);
    manifest.input(&args.intrinsics);
    manifest.output(&image_path);
    manifest.output(&normals_path);
    manifest.output(&stats_path);
    manifest.item(json!({
        "invisible_image": invisible_image,
        "invisible_normals": invisible_normals,
    }));
    manifest.write(&args.out.join("manifest.json"))
}
