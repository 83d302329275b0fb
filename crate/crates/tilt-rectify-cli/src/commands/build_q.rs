//! `build-q`: pool the valid normals of every matched map into a reference
//! slant/tilt histogram.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use tilt_rectify::io;
use tilt_rectify::stats::{histogram_from_normals, Binning};

use crate::manifest::ManifestBuilder;
use crate::util::expand_glob;
use crate::CliError;

#[derive(Args)]
pub struct BuildQArgs {
    /// Normal-map glob, e.g. out/sample_*_normals.png.
    #[arg(long)]
    pub normals: String,
    /// Slant x tilt bin counts.
    #[arg(long, default_value = "18x36")]
    pub bins: String,
    /// Per-bin floor mass added before normalization.
    #[arg(long, default_value_t = 1e-8)]
    pub floor: f64,
    /// Output histogram JSON.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: BuildQArgs) -> Result<(), CliError> {
    let (n_theta, n_phi) = crate::util::parse_bins(&args.bins)?;
    if args.floor.is_nan() || args.floor <= 0.0 {
        return Err(CliError::Usage("--floor must be positive".into()));
    }
    let paths = expand_glob(&args.normals)?;

    let mut manifest = ManifestBuilder::new(
        "build-q",
        json!({
            "normals": args.normals,
            "bins": args.bins,
            "floor": args.floor,
            "out": args.out.display().to_string(),
        }),
        None,
    );

    let mut all = Vec::new();
    for path in &paths {
        let map = io::read_normal_map(path)?;
        let count_before = all.len();
        all.extend(map.valid_normals());
        manifest.input(path);
        manifest.item(json!({
            "path": path.display().to_string(),
            "valid_pixels": all.len() - count_before,
        }));
    }
    let hist = histogram_from_normals(&all, Binning::new(n_theta, n_phi), args.floor)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    io::write_histogram(&hist, &args.out)?;
    manifest.output(&args.out);

    let manifest_path = args.out.with_extension("manifest.json");
    manifest.write(&manifest_path)
}
