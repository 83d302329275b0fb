//! `synth`: render the upright box room, warp it by random roll/pitch tilts,
//! and write image + normal-map pairs plus a manifest with the ground truth.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use serde_json::json;
use tilt_rectify::geometry::CameraIntrinsics;
use tilt_rectify::io;
use tilt_rectify::synth::{
    default_scene, random_tilt_angles, synthesize_tilted, tilt_rotation, SceneSpec, TexturePattern,
};

use crate::manifest::ManifestBuilder;
use crate::CliError;

#[derive(Args)]
pub struct SynthArgs {
    /// Scene config JSON; the built-in default scene when omitted.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Number of samples to generate.
    #[arg(long)]
    pub count: usize,
    /// Roll range in degrees (uniform in +-range).
    #[arg(long, default_value_t = 45.0)]
    pub roll_deg: f64,
    /// Pitch range in degrees (uniform in +-range).
    #[arg(long, default_value_t = 45.0)]
    pub pitch_deg: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// On-disk scene description.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneConfig {
    room: [f64; 3],
    camera_pos: [f64; 3],
    #[serde(default)]
    camera_yaw: f64,
    #[serde(default)]
    camera_pitch: f64,
    #[serde(default)]
    camera_roll: f64,
    #[serde(default = "default_cells")]
    checker_cells_per_meter: f64,
    intrinsics: CameraIntrinsics,
}

fn default_cells() -> f64 {
    4.0
}

fn load_scene(args: &SynthArgs) -> Result<SceneSpec, CliError> {
    let Some(path) = &args.scene else {
        let k = CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0, 320, 240).unwrap();
        return Ok(default_scene(k));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read scene {}: {e}", path.display())))?;
    let cfg: SceneConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("scene config: {e}")))?;
    cfg.intrinsics
        .validate()
        .map_err(|e| CliError::Usage(format!("scene intrinsics: {e}")))?;
    Ok(SceneSpec {
        room: cfg.room,
        camera_pos: cfg.camera_pos,
        camera_yaw: cfg.camera_yaw,
        camera_pitch: cfg.camera_pitch,
        camera_roll: cfg.camera_roll,
        texture: TexturePattern::Checker { cells_per_meter: cfg.checker_cells_per_meter },
        intrinsics: cfg.intrinsics,
    })
}

pub fn run(args: SynthArgs) -> Result<(), CliError> {
    if args.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    for range in [args.roll_deg, args.pitch_deg] {
        if !(0.0..90.0).contains(&range) {
            return Err(CliError::Usage(format!("tilt range {range} outside [0, 90) degrees")));
        }
    }
    let scene = load_scene(&args)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", args.out.display())))?;

    let mut manifest = ManifestBuilder::new(
        "synth",
        json!({
            "scene": args.scene.as_ref().map(|p| p.display().to_string()),
            "count": args.count,
            "roll_deg": args.roll_deg,
            "pitch_deg": args.pitch_deg,
            "seed": args.seed,
            "out": args.out.display().to_string(),
        }),
        Some(args.seed),
    );

    for index in 0..args.count {
        let item_seed = args.seed.wrapping_add(index as u64);
        let (roll, pitch) = random_tilt_angles(
            args.roll_deg.to_radians(),
            args.pitch_deg.to_radians(),
            item_seed,
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
        let r = tilt_rotation(roll, pitch);
        let sample =
            synthesize_tilted(&scene, &r).map_err(|e| CliError::Usage(e.to_string()))?;

        let image_path = args.out.join(format!("sample_{index:04}.png"));
        let normals_path = args.out.join(format!("sample_{index:04}_normals.png"));
        io::write_image(&sample.image, &image_path)?;
        io::write_normal_map(&sample.normals, &normals_path)?;
        manifest.output(&image_path);
        manifest.output(&normals_path);
        manifest.item(json!({
            "index": index,
            "seed": item_seed,
            "roll_deg": roll.to_degrees(),
            "pitch_deg": pitch.to_degrees(),
            "g": [sample.g.x(), sample.g.y(), sample.g.z()],
            "e_gt": [sample.e_gt.x(), sample.e_gt.y(), sample.e_gt.z()],
            "e_gt_source": "analytic-upright",
            "image": image_path.display().to_string(),
            "normals": normals_path.display().to_string(),
        }));
    }
    let intrinsics_path = args.out.join("intrinsics.json");
    io::write_intrinsics(&scene.intrinsics, &intrinsics_path)?;
    manifest.output(&intrinsics_path);
    manifest.write(&args.out.join("manifest.json"))
}
