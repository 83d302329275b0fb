//! `optimize-e`: fit a mixture to the image's own normals and run projected
//! gradient descent for the principle direction against a reference
//! histogram.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use tilt_rectify::io;
use tilt_rectify::rectifier::{
    optimize_e_multistart, spread_inits, AnnealStage, RectifierConfig, RectifierError,
};
use tilt_rectify::stats::fit_gmm;

use crate::manifest::ManifestBuilder;
use crate::util::parse_vec3;
use crate::CliError;

#[derive(Args)]
pub struct OptimizeEArgs {
    /// The tilted image (16-bit RGB PNG); dimensions must match the normals.
    #[arg(long)]
    pub image: PathBuf,
    /// The image's normal map (16-bit RGB PNG).
    #[arg(long)]
    pub normals: PathBuf,
    /// Gravity direction in the image frame, "x,y,z".
    #[arg(long)]
    pub gravity: String,
    /// Reference histogram JSON.
    #[arg(long)]
    pub q: PathBuf,
    /// Mixture mode count for the image distribution.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Weight of the visibility/area term.
    #[arg(long, default_value_t = 0.1)]
    pub lambda_e: f64,
    /// Camera intrinsics JSON.
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Initial principle direction "x,y,z"; gravity when omitted.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long, default_value_t = 2e-3)]
    pub step: f64,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Mini-batch size (0 = full sample).
    #[arg(long, default_value_t = 0)]
    pub batch: usize,
    /// Coarse-to-fine blur schedule over the reference histogram: a comma
    /// list of blur passes, each stage quartering the step (e.g. "18,4,0";
    /// "0" disables annealing).
    #[arg(long, default_value = "18,4,0")]
    pub anneal: String,
    /// Restart ring: run four extra starts offset this many degrees from the
    /// init and keep the lowest final objective (0 = single start). Guards
    /// against wrong-assignment local minima under large combined tilts.
    #[arg(long, default_value_t = 40.0)]
    pub restart_ring_deg: f64,
    /// Cap on normal samples drawn from the map (seeded subsample).
    #[arg(long, default_value_t = 20_000)]
    pub max_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output result JSON.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: OptimizeEArgs) -> Result<(), CliError> {
    let g = parse_vec3(&args.gravity)?;
    let init = match &args.init {
        Some(text) => parse_vec3(text)?,
        None => g,
    };
    let image = io::read_image(&args.image)?;
    let normals = io::read_normal_map(&args.normals)?;
    if image.width() != normals.width() || image.height() != normals.height() {
        return Err(CliError::Usage(format!(
            "image is {}x{} but normals are {}x{}",
            image.width(),
            image.height(),
            normals.width(),
            normals.height()
        )));
    }
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
    let q = io::read_histogram(&args.q)?;

    let mut samples = normals.valid_normals();
    if samples.is_empty() {
        return Err(CliError::Usage("normal map has no valid pixels".into()));
    }
    tilt_rectify::stats::seeded_subsample(&mut samples, args.max_samples, args.seed);

    let gmm = fit_gmm(&samples, args.k, args.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let cfg = RectifierConfig {
        lambda_e: args.lambda_e,
        step: args.step,
        iters: args.iters,
        tol: args.tol,
        seed: args.seed,
        batch: args.batch,
        halve_step_every: 0,
    };

    let mut manifest = ManifestBuilder::new(
        "optimize-e",
        json!({
            "image": args.image.display().to_string(),
            "normals": args.normals.display().to_string(),
            "gravity": args.gravity,
            "q": args.q.display().to_string(),
            "k": args.k,
            "lambda_e": args.lambda_e,
            "intrinsics": args.intrinsics.display().to_string(),
            "step": args.step,
            "iters": args.iters,
            "tol": args.tol,
            "batch": args.batch,
            "anneal": args.anneal,
            "restart_ring_deg": args.restart_ring_deg,
            "max_samples": args.max_samples,
            "seed": args.seed,
            "out": args.out.display().to_string(),
        }),
        Some(args.seed),
    );
    manifest.input(&args.image);
    manifest.input(&args.normals);
    manifest.input(&args.q);
    manifest.input(&args.intrinsics);

    let schedule: Vec<AnnealStage> = {
        let mut stages = Vec::new();
        for (i, part) in args.anneal.split(',').enumerate() {
            let blur: usize = part.trim().parse().map_err(|_| {
                CliError::Usage(format!("bad blur count {part:?} in --anneal {:?}", args.anneal))
            })?;
            stages.push(AnnealStage { blur, step_scale: 0.25f64.powi(i as i32) });
        }
        stages
    };

    let inits = if args.restart_ring_deg > 0.0 {
        spread_inits(&init, &[args.restart_ring_deg.to_radians()])
    } else {
        vec![init]
    };
    let result = match optimize_e_multistart(&inits, &g, &gmm, &samples, &q, &k, &cfg, &schedule) {
        Ok(r) => r,
        Err(e @ RectifierError::AntipodalDrift { .. }) => {
            return Err(CliError::OptimizerAbort(e.to_string()));
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };

    io::write_rectifier_result(&result, &args.out)?;
    manifest.output(&args.out);
    manifest.item(json!({
        "e_star": [result.e_star.x(), result.e_star.y(), result.e_star.z()],
        "converged": result.converged,
        "iterations": result.objective_trace.len().saturating_sub(1),
        "samples": samples.len(),
    }));
    let angle_deg = g.dot(&result.e_star).clamp(-1.0, 1.0).acos().to_degrees();
    println!(
        "e* = ({}, {}, {}), {:.2} deg from gravity, converged = {}",
        io::fmt_g9(result.e_star.x()),
        io::fmt_g9(result.e_star.y()),
        io::fmt_g9(result.e_star.z()),
        angle_deg,
        result.converged
    );
    manifest.write(&args.out.with_extension("manifest.json"))
}
