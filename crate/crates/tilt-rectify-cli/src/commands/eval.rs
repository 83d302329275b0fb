//! `eval`: compare predicted normal maps against ground truth, reporting
//! angular-error summaries and a chosen batch loss per image and in
//! aggregate. Pairs are matched by sorted filename order.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde_json::json;
use tilt_rectify::geometry::slant_tilt_angles;
use tilt_rectify::io;
use tilt_rectify::losses;
use tilt_rectify::metrics::{angular_error, summarize, EvalSummary};
use tilt_rectify::warp::NormalMap;

use crate::manifest::ManifestBuilder;
use crate::util::{expand_glob, par_map_ordered};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossKind {
    L2,
    Al,
    Tal,
    SlantTilt,
    Satd,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Predicted normal-map glob.
    #[arg(long)]
    pub pred: String,
    /// Ground-truth normal-map glob (same count, sorted pairing).
    #[arg(long)]
    pub gt: String,
    /// Batch loss to report alongside the error metrics.
    #[arg(long, value_enum, default_value_t = LossKind::Tal)]
    pub loss: LossKind,
    /// Weight between slant and tilt-direction terms for the satd loss.
    #[arg(long, default_value_t = 1.0)]
    pub satd_lambda: f64,
    /// Aggregate report JSON path.
    #[arg(long)]
    pub report: PathBuf,
    /// Per-image CSV path.
    #[arg(long)]
    pub csv: PathBuf,
}

/// Mean loss over pixels valid in both maps.
fn batch_loss(kind: LossKind, lambda: f64, pred: &NormalMap, gt: &NormalMap) -> Option<f64> {
    let mut values = Vec::new();
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            let (Some(p), Some(g)) = (pred.get(x, y), gt.get(x, y)) else {
                continue;
            };
            let v = match kind {
                LossKind::L2 => losses::l2_loss(&p, &g),
                LossKind::Al => losses::angular_loss(&p, &g),
                LossKind::Tal => losses::truncated_angular_loss(&p, &g, losses::TalConfig::default()),
                LossKind::SlantTilt => {
                    losses::slant_tilt_loss(&slant_tilt_angles(&p), &slant_tilt_angles(&g))
                }
                LossKind::Satd => {
                    let (pt, pz) = tilt_rectify::geometry::slant_tilt_from_normal(&p, 1e-12);
                    let (gt_theta, gz) = tilt_rectify::geometry::slant_tilt_from_normal(&g, 1e-12);
                    losses::satd_loss(pt, &pz, gt_theta, &gz, lambda)
                }
            };
            values.push(v);
        }
    }
    if values.is_empty() {
        None
    } else {
        Some(tilt_rectify::math::pairwise_sum(&values) / values.len() as f64)
    }
}

struct PairOutcome {
    name: String,
    result: Result<(EvalSummary, f64, Vec<f64>), String>,
}

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let preds = expand_glob(&args.pred)?;
    let gts = expand_glob(&args.gt)?;
    if preds.len() != gts.len() {
        return Err(CliError::Usage(format!(
            "{} predictions vs {} ground-truth maps",
            preds.len(),
            gts.len()
        )));
    }

    let pairs: Vec<(PathBuf, PathBuf)> = preds.into_iter().zip(gts).collect();
    let outcomes: Vec<PairOutcome> = par_map_ordered(pairs, |(pred_path, gt_path)| {
        let name = pred_path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| pred_path.display().to_string());
        let result = (|| {
            let pred = io::read_normal_map(pred_path).map_err(|e| e.to_string())?;
            let gt = io::read_normal_map(gt_path).map_err(|e| e.to_string())?;
            if pred.width() != gt.width() || pred.height() != gt.height() {
                return Err(format!(
                    "dimension mismatch: {}x{} vs {}x{}",
                    pred.width(),
                    pred.height(),
                    gt.width(),
                    gt.height()
                ));
            }
            let mut errors = Vec::new();
            for y in 0..pred.height() {
                for x in 0..pred.width() {
                    if let (Some(p), Some(g)) = (pred.get(x, y), gt.get(x, y)) {
                        errors.push(angular_error(&p, &g));
                    }
                }
            }
            let summary = summarize(&errors).map_err(|e| e.to_string())?;
            let loss = batch_loss(args.loss, args.satd_lambda, &pred, &gt)
                .ok_or_else(|| "no jointly valid pixels".to_string())?;
            Ok((summary, loss, errors))
        })();
        PairOutcome { name, result }
    });

    let mut manifest = ManifestBuilder::new(
        "eval",
        json!({
            "pred": args.pred,
            "gt": args.gt,
            "loss": format!("{:?}", args.loss).to_lowercase(),
            "satd_lambda": args.satd_lambda,
            "report": args.report.display().to_string(),
            "csv": args.csv.display().to_string(),
        }),
        None,
    );

    let mut csv = String::from("image,");
    csv.push_str(io::EVAL_CSV_HEADER);
    csv.push_str(",loss\n");
    let mut all_errors = Vec::new();
    let mut loss_values = Vec::new();
    let mut per_image = Vec::new();
    let mut failures = 0usize;
    for outcome in &outcomes {
        match &outcome.result {
            Ok((summary, loss, errors)) => {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    outcome.name,
                    io::eval_summary_csv_row(summary),
                    io::fmt_g9(*loss)
                ));
                all_errors.extend_from_slice(errors);
                loss_values.push(*loss);
                per_image.push(json!({
                    "image": outcome.name,
                    "summary": serde_json::from_str::<serde_json::Value>(
                        &io::eval_summary_json(summary)
                    )
                    .expect("summary json"),
                    "loss": *loss,
                }));
                manifest.item(json!({"image": outcome.name, "status": "ok"}));
            }
            Err(msg) => {
                failures += 1;
                per_image.push(json!({"image": outcome.name, "error": msg}));
                manifest.item(json!({"image": outcome.name, "status": "error", "message": msg}));
            }
        }
    }
    if all_errors.is_empty() {
        return Err(CliError::Usage("no pair produced any valid pixels".into()));
    }
    let aggregate = summarize(&all_errors).map_err(|e| CliError::Usage(e.to_string()))?;
    let aggregate_loss =
        tilt_rectify::math::pairwise_sum(&loss_values) / loss_values.len() as f64;

    let report = json!({
        "aggregate": {
            "summary": serde_json::from_str::<serde_json::Value>(
                &io::eval_summary_json(&aggregate)
            ).expect("summary json"),
            "loss": aggregate_loss,
            "images_evaluated": loss_values.len(),
            "images_failed": failures,
        },
        "per_image": per_image,
    });
    io::write_text(
        &args.report,
        &serde_json::to_string_pretty(&report).expect("report json"),
    )?;
    io::write_text(&args.csv, &csv)?;
    manifest.output(&args.report);
    manifest.output(&args.csv);
    println!(
        "evaluated {} image(s), {} failed; aggregate median {:.3} deg, mean {:.3} deg",
        loss_values.len(),
        failures,
        aggregate.median,
        aggregate.mean
    );
    manifest.write(&args.report.with_extension("manifest.json"))
}
