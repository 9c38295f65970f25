use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use matting_core::metrics::{matting_scores, BatchReport, ImageScores};
use matting_core::morphology::BinaryMask;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{existing_dir, overlay, required, Header};
use crate::io;

/// Matting errors of predictions against ground truth.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Predicted mattes (PNG or MTF).
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth mattes (PNG or MTF).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Trimaps whose unknown region is the evaluation mask.
    #[arg(long, conflicts_with = "whole_image")]
    pub trimap: Option<PathBuf>,
    /// Evaluate every pixel instead of the unknown region.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub whole_image: Option<bool>,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional per-image CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report {
    #[serde(flatten)]
    header: Header,
    whole_image: bool,
    #[serde(flatten)]
    scores: BatchReport,
}

fn partner(dir: &Path, stem: &str, what: &str, gt: &Path) -> Result<PathBuf> {
    io::find_by_stem(dir, stem).with_context(|| format!("no {what} for ground truth {} in {}", gt.display(), dir.display()))
}

pub fn run(mut args: EvalArgs) -> Result<()> {
    overlay!(args: EvalArgs; pred, gt, trimap, whole_image, out, csv);
    let pred_dir = existing_dir(&args.pred, "pred")?;
    let gt_dir = existing_dir(&args.gt, "gt")?;
    let out = required(&args.out, "out")?;
    let whole = args.whole_image.unwrap_or(false);
    let trimap_dir = match (&args.trimap, whole) {
        (Some(_), true) => bail!("--trimap and --whole-image are mutually exclusive"),
        (None, false) => bail!("either --trimap or --whole-image is required"),
        (t, _) => t.clone(),
    };
    let gts = io::list_files(&gt_dir, &["png", "mtf"])?;
    if gts.is_empty() {
        bail!("no ground-truth mattes in {}", gt_dir.display());
    }
    let images = gts
        .par_iter()
        .map(|g| -> Result<ImageScores> {
            let name = io::stem(g);
            let gt = io::read_matte(g)?;
            let pred_path = partner(&pred_dir, &name, "prediction", g)?;
            let pred = io::read_matte(&pred_path)?;
            let mask = match &trimap_dir {
                Some(d) => {
                    let t = io::read_trimap(&partner(d, &name, "trimap", g)?)?;
                    t.unknown()
                }
                None => BinaryMask::filled(gt.width(), gt.height(), true),
            };
            let scores = matting_scores(&pred, &gt, &mask).with_context(|| format!("scoring {}", pred_path.display()))?;
            Ok(ImageScores { name, scores })
        })
        .collect::<Result<Vec<_>>>()?;
    let batch = BatchReport::new(images);
    if let Some(csv_path) = &args.csv {
        let mut w = csv::Writer::from_path(csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
        w.write_record(["name", "sad", "mse", "grad", "conn", "mask_pixels"])?;
        for i in &batch.images {
            let s = &i.scores;
            w.write_record([
                i.name.clone(),
                s.sad.to_string(),
                s.mse.to_string(),
                s.grad.to_string(),
                s.conn.to_string(),
                s.mask_pixels.to_string(),
            ])?;
        }
        w.flush()?;
    }
    let m = &batch.mean;
    println!(
        "{} images: SAD {:.4} MSE {:.6} Grad {:.4} Conn {:.4}",
        batch.images.len(),
        m.sad,
        m.mse,
        m.grad,
        m.conn
    );
    io::write_json(&out, &Report { header: Header::new(None), whole_image: whole, scores: batch })
}
