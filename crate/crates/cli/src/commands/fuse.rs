use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use matting_core::fusion::{hard_fusion, soft_fusion, SoftVariant};
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::{existing_dir, overlay, required};
use crate::io;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FuseMode {
    SoftA,
    SoftB,
    Hard,
}

/// Fuse predicted alphas with trimap probabilities or labels.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuseArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<PathBuf>,
    /// Probability PNGs (soft modes) or trimap PNGs (hard mode).
    #[arg(long)]
    pub guide: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<FuseMode>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(mut args: FuseArgs) -> Result<()> {
    overlay!(args: FuseArgs; alpha, guide, mode, out);
    let alpha_dir = existing_dir(&args.alpha, "alpha")?;
    let guide_dir = existing_dir(&args.guide, "guide")?;
    let out = required(&args.out, "out")?;
    let mode = args.mode.unwrap_or(FuseMode::SoftB);
    io::ensure_dir(&out)?;
    let files = io::list_files(&alpha_dir, &["png", "mtf"])?;
    files.par_iter().try_for_each(|a| -> Result<()> {
        let name = io::stem(a);
        let g = guide_dir.join(format!("{name}.png"));
        anyhow::ensure!(g.is_file(), "no guide {} for alpha {}", g.display(), a.display());
        let alpha = io::read_matte(a)?;
        let fused = match mode {
            FuseMode::Hard => hard_fusion(&alpha, &io::read_trimap(&g)?),
            FuseMode::SoftA => soft_fusion(&alpha, &io::read_probs(&g)?, SoftVariant::A),
            FuseMode::SoftB => soft_fusion(&alpha, &io::read_probs(&g)?, SoftVariant::B),
        }
        .with_context(|| format!("fusing {} with {}", a.display(), g.display()))?;
        io::write_matte_png(&out.join(format!("{name}.png")), &fused)
    })?;
    println!("fused {} alphas into {}", files.len(), out.display());
    Ok(())
}
