use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use matting_core::seed;
use matting_core::trimap::{
    gt_trimap, inference_segmentation, pseudo_trimap_real, random_radii, segmentation_draw, soft_segmentation_with,
    trimap_with_radii, SegmentationMorph,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{existing_dir, overlay, required, Header};
use crate::io;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrimapMode {
    /// Alpha in, trimap out: both regions eroded by `--erosion`.
    Gt,
    /// Alpha in, trimap out: radii drawn per image from 1..=29.
    Random,
    /// Trimap in, soft segmentation out: random opening then blur.
    Softseg,
    /// Trimap in, soft segmentation out: fixed erosion by `--px` then blur.
    Inference,
    /// Binary segmentation in, trimap out.
    Pseudo,
}

/// Trimap and soft-segmentation synthesis.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrimapArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<TrimapMode>,
    /// Erosion radius for `gt` [default: 15].
    #[arg(long)]
    pub erosion: Option<usize>,
    /// Foreground erosion for `pseudo` [default: 15].
    #[arg(long)]
    pub fg_px: Option<usize>,
    /// Background margin for `pseudo` [default: 50].
    #[arg(long)]
    pub bg_px: Option<usize>,
    /// Erosion for `inference` [default: 20].
    #[arg(long)]
    pub px: Option<usize>,
    /// Blur for `inference`; 0 disables it [default: 2].
    #[arg(long)]
    pub sigma: Option<f64>,
    /// `softseg` morphology: erode then dilate, or one of the two.
    #[arg(long, value_enum)]
    pub morph: Option<Morph>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Morph {
    Opening,
    EitherOr,
}

#[derive(Serialize)]
struct Item {
    name: String,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    radii: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    draw: Option<matting_core::trimap::SegmentationDraw>,
}

#[derive(Serialize)]
struct Report {
    #[serde(flatten)]
    header: Header,
    mode: TrimapMode,
    items: Vec<Item>,
}

pub fn run(mut args: TrimapArgs) -> Result<()> {
    overlay!(args: TrimapArgs; input, out, mode, erosion, fg_px, bg_px, px, sigma, morph, seed);
    let input = existing_dir(&args.input, "input")?;
    let out = required(&args.out, "out")?;
    let mode = args.mode.unwrap_or(TrimapMode::Gt);
    let base = args.seed.unwrap_or(0);
    let morph = match args.morph.unwrap_or(Morph::Opening) {
        Morph::Opening => SegmentationMorph::Opening,
        Morph::EitherOr => SegmentationMorph::EitherOr,
    };
    io::ensure_dir(&out)?;
    let files = io::list_files(&input, &["png"])?;
    let items = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| -> Result<Item> {
            let s = seed::derive(base, i as u64);
            let dst = out.join(path.file_name().unwrap());
            let mut item = Item { name: io::stem(path), seed: s, radii: None, draw: None };
            match mode {
                TrimapMode::Gt => io::write_trimap(&dst, &gt_trimap(&io::read_matte(path)?, args.erosion.unwrap_or(15)))?,
                TrimapMode::Random => {
                    let r = random_radii(s);
                    item.radii = Some(r);
                    io::write_trimap(&dst, &trimap_with_radii(&io::read_matte(path)?, r.0, r.1))?;
                }
                TrimapMode::Softseg => {
                    let d = segmentation_draw(s);
                    item.draw = Some(d);
                    let seg = soft_segmentation_with(&io::read_trimap(path)?, d, morph)?;
                    io::write_matte_png(&dst, seg.fg())?;
                }
                TrimapMode::Inference => {
                    let seg =
                        inference_segmentation(&io::read_trimap(path)?, args.px.unwrap_or(20), args.sigma.unwrap_or(2.0))?;
                    io::write_matte_png(&dst, seg.fg())?;
                }
                TrimapMode::Pseudo => {
                    let t = pseudo_trimap_real(&io::read_mask(path)?, args.fg_px.unwrap_or(15), args.bg_px.unwrap_or(50));
                    io::write_trimap(&dst, &t)?;
                }
            }
            Ok(item)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = items.len();
    io::write_json(&out.join("report.json"), &Report { header: Header::new(Some(base)), mode, items })?;
    println!("wrote {n} maps to {}", out.display());
    Ok(())
}
