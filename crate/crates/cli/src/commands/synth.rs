use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use matting_core::synth::{synthesize_set, CropRect, TRAIN_PER_FG};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{existing_dir, overlay, required, Header};
use crate::io;

/// Composite foregrounds over backgrounds.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Foreground PNGs.
    #[arg(long)]
    pub fg_dir: Option<PathBuf>,
    /// Alpha PNGs, one per foreground with the same file stem.
    #[arg(long)]
    pub alpha_dir: Option<PathBuf>,
    #[arg(long)]
    pub bg_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Backgrounds per foreground [default: 100].
    #[arg(long)]
    pub per_fg: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct Record<'a> {
    name: String,
    fg: &'a str,
    bg: &'a str,
    alpha: &'a str,
    resized: (usize, usize),
    crop: CropRect,
    seed: u64,
}

#[derive(Serialize)]
struct Report {
    #[serde(flatten)]
    header: Header,
    per_fg: usize,
    foregrounds: usize,
    backgrounds: usize,
    composites: usize,
}

pub fn run(mut args: SynthArgs) -> Result<()> {
    overlay!(args: SynthArgs; fg_dir, alpha_dir, bg_dir, out, per_fg, seed);
    let fg_dir = existing_dir(&args.fg_dir, "fg-dir")?;
    let alpha_dir = existing_dir(&args.alpha_dir, "alpha-dir")?;
    let bg_dir = existing_dir(&args.bg_dir, "bg-dir")?;
    let out = required(&args.out, "out")?;
    let per_fg = args.per_fg.unwrap_or(TRAIN_PER_FG);
    let seed = args.seed.unwrap_or(0);

    let fg_files = io::list_files(&fg_dir, &["png"])?;
    let bg_files = io::list_files(&bg_dir, &["png"])?;
    if fg_files.is_empty() || bg_files.is_empty() {
        bail!("need at least one foreground and one background PNG");
    }
    let alpha_files = fg_files
        .iter()
        .map(|f| {
            let p = alpha_dir.join(f.file_name().unwrap());
            if !p.is_file() {
                bail!("missing alpha for foreground {}: expected {}", f.display(), p.display());
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;

    let fgs = fg_files.par_iter().map(|p| io::read_rgb(p)).collect::<Result<Vec<_>>>()?;
    let alphas = alpha_files.par_iter().map(|p| io::read_matte(p)).collect::<Result<Vec<_>>>()?;
    let bgs = bg_files.par_iter().map(|p| io::read_rgb(p)).collect::<Result<Vec<_>>>()?;
    for (i, (f, a)) in fgs.iter().zip(&alphas).enumerate() {
        if !a.same_extent(f.width(), f.height()) {
            bail!(
                "alpha {} is {}x{} but foreground {} is {}x{}",
                alpha_files[i].display(),
                a.width(),
                a.height(),
                fg_files[i].display(),
                f.width(),
                f.height()
            );
        }
    }
    let items = synthesize_set(&fgs, &alphas, &bgs, per_fg, seed)?;

    let (img_dir, alpha_out) = (out.join("images"), out.join("alphas"));
    io::ensure_dir(&img_dir)?;
    io::ensure_dir(&alpha_out)?;
    let names: Vec<String> =
        items.iter().enumerate().map(|(i, c)| format!("{}_{:03}.png", io::stem(&fg_files[c.provenance.fg]), i % per_fg)).collect();
    items.par_iter().zip(&names).try_for_each(|(c, name)| -> Result<()> {
        io::write_rgb(&img_dir.join(name), &c.image)?;
        io::write_matte_png(&alpha_out.join(name), &c.alpha)
    })?;

    let file_name = |p: &PathBuf| p.file_name().unwrap().to_string_lossy().into_owned();
    let (fg_names, bg_names): (Vec<_>, Vec<_>) = (fg_files.iter().map(file_name).collect(), bg_files.iter().map(file_name).collect());
    let mut prov = BufWriter::new(File::create(out.join("provenance.jsonl"))?);
    for (c, name) in items.iter().zip(&names) {
        let p = &c.provenance;
        let rec = Record {
            name: name.clone(),
            fg: &fg_names[p.fg],
            bg: &bg_names[p.bg],
            alpha: &fg_names[p.alpha],
            resized: p.resized,
            crop: p.crop,
            seed: p.seed,
        };
        writeln!(prov, "{}", serde_json::to_string(&rec)?)?;
    }
    prov.flush()?;
    io::write_json(
        &out.join("report.json"),
        &Report {
            header: Header::new(Some(seed)),
            per_fg,
            foregrounds: fgs.len(),
            backgrounds: bgs.len(),
            composites: items.len(),
        },
    )?;
    println!("wrote {} composites to {}", items.len(), out.display());
    Ok(())
}
