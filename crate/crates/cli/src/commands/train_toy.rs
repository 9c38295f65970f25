use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use matting_core::trainkit::{curve_csv, train_toy, ToyConfig};
use serde::{Deserialize, Serialize};

use crate::config::{overlay, Header};
use crate::io;

/// Train the small attention network on the synthetic toy task.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainToyArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub base_lr: Option<f64>,
    #[arg(long)]
    pub hard_percent: Option<f64>,
    #[arg(long)]
    pub erosion_px: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss curve CSV path.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// JSON summary path.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report {
    #[serde(flatten)]
    header: Header,
    config: ToyConfig,
    initial_total: Option<f64>,
    final_total: Option<f64>,
}

pub fn run(mut args: TrainToyArgs) -> Result<()> {
    overlay!(args: TrainToyArgs; size, samples, iterations, hidden, r, base_lr, hard_percent, erosion_px, seed, out_csv, report);
    let d = ToyConfig::default();
    let cfg = ToyConfig {
        size: args.size.unwrap_or(d.size),
        samples: args.samples.unwrap_or(d.samples),
        iterations: args.iterations.unwrap_or(d.iterations),
        hidden: args.hidden.unwrap_or(d.hidden),
        r: args.r.unwrap_or(d.r),
        base_lr: args.base_lr.unwrap_or(d.base_lr),
        hard_percent: args.hard_percent.unwrap_or(d.hard_percent),
        erosion_px: args.erosion_px.unwrap_or(d.erosion_px),
        seed: args.seed.unwrap_or(d.seed),
    };
    let curve = train_toy(&cfg)?;
    if let Some(p) = &args.out_csv {
        std::fs::write(p, curve_csv(&curve)).with_context(|| format!("writing {}", p.display()))?;
    }
    let (first, last) = (curve.first().map(|s| s.report.total), curve.last().map(|s| s.report.total));
    if let (Some(a), Some(b)) = (first, last) {
        println!("{} iterations: total loss {a:.5} -> {b:.5}", curve.len());
    }
    if let Some(p) = &args.report {
        io::write_json(p, &Report { header: Header::new(Some(cfg.seed)), config: cfg.clone(), initial_total: first, final_total: last })?;
    }
    Ok(())
}
