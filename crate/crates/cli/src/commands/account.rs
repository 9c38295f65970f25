use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use matting_core::modelgraph::{count_flops, search_attention_config, zoo, ModelGraph, Shape};
use serde::{Deserialize, Serialize};

use crate::config::{overlay, Header};
use crate::io;

/// Parameter and MAC accounting of a layer graph.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccountArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Graph JSON file.
    #[arg(long, conflicts_with = "builtin")]
    pub graph: Option<PathBuf>,
    /// One of the bundled graphs: net_t, net_m, refinement.
    #[arg(long)]
    pub builtin: Option<String>,
    /// Override an input shape, as `name=C,H,W`. Repeatable.
    #[arg(long = "input")]
    pub inputs: Option<Vec<String>>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_input(s: &str) -> Result<(String, Shape)> {
    let (name, dims) = s.split_once('=').with_context(|| format!("input `{s}` is not name=C,H,W"))?;
    let v = dims.split(',').map(|d| d.trim().parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("input `{s}`: extents must be integers"))?;
    let shape: Shape = v.try_into().map_err(|_| anyhow::anyhow!("input `{s}` needs exactly three extents"))?;
    Ok((name.to_string(), shape))
}

#[derive(Serialize)]
struct Wrapped<T: Serialize> {
    #[serde(flatten)]
    header: Header,
    #[serde(flatten)]
    body: T,
}

fn emit<T: Serialize>(out: &Option<PathBuf>, body: T) -> Result<()> {
    let w = Wrapped { header: Header::new(None), body };
    match out {
        Some(p) => io::write_json(p, &w),
        None => {
            println!("{}", serde_json::to_string_pretty(&w)?);
            Ok(())
        }
    }
}

pub fn run(mut args: AccountArgs) -> Result<()> {
    overlay!(args: AccountArgs; graph, builtin, inputs, out);
    let g = match (&args.graph, &args.builtin) {
        (Some(p), _) => ModelGraph::read_file(p).with_context(|| format!("graph {}", p.display()))?,
        (None, Some(name)) => match zoo::all().into_iter().find(|(n, _)| n == name) {
            Some((_, g)) => g,
            None => bail!("unknown builtin graph `{name}`; expected one of {:?}", zoo::all().iter().map(|(n, _)| *n).collect::<Vec<_>>()),
        },
        (None, None) => bail!("either --graph or --builtin is required"),
    };
    let mut shapes: HashMap<String, Shape> = g.default_inputs();
    for s in args.inputs.iter().flatten() {
        let (name, shape) = parse_input(s)?;
        if !shapes.contains_key(&name) {
            bail!("graph `{}` has no input named `{name}`", g.name);
        }
        shapes.insert(name, shape);
    }
    let report = count_flops(&g, &shapes)?;
    eprintln!("{}: {} params, {} MACs", report.graph, report.total_params, report.total_macs);
    emit(&args.out, report)
}

/// Search attention hyperparameters that reproduce a parameter and GFLOP
/// budget.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// [default: 25984]
    #[arg(long)]
    pub target_params: Option<u64>,
    /// [default: 0.1416]
    #[arg(long)]
    pub target_gflops: Option<f64>,
    /// Image feature channels [default: 128].
    #[arg(long)]
    pub d: Option<usize>,
    /// Feature height [default: 64].
    #[arg(long)]
    pub height: Option<usize>,
    /// Feature width [default: 64].
    #[arg(long)]
    pub width: Option<usize>,
    /// Downscale ratio [default: 4].
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_search(mut args: SearchArgs) -> Result<()> {
    overlay!(args: SearchArgs; target_params, target_gflops, d, height, width, r, out);
    let report = search_attention_config(
        args.target_params.unwrap_or(25_984),
        args.target_gflops.unwrap_or(0.1416),
        args.d.unwrap_or(128),
        args.height.unwrap_or(64),
        args.width.unwrap_or(64),
        args.r.unwrap_or(4),
    )?;
    match report.resolved_within(0.01) {
        Some(c) => eprintln!("match: {} ({:?}, {} params, {:.4} GFLOPs)", c.label, c.convention, c.params, c.gflops),
        None => {
            eprintln!("no configuration matches; closest:");
            for c in report.closest.iter().take(3) {
                eprintln!("  {} ({:?}): {} params, {:.4} GFLOPs", c.label, c.convention, c.params, c.gflops);
            }
        }
    }
    emit(&args.out, report)
}
