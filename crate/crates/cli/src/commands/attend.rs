use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use matting_core::attention::{attention_forward, attention_row_to_gray, AttentionConfig, AttentionParams};
use matting_core::numerics::{mtf, Mode, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{overlay, required, Header};
use crate::io;

/// Run the attention block on tensor fixtures and export one query's
/// attention map.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttendArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Image feature, MTF `[d, H, W]`.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Alpha feature, MTF `[c_a, H, W]`.
    #[arg(long)]
    pub alpha: Option<PathBuf>,
    /// Unknown-region mask PNG at `H×W`; all pixels unknown if omitted.
    #[arg(long)]
    pub unknown: Option<PathBuf>,
    /// Query pixel as `x,y`.
    #[arg(long)]
    pub query: Option<String>,
    /// Attention map PNG at `(H/r)×(W/r)`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reconstructed alpha feature, MTF.
    #[arg(long)]
    pub out_alpha: Option<PathBuf>,
    /// Directory with `theta.mtf`, `phi.mtf`, `g.mtf`, `w.mtf` and optional
    /// `*_bias.mtf`; seeded initialization otherwise.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Downscale ratio for seeded parameters [default: 4].
    #[arg(long)]
    pub r: Option<usize>,
    /// Embedding width for seeded parameters [default: d/2].
    #[arg(long)]
    pub e: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn read_tensor(p: &Path) -> Result<Tensor> {
    mtf::read_file(p).with_context(|| format!("reading tensor {}", p.display()))
}

fn load_params(dir: &Path) -> Result<AttentionParams> {
    let req = |n: &str| read_tensor(&dir.join(format!("{n}.mtf")));
    let opt = |n: &str| {
        let p = dir.join(format!("{n}_bias.mtf"));
        p.is_file().then(|| read_tensor(&p)).transpose()
    };
    Ok(AttentionParams {
        theta: req("theta")?,
        phi: req("phi")?,
        g: req("g")?,
        w: req("w")?,
        theta_bias: opt("theta")?,
        phi_bias: opt("phi")?,
        g_bias: opt("g")?,
        w_bias: opt("w")?,
    })
}

fn parse_query(s: &str) -> Result<(usize, usize)> {
    let (x, y) = s.split_once(',').with_context(|| format!("query `{s}` is not x,y"))?;
    Ok((x.trim().parse().context("query x")?, y.trim().parse().context("query y")?))
}

#[derive(Serialize)]
struct Report {
    #[serde(flatten)]
    header: Header,
    query: (usize, usize),
    map_size: (usize, usize),
    row: Vec<f64>,
}

pub fn run(mut args: AttendArgs) -> Result<()> {
    overlay!(args: AttendArgs; image, alpha, unknown, query, out, out_alpha, params, r, e, seed);
    let image = read_tensor(&required(&args.image, "image")?)?;
    let alpha = read_tensor(&required(&args.alpha, "alpha")?)?;
    let (qx, qy) = parse_query(&required(&args.query, "query")?)?;
    let out = required(&args.out, "out")?;
    let seed = args.seed.unwrap_or(0);
    let (is, as_) = (image.shape().to_vec(), alpha.shape().to_vec());
    if is.len() != 3 || as_.len() != 3 || is[1..] != as_[1..] {
        bail!("image feature {is:?} and alpha feature {as_:?} must be [C, H, W] with equal extents");
    }
    let (h, w) = (is[1], is[2]);
    if qx >= w || qy >= h {
        bail!("query ({qx}, {qy}) outside the {w}x{h} feature map");
    }
    let unknown = match &args.unknown {
        Some(p) => io::read_mask(p)?,
        None => matting_core::morphology::BinaryMask::filled(w, h, true),
    };
    let mut cfg = AttentionConfig::new(is[0], as_[0]);
    cfg.seed = seed;
    let params = match &args.params {
        Some(dir) => {
            let p = load_params(dir)?;
            cfg.e = p.theta.shape()[0];
            cfg.c_g = p.g.shape()[0];
            cfg.r = *p.phi.shape().last().context("phi weight shape")?;
            cfg.bias = p.theta_bias.is_some();
            p
        }
        None => {
            cfg.r = args.r.unwrap_or(4);
            cfg.e = args.e.unwrap_or(cfg.e);
            AttentionParams::init(&cfg, seed)?
        }
    };
    let res = attention_forward(&image, &alpha, &unknown, &params, &cfg, Mode::Eval)?;
    let q = qy * w + qx;
    let (mh, mw) = (h / cfg.r, w / cfg.r);
    io::write_gray_u8(&out, mw, mh, attention_row_to_gray(&res.attn, q)?)?;
    if let Some(p) = &args.out_alpha {
        mtf::write_file(p, &res.alpha).with_context(|| format!("writing {}", p.display()))?;
    }
    let n = mh * mw;
    let report = Report {
        header: Header::new(Some(seed)),
        query: (qx, qy),
        map_size: (mw, mh),
        row: res.attn.data()[q * n..(q + 1) * n].to_vec(),
    };
    io::write_json(&out.with_extension("json"), &report)
}
