//! Trimap-guided non-local attention.
//!
//! Image features `I` decide where to look, alpha features `A` are what gets
//! aggregated:
//!
//! ```text
//! logits(q, p) = w(q) · <θ(I)_q, φ'(I)_p> / sqrt(d / 2)
//! attn         = row_softmax(logits)
//! A'           = A + W(dropout(attn · g'(A)))
//! ```
//!
//! `θ` and `W` are 1×1 convolutions; `φ'` and `g'` downscale keys and values
//! with an `r×r` convolution of stride `r`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::morphology::BinaryMask;
use crate::numerics::{Mode, Tape, Tensor, Var};
use crate::seed;

pub const CLIP_MIN: f64 = 0.1;
pub const CLIP_MAX: f64 = 10.0;

pub fn clip(x: f64) -> f64 {
    x.clamp(CLIP_MIN, CLIP_MAX)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Membership {
    Unknown,
    Known,
}

/// Balances the unknown region `U` against the known region `K`. Counts are
/// clamped to at least 1 so the ratio stays finite.
pub fn region_weight(u_count: usize, k_count: usize, membership: Membership) -> f64 {
    let u = u_count.max(1) as f64;
    let k = k_count.max(1) as f64;
    match membership {
        Membership::Unknown => clip((u / k).sqrt()),
        Membership::Known => clip((k / u).sqrt()),
    }
}

/// Reduces a mask by `r`: a block is unknown iff at least half of its `r×r`
/// pixels are.
pub fn downsample_mask(u: &BinaryMask, r: usize) -> Result<BinaryMask> {
    if r == 0 || u.width() % r != 0 || u.height() % r != 0 {
        return invalid("downsample_mask", format!("ratio {r} does not divide {}x{}", u.width(), u.height()));
    }
    Ok(BinaryMask::from_fn(u.width() / r, u.height() / r, |bx, by| {
        let mut n = 0;
        for y in by * r..(by + 1) * r {
            for x in bx * r..(bx + 1) * r {
                n += u.get(x, y) as usize;
            }
        }
        2 * n >= r * r
    }))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutSlot {
    #[default]
    BeforeW,
    AfterW,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    /// Image feature channels.
    pub d: usize,
    /// Alpha feature channels.
    pub c_a: usize,
    /// Embedding channels of `θ` and `φ'`.
    pub e: usize,
    /// Output channels of `g'`; `W` maps them back to `c_a`.
    pub c_g: usize,
    pub r: usize,
    pub dropout_rate: f64,
    pub dropout_slot: DropoutSlot,
    pub bias: bool,
    pub seed: u64,
}

impl AttentionConfig {
    /// `e = max(1, d/2)`, `g'` keeps `c_a`, `r = 4`, no dropout, no bias.
    pub fn new(d: usize, c_a: usize) -> Self {
        Self {
            d,
            c_a,
            e: (d / 2).max(1),
            c_g: c_a,
            r: 4,
            dropout_rate: 0.0,
            dropout_slot: DropoutSlot::BeforeW,
            bias: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.c_a == 0 || self.e == 0 || self.c_g == 0 || self.r == 0 {
            return invalid("AttentionConfig", format!("all widths and r must be >= 1: {self:?}"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return invalid("AttentionConfig", format!("dropout rate {} outside [0,1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        (self.d as f64 / 2.0).sqrt()
    }

    /// Trainable scalars of the four convolutions.
    pub fn param_count(&self) -> usize {
        let r2 = self.r * self.r;
        let mut n = self.e * self.d + self.e * self.d * r2 + self.c_g * self.c_a * r2 + self.c_a * self.c_g;
        if self.bias {
            n += 2 * self.e + self.c_g + self.c_a;
        }
        n
    }
}

/// Weights in `[out, in, kh, kw]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub theta: Tensor,
    pub phi: Tensor,
    pub g: Tensor,
    pub w: Tensor,
    pub theta_bias: Option<Tensor>,
    pub phi_bias: Option<Tensor>,
    pub g_bias: Option<Tensor>,
    pub w_bias: Option<Tensor>,
}

impl AttentionParams {
    /// He-style normal init for `θ`, `φ'`, `g'`; `W` and all biases start at
    /// zero so the block begins as the identity.
    pub fn init(cfg: &AttentionConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(seed);
        let r = cfg.r;
        let mut he = |shape: &[usize]| {
            let fan_in: usize = shape[1..].iter().product();
            Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), &mut rng)
        };
        let theta = he(&[cfg.e, cfg.d, 1, 1]);
        let phi = he(&[cfg.e, cfg.d, r, r]);
        let g = he(&[cfg.c_g, cfg.c_a, r, r]);
        let w = Tensor::zeros(&[cfg.c_a, cfg.c_g, 1, 1]);
        let bias = |n: usize| cfg.bias.then(|| Tensor::zeros(&[n]));
        Ok(Self {
            theta,
            phi,
            g,
            w,
            theta_bias: bias(cfg.e),
            phi_bias: bias(cfg.e),
            g_bias: bias(cfg.c_g),
            w_bias: bias(cfg.c_a),
        })
    }

    pub fn check(&self, cfg: &AttentionConfig) -> Result<()> {
        let r = cfg.r;
        let expect = [
            ("theta", &self.theta, vec![cfg.e, cfg.d, 1, 1]),
            ("phi", &self.phi, vec![cfg.e, cfg.d, r, r]),
            ("g", &self.g, vec![cfg.c_g, cfg.c_a, r, r]),
            ("w", &self.w, vec![cfg.c_a, cfg.c_g, 1, 1]),
        ];
        for (name, t, shape) in expect {
            if t.shape() != shape.as_slice() {
                return shape_err("AttentionParams", format!("{name} is {:?}, expected {shape:?}", t.shape()));
            }
        }
        let biases = [
            ("theta_bias", &self.theta_bias, cfg.e),
            ("phi_bias", &self.phi_bias, cfg.e),
            ("g_bias", &self.g_bias, cfg.c_g),
            ("w_bias", &self.w_bias, cfg.c_a),
        ];
        for (name, b, n) in biases {
            if let Some(b) = b {
                if b.shape() != [n] {
                    return shape_err("AttentionParams", format!("{name} is {:?}, expected [{n}]", b.shape()));
                }
            }
        }
        Ok(())
    }

    pub fn scalar_count(&self) -> usize {
        let biases = [&self.theta_bias, &self.phi_bias, &self.g_bias, &self.w_bias];
        self.theta.len()
            + self.phi.len()
            + self.g.len()
            + self.w.len()
            + biases.iter().filter_map(|b| b.as_ref()).map(Tensor::len).sum::<usize>()
    }

    /// Places every tensor on `tape` as a differentiable leaf.
    pub fn register(&self, tape: &mut Tape) -> Result<AttentionVars> {
        let opt = |b: &Option<Tensor>, tape: &mut Tape| b.clone().map(|b| tape.param(b)).transpose();
        Ok(AttentionVars {
            theta: tape.param(self.theta.clone())?,
            phi: tape.param(self.phi.clone())?,
            g: tape.param(self.g.clone())?,
            w: tape.param(self.w.clone())?,
            theta_bias: opt(&self.theta_bias, tape)?,
            phi_bias: opt(&self.phi_bias, tape)?,
            g_bias: opt(&self.g_bias, tape)?,
            w_bias: opt(&self.w_bias, tape)?,
        })
    }
}

/// Tape handles of an [`AttentionParams`].
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub theta: Var,
    pub phi: Var,
    pub g: Var,
    pub w: Var,
    pub theta_bias: Option<Var>,
    pub phi_bias: Option<Var>,
    pub g_bias: Option<Var>,
    pub w_bias: Option<Var>,
}

impl AttentionVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.theta, self.phi, self.g, self.w];
        v.extend([self.theta_bias, self.phi_bias, self.g_bias, self.w_bias].into_iter().flatten());
        v
    }
}

/// Per-query logit multipliers. Query membership comes from the
/// full-resolution mask; the region sizes are counted on the downsampled key
/// grid. If either region is empty the weight is 1.
pub fn query_weights(u: &BinaryMask, r: usize) -> Result<Vec<f64>> {
    let keys = downsample_mask(u, r)?;
    let uk = keys.count();
    let kk = keys.bits().len() - uk;
    Ok(u
        .bits()
        .iter()
        .map(|&is_u| {
            if uk == 0 || kk == 0 {
                1.0
            } else {
                region_weight(uk, kk, if is_u { Membership::Unknown } else { Membership::Known })
            }
        })
        .collect())
}

/// Records the block on `tape`. `image` is `[d, H, W]`, `alpha` is
/// `[c_a, H, W]`. Returns `(A', attn)` with `attn` of shape `[H·W, h·w]`.
pub fn attention_block(
    tape: &mut Tape,
    image: Var,
    alpha: Var,
    unknown: &BinaryMask,
    p: &AttentionVars,
    cfg: &AttentionConfig,
    mode: Mode,
) -> Result<(Var, Var)> {
    cfg.validate()?;
    let (d, h, w) = tape.value(image).chw()?;
    let (ca, ha, wa) = tape.value(alpha).chw()?;
    if d != cfg.d || ca != cfg.c_a || (ha, wa) != (h, w) {
        return shape_err("attention", format!("image [{d},{h},{w}], alpha [{ca},{ha},{wa}] for config d={} c_a={}", cfg.d, cfg.c_a));
    }
    if (unknown.width(), unknown.height()) != (w, h) {
        return shape_err("attention", format!("mask {}x{} vs feature {w}x{h}", unknown.width(), unknown.height()));
    }
    let r = cfg.r;
    if h % r != 0 || w % r != 0 {
        return invalid("attention", format!("ratio {r} does not divide {w}x{h}"));
    }
    let (hw, kw) = (h * w, (h / r) * (w / r));

    let q = tape.conv2d(image, p.theta, p.theta_bias, 1, 0)?;
    let q = tape.reshape(q, &[cfg.e, hw])?;
    let q = tape.transpose(q)?;
    let k = tape.conv2d(image, p.phi, p.phi_bias, r, 0)?;
    let k = tape.reshape(k, &[cfg.e, kw])?;
    let logits = tape.matmul(q, k)?;
    let logits = tape.scale(logits, 1.0 / cfg.scale())?;
    let logits = tape.scale_rows(logits, &query_weights(unknown, r)?)?;
    let attn = tape.row_softmax(logits)?;

    let v = tape.conv2d(alpha, p.g, p.g_bias, r, 0)?;
    let v = tape.reshape(v, &[cfg.c_g, kw])?;
    let v = tape.transpose(v)?;
    let ctx = tape.matmul(attn, v)?;
    let ctx = tape.transpose(ctx)?;
    let mut ctx = tape.reshape(ctx, &[cfg.c_g, h, w])?;
    if cfg.dropout_slot == DropoutSlot::BeforeW {
        ctx = tape.dropout(ctx, cfg.dropout_rate, mode, cfg.seed)?;
    }
    let mut y = tape.conv2d(ctx, p.w, p.w_bias, 1, 0)?;
    if cfg.dropout_slot == DropoutSlot::AfterW {
        y = tape.dropout(y, cfg.dropout_rate, mode, cfg.seed)?;
    }
    let out = tape.add(alpha, y)?;
    Ok((out, attn))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub alpha: Tensor,
    pub attn: Tensor,
}

/// Value-level forward pass.
pub fn attention_forward(
    image: &Tensor,
    alpha: &Tensor,
    unknown: &BinaryMask,
    params: &AttentionParams,
    cfg: &AttentionConfig,
    mode: Mode,
) -> Result<AttentionOutput> {
    params.check(cfg)?;
    let mut tape = Tape::new();
    let i = tape.constant(image.clone())?;
    let a = tape.constant(alpha.clone())?;
    let vars = params.register(&mut tape)?;
    let (out, attn) = attention_block(&mut tape, i, a, unknown, &vars, cfg, mode)?;
    Ok(AttentionOutput { alpha: tape.value(out).clone(), attn: tape.value(attn).clone() })
}

/// One attention row rescaled to 8-bit gray by its own min and max; a
/// constant row maps to mid gray.
pub fn attention_row_to_gray(attn: &Tensor, query: usize) -> Result<Vec<u8>> {
    let (m, n) = attn.mn()?;
    if query >= m {
        return invalid("attention_row_to_gray", format!("query {query} outside 0..{m}"));
    }
    let row = &attn.data()[query * n..(query + 1) * n];
    let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(row
        .iter()
        .map(|&v| if hi - lo <= 0.0 { 128 } else { (255.0 * (v - lo) / (hi - lo)).round() as u8 })
        .collect())
}
