//! Adam, a warmup + cosine learning-rate schedule, and a toy end-to-end
//! training loop over synthetic composites.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_block, AttentionConfig, AttentionParams, AttentionVars};
use crate::error::{invalid, shape_err, Error, Result};
use crate::losses::{hard_count, l_alpha_tape, l_hard_tape, LossReport, DEFAULT_HARD_PERCENT};
use crate::morphology::BinaryMask;
use crate::numerics::{Gradients, Mode, Tape, Tensor, Var};
use crate::seed;
use crate::synth::{composite, AlphaMatte, ImageRGB};
use crate::trimap::{gt_trimap, Trimap};

/// Named trainable tensors and their latest gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Option<Tensor>>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter and returns its slot.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<usize> {
        if self.names.iter().any(|n| n == name) {
            return invalid("ParameterStore", format!("duplicate parameter `{name}`"));
        }
        self.names.push(name.to_string());
        self.values.push(value);
        self.grads.push(None);
        Ok(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, slot: usize) -> &Tensor {
        &self.values[slot]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn grad(&self, slot: usize) -> Option<&Tensor> {
        self.grads[slot].as_ref()
    }

    pub fn set_grad(&mut self, slot: usize, g: Tensor) -> Result<()> {
        if g.shape() != self.values[slot].shape() {
            return shape_err(
                "ParameterStore",
                format!("gradient {:?} for `{}` of shape {:?}", g.shape(), self.names[slot], self.values[slot].shape()),
            );
        }
        self.grads[slot] = Some(g);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Total trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor as a tape leaf, in slot order.
    pub fn register(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.values.iter().map(|v| tape.param(v.clone())).collect()
    }

    /// Copies gradients of `vars` (as returned by [`register`](Self::register))
    /// into the store. Leaves the backward pass did not reach stay empty.
    pub fn collect_grads(&mut self, grads: &Gradients, vars: &[Var]) -> Result<()> {
        self.zero_grad();
        for (slot, &v) in vars.iter().enumerate() {
            if let Some(g) = grads.get(v) {
                self.set_grad(slot, g.clone())?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

pub const ADAM_BETA1: f64 = 0.5;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(store: &ParameterStore) -> Self {
        Self::with_betas(store, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
    }

    pub fn with_betas(store: &ParameterStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = store.values.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0, beta1, beta2, eps }
    }
}

/// One bias-corrected Adam update over every parameter.
pub fn adam_step(store: &mut ParameterStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return shape_err("adam_step", format!("state for {} parameters, store has {}", state.m.len(), store.len()));
    }
    if let Some(i) = store.grads.iter().position(Option::is_none) {
        return Err(Error::MissingGradient(store.names[i].clone()));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..store.len() {
        let g = store.grads[i].as_ref().expect("checked above").data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = store.values[i].data_mut();
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_iters: usize,
    pub total_iters: usize,
}

pub const DEFAULT_BASE_LR: f64 = 4e-4;
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.05;

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_iters: usize, total_iters: usize) -> Result<Self> {
        if !(warmup_iters > 0 && warmup_iters < total_iters) {
            return invalid("LrSchedule", format!("need 0 < warmup ({warmup_iters}) < total ({total_iters})"));
        }
        if !(base_lr >= 0.0 && base_lr.is_finite()) {
            return invalid("LrSchedule", format!("base lr must be finite and non-negative, got {base_lr}"));
        }
        Ok(Self { base_lr, warmup_iters, total_iters })
    }

    /// Warmup over 5% of `total_iters` (at least one iteration).
    pub fn with_default_warmup(base_lr: f64, total_iters: usize) -> Result<Self> {
        let warmup = ((total_iters as f64 * DEFAULT_WARMUP_FRACTION).round() as usize).max(1);
        Self::new(base_lr, warmup, total_iters)
    }
}

pub fn lr_at(iter: usize, s: &LrSchedule) -> Result<f64> {
    if iter > s.total_iters {
        return invalid("lr_at", format!("iteration {iter} beyond total {}", s.total_iters));
    }
    if iter < s.warmup_iters {
        return Ok(s.base_lr * (iter + 1) as f64 / s.warmup_iters as f64);
    }
    let t = (iter - s.warmup_iters) as f64 / (s.total_iters - s.warmup_iters) as f64;
    Ok(s.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Toy regression task: predict the alpha of small synthetic composites from
/// RGB plus a one-hot ground-truth trimap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub size: usize,
    pub samples: usize,
    pub iterations: usize,
    pub hidden: usize,
    pub r: usize,
    pub base_lr: f64,
    pub hard_percent: f64,
    /// Half-width of the unknown band of the training trimaps.
    pub erosion_px: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            size: 32,
            samples: 4,
            iterations: 200,
            hidden: 8,
            r: 4,
            base_lr: 1e-2,
            hard_percent: DEFAULT_HARD_PERCENT,
            erosion_px: 2,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.samples == 0 || self.hidden < 2 {
            return invalid("ToyConfig", "size, samples must be positive and hidden at least 2");
        }
        if self.r == 0 || self.size % self.r != 0 {
            return invalid("ToyConfig", format!("ratio {} does not divide size {}", self.r, self.size));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyStep {
    pub iter: usize,
    pub lr: f64,
    /// Batch means, evaluated before the update of this iteration.
    pub report: LossReport,
}

/// One training example.
#[derive(Clone, Debug)]
pub struct ToySample {
    pub input: Tensor,
    pub alpha: AlphaMatte,
    pub trimap: Trimap,
    pub mask: BinaryMask,
}

/// Soft-edged disk over a flat background, composited with the library
/// compositor.
pub fn toy_sample(size: usize, erosion_px: usize, seed: u64) -> Result<ToySample> {
    let mut rng = seed::rng(seed);
    let s = size as f64;
    let (cx, cy) = (rng.random_range(0.35..0.65) * s, rng.random_range(0.35..0.65) * s);
    let radius = rng.random_range(0.2..0.3) * s;
    let soft = rng.random_range(1.5..3.0);
    let alpha = AlphaMatte::from_fn(size, size, |x, y| {
        let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
        0.5 + (radius - d) / (2.0 * soft)
    });
    let fg_c: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let bg_c: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let fg = ImageRGB::from_fn(size, size, |_, _| fg_c);
    let bg = ImageRGB::from_fn(size, size, |x, _| {
        let t = x as f64 / s;
        [bg_c[0] * (1.0 - 0.3 * t), bg_c[1], bg_c[2] * (0.7 + 0.3 * t)]
    });
    let img = composite(&fg, &bg, &alpha)?;
    let trimap = gt_trimap(&alpha, erosion_px);
    let mask = trimap.unknown();
    if mask.count() == 0 {
        return invalid("toy_sample", "empty unknown region");
    }
    let n = size * size;
    let mut data = vec![0.0; 6 * n];
    for (p, px) in img.data().chunks(3).enumerate() {
        for c in 0..3 {
            data[c * n + p] = px[c];
        }
        data[(3 + trimap.labels()[p].index()) * n + p] = 1.0;
    }
    Ok(ToySample { input: Tensor::new(vec![6, size, size], data)?, alpha, trimap, mask })
}

struct ToyNet {
    cfg: AttentionConfig,
    /// Store slots of θ, φ', g', W; conv weights and biases occupy 0..8.
    att_slots: [usize; 4],
}

fn he_conv(rng: &mut seed::Rng, out: usize, cin: usize, k: usize) -> Tensor {
    Tensor::randn(&[out, cin, k, k], (2.0 / (cin * k * k) as f64).sqrt(), rng)
}

impl ToyNet {
    fn init(cfg: &ToyConfig, store: &mut ParameterStore) -> Result<Self> {
        let mut rng = seed::rng(seed::derive(cfg.seed, u64::MAX));
        let h = cfg.hidden;
        let shapes = [(h, 6), (h, h), (h, h), (2, h)];
        for (i, (out, cin)) in shapes.into_iter().enumerate() {
            store.insert(&format!("conv{}.weight", i + 1), he_conv(&mut rng, out, cin, 3))?;
            store.insert(&format!("conv{}.bias", i + 1), Tensor::zeros(&[out]))?;
        }
        let mut acfg = AttentionConfig::new(h, h);
        acfg.r = cfg.r;
        let p = AttentionParams::init(&acfg, seed::derive(cfg.seed, u64::MAX - 1))?;
        let att_slots = [
            store.insert("attention.theta", p.theta)?,
            store.insert("attention.phi", p.phi)?,
            store.insert("attention.g", p.g)?,
            store.insert("attention.w", p.w)?,
        ];
        Ok(Self { cfg: acfg, att_slots })
    }

    /// `(coarse, refined)`, each `[1, H, W]`.
    fn forward(&self, tape: &mut Tape, vars: &[Var], sample: &ToySample) -> Result<(Var, Var)> {
        let x = tape.constant(sample.input.clone())?;
        let conv = |tape: &mut Tape, x: Var, i: usize| tape.conv2d(x, vars[2 * i], Some(vars[2 * i + 1]), 1, 1);
        let x = conv(tape, x, 0)?;
        let x = tape.relu(x)?;
        let x = conv(tape, x, 1)?;
        let f = tape.relu(x)?;
        let att = AttentionVars {
            theta: vars[self.att_slots[0]],
            phi: vars[self.att_slots[1]],
            g: vars[self.att_slots[2]],
            w: vars[self.att_slots[3]],
            theta_bias: None,
            phi_bias: None,
            g_bias: None,
            w_bias: None,
        };
        let (x, _) = attention_block(tape, f, f, &sample.mask, &att, &self.cfg, Mode::Train)?;
        let x = conv(tape, x, 2)?;
        let x = tape.relu(x)?;
        let out = conv(tape, x, 3)?;
        let coarse = tape.slice_channels(out, 0, 1)?;
        let residual = tape.slice_channels(out, 1, 1)?;
        let refined = tape.add(coarse, residual)?;
        Ok((coarse, refined))
    }
}

fn toy_iteration(
    cfg: &ToyConfig,
    net: &ToyNet,
    samples: &[ToySample],
    store: &mut ParameterStore,
    adam: &mut AdamState,
    iter: usize,
    lr: f64,
) -> Result<ToyStep> {
    let inv = 1.0 / samples.len() as f64;
    let mut tape = Tape::new();
    let vars = store.register(&mut tape)?;
    let mut total = None;
    let (mut la, mut lh) = (0.0, 0.0);
    let (mut hard, mut masked) = (0, 0);
    for s in samples {
        let (coarse, refined) = net.forward(&mut tape, &vars, s)?;
        for p in [coarse, refined] {
            let a = l_alpha_tape(&mut tape, p, s.alpha.values(), &s.mask)?;
            let h = l_hard_tape(&mut tape, p, s.alpha.values(), &s.mask, cfg.hard_percent)?;
            la += tape.value(a).item()? * inv;
            lh += tape.value(h).item()? * inv;
            let t = tape.add(a, h)?;
            total = Some(match total {
                None => t,
                Some(acc) => tape.add(acc, t)?,
            });
        }
        hard += hard_count(cfg.hard_percent, s.mask.count());
        masked += s.mask.count();
    }
    let total = tape.scale(total.expect("at least one sample"), inv)?;
    let value = tape.value(total).item()?;
    if !value.is_finite() {
        return Err(Error::Diverged { iteration: iter });
    }
    let grads = tape.backward(total)?;
    store.collect_grads(&grads, &vars)?;
    adam_step(store, adam, lr)?;
    if store.values.iter().any(|v| v.data().iter().any(|x| !x.is_finite())) {
        return Err(Error::Diverged { iteration: iter });
    }
    Ok(ToyStep {
        iter,
        lr,
        report: LossReport { l_alpha: la, l_hard: lh, total: value, hard_pixel_count: hard, mask_pixel_count: masked },
    })
}

/// Trains the toy network and returns one [`ToyStep`] per iteration.
pub fn train_toy(cfg: &ToyConfig) -> Result<Vec<ToyStep>> {
    cfg.validate()?;
    if cfg.iterations == 0 {
        return Ok(Vec::new());
    }
    let samples: Vec<ToySample> =
        (0..cfg.samples).map(|i| toy_sample(cfg.size, cfg.erosion_px, seed::derive(cfg.seed, i as u64))).collect::<Result<_>>()?;
    let mut store = ParameterStore::new();
    let net = ToyNet::init(cfg, &mut store)?;
    let mut adam = AdamState::new(&store);
    // A single iteration has no room for warmup; run it at the base rate.
    let schedule = (cfg.iterations > 1).then(|| LrSchedule::with_default_warmup(cfg.base_lr, cfg.iterations)).transpose()?;
    let mut curve = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let lr = match &schedule {
            Some(s) => lr_at(iter, s)?,
            None => cfg.base_lr,
        };
        let step = toy_iteration(cfg, &net, &samples, &mut store, &mut adam, iter, lr).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Diverged { iteration: iter },
            e => e,
        })?;
        curve.push(step);
    }
    Ok(curve)
}

/// `iter,lr,l_alpha,l_hard,total` rows with a header line.
pub fn curve_csv(curve: &[ToyStep]) -> String {
    let mut s = String::from("iter,lr,l_alpha,l_hard,total\n");
    for c in curve {
        s.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", c.iter, c.lr, c.report.l_alpha, c.report.l_hard, c.report.total));
    }
    s
}
