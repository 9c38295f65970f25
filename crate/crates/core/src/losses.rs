//! Training objectives. Value-level functions work on mattes; the `*_tape`
//! variants record the same arithmetic for backpropagation.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::morphology::BinaryMask;
use crate::numerics::{Tape, Tensor, Var};
use crate::synth::AlphaMatte;
use crate::trimap::Trimap;

pub const DEFAULT_HARD_PERCENT: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_alpha: f64,
    pub l_hard: f64,
    pub total: f64,
    pub hard_pixel_count: usize,
    pub mask_pixel_count: usize,
}

fn check_extents(op: &'static str, pred: &AlphaMatte, gt: &AlphaMatte, m: &BinaryMask) -> Result<()> {
    let e = (pred.width(), pred.height());
    if (gt.width(), gt.height()) != e || (m.width(), m.height()) != e {
        return shape_err(
            op,
            format!("pred {:?}, gt {:?}, mask {:?}", e, (gt.width(), gt.height()), (m.width(), m.height())),
        );
    }
    if m.count() == 0 {
        return Err(Error::EmptyMask { op });
    }
    Ok(())
}

/// Mean absolute error over the mask.
pub fn l_alpha(pred: &AlphaMatte, gt: &AlphaMatte, m: &BinaryMask) -> Result<f64> {
    check_extents("l_alpha", pred, gt, m)?;
    let s: f64 = masked_errors(pred, gt, m).map(|(_, e)| e).sum();
    Ok(s / m.count() as f64)
}

fn masked_errors<'a>(pred: &'a AlphaMatte, gt: &'a AlphaMatte, m: &'a BinaryMask) -> impl Iterator<Item = (usize, f64)> + 'a {
    pred.values()
        .iter()
        .zip(gt.values())
        .zip(m.bits())
        .enumerate()
        .filter(|(_, (_, &b))| b)
        .map(|(i, ((p, g), _))| (i, (p - g).abs()))
}

/// `max(1, floor(p/100 · n))`.
pub fn hard_count(percent: f64, n: usize) -> usize {
    ((percent / 100.0 * n as f64).floor() as usize).clamp(1, n.max(1))
}

fn check_percent(percent: f64) -> Result<()> {
    if !(percent > 0.0 && percent <= 100.0) {
        return invalid("l_hard", format!("percent must lie in (0, 100], got {percent}"));
    }
    Ok(())
}

/// Pixel indices of the hard set, selected by largest error with ties going
/// to the lower index. Returned in ascending index order so that summing over
/// the whole mask matches [`l_alpha`] bit for bit.
pub fn hard_indices(errors: &[(usize, f64)], percent: f64) -> Result<Vec<usize>> {
    check_percent(percent)?;
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sorted.truncate(hard_count(percent, errors.len()));
    let mut idx: Vec<usize> = sorted.into_iter().map(|(i, _)| i).collect();
    idx.sort_unstable();
    Ok(idx)
}

/// Mean of the top `percent` absolute errors inside the mask.
pub fn l_hard(pred: &AlphaMatte, gt: &AlphaMatte, m: &BinaryMask, percent: f64) -> Result<f64> {
    check_extents("l_hard", pred, gt, m)?;
    let errors: Vec<_> = masked_errors(pred, gt, m).collect();
    let idx = hard_indices(&errors, percent)?;
    let s: f64 = idx.iter().map(|&i| (pred.values()[i] - gt.values()[i]).abs()).sum();
    Ok(s / idx.len() as f64)
}

pub fn alpha_report(pred: &AlphaMatte, gt: &AlphaMatte, m: &BinaryMask, percent: f64) -> Result<LossReport> {
    let la = l_alpha(pred, gt, m)?;
    let lh = l_hard(pred, gt, m, percent)?;
    Ok(LossReport {
        l_alpha: la,
        l_hard: lh,
        total: la + lh,
        hard_pixel_count: hard_count(percent, m.count()),
        mask_pixel_count: m.count(),
    })
}

/// Sum of the regression and hard-mining terms of both the coarse and the
/// refined prediction. `l_alpha` and `l_hard` in the report are the sums of
/// the respective terms; counts describe one prediction.
pub fn total_loss(coarse: &AlphaMatte, refined: &AlphaMatte, gt: &AlphaMatte, m: &BinaryMask, percent: f64) -> Result<LossReport> {
    let c = alpha_report(coarse, gt, m, percent)?;
    let r = alpha_report(refined, gt, m, percent)?;
    Ok(LossReport {
        l_alpha: c.l_alpha + r.l_alpha,
        l_hard: c.l_hard + r.l_hard,
        total: c.total + r.total,
        hard_pixel_count: c.hard_pixel_count,
        mask_pixel_count: c.mask_pixel_count,
    })
}

fn residual_tape(tape: &mut Tape, pred: Var, gt: &[f64], op: &'static str) -> Result<Var> {
    let shape = tape.value(pred).shape().to_vec();
    if tape.value(pred).len() != gt.len() {
        return shape_err(op, format!("pred has {} values, target {}", tape.value(pred).len(), gt.len()));
    }
    let g = tape.constant(Tensor::new(shape, gt.to_vec())?)?;
    let d = tape.sub(pred, g)?;
    tape.abs(d)
}

/// [`l_alpha`] on a tape; `pred` may have any shape with `|M|` elements in
/// row-major pixel order.
pub fn l_alpha_tape(tape: &mut Tape, pred: Var, gt: &[f64], m: &BinaryMask) -> Result<Var> {
    let n = m.count();
    if n == 0 {
        return Err(Error::EmptyMask { op: "l_alpha" });
    }
    if m.bits().len() != gt.len() {
        return shape_err("l_alpha", format!("mask has {} pixels, target {}", m.bits().len(), gt.len()));
    }
    let e = residual_tape(tape, pred, gt, "l_alpha")?;
    let weights: Vec<f64> = m.bits().iter().map(|&b| if b { 1.0 / n as f64 } else { 0.0 }).collect();
    let e = tape.mul_const(e, &weights)?;
    tape.sum(e)
}

/// [`l_hard`] on a tape. The hard set is selected from current values and
/// then held fixed for the backward pass.
pub fn l_hard_tape(tape: &mut Tape, pred: Var, gt: &[f64], m: &BinaryMask, percent: f64) -> Result<Var> {
    if m.count() == 0 {
        return Err(Error::EmptyMask { op: "l_hard" });
    }
    if m.bits().len() != gt.len() {
        return shape_err("l_hard", format!("mask has {} pixels, target {}", m.bits().len(), gt.len()));
    }
    let e = residual_tape(tape, pred, gt, "l_hard")?;
    let errors: Vec<(usize, f64)> =
        tape.value(e).data().iter().enumerate().filter(|(i, _)| m.bits()[*i]).map(|(i, &v)| (i, v)).collect();
    let idx = hard_indices(&errors, percent)?;
    let n = tape.value(e).len();
    let flat = tape.reshape(e, &[n])?;
    let picked = tape.gather(flat, &idx)?;
    tape.mean(picked)
}

/// `L_alpha + L_hard` of coarse and refined predictions, as one tape scalar.
pub fn total_loss_tape(tape: &mut Tape, coarse: Var, refined: Var, gt: &[f64], m: &BinaryMask, percent: f64) -> Result<Var> {
    let mut terms = Vec::with_capacity(4);
    for p in [coarse, refined] {
        terms.push(l_alpha_tape(tape, p, gt, m)?);
        terms.push(l_hard_tape(tape, p, gt, m, percent)?);
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Mean over pixels of `-log softmax(logits)[label]`; logits are `[3, H, W]`
/// in `Label` order.
pub fn cross_entropy_3class(logits: &Tensor, labels: &Trimap) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone())?;
    let ce = cross_entropy_tape(&mut tape, l, labels)?;
    tape.value(ce).item()
}

pub fn cross_entropy_tape(tape: &mut Tape, logits: Var, labels: &Trimap) -> Result<Var> {
    let (c, h, w) = tape.value(logits).chw()?;
    if c != 3 || (w, h) != (labels.width(), labels.height()) {
        return shape_err(
            "cross_entropy_3class",
            format!("logits [{c},{h},{w}] vs trimap {}x{}", labels.width(), labels.height()),
        );
    }
    let n = h * w;
    let x = tape.reshape(logits, &[3, n])?;
    let x = tape.transpose(x)?;
    let ls = tape.row_log_softmax(x)?;
    let flat = tape.reshape(ls, &[3 * n])?;
    let idx: Vec<usize> = labels.labels().iter().enumerate().map(|(i, l)| 3 * i + l.index()).collect();
    let picked = tape.gather(flat, &idx)?;
    let m = tape.mean(picked)?;
    tape.scale(m, -1.0)
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        0.0
    } else {
        xs.sum::<f64>() / n as f64
    }
}

/// `mean((d - 1)^2) + λ · (l_ce + l_coarse + l_refined)`.
pub fn lsgan_generator_loss(d_on_composite: &[f64], lambda: f64, l_ce: f64, l_coarse: f64, l_refined: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return invalid("lsgan_generator_loss", format!("lambda must be >= 0, got {lambda}"));
    }
    Ok(mean(d_on_composite.iter().map(|d| (d - 1.0).powi(2))) + lambda * (l_ce + l_coarse + l_refined))
}

/// `mean(d_fake^2) + mean((d_real - 1)^2)`.
pub fn lsgan_discriminator_loss(d_on_fake: &[f64], d_on_real: &[f64]) -> f64 {
    mean(d_on_fake.iter().map(|d| d * d)) + mean(d_on_real.iter().map(|d| (d - 1.0).powi(2)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanLambda {
    pub base: f64,
    pub halving_period: usize,
}

impl Default for GanLambda {
    fn default() -> Self {
        Self { base: 0.5, halving_period: 10_000 }
    }
}

pub fn lambda_schedule(iter: usize, g: GanLambda) -> f64 {
    let halvings = (iter / g.halving_period.max(1)) as i32;
    g.base * 2f64.powi(-halvings)
}
