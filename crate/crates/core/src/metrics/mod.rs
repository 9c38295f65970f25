//! Matting errors (SAD, MSE, gradient, connectivity) and trimap
//! segmentation scores.
//!
//! SAD, gradient and connectivity errors are reported divided by 1000, the
//! usual benchmark convention. MSE is the raw mean over `[0, 1]` values.

mod connectivity;
mod gradient;

pub use connectivity::{connectivity_error, connectivity_error_raw, largest_component, DEFAULT_CONN_STEP};
pub use gradient::{gauss_gradient_magnitude, gaussian_derivative_kernels, gradient_error, gradient_error_raw, DEFAULT_GRAD_SIGMA};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::morphology::BinaryMask;
use crate::synth::AlphaMatte;
use crate::trimap::{Label, Trimap};

pub const REPORT_SCALE: f64 = 1000.0;

pub(crate) fn check_extents(op: &'static str, pred: &AlphaMatte, gt: &AlphaMatte, m: &BinaryMask) -> Result<()> {
    let e = (pred.width(), pred.height());
    if (gt.width(), gt.height()) != e || (m.width(), m.height()) != e {
        return shape_err(
            op,
            format!("pred {:?}, gt {:?}, mask {:?}", e, (gt.width(), gt.height()), (m.width(), m.height())),
        );
    }
    Ok(())
}

/// Raw sum of absolute differences over the mask.
pub fn sad_raw(pred: &AlphaMatte, gt: &AlphaMatte, m: &BinaryMask) -> Result<f64> {
    check_extents("sad", pred, gt, m)?;
    Ok(pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(m.bits())
        .filter(|(_, &b)| b)
        .map(|((p, g), _)| (p - g).abs())
        .sum())
}

pub fn sad(pred: &AlphaMatte, gt: &AlphaMatte, m: &BinaryMask) -> Result<f64> {
    Ok(sad_raw(pred, gt, m)? / REPORT_SCALE)
}

pub fn mse(pred: &AlphaMatte, gt: &AlphaMatte, m: &BinaryMask) -> Result<f64> {
    check_extents("mse", pred, gt, m)?;
    let n = m.count();
    if n == 0 {
        return Err(Error::EmptyMask { op: "mse" });
    }
    let s: f64 = pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(m.bits())
        .filter(|(_, &b)| b)
        .map(|((p, g), _)| (p - g) * (p - g))
        .sum();
    Ok(s / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MattingScores {
    pub sad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
    pub mask_pixels: usize,
}

/// All four matting errors with default parameters.
pub fn matting_scores(pred: &AlphaMatte, gt: &AlphaMatte, m: &BinaryMask) -> Result<MattingScores> {
    Ok(MattingScores {
        sad: sad(pred, gt, m)?,
        mse: mse(pred, gt, m)?,
        grad: gradient_error(pred, gt, m, DEFAULT_GRAD_SIGMA)?,
        conn: connectivity_error(pred, gt, m, DEFAULT_CONN_STEP)?,
        mask_pixels: m.count(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimapScores {
    pub accuracy: f64,
    /// `None` when the class is absent from both maps.
    pub iou_bg: Option<f64>,
    pub iou_unk: Option<f64>,
    pub iou_fg: Option<f64>,
    pub miou: f64,
}

impl TrimapScores {
    pub fn iou(&self, label: Label) -> Option<f64> {
        match label {
            Label::Bg => self.iou_bg,
            Label::Unk => self.iou_unk,
            Label::Fg => self.iou_fg,
        }
    }
}

pub fn trimap_scores(pred: &Trimap, gt: &Trimap) -> Result<TrimapScores> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return shape_err(
            "trimap_scores",
            format!("pred {}x{} vs gt {}x{}", pred.width(), pred.height(), gt.width(), gt.height()),
        );
    }
    let n = pred.labels().len();
    let mut inter = [0usize; 3];
    let mut union = [0usize; 3];
    let mut hits = 0;
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p == g {
            hits += 1;
            inter[p.index()] += 1;
            union[p.index()] += 1;
        } else {
            union[p.index()] += 1;
            union[g.index()] += 1;
        }
    }
    let iou = |c: usize| (union[c] > 0).then(|| inter[c] as f64 / union[c] as f64);
    let ious = [iou(0), iou(1), iou(2)];
    let defined: Vec<f64> = ious.iter().flatten().copied().collect();
    Ok(TrimapScores {
        accuracy: if n == 0 { 1.0 } else { hits as f64 / n as f64 },
        iou_bg: ious[0],
        iou_unk: ious[1],
        iou_fg: ious[2],
        miou: if defined.is_empty() { 1.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub name: String,
    #[serde(flatten)]
    pub scores: MattingScores,
}

/// Per-image scores plus their means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub images: Vec<ImageScores>,
    pub mean: MattingScores,
}

impl BatchReport {
    pub fn new(images: Vec<ImageScores>) -> Self {
        let n = images.len().max(1) as f64;
        let fold = |f: fn(&MattingScores) -> f64| images.iter().map(|i| f(&i.scores)).sum::<f64>() / n;
        let mean = MattingScores {
            sad: fold(|s| s.sad),
            mse: fold(|s| s.mse),
            grad: fold(|s| s.grad),
            conn: fold(|s| s.conn),
            mask_pixels: images.iter().map(|i| i.scores.mask_pixels).sum(),
        };
        Self { images, mean }
    }
}
