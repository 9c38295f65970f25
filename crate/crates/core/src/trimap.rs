//! Trimap and soft-segmentation recipes, plus the 8-bit trimap encoding.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::morphology::{dilate, erode, gaussian_blur, BinaryMask};
use crate::seed;
use crate::synth::AlphaMatte;

/// Alpha at or below this is background, at or above `1 - EPS` foreground.
pub const EPS: f64 = 1.0 / 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Bg = 0,
    Unk = 1,
    Fg = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Bg, Label::Unk, Label::Fg];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trimap {
    width: usize,
    height: usize,
    labels: Vec<Label>,
}

impl Trimap {
    pub fn new(width: usize, height: usize, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != width * height {
            return shape_err("Trimap::new", format!("{width}x{height} needs {} labels, got {}", width * height, labels.len()));
        }
        Ok(Self { width, height, labels })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Label) -> Self {
        let labels = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self { width, height, labels }
    }

    /// Builds the partition from disjoint FG and BG masks; the rest is unknown.
    pub fn from_masks(fg: &BinaryMask, bg: &BinaryMask) -> Result<Self> {
        if (fg.width(), fg.height()) != (bg.width(), bg.height()) {
            return shape_err("Trimap::from_masks", "FG and BG masks differ in extent");
        }
        let labels = fg
            .bits()
            .iter()
            .zip(bg.bits())
            .map(|(&f, &b)| match (f, b) {
                (true, true) => Err(Error::InvalidArgument { op: "Trimap::from_masks", detail: "FG and BG overlap".into() }),
                (true, false) => Ok(Label::Fg),
                (false, true) => Ok(Label::Bg),
                (false, false) => Ok(Label::Unk),
            })
            .collect::<Result<_>>()?;
        Ok(Self { width: fg.width(), height: fg.height(), labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> Label {
        self.labels[y * self.width + x]
    }

    pub fn mask(&self, label: Label) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.get(x, y) == label)
    }

    pub fn unknown(&self) -> BinaryMask {
        self.mask(Label::Unk)
    }

    /// Pixel counts per class, indexed by [`Label::index`].
    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for l in &self.labels {
            c[l.index()] += 1;
        }
        c
    }
}

/// Soft per-pixel class probabilities `(B, U, F)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimapProbs {
    width: usize,
    height: usize,
    /// Row-major triples in `Label` order.
    probs: Vec<[f64; 3]>,
}

impl TrimapProbs {
    pub fn new(width: usize, height: usize, probs: Vec<[f64; 3]>) -> Result<Self> {
        if probs.len() != width * height {
            return shape_err("TrimapProbs::new", format!("{width}x{height} needs {} triples, got {}", width * height, probs.len()));
        }
        for p in &probs {
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return invalid("TrimapProbs::new", format!("{p:?} is not a probability triple"));
            }
        }
        Ok(Self { width, height, probs })
    }

    /// Softmax over a `[3, H, W]` logit volume.
    pub fn from_logits(width: usize, height: usize, logits: &[f64]) -> Result<Self> {
        let n = width * height;
        if logits.len() != 3 * n {
            return shape_err("TrimapProbs::from_logits", format!("expected {} logits, got {}", 3 * n, logits.len()));
        }
        let probs = (0..n)
            .map(|i| {
                let l = [logits[i], logits[n + i], logits[2 * n + i]];
                let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e = l.map(|v| (v - m).exp());
                let s: f64 = e.iter().sum();
                e.map(|v| v / s)
            })
            .collect();
        Self::new(width, height, probs)
    }

    pub fn one_hot(t: &Trimap) -> Self {
        let probs = t
            .labels
            .iter()
            .map(|l| {
                let mut p = [0.0; 3];
                p[l.index()] = 1.0;
                p
            })
            .collect();
        Self { width: t.width, height: t.height, probs }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn probs(&self) -> &[[f64; 3]] {
        &self.probs
    }

    pub fn channel(&self, label: Label) -> Vec<f64> {
        self.probs.iter().map(|p| p[label.index()]).collect()
    }

    /// Most probable class per pixel; ties resolve toward FG, then UNK.
    pub fn argmax(&self) -> Trimap {
        let labels = self
            .probs
            .iter()
            .map(|p| {
                if p[2] >= p[1] && p[2] >= p[0] {
                    Label::Fg
                } else if p[1] >= p[0] {
                    Label::Unk
                } else {
                    Label::Bg
                }
            })
            .collect();
        Trimap { width: self.width, height: self.height, labels }
    }
}

/// Two-channel soft foreground segmentation; `bg = 1 - fg`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftSegmentation {
    fg: AlphaMatte,
    bg: AlphaMatte,
}

impl SoftSegmentation {
    pub fn from_fg(fg: AlphaMatte) -> Self {
        let bg = AlphaMatte::from_fn(fg.width(), fg.height(), |x, y| 1.0 - fg.get(x, y));
        Self { fg, bg }
    }

    pub fn fg(&self) -> &AlphaMatte {
        &self.fg
    }

    pub fn bg(&self) -> &AlphaMatte {
        &self.bg
    }

    pub fn width(&self) -> usize {
        self.fg.width()
    }

    pub fn height(&self) -> usize {
        self.fg.height()
    }
}

fn binarize(alpha: &AlphaMatte) -> (BinaryMask, BinaryMask) {
    let fg = BinaryMask::from_fn(alpha.width(), alpha.height(), |x, y| alpha.get(x, y) >= 1.0 - EPS);
    let bg = BinaryMask::from_fn(alpha.width(), alpha.height(), |x, y| alpha.get(x, y) <= EPS);
    (fg, bg)
}

/// Trimap with independent FG and BG erosion radii.
pub fn trimap_with_radii(alpha: &AlphaMatte, fg_px: usize, bg_px: usize) -> Trimap {
    let (fg, bg) = binarize(alpha);
    Trimap::from_masks(&erode(&fg, fg_px), &erode(&bg, bg_px)).expect("eroded FG and BG stay disjoint")
}

/// Ground-truth trimap: FG and BG of the alpha, each eroded by `erosion_px`.
pub fn gt_trimap(alpha: &AlphaMatte, erosion_px: usize) -> Trimap {
    trimap_with_radii(alpha, erosion_px, erosion_px)
}

pub const RANDOM_RADIUS: std::ops::RangeInclusive<usize> = 1..=29;

/// The `(fg, bg)` erosion radii [`random_trimap`] uses for `seed`.
pub fn random_radii(seed: u64) -> (usize, usize) {
    let mut rng = seed::rng(seed);
    let a = rng.random_range(RANDOM_RADIUS);
    let b = rng.random_range(RANDOM_RADIUS);
    (a, b)
}

/// Training trimap with FG and BG radii drawn independently from 1..=29.
pub fn random_trimap(alpha: &AlphaMatte, seed: u64) -> Trimap {
    let (a, b) = random_radii(seed);
    trimap_with_radii(alpha, a, b)
}

/// How the two morphological radii act on the FG ∪ UNK mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentationMorph {
    /// Erode by `a`, then dilate by `b`.
    #[default]
    Opening,
    /// Either erode by `a` or dilate by `b`, chosen by a fair coin.
    EitherOr,
}

/// Drawn parameters of one soft-segmentation sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationDraw {
    pub erode_px: usize,
    pub dilate_px: usize,
    /// Only consulted by [`SegmentationMorph::EitherOr`].
    pub use_erode: bool,
    /// `0` skips the blur.
    pub sigma: f64,
}

pub const SEG_RADIUS: std::ops::RangeInclusive<usize> = 1..=59;
pub const SEG_SIGMA: (f64, f64) = (1.0, 3.0);

pub fn segmentation_draw(seed: u64) -> SegmentationDraw {
    let mut rng = seed::rng(seed);
    let erode_px = rng.random_range(SEG_RADIUS);
    let dilate_px = rng.random_range(SEG_RADIUS);
    let use_erode = rng.random_bool(0.5);
    let sigma = rng.random_range(SEG_SIGMA.0..=SEG_SIGMA.1);
    SegmentationDraw { erode_px, dilate_px, use_erode, sigma }
}

fn blur_or_identity(m: &BinaryMask, sigma: f64) -> Result<AlphaMatte> {
    if sigma == 0.0 {
        Ok(m.to_matte())
    } else {
        gaussian_blur(&m.to_matte(), sigma)
    }
}

pub fn soft_segmentation_with(t: &Trimap, draw: SegmentationDraw, morph: SegmentationMorph) -> Result<SoftSegmentation> {
    let m = t.mask(Label::Bg).not();
    let m = match morph {
        SegmentationMorph::Opening => dilate(&erode(&m, draw.erode_px), draw.dilate_px),
        SegmentationMorph::EitherOr if draw.use_erode => erode(&m, draw.erode_px),
        SegmentationMorph::EitherOr => dilate(&m, draw.dilate_px),
    };
    Ok(SoftSegmentation::from_fg(blur_or_identity(&m, draw.sigma)?))
}

/// Soft segmentation used as Net-M training input.
pub fn soft_segmentation_from_trimap(t: &Trimap, seed: u64) -> Result<SoftSegmentation> {
    soft_segmentation_with(t, segmentation_draw(seed), SegmentationMorph::Opening)
}

/// Deterministic inference-time segmentation: erode FG ∪ UNK by `px`, then
/// blur with `sigma` (`0` skips the blur).
pub fn inference_segmentation(t: &Trimap, px: usize, sigma: f64) -> Result<SoftSegmentation> {
    if sigma < 0.0 || !sigma.is_finite() {
        return invalid("inference_segmentation", format!("sigma must be >= 0, got {sigma}"));
    }
    let m = erode(&t.mask(Label::Bg).not(), px);
    Ok(SoftSegmentation::from_fg(blur_or_identity(&m, sigma)?))
}

/// Pseudo trimap for real images from a binary segmentation. The complement
/// is eroded with out-of-image pixels counted as background, so background
/// touching the border survives.
pub fn pseudo_trimap_real(seg: &BinaryMask, fg_px: usize, bg_px: usize) -> Trimap {
    let fg = erode(seg, fg_px);
    let bg = dilate(seg, bg_px).not();
    Trimap::from_masks(&fg, &bg).expect("disjoint by construction")
}

pub fn trimap_encode(t: &Trimap) -> Vec<u8> {
    t.labels
        .iter()
        .map(|l| match l {
            Label::Bg => 0,
            Label::Unk => 128,
            Label::Fg => 255,
        })
        .collect()
}

pub fn trimap_decode(width: usize, height: usize, values: &[u8]) -> Result<Trimap> {
    let labels = values
        .iter()
        .enumerate()
        .map(|(i, &v)| match v {
            0 => Ok(Label::Bg),
            120..=136 => Ok(Label::Unk),
            255 => Ok(Label::Fg),
            _ => Err(Error::Decode(format!("trimap value {v} at pixel {i} is not 0, 120..=136 or 255"))),
        })
        .collect::<Result<_>>()?;
    Trimap::new(width, height, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> AlphaMatte {
        AlphaMatte::from_fn(w, h, |x, y| if (x as f64 - cx).hypot(y as f64 - cy) <= r { 1.0 } else { 0.0 })
    }

    #[test]
    fn erosion_zero_thresholds_exactly() {
        let vals = [0.0, 0.5, 1.0, EPS, 1.0 - EPS, 0.004];
        let a = AlphaMatte::new(6, 1, vals.to_vec()).unwrap();
        let t = gt_trimap(&a, 0);
        assert_eq!(t.labels(), &[Label::Bg, Label::Unk, Label::Fg, Label::Bg, Label::Fg, Label::Unk]);
    }

    #[test]
    fn all_foreground_shaves_border() {
        let a = AlphaMatte::from_fn(40, 40, |_, _| 1.0);
        let t = gt_trimap(&a, 15);
        for y in 0..40 {
            for x in 0..40 {
                let inner = (15..25).contains(&x) && (15..25).contains(&y);
                assert_eq!(t.get(x, y), if inner { Label::Fg } else { Label::Unk });
            }
        }
    }

    #[test]
    fn injected_radii_reduce_to_gt() {
        let a = disk(64, 64, 30.0, 33.0, 18.0);
        assert_eq!(trimap_with_radii(&a, 15, 15), gt_trimap(&a, 15));
        assert_eq!(random_trimap(&a, 7), random_trimap(&a, 7));
    }

    #[test]
    fn radii_stay_in_range() {
        for s in 0..500 {
            let (a, b) = random_radii(s);
            assert!(RANDOM_RADIUS.contains(&a) && RANDOM_RADIUS.contains(&b));
        }
    }

    #[test]
    fn soft_segmentation_sums_to_one() {
        let a = disk(48, 48, 24.0, 24.0, 14.0);
        let t = gt_trimap(&a, 3);
        let s = soft_segmentation_from_trimap(&t, 11).unwrap();
        for (f, b) in s.fg().values().iter().zip(s.bg().values()) {
            assert!((f + b - 1.0).abs() < 1e-12);
        }
        assert_eq!(s, soft_segmentation_from_trimap(&t, 11).unwrap());
    }

    #[test]
    fn opening_without_blur() {
        let a = disk(64, 64, 32.0, 32.0, 20.0);
        let t = gt_trimap(&a, 0);
        let draw = SegmentationDraw { erode_px: 4, dilate_px: 4, use_erode: true, sigma: 0.0 };
        let s = soft_segmentation_with(&t, draw, SegmentationMorph::Opening).unwrap();
        let m = t.mask(Label::Bg).not();
        assert_eq!(s.fg(), &dilate(&erode(&m, 4), 4).to_matte());
    }

    #[test]
    fn inference_segmentation_limits() {
        let a = disk(32, 32, 16.0, 16.0, 9.0);
        let t = gt_trimap(&a, 2);
        let s = inference_segmentation(&t, 0, 0.0).unwrap();
        assert_eq!(s.fg(), &t.mask(Label::Bg).not().to_matte());
        let full = Trimap::from_fn(60, 60, |_, _| Label::Fg);
        let s = inference_segmentation(&full, 20, 2.0).unwrap();
        assert!((s.fg().get(30, 30) - 1.0).abs() < 1e-12);
        assert_eq!(s.fg().get(0, 0), 0.0);
    }

    #[test]
    fn pseudo_trimap_zero_radii_has_no_unknown() {
        let seg = BinaryMask::from_fn(20, 20, |x, y| x + y < 17);
        let t = pseudo_trimap_real(&seg, 0, 0);
        assert_eq!(t.counts()[Label::Unk.index()], 0);
        let all = pseudo_trimap_real(&BinaryMask::filled(40, 40, true), 15, 50);
        assert_eq!(all.counts(), [0, 40 * 40 - 100, 100]);
    }

    #[test]
    fn encode_decode() {
        let t = Trimap::from_fn(5, 3, |x, y| Label::ALL[(x + 2 * y) % 3]);
        assert_eq!(trimap_decode(5, 3, &trimap_encode(&t)).unwrap(), t);
        assert_eq!(trimap_decode(1, 1, &[128]).unwrap().labels(), &[Label::Unk]);
        assert_eq!(trimap_decode(1, 1, &[121]).unwrap().labels(), &[Label::Unk]);
        assert!(trimap_decode(1, 1, &[64]).is_err());
        assert!(trimap_decode(2, 1, &[0]).is_err());
    }

    #[test]
    fn probs_from_logits_normalize() {
        let p = TrimapProbs::from_logits(2, 1, &[0.0, 1.0, 1.0, 0.0, 0.0, 5.0]).unwrap();
        assert_eq!(p.argmax().labels(), &[Label::Unk, Label::Fg]);
        assert!(TrimapProbs::new(1, 1, vec![[0.5, 0.5, 0.5]]).is_err());
    }
}
