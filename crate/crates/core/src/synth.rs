//! Alpha compositing `I = αF + (1-α)B` and composite dataset synthesis.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::seed;

/// Single-channel map with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaMatte {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl AlphaMatte {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width * height != values.len() {
            return shape_err("AlphaMatte::new", format!("{width}x{height} needs {} values, got {}", width * height, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return invalid("AlphaMatte::new", format!("value {v} outside [0,1]"));
        }
        Ok(Self { width, height, values })
    }

    /// Builds a matte from `f(x, y)`, clamping into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = (0..width * height).map(|i| f(i % width, i / width).clamp(0.0, 1.0)).collect();
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn same_extent(&self, w: usize, h: usize) -> bool {
        self.width == w && self.height == h
    }
}

/// Three-channel image, interleaved RGB, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRGB {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if 3 * width * height != data.len() {
            return shape_err("ImageRGB::new", format!("{width}x{height}x3 needs {} values, got {}", 3 * width * height, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return invalid("ImageRGB::new", format!("value {v} outside [0,1]"));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Per pixel and channel `α·F + (1-α)·B`.
pub fn composite(fg: &ImageRGB, bg: &ImageRGB, alpha: &AlphaMatte) -> Result<ImageRGB> {
    let (w, h) = (fg.width, fg.height);
    if (bg.width, bg.height) != (w, h) || !alpha.same_extent(w, h) {
        return shape_err(
            "composite",
            format!("fg {w}x{h}, bg {}x{}, alpha {}x{}", bg.width, bg.height, alpha.width, alpha.height),
        );
    }
    let data = fg
        .data
        .iter()
        .zip(&bg.data)
        .enumerate()
        .map(|(i, (&f, &b))| {
            let a = alpha.values[i / 3];
            (a * f + (1.0 - a) * b).clamp(0.0, 1.0)
        })
        .collect();
    Ok(ImageRGB { width: w, height: h, data })
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &ImageRGB, width: usize, height: usize) -> Result<ImageRGB> {
    if width == 0 || height == 0 || img.width == 0 || img.height == 0 {
        return invalid("resize_bilinear", format!("cannot resize {}x{} to {width}x{height}", img.width, img.height));
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let taps = |o: usize, scale: f64, n: usize| {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    Ok(ImageRGB::from_fn(width, height, |x, y| {
        let (x0, x1, fx) = taps(x, sx, img.width);
        let (y0, y1, fy) = taps(y, sy, img.height);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let at = |xx: usize, yy: usize| img.data[3 * (yy * img.width + xx) + c];
            let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
            let bot = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
            *o = top * (1.0 - fy) + bot * fy;
        }
        out
    }))
}

/// Crop window in the coordinates of the resized background.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Size the background is scaled to so it just covers the target, and the
/// centered crop taken from it.
pub fn cover_and_center_crop(src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Result<((usize, usize), CropRect)> {
    if src_w == 0 || src_h == 0 || dst_w == 0 || dst_h == 0 {
        return invalid("cover_and_center_crop", format!("{src_w}x{src_h} -> {dst_w}x{dst_h}"));
    }
    let scale = (dst_w as f64 / src_w as f64).max(dst_h as f64 / src_h as f64);
    let rw = ((src_w as f64 * scale).round() as usize).max(dst_w);
    let rh = ((src_h as f64 * scale).round() as usize).max(dst_h);
    let crop = CropRect { x: (rw - dst_w) / 2, y: (rh - dst_h) / 2, width: dst_w, height: dst_h };
    Ok(((rw, rh), crop))
}

pub fn crop(img: &ImageRGB, r: CropRect) -> Result<ImageRGB> {
    if r.x + r.width > img.width || r.y + r.height > img.height {
        return shape_err("crop", format!("{r:?} exceeds {}x{}", img.width, img.height));
    }
    Ok(ImageRGB::from_fn(r.width, r.height, |x, y| img.pixel(r.x + x, r.y + y)))
}

/// Background assignment for one output item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub index: usize,
    pub fg: usize,
    pub bg: usize,
    pub seed: u64,
}

/// One planned composite. `fg` and `alpha` index the paired foreground list;
/// `crop` lives in the coordinates of the background resized to `resized`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionJob {
    pub index: usize,
    pub fg: usize,
    pub alpha: usize,
    pub bg: usize,
    pub resized: (usize, usize),
    pub crop: CropRect,
    pub target: (usize, usize),
    pub seed: u64,
}

/// Provenance record written next to every composite.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub fg: usize,
    pub bg: usize,
    pub alpha: usize,
    pub resized: (usize, usize),
    pub crop: CropRect,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub image: ImageRGB,
    pub alpha: AlphaMatte,
    pub provenance: Provenance,
}

/// Default backgrounds per foreground for training sets.
pub const TRAIN_PER_FG: usize = 100;
/// Default backgrounds per foreground for test sets.
pub const TEST_PER_FG: usize = 20;

/// Assigns `per_fg` backgrounds to each foreground. Backgrounds are drawn in
/// order from a seeded permutation of the pool, so a pool of at least
/// `n_fg * per_fg` images uses each background at most once.
pub fn assign_backgrounds(n_fg: usize, n_bg: usize, per_fg: usize, seed: u64) -> Result<Vec<Assignment>> {
    if per_fg == 0 {
        return invalid("assign_backgrounds", "per_fg must be >= 1");
    }
    if n_fg == 0 || n_bg == 0 {
        return invalid("assign_backgrounds", "foreground and background lists must be non-empty");
    }
    let mut order: Vec<usize> = (0..n_bg).collect();
    order.shuffle(&mut seed::rng(seed));
    Ok((0..n_fg * per_fg)
        .map(|index| Assignment {
            index,
            fg: index / per_fg,
            bg: order[index % n_bg],
            seed: seed::derive(seed, index as u64),
        })
        .collect())
}

/// Full job list from foreground and background extents.
pub fn plan_jobs(
    fg_extents: &[(usize, usize)],
    bg_extents: &[(usize, usize)],
    per_fg: usize,
    seed: u64,
) -> Result<Vec<CompositionJob>> {
    assign_backgrounds(fg_extents.len(), bg_extents.len(), per_fg, seed)?
        .into_iter()
        .map(|a| {
            let target = fg_extents[a.fg];
            let (bw, bh) = bg_extents[a.bg];
            let (resized, crop) = cover_and_center_crop(bw, bh, target.0, target.1)?;
            Ok(CompositionJob { index: a.index, fg: a.fg, alpha: a.fg, bg: a.bg, resized, crop, target, seed: a.seed })
        })
        .collect()
}

pub fn run_job(fgs: &[ImageRGB], alphas: &[AlphaMatte], bgs: &[ImageRGB], job: &CompositionJob) -> Result<Composite> {
    let fg = &fgs[job.fg];
    let alpha = &alphas[job.alpha];
    if !alpha.same_extent(fg.width, fg.height) {
        return shape_err(
            "synthesize_set",
            format!("alpha {} is {}x{}, foreground is {}x{}", job.alpha, alpha.width, alpha.height, fg.width, fg.height),
        );
    }
    let bg = &bgs[job.bg];
    let bg_fit = crop(&resize_bilinear(bg, job.resized.0, job.resized.1)?, job.crop)?;
    let image = composite(fg, &bg_fit, alpha)?;
    Ok(Composite {
        image,
        alpha: alpha.clone(),
        provenance: Provenance {
            fg: job.fg,
            bg: job.bg,
            alpha: job.alpha,
            resized: job.resized,
            crop: job.crop,
            seed: job.seed,
        },
    })
}

/// Composites every foreground over `per_fg` backgrounds, in job order.
pub fn synthesize_set(
    fgs: &[ImageRGB],
    alphas: &[AlphaMatte],
    bgs: &[ImageRGB],
    per_fg: usize,
    seed: u64,
) -> Result<Vec<Composite>> {
    if fgs.len() != alphas.len() {
        return shape_err("synthesize_set", format!("{} foregrounds but {} alphas", fgs.len(), alphas.len()));
    }
    let fe: Vec<_> = fgs.iter().map(|f| (f.width, f.height)).collect();
    let be: Vec<_> = bgs.iter().map(|b| (b.width, b.height)).collect();
    let jobs = plan_jobs(&fe, &be, per_fg, seed)?;
    jobs.par_iter().map(|j| run_job(fgs, alphas, bgs, j)).collect()
}
