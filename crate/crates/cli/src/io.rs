//! File conventions: 8-bit grayscale PNG mattes (value / 255), trimaps in
//! {0, 128, 255}, RGB probability PNGs in (B, U, F) channel order, and
//! exact-valued mattes as single-channel MTF tensors.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::{GrayImage, ImageBuffer, Rgb, RgbImage};
use matting_core::morphology::BinaryMask;
use matting_core::numerics::{mtf, Tensor};
use matting_core::synth::{AlphaMatte, ImageRGB};
use matting_core::trimap::{trimap_decode, trimap_encode, Trimap, TrimapProbs};

/// Probability rows may sum to anything within this of one after 8-bit
/// quantization.
pub const PROB_SUM_TOL: f64 = 2.0 / 255.0;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Files with one of `exts` directly inside `dir`, sorted by file name.
pub fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))? {
        let p = entry?.path();
        if p.is_file() && p.extension().and_then(|e| e.to_str()).is_some_and(|e| exts.contains(&e.to_ascii_lowercase().as_str())) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Finds `<dir>/<stem>.png` or `<dir>/<stem>.mtf`.
pub fn find_by_stem(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["png", "mtf"].iter().map(|e| dir.join(format!("{stem}.{e}"))).find(|p| p.is_file())
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).with_context(|| format!("decoding image {}", path.display()))
}

pub fn read_gray_u8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = open(path)?.to_luma8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

pub fn write_gray_u8(path: &Path, w: usize, h: usize, data: Vec<u8>) -> Result<()> {
    let img: GrayImage = ImageBuffer::from_raw(w as u32, h as u32, data).context("gray buffer size")?;
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Reads a matte from PNG (quantized) or MTF (exact, shape `[H, W]` or
/// `[1, H, W]`).
pub fn read_matte(path: &Path) -> Result<AlphaMatte> {
    if path.extension().is_some_and(|e| e == "mtf") {
        let t = mtf::read_file(path).with_context(|| format!("reading {}", path.display()))?;
        let (h, w) = match t.shape() {
            [h, w] | [1, h, w] => (*h, *w),
            s => bail!("{}: matte tensor must be [H, W] or [1, H, W], got {s:?}", path.display()),
        };
        return AlphaMatte::new(w, h, t.data().to_vec()).with_context(|| format!("{}", path.display()));
    }
    let (w, h, data) = read_gray_u8(path)?;
    Ok(AlphaMatte::new(w, h, data.iter().map(|&v| v as f64 / 255.0).collect())?)
}

pub fn write_matte_png(path: &Path, a: &AlphaMatte) -> Result<()> {
    write_gray_u8(path, a.width(), a.height(), a.values().iter().map(|&v| to_u8(v)).collect())
}

pub fn write_matte_mtf(path: &Path, a: &AlphaMatte) -> Result<()> {
    let t = Tensor::new(vec![1, a.height(), a.width()], a.values().to_vec())?;
    mtf::write_file(path, &t).with_context(|| format!("writing {}", path.display()))
}

pub fn read_rgb(path: &Path) -> Result<ImageRGB> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(ImageRGB::new(w, h, img.into_raw().iter().map(|&v| v as f64 / 255.0).collect())?)
}

pub fn write_rgb(path: &Path, img: &ImageRGB) -> Result<()> {
    let buf: RgbImage = ImageBuffer::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.data().iter().map(|&v| to_u8(v)).collect(),
    )
    .context("rgb buffer size")?;
    buf.save(path).with_context(|| format!("writing {}", path.display()))
}

pub fn read_trimap(path: &Path) -> Result<Trimap> {
    let (w, h, data) = read_gray_u8(path)?;
    trimap_decode(w, h, &data).with_context(|| format!("{}", path.display()))
}

pub fn write_trimap(path: &Path, t: &Trimap) -> Result<()> {
    write_gray_u8(path, t.width(), t.height(), trimap_encode(t))
}

/// Binary mask from a grayscale PNG: values of 128 and above are set.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let (w, h, data) = read_gray_u8(path)?;
    Ok(BinaryMask::new(w, h, data.iter().map(|&v| v >= 128).collect())?)
}

pub fn write_mask(path: &Path, m: &BinaryMask) -> Result<()> {
    write_gray_u8(path, m.width(), m.height(), m.bits().iter().map(|&b| if b { 255 } else { 0 }).collect())
}

/// Reads an RGB probability PNG, rejecting rows whose sum strays more than
/// [`PROB_SUM_TOL`] from one and renormalizing the rest.
pub fn read_probs(path: &Path) -> Result<TrimapProbs> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut probs = Vec::with_capacity(w * h);
    for (i, px) in img.pixels().enumerate() {
        let p = px.0.map(|v| v as f64 / 255.0);
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > PROB_SUM_TOL {
            bail!("{}: pixel ({}, {}) probabilities {:?} sum to {s:.4}", path.display(), i % w, i / w, px.0);
        }
        probs.push(p.map(|v| v / s));
    }
    Ok(TrimapProbs::new(w, h, probs)?)
}

/// Quantizes probabilities so that every pixel's bytes sum to exactly 255.
pub fn write_probs(path: &Path, p: &TrimapProbs) -> Result<()> {
    let mut buf = RgbImage::new(p.width() as u32, p.height() as u32);
    for (i, q) in p.probs().iter().enumerate() {
        let b = to_u8(q[0]);
        let f = to_u8(q[2]).min(255 - b);
        let u = 255 - b - f;
        buf.put_pixel((i % p.width()) as u32, (i / p.width()) as u32, Rgb([b, u, f]));
    }
    buf.save(path).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
