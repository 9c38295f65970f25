//! Binary morphology with square structuring elements and separable Gaussian
//! blur.
//!
//! Border policy: erosion treats pixels outside the image as `false`, so masks
//! shrink away from the image border. Dilation only looks at in-image pixels,
//! which is the same as eroding the complement with out-of-image pixels taken
//! as `true`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::synth::AlphaMatte;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width * height != bits.len() {
            return shape_err("BinaryMask::new", format!("{width}x{height} needs {} bits, got {}", width * height, bits.len()));
        }
        Ok(Self { width, height, bits })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, bits: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let bits = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn not(&self) -> Self {
        Self { width: self.width, height: self.height, bits: self.bits.iter().map(|b| !b).collect() }
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip(other, "BinaryMask::and", |a, b| a && b)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip(other, "BinaryMask::or", |a, b| a || b)
    }

    /// True when every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    fn zip(&self, other: &Self, op: &'static str, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        if (self.width, self.height) != (other.width, other.height) {
            return shape_err(op, format!("{}x{} vs {}x{}", self.width, self.height, other.width, other.height));
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { width: self.width, height: self.height, bits })
    }

    /// Mask as a 0/1 real map.
    pub fn to_matte(&self) -> AlphaMatte {
        AlphaMatte::from_fn(self.width, self.height, |x, y| if self.get(x, y) { 1.0 } else { 0.0 })
    }

    /// Summed-area table with a zero guard row and column.
    fn integral(&self) -> Vec<u32> {
        let (w, h) = (self.width, self.height);
        let mut s = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += self.bits[y * w + x] as u32;
                s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
            }
        }
        s
    }
}

/// Count of set bits inside the inclusive window `[x0,x1]×[y0,y1]`.
fn window_count(s: &[u32], w: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> u32 {
    let stride = w + 1;
    s[(y1 + 1) * stride + x1 + 1] + s[y0 * stride + x0] - s[y0 * stride + x1 + 1] - s[(y1 + 1) * stride + x0]
}

/// Shape of the structuring element. Only the square (Chebyshev ball) is
/// implemented; it is the one that makes erosion radii add exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementShape {
    #[default]
    Square,
}

/// Square `(2k+1)×(2k+1)` structuring element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuringElement {
    pub radius: usize,
    #[serde(default)]
    pub shape: ElementShape,
}

impl StructuringElement {
    pub fn square(radius: usize) -> Self {
        Self { radius, shape: ElementShape::Square }
    }
}

/// A pixel survives iff every pixel within Chebyshev distance `k` is set and
/// inside the image.
pub fn erode(m: &BinaryMask, k: usize) -> BinaryMask {
    if k == 0 {
        return m.clone();
    }
    let (w, h) = (m.width, m.height);
    let s = m.integral();
    let full = ((2 * k + 1) * (2 * k + 1)) as u32;
    BinaryMask::from_fn(w, h, |x, y| {
        if x < k || y < k || x + k >= w || y + k >= h {
            return false;
        }
        window_count(&s, w, x - k, y - k, x + k, y + k) == full
    })
}

/// A pixel is set iff any in-image pixel within Chebyshev distance `k` is set.
pub fn dilate(m: &BinaryMask, k: usize) -> BinaryMask {
    if k == 0 {
        return m.clone();
    }
    let (w, h) = (m.width, m.height);
    let s = m.integral();
    BinaryMask::from_fn(w, h, |x, y| {
        let (x0, y0) = (x.saturating_sub(k), y.saturating_sub(k));
        let (x1, y1) = ((x + k).min(w - 1), (y + k).min(h - 1));
        window_count(&s, w, x0, y0, x1, y1) > 0
    })
}

pub fn erode_with(m: &BinaryMask, se: StructuringElement) -> BinaryMask {
    match se.shape {
        ElementShape::Square => erode(m, se.radius),
    }
}

pub fn dilate_with(m: &BinaryMask, se: StructuringElement) -> BinaryMask {
    match se.shape {
        ElementShape::Square => dilate(m, se.radius),
    }
}

/// Symmetric reflection of an index into `0..n` (edge sample repeated), valid
/// for arbitrarily large overhangs.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut r = i.rem_euclid(period);
    if r >= n {
        r = period - 1 - r;
    }
    r as usize
}

/// Normalized 1-D Gaussian of radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return invalid("gaussian_kernel", format!("sigma must be positive, got {sigma}"));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius).map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Correlates rows with `kx` and then columns with `ky`, reflecting at borders.
pub(crate) fn separable_filter(values: &[f64], width: usize, height: usize, kx: &[f64], ky: &[f64]) -> Vec<f64> {
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let mut tmp = vec![0.0; values.len()];
    for y in 0..height {
        let row = &values[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (t, &kv) in kx.iter().enumerate() {
                acc += kv * row[reflect(x as isize + t as isize - rx, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; values.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (t, &kv) in ky.iter().enumerate() {
                acc += kv * tmp[reflect(y as isize + t as isize - ry, height) * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Separable Gaussian blur with reflect borders; output is clamped to
/// `[0, 1]` to absorb rounding.
pub fn gaussian_blur(img: &AlphaMatte, sigma: f64) -> Result<AlphaMatte> {
    let k = gaussian_kernel(sigma)?;
    let out = separable_filter(img.values(), img.width(), img.height(), &k, &k);
    AlphaMatte::new(img.width(), img.height(), out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}
