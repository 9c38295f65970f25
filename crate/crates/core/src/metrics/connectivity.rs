use crate::error::{invalid, Result};
use crate::morphology::BinaryMask;
use crate::synth::AlphaMatte;

use super::{check_extents, REPORT_SCALE};

pub const DEFAULT_CONN_STEP: f64 = 0.1;

/// Degradations below this are treated as fully connected.
const PHI_THRESHOLD: f64 = 0.15;

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    /// Union by size; equal sizes keep the lower index as root.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (keep, drop) = match self.size[ra].cmp(&self.size[rb]) {
            std::cmp::Ordering::Greater => (ra, rb),
            std::cmp::Ordering::Less => (rb, ra),
            std::cmp::Ordering::Equal => (ra.min(rb), ra.max(rb)),
        };
        self.parent[drop] = keep;
        self.size[keep] += self.size[drop];
    }
}

/// Largest 4-connected component of `m`. Among equally large components the
/// one whose first pixel (row-major) comes first wins. Empty input gives an
/// empty mask.
pub fn largest_component(m: &BinaryMask) -> BinaryMask {
    let (w, h) = (m.width(), m.height());
    let bits = m.bits();
    let mut ds = DisjointSet::new(bits.len());
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !bits[i] {
                continue;
            }
            if x + 1 < w && bits[i + 1] {
                ds.union(i, i + 1);
            }
            if y + 1 < h && bits[i + w] {
                ds.union(i, i + w);
            }
        }
    }
    // Scanning in pixel order visits each component's first pixel first.
    let mut best: Option<(usize, usize)> = None;
    let mut seen = vec![false; bits.len()];
    for i in 0..bits.len() {
        if !bits[i] {
            continue;
        }
        let r = ds.find(i);
        if seen[r] {
            continue;
        }
        seen[r] = true;
        let s = ds.size[r];
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((r, s));
        }
    }
    match best {
        None => BinaryMask::filled(w, h, false),
        Some((root, _)) => {
            let roots: Vec<usize> = (0..bits.len()).map(|i| if bits[i] { ds.find(i) } else { usize::MAX }).collect();
            BinaryMask::from_fn(w, h, |x, y| roots[y * w + x] == root)
        }
    }
}

fn thresholds(step: f64) -> Vec<f64> {
    let n = (1.0 / step + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

/// `Σ_M |φ(pred) - φ(gt)|` before scaling.
pub fn connectivity_error_raw(pred: &AlphaMatte, gt: &AlphaMatte, m: &BinaryMask, step: f64) -> Result<f64> {
    check_extents("connectivity_error", pred, gt, m)?;
    if !(step > 0.0 && step < 1.0) {
        return invalid("connectivity_error", format!("step must lie in (0,1), got {step}"));
    }
    let (w, h) = (pred.width(), pred.height());
    let n = w * h;
    let th = thresholds(step);
    let mut level: Vec<Option<f64>> = vec![None; n];
    for i in 1..th.len() {
        let t = th[i];
        let both = BinaryMask::from_fn(w, h, |x, y| pred.get(x, y) >= t && gt.get(x, y) >= t);
        let omega = largest_component(&both);
        for (p, l) in level.iter_mut().enumerate() {
            if l.is_none() && !omega.bits()[p] {
                *l = Some(th[i - 1]);
            }
        }
    }
    let phi = |a: f64, l: f64| {
        let d = a - l;
        1.0 - if d >= PHI_THRESHOLD { d } else { 0.0 }
    };
    let mut total = 0.0;
    for p in 0..n {
        if !m.bits()[p] {
            continue;
        }
        let l = level[p].unwrap_or(1.0);
        total += (phi(pred.values()[p], l) - phi(gt.values()[p], l)).abs();
    }
    Ok(total)
}

pub fn connectivity_error(pred: &AlphaMatte, gt: &AlphaMatte, m: &BinaryMask, step: f64) -> Result<f64> {
    Ok(connectivity_error_raw(pred, gt, m, step)? / REPORT_SCALE)
}
