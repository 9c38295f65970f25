//! Brute-force reference implementations shared by the test targets.
#![allow(dead_code)]

use std::collections::VecDeque;

use matting_core::attention::{clip, AttentionConfig, AttentionParams};
use matting_core::morphology::BinaryMask;
use matting_core::numerics::Tensor;
use matting_core::seed;
use matting_core::synth::AlphaMatte;
use rand::Rng;

/// Side of the metric test instances.
pub const N: usize = 16;

pub struct Instance {
    pub cfg: AttentionConfig,
    pub params: AttentionParams,
    pub image: Tensor,
    pub alpha: Tensor,
    pub unknown: BinaryMask,
}

pub fn instance(s: u64, r: usize, random_w: bool) -> Instance {
    let mut rng = seed::rng(s);
    let side = if r == 1 { rng.random_range(1..=4) } else { 2 * r };
    let (w, h) = (side, if r == 1 { rng.random_range(1..=4) } else { 2 * r });
    let d = rng.random_range(1..=4);
    let c_a = rng.random_range(1..=3);
    let mut cfg = AttentionConfig::new(d, c_a);
    cfg.e = rng.random_range(1..=3);
    cfg.c_g = rng.random_range(1..=3);
    cfg.r = r;
    cfg.bias = rng.random_bool(0.5);
    let mut params = AttentionParams::init(&cfg, s).unwrap();
    if random_w {
        params.w = Tensor::randn(params.w.shape(), 0.7, &mut rng);
        for b in [&mut params.theta_bias, &mut params.phi_bias, &mut params.g_bias, &mut params.w_bias].into_iter().flatten() {
            *b = Tensor::randn(b.shape(), 0.3, &mut rng);
        }
    }
    let image = Tensor::randn(&[d, h, w], 1.0, &mut rng);
    let alpha = Tensor::uniform(&[c_a, h, w], 0.0, 1.0, &mut rng);
    let unknown = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(0.4));
    Instance { cfg, params, image, alpha, unknown }
}

/// Direct evaluation with r = 1: every pixel is both a query and a key.
pub fn nested_loop(inst: &Instance) -> Vec<f64> {
    let Instance { cfg, params, image, alpha, unknown } = inst;
    let sh = image.shape();
    let (d, n) = (sh[0], sh[1] * sh[2]);
    let ca = alpha.shape()[0];
    let (e, cg) = (cfg.e, cfg.c_g);
    let at = |t: &Tensor, i: usize| t.data()[i];
    let bias = |b: &Option<Tensor>, i: usize| b.as_ref().map_or(0.0, |b| b.data()[i]);
    let embed = |wt: &Tensor, b: &Option<Tensor>, src: &Tensor, cin: usize, cout: usize| {
        let mut out = vec![vec![0.0; cout]; n];
        for (p, row) in out.iter_mut().enumerate() {
            for (o, v) in row.iter_mut().enumerate() {
                let mut acc = bias(b, o);
                for c in 0..cin {
                    acc += at(wt, o * cin + c) * at(src, c * n + p);
                }
                *v = acc;
            }
        }
        out
    };
    let theta = embed(&params.theta, &params.theta_bias, image, d, e);
    let phi = embed(&params.phi, &params.phi_bias, image, d, e);
    let g = embed(&params.g, &params.g_bias, alpha, ca, cg);
    let u = unknown.count();
    let k = n - u;
    let mut out = alpha.data().to_vec();
    for i in 0..n {
        let wi = if u == 0 || k == 0 {
            1.0
        } else if unknown.bits()[i] {
            clip((u as f64 / k as f64).sqrt())
        } else {
            clip((k as f64 / u as f64).sqrt())
        };
        let logits: Vec<f64> = (0..n)
            .map(|j| wi * (0..e).map(|c| theta[i][c] * phi[j][c]).sum::<f64>() / (d as f64 / 2.0).sqrt())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = ex.iter().sum();
        let ctx: Vec<f64> = (0..cg).map(|c| (0..n).map(|j| ex[j] / z * g[j][c]).sum()).collect();
        for o in 0..ca {
            let mut y = bias(&params.w_bias, o);
            for c in 0..cg {
                y += at(&params.w, o * cg + c) * ctx[c];
            }
            out[o * n + i] += y;
        }
    }
    out
}

/// Blobby ground truth plus a perturbed prediction, both in [0, 1].
pub fn pair(s: u64) -> (AlphaMatte, AlphaMatte, BinaryMask) {
    let mut rng = seed::rng(s);
    let blobs: Vec<(f64, f64, f64)> =
        (0..3).map(|_| (rng.random_range(0.0..16.0), rng.random_range(0.0..16.0), rng.random_range(2.0..6.0))).collect();
    let gt = AlphaMatte::from_fn(N, N, |x, y| {
        let v: f64 = blobs
            .iter()
            .map(|&(cx, cy, r)| {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                (r - d).clamp(0.0, 1.0)
            })
            .fold(0.0, f64::max);
        v
    });
    let noise: Vec<f64> = (0..N * N).map(|_| rng.random_range(-0.3..0.3)).collect();
    let pred = AlphaMatte::from_fn(N, N, |x, y| gt.get(x, y) + noise[y * N + x]);
    let m = BinaryMask::from_fn(N, N, |_, _| rng.random_bool(0.7));
    (pred, gt, m)
}

pub fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    (if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - 1 - i
    } else {
        i
    }) as usize
}

/// Dense 2-D derivative-of-Gaussian filtering with the 2-D kernel
/// normalized to unit L2 norm.
pub fn dense_gradient(a: &AlphaMatte, sigma: f64) -> Vec<f64> {
    let eps = 1e-2;
    let half = (sigma * (-2.0 * ((2.0 * std::f64::consts::PI).sqrt() * sigma * eps).ln()).sqrt()).ceil() as isize;
    let gauss = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp();
    let taps: Vec<isize> = (-half..=half).collect();
    let mut kx = vec![vec![0.0; taps.len()]; taps.len()];
    for (j, &v) in taps.iter().enumerate() {
        for (i, &u) in taps.iter().enumerate() {
            kx[j][i] = -(u as f64) * gauss(u as f64) * gauss(v as f64);
        }
    }
    let norm = kx.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    kx.iter_mut().flatten().for_each(|v| *v /= norm);
    let (w, h) = (a.width(), a.height());
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for (j, &v) in taps.iter().enumerate() {
                for (i, &u) in taps.iter().enumerate() {
                    // convolution: the image is sampled at (x - u, y - v)
                    let px = a.get(mirror(x as isize - u, w), mirror(y as isize - v, h));
                    let py = a.get(mirror(x as isize - v, w), mirror(y as isize - u, h));
                    gx += kx[j][i] * px;
                    gy += kx[j][i] * py;
                }
            }
            out[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Largest 4-connected component by breadth-first flood fill; ties go to the
/// component met first in row-major order.
pub fn bfs_largest(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut label = vec![usize::MAX; w * h];
    let mut sizes = Vec::new();
    for start in 0..w * h {
        if !bits[start] || label[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        let mut q = VecDeque::from([start]);
        label[start] = id;
        while let Some(p) = q.pop_front() {
            size += 1;
            let (x, y) = (p % w, p / w);
            let mut nb = Vec::with_capacity(4);
            if x > 0 {
                nb.push(p - 1);
            }
            if x + 1 < w {
                nb.push(p + 1);
            }
            if y > 0 {
                nb.push(p - w);
            }
            if y + 1 < h {
                nb.push(p + w);
            }
            for n in nb {
                if bits[n] && label[n] == usize::MAX {
                    label[n] = id;
                    q.push_back(n);
                }
            }
        }
        sizes.push(size);
    }
    let best = (0..sizes.len()).fold(None, |b: Option<usize>, i| match b {
        Some(j) if sizes[j] >= sizes[i] => Some(j),
        _ => Some(i),
    });
    label.iter().map(|&l| best.is_some_and(|b| l == b)).collect()
}

pub fn conn_oracle(p: &AlphaMatte, g: &AlphaMatte, m: &BinaryMask, step: f64) -> f64 {
    let (w, h) = (p.width(), p.height());
    let n = w * h;
    let steps = (1.0 / step).round() as usize;
    let mut level = vec![-1.0f64; n];
    for i in 1..=steps {
        let t = i as f64 * step;
        let both: Vec<bool> = (0..n).map(|k| p.values()[k] >= t && g.values()[k] >= t).collect();
        let omega = bfs_largest(&both, w, h);
        for k in 0..n {
            if level[k] < 0.0 && !omega[k] {
                level[k] = (i - 1) as f64 * step;
            }
        }
    }
    let phi = |a: f64, l: f64| {
        let d = a - if l < 0.0 { 1.0 } else { l };
        if d >= 0.15 {
            1.0 - d
        } else {
            1.0
        }
    };
    (0..n).filter(|&k| m.bits()[k]).map(|k| (phi(p.values()[k], level[k]) - phi(g.values()[k], level[k])).abs()).sum()
}

pub fn random_mask(s: u64, w: usize, h: usize) -> BinaryMask {
    let mut rng = seed::rng(s);
    let p = rng.random_range(0.3..0.95);
    BinaryMask::from_fn(w, h, |_, _| rng.random_bool(p))
}

/// Window test by brute force; `outside` is the value of out-of-image pixels.
pub fn naive_erode(m: &BinaryMask, k: usize, outside: bool) -> BinaryMask {
    let (w, h, k) = (m.width() as isize, m.height() as isize, k as isize);
    BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        (y - k..=y + k).all(|v| {
            (x - k..=x + k).all(|u| if u < 0 || v < 0 || u >= w || v >= h { outside } else { m.get(u as usize, v as usize) })
        })
    })
}

/// Chebyshev distance from each pixel to the nearest pixel outside `set`,
/// where everything beyond the image border counts as outside.
pub fn chebyshev_to_complement(set: &[bool], w: usize, h: usize) -> Vec<usize> {
    (0..w * h)
        .map(|p| {
            if !set[p] {
                return 0;
            }
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            let border = (x + 1).min(y + 1).min(w as isize - x).min(h as isize - y) as usize;
            (0..w * h)
                .filter(|&q| !set[q])
                .map(|q| ((q % w) as isize - x).unsigned_abs().max(((q / w) as isize - y).unsigned_abs()))
                .fold(border, usize::min)
        })
        .collect()
}

pub fn disk(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> AlphaMatte {
    AlphaMatte::from_fn(w, h, |x, y| if (x as f64 - cx).hypot(y as f64 - cy) <= r { 1.0 } else { 0.0 })
}
