//! Forward and adjoint kernels over raw tensors. The tape calls these; they
//! carry no autodiff state of their own.

use super::Tensor;
use crate::error::{shape_err, Result};

pub(crate) fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub padding: usize,
}

pub(crate) fn conv_geom(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    let (c_in, h, w) = input.chw()?;
    let (c_out, wc, kh, kw) = match weight.shape() {
        &[o, c, kh, kw] => (o, c, kh, kw),
        s => return shape_err("conv2d", format!("weight must be [C_out,C_in,kh,kw], got {s:?}")),
    };
    if wc != c_in {
        return shape_err("conv2d", format!("input has {c_in} channels, weight expects {wc}"));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return shape_err("conv2d", format!("bias must be [{c_out}], got {:?}", b.shape()));
        }
    }
    let (ho, wo) = match (conv_out_extent(h, kh, stride, padding), conv_out_extent(w, kw, stride, padding)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return shape_err(
                "conv2d",
                format!("non-positive output extent for {h}x{w} input, {kh}x{kw} kernel, stride {stride}, padding {padding}"),
            )
        }
    };
    Ok(ConvGeom { c_in, h, w, c_out, kh, kw, ho, wo, stride, padding })
}

/// Cross-correlation (no kernel flip) with zero padding.
pub(crate) fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, g: &ConvGeom) -> Tensor {
    let x = input.data();
    let k = weight.data();
    let mut out = vec![0.0; g.c_out * g.ho * g.wo];
    for o in 0..g.c_out {
        let b = bias.map_or(0.0, |b| b.data()[o]);
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let mut acc = 0.0;
                for c in 0..g.c_in {
                    for ky in 0..g.kh {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.kw {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            acc += x[(c * g.h + iy as usize) * g.w + ix as usize]
                                * k[((o * g.c_in + c) * g.kh + ky) * g.kw + kx];
                        }
                    }
                }
                out[(o * g.ho + oy) * g.wo + ox] = acc + b;
            }
        }
    }
    Tensor::new(vec![g.c_out, g.ho, g.wo], out).expect("conv2d output shape")
}

/// Adjoints of [`conv2d`] with respect to input, weight and bias.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    g: &ConvGeom,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let x = input.data();
    let k = weight.data();
    let go = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; g.c_out];
    for o in 0..g.c_out {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let d = go[(o * g.ho + oy) * g.wo + ox];
                gb[o] += d;
                if d == 0.0 {
                    continue;
                }
                for c in 0..g.c_in {
                    for ky in 0..g.kh {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.kw {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            let xi = (c * g.h + iy as usize) * g.w + ix as usize;
                            let ki = ((o * g.c_in + c) * g.kh + ky) * g.kw + kx;
                            gx[xi] += d * k[ki];
                            gk[ki] += d * x[xi];
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(input.shape().to_vec(), gx).expect("grad input"),
        Tensor::new(weight.shape().to_vec(), gk).expect("grad weight"),
        Tensor::new(vec![g.c_out], gb).expect("grad bias"),
    )
}

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub(crate) fn row_softmax(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &x[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[i * n..(i + 1) * n];
        let mut z = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    out
}

pub(crate) fn row_log_softmax(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &x[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for (d, &v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
            *d = v - lse;
        }
    }
    out
}

/// Source taps of a 2x bilinear upsample along one axis (half-pixel centers,
/// edge-clamped).
pub(crate) fn bilinear_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample_bilinear2x(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    let src = x.data();
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out[(ch * ho + oy) * wo + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out)
}

pub(crate) fn upsample_bilinear2x_backward(shape: &[usize], grad_out: &Tensor) -> Tensor {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    let (ho, wo) = (2 * h, 2 * w);
    let go = grad_out.data();
    let mut g = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &mut g[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let d = go[(ch * ho + oy) * wo + ox];
                plane[y0 * w + x0] += d * (1.0 - fy) * (1.0 - fx);
                plane[y0 * w + x1] += d * (1.0 - fy) * fx;
                plane[y1 * w + x0] += d * fy * (1.0 - fx);
                plane[y1 * w + x1] += d * fy * fx;
            }
        }
    }
    Tensor::new(shape.to_vec(), g).expect("bilinear grad")
}
