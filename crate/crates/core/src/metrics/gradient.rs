use crate::error::{invalid, Result};
use crate::morphology::{separable_filter, BinaryMask};
use crate::synth::AlphaMatte;

use super::{check_extents, REPORT_SCALE};

pub const DEFAULT_GRAD_SIGMA: f64 = 1.4;

/// Kernel truncation: the Gaussian envelope is cut where it drops below 1%.
const EPSILON: f64 = 1e-2;

/// The two 1-D factors `(gauss, dgauss)` of the derivative-of-Gaussian
/// filter, each divided by its L2 norm so their outer product has unit L2
/// norm.
pub fn gaussian_derivative_kernels(sigma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return invalid("gradient_error", format!("sigma must be positive, got {sigma}"));
    }
    let half = (sigma * (-2.0 * ((2.0 * std::f64::consts::PI).sqrt() * sigma * EPSILON).ln()).sqrt()).ceil() as isize;
    let half = half.max(1);
    let gauss = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let g: Vec<f64> = (-half..=half).map(|i| gauss(i as f64)).collect();
    let dg: Vec<f64> = (-half..=half).map(|i| -(i as f64) * gauss(i as f64) / (sigma * sigma)).collect();
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.into_iter().map(|a| a / n).collect::<Vec<_>>()
    };
    Ok((unit(g), unit(dg)))
}

/// `|∇I|` from derivative-of-Gaussian filtering with reflected borders.
pub fn gauss_gradient_magnitude(img: &AlphaMatte, sigma: f64) -> Result<Vec<f64>> {
    let (g, dg) = gaussian_derivative_kernels(sigma)?;
    // Convolution, not correlation: the derivative taps are mirrored.
    let dg_conv: Vec<f64> = dg.iter().rev().copied().collect();
    let (w, h) = (img.width(), img.height());
    let gx = separable_filter(img.values(), w, h, &dg_conv, &g);
    let gy = separable_filter(img.values(), w, h, &g, &dg_conv);
    Ok(gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect())
}

/// `Σ_M (|∇pred| - |∇gt|)^2` before scaling.
pub fn gradient_error_raw(pred: &AlphaMatte, gt: &AlphaMatte, m: &BinaryMask, sigma: f64) -> Result<f64> {
    check_extents("gradient_error", pred, gt, m)?;
    let qp = gauss_gradient_magnitude(pred, sigma)?;
    let qg = gauss_gradient_magnitude(gt, sigma)?;
    Ok(qp.iter().zip(&qg).zip(m.bits()).filter(|(_, &b)| b).map(|((a, b), _)| (a - b) * (a - b)).sum())
}

pub fn gradient_error(pred: &AlphaMatte, gt: &AlphaMatte, m: &BinaryMask, sigma: f64) -> Result<f64> {
    Ok(gradient_error_raw(pred, gt, m, sigma)? / REPORT_SCALE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_geometry() {
        let (g, dg) = gaussian_derivative_kernels(1.4).unwrap();
        assert_eq!(g.len(), 9);
        assert!((g.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(dg.iter().sum::<f64>().abs() < 1e-12);
        assert!(dg[0] > 0.0 && dg[8] < 0.0);
    }

    #[test]
    fn constants_have_no_gradient() {
        let a = AlphaMatte::from_fn(10, 7, |_, _| 0.3);
        let b = AlphaMatte::from_fn(10, 7, |_, _| 0.9);
        let m = BinaryMask::filled(10, 7, true);
        assert!(gradient_error_raw(&a, &b, &m, 1.4).unwrap() < 1e-24);
    }

    #[test]
    fn ramp_response_is_uniform_inside() {
        let a = AlphaMatte::from_fn(21, 21, |x, _| x as f64 / 20.0);
        let q = gauss_gradient_magnitude(&a, 1.4).unwrap();
        assert!((q[10 * 21 + 10] - q[10 * 21 + 9]).abs() < 1e-12);
        assert!(q[10 * 21 + 10] > 0.0);
    }
}
