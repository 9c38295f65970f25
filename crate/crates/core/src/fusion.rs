//! Joint-inference fusion of a predicted alpha with trimap predictions.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::synth::AlphaMatte;
use crate::trimap::{Label, Trimap, TrimapProbs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftVariant {
    /// `(1-U)·F/(F+B) + U·α`.
    A,
    /// `F + U·α`.
    B,
}

fn soft_pixel(p: [f64; 3], a: f64, variant: SoftVariant) -> f64 {
    let [b, u, f] = p;
    let v = match variant {
        SoftVariant::A => {
            let known = if f + b > 0.0 { (1.0 - u) * f / (f + b) } else { 0.0 };
            known + u * a
        }
        SoftVariant::B => f + u * a,
    };
    v.clamp(0.0, 1.0)
}

pub fn soft_fusion(alpha_p: &AlphaMatte, probs: &TrimapProbs, variant: SoftVariant) -> Result<AlphaMatte> {
    if (alpha_p.width(), alpha_p.height()) != (probs.width(), probs.height()) {
        return shape_err(
            "soft_fusion",
            format!("alpha {}x{} vs probs {}x{}", alpha_p.width(), alpha_p.height(), probs.width(), probs.height()),
        );
    }
    let w = alpha_p.width();
    Ok(AlphaMatte::from_fn(w, alpha_p.height(), |x, y| {
        let i = y * w + x;
        soft_pixel(probs.probs()[i], alpha_p.values()[i], variant)
    }))
}

/// FG pixels become 1, BG pixels 0, unknown pixels keep the clamped prediction.
pub fn hard_fusion(alpha_p: &AlphaMatte, t: &Trimap) -> Result<AlphaMatte> {
    if (alpha_p.width(), alpha_p.height()) != (t.width(), t.height()) {
        return shape_err(
            "hard_fusion",
            format!("alpha {}x{} vs trimap {}x{}", alpha_p.width(), alpha_p.height(), t.width(), t.height()),
        );
    }
    Ok(AlphaMatte::from_fn(t.width(), t.height(), |x, y| match t.get(x, y) {
        Label::Fg => 1.0,
        Label::Bg => 0.0,
        Label::Unk => alpha_p.get(x, y).clamp(0.0, 1.0),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: [f64; 3], a: f64, v: SoftVariant) -> f64 {
        let probs = TrimapProbs::new(1, 1, vec![p]).unwrap();
        soft_fusion(&AlphaMatte::new(1, 1, vec![a]).unwrap(), &probs, v).unwrap().values()[0]
    }

    #[test]
    fn soft_cases() {
        for v in [SoftVariant::A, SoftVariant::B] {
            assert_eq!(single([0.0, 0.0, 1.0], 0.2, v), 1.0);
            assert_eq!(single([0.0, 1.0, 0.0], 0.37, v), 0.37);
            assert!((single([0.5, 0.2, 0.3], 0.7, v) - 0.44).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_cases() {
        let a = AlphaMatte::from_fn(3, 3, |x, y| (x + 3 * y) as f64 / 8.0);
        let t = Trimap::from_fn(3, 3, |x, y| Label::ALL[(x + y) % 3]);
        let h = hard_fusion(&a, &t).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                let want = match t.get(x, y) {
                    Label::Fg => 1.0,
                    Label::Bg => 0.0,
                    Label::Unk => a.get(x, y),
                };
                assert_eq!(h.get(x, y), want);
            }
        }
        assert_eq!(hard_fusion(&h, &t).unwrap(), h);
        let all_fg = Trimap::from_fn(3, 3, |_, _| Label::Fg);
        assert!(hard_fusion(&a, &all_fg).unwrap().values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn extent_mismatch() {
        let a = AlphaMatte::from_fn(2, 2, |_, _| 0.0);
        let t = Trimap::from_fn(3, 2, |_, _| Label::Unk);
        assert!(hard_fusion(&a, &t).is_err());
        assert!(soft_fusion(&a, &TrimapProbs::one_hot(&t), SoftVariant::A).is_err());
    }
}
