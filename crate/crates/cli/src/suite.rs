//! Built-in gradient-check suite: every differentiable tape operation and
//! the composed attention block, each over a number of seeded draws.

use matting_core::attention::{attention_block, AttentionConfig, AttentionVars, DropoutSlot};
use matting_core::losses::{cross_entropy_tape, l_alpha_tape, l_hard_tape};
use matting_core::morphology::BinaryMask;
use matting_core::numerics::{gradcheck_masked, Mode, Tape, Tensor, Var};
use matting_core::seed::{self, Rng};
use matting_core::trimap::{Label, Trimap};
use matting_core::Result;
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
type Skip = Box<dyn Fn(usize, usize) -> bool>;

/// One seeded draw of a case.
pub struct Instance {
    pub inputs: Vec<Tensor>,
    pub f: Build,
    pub skip: Skip,
}

pub struct Case {
    pub name: &'static str,
    pub make: fn(&mut Rng) -> Instance,
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub name: &'static str,
    pub seeds: u64,
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn randn(shape: &[usize], r: &mut Rng) -> Tensor {
    Tensor::randn(shape, 1.0, r)
}

fn plain(inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Instance {
    Instance { inputs, f: Box::new(f), skip: Box::new(|_, _| false) }
}

/// Skips coordinates within `eps` of a kink at zero.
fn kinked(inputs: Vec<Tensor>, eps: f64, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Instance {
    let near: Vec<Vec<bool>> = inputs.iter().map(|t| t.data().iter().map(|v| v.abs() < eps).collect()).collect();
    Instance { inputs, f: Box::new(f), skip: Box::new(move |i, k| near[i][k]) }
}

/// `dropout` selects train mode with rate 0.3 in the given slot; `None` is
/// eval mode. Embedding weights are drawn at unit fan-in variance so logits
/// stay moderate.
fn attention_instance(r: &mut Rng, bias: bool, dropout: Option<DropoutSlot>) -> Instance {
    let mut cfg = AttentionConfig::new(3, 2);
    cfg.e = 2;
    cfg.r = 2;
    cfg.bias = bias;
    cfg.dropout_rate = if dropout.is_some() { 0.3 } else { 0.0 };
    cfg.dropout_slot = dropout.unwrap_or(DropoutSlot::BeforeW);
    cfg.seed = 5;
    let mode = if dropout.is_some() { Mode::Train } else { Mode::Eval };
    let unknown = BinaryMask::from_fn(4, 4, |_, _| r.random_bool(0.5));
    let mut inputs = vec![
        randn(&[3, 4, 4], r),
        Tensor::uniform(&[2, 4, 4], 0.0, 1.0, r),
        Tensor::randn(&[2, 3, 1, 1], (1.0f64 / 3.0).sqrt(), r),
        Tensor::randn(&[2, 3, 2, 2], (1.0f64 / 12.0).sqrt(), r),
        Tensor::randn(&[2, 2, 2, 2], (1.0f64 / 8.0).sqrt(), r),
        randn(&[2, 2, 1, 1], r),
    ];
    if bias {
        inputs.extend([randn(&[2], r), randn(&[2], r), randn(&[2], r), randn(&[2], r)]);
    }
    let f = move |t: &mut Tape, v: &[Var]| {
        let vars = AttentionVars {
            theta: v[2],
            phi: v[3],
            g: v[4],
            w: v[5],
            theta_bias: bias.then(|| v[6]),
            phi_bias: bias.then(|| v[7]),
            g_bias: bias.then(|| v[8]),
            w_bias: bias.then(|| v[9]),
        };
        Ok(attention_block(t, v[0], v[1], &unknown, &vars, &cfg, mode)?.0)
    };
    // The key bias moves every logit of a row equally; its gradient is
    // identically zero, so a relative comparison is meaningless.
    Instance { inputs, f: Box::new(f), skip: Box::new(move |i, _| bias && i == 7) }
}

pub fn cases() -> Vec<Case> {
    macro_rules! case {
        ($name:literal, |$r:ident| $body:expr) => {
            Case { name: $name, make: |$r: &mut Rng| $body }
        };
    }
    vec![
        case!("add", |r| plain(vec![randn(&[3, 4], r), randn(&[3, 4], r)], |t, v| t.add(v[0], v[1]))),
        case!("sub", |r| plain(vec![randn(&[3, 4], r), randn(&[3, 4], r)], |t, v| t.sub(v[0], v[1]))),
        case!("mul", |r| plain(vec![randn(&[3, 4], r), randn(&[3, 4], r)], |t, v| t.mul(v[0], v[1]))),
        case!("scale", |r| plain(vec![randn(&[2, 5], r)], |t, v| t.scale(v[0], -1.7))),
        case!("mul_const", |r| {
            let c: Vec<f64> = (0..10).map(|_| r.random_range(-2.0..2.0)).collect();
            plain(vec![randn(&[2, 5], r)], move |t, v| t.mul_const(v[0], &c))
        }),
        case!("relu", |r| kinked(vec![randn(&[2, 5], r)], 1e-3, |t, v| t.relu(v[0]))),
        case!("leaky_relu", |r| kinked(vec![randn(&[2, 5], r)], 1e-3, |t, v| t.leaky_relu(v[0], 0.2))),
        case!("abs", |r| kinked(vec![randn(&[2, 5], r)], 1e-3, |t, v| t.abs(v[0]))),
        case!("square", |r| plain(vec![randn(&[2, 5], r)], |t, v| t.square(v[0]))),
        case!("sum", |r| plain(vec![randn(&[3, 3], r)], |t, v| {
            let s = t.sum(v[0])?;
            t.square(s)
        })),
        case!("mean", |r| plain(vec![randn(&[3, 3], r)], |t, v| {
            let s = t.mean(v[0])?;
            t.square(s)
        })),
        case!("matmul", |r| plain(vec![randn(&[3, 4], r), randn(&[4, 2], r)], |t, v| t.matmul(v[0], v[1]))),
        case!("transpose", |r| plain(vec![randn(&[3, 5], r)], |t, v| t.transpose(v[0]))),
        case!("reshape", |r| plain(vec![randn(&[2, 6], r)], |t, v| t.reshape(v[0], &[3, 4]))),
        case!("row_softmax", |r| plain(vec![randn(&[3, 5], r)], |t, v| t.row_softmax(v[0]))),
        case!("row_log_softmax", |r| plain(vec![randn(&[3, 5], r)], |t, v| t.row_log_softmax(v[0]))),
        case!("scale_rows", |r| plain(vec![randn(&[3, 4], r)], |t, v| t.scale_rows(v[0], &[0.1, 2.0, -3.0]))),
        case!("gather", |r| plain(vec![randn(&[7], r)], |t, v| t.gather(v[0], &[6, 0, 3, 3]))),
        case!("conv2d", |r| {
            let (stride, pad) = (r.random_range(1..=2), r.random_range(0..=1));
            plain(vec![randn(&[2, 5, 6], r), randn(&[3, 2, 3, 3], r), randn(&[3], r)], move |t, v| {
                t.conv2d(v[0], v[1], Some(v[2]), stride, pad)
            })
        }),
        case!("upsample_nearest2x", |r| plain(vec![randn(&[2, 3, 4], r)], |t, v| t.upsample_nearest2x(v[0]))),
        case!("upsample_bilinear2x", |r| plain(vec![randn(&[2, 3, 4], r)], |t, v| t.upsample_bilinear2x(v[0]))),
        case!("avg_pool2", |r| plain(vec![randn(&[2, 4, 6], r)], |t, v| t.avg_pool2(v[0]))),
        case!("max_pool2", |r| plain(vec![randn(&[2, 4, 6], r)], |t, v| t.max_pool2(v[0]))),
        case!("concat_channels", |r| plain(vec![randn(&[1, 3, 3], r), randn(&[2, 3, 3], r)], |t, v| {
            t.concat_channels(&[v[0], v[1]])
        })),
        case!("slice_channels", |r| plain(vec![randn(&[4, 2, 3], r)], |t, v| t.slice_channels(v[0], 1, 2))),
        case!("dropout", |r| plain(vec![randn(&[3, 4, 4], r)], |t, v| t.dropout(v[0], 0.4, Mode::Train, 99))),
        case!("l_alpha", |r| {
            let gt: Vec<f64> = (0..12).map(|_| r.random_range(0.0..1.0)).collect();
            let m = BinaryMask::from_fn(4, 3, |x, y| (x + y) % 3 != 0);
            plain(vec![Tensor::uniform(&[1, 3, 4], -0.5, 1.5, r)], move |t, v| {
                let l = l_alpha_tape(t, v[0], &gt, &m)?;
                t.square(l)
            })
        }),
        case!("l_hard", |r| {
            let gt: Vec<f64> = (0..12).map(|_| r.random_range(0.0..1.0)).collect();
            let m = BinaryMask::from_fn(4, 3, |x, y| (x + y) % 3 != 0);
            plain(vec![Tensor::uniform(&[1, 3, 4], -0.5, 1.5, r)], move |t, v| {
                let l = l_hard_tape(t, v[0], &gt, &m, 50.0)?;
                t.square(l)
            })
        }),
        case!("cross_entropy", |r| {
            let labels = Trimap::from_fn(3, 2, |_, _| Label::ALL[r.random_range(0..3)]);
            plain(vec![randn(&[3, 2, 3], r)], move |t, v| {
                let l = cross_entropy_tape(t, v[0], &labels)?;
                t.square(l)
            })
        }),
        case!("attention_block", |r| attention_instance(r, false, None)),
        case!("attention_block_bias", |r| attention_instance(r, true, None)),
        case!("attention_block_dropout_before_w", |r| attention_instance(r, true, Some(DropoutSlot::BeforeW))),
        case!("attention_block_dropout_after_w", |r| attention_instance(r, true, Some(DropoutSlot::AfterW))),
    ]
}

/// A case whose recorded gradient is deliberately wrong: one factor of
/// `x · x` enters the tape as a constant, so the tape reports `x` where the
/// true derivative is `2x`.
pub fn faulty_case() -> Case {
    Case {
        name: "injected_fault",
        make: |r| {
            plain(vec![randn(&[2, 3], r)], |t, v| {
                let c = t.constant(t.value(v[0]).clone())?;
                t.mul(v[0], c)
            })
        },
    }
}

/// Contracts an output with fixed positive weights so every coordinate gets
/// a distinct gradient.
fn project(tape: &mut Tape, v: Var, s: u64) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let w = Tensor::uniform(&shape, 0.5, 1.5, &mut seed::rng(s ^ 0xABCD));
    let w = tape.constant(w)?;
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

pub fn run_case(case: &Case, seeds: u64, h: f64, tol: f64) -> CaseResult {
    let mut res = CaseResult { name: case.name, seeds, max_rel_error: 0.0, worst_seed: 0, passed: true, error: None };
    for s in 0..seeds {
        let inst = (case.make)(&mut seed::rng(seed::derive(s, 0x6C)));
        let report = gradcheck_masked(
            |tape, v| {
                let out = (inst.f)(tape, v)?;
                project(tape, out, s)
            },
            &inst.inputs,
            h,
            &inst.skip,
        );
        match report {
            Ok(r) => {
                if r.max_rel_error > res.max_rel_error || r.max_rel_error.is_nan() {
                    res.max_rel_error = r.max_rel_error;
                    res.worst_seed = s;
                }
                res.passed &= r.passes(tol);
            }
            Err(e) => {
                res.passed = false;
                res.error = Some(format!("seed {s}: {e}"));
                break;
            }
        }
    }
    res
}

pub fn run_suite(cases: &[Case], seeds: u64, h: f64, tol: f64) -> Vec<CaseResult> {
    cases.par_iter().map(|c| run_case(c, seeds, h, tol)).collect()
}
