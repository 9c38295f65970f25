use serde::{Deserialize, Serialize};

use super::{count_params, AttentionSpec, GraphInput, LayerOp, LayerSpec, ModelGraph};
use crate::error::Result;

/// How GFLOPs are derived from multiply-accumulates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `MACs · 1e-9`.
    Macs,
    /// `2 · MACs · 1e-9`.
    TwoMacs,
}

impl Convention {
    pub const ALL: [Convention; 2] = [Convention::Macs, Convention::TwoMacs];

    pub fn gflops(self, macs: u64) -> f64 {
        match self {
            Convention::Macs => macs as f64 * 1e-9,
            Convention::TwoMacs => 2.0 * macs as f64 * 1e-9,
        }
    }
}

/// One point of the search space, already evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    /// Set when the candidate is an attention block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionSpec>,
    pub convention: Convention,
    pub params: u64,
    pub macs: u64,
    pub gflops: f64,
    /// `params - target`.
    pub param_delta: i64,
    /// `gflops - target`.
    pub gflops_delta: f64,
    /// `|gflops_delta| / target`, or `None` for a zero target.
    pub gflops_rel_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub target_params: u64,
    pub target_gflops: f64,
    pub evaluated: usize,
    /// Exact parameter matches ranked by GFLOP proximity.
    pub exact: Vec<Candidate>,
    /// Filled only when `exact` is empty: the nearest candidates by parameter
    /// count, then GFLOP proximity.
    pub closest: Vec<Candidate>,
}

impl SearchReport {
    /// Best exact match, if any.
    pub fn resolved(&self) -> Option<&Candidate> {
        self.exact.first()
    }

    /// Best exact match whose GFLOPs are within `tol` relative error.
    pub fn resolved_within(&self, tol: f64) -> Option<&Candidate> {
        self.exact.iter().find(|c| c.gflops_rel_error.is_some_and(|e| e <= tol))
    }
}

const CLOSEST_KEPT: usize = 10;

fn proximity(c: &Candidate) -> f64 {
    c.gflops_delta.abs()
}

/// Evaluates every `(label, spec, graph)` item under both conventions.
pub fn search_configs(
    space: &[(String, Option<AttentionSpec>, ModelGraph)],
    target_params: u64,
    target_gflops: f64,
) -> Result<SearchReport> {
    let mut all = Vec::with_capacity(space.len() * 2);
    for (label, spec, g) in space {
        let r = count_params(g)?;
        for conv in Convention::ALL {
            let gflops = conv.gflops(r.total_macs);
            let gflops_delta = gflops - target_gflops;
            all.push(Candidate {
                label: label.clone(),
                attention: spec.clone(),
                convention: conv,
                params: r.total_params,
                macs: r.total_macs,
                gflops,
                param_delta: r.total_params as i64 - target_params as i64,
                gflops_delta,
                gflops_rel_error: (target_gflops != 0.0).then(|| gflops_delta.abs() / target_gflops.abs()),
            });
        }
    }
    let evaluated = all.len();
    // Stable sorts keep enumeration order among ties.
    let mut exact: Vec<Candidate> = all.iter().filter(|c| c.param_delta == 0).cloned().collect();
    exact.sort_by(|a, b| proximity(a).total_cmp(&proximity(b)));
    let mut closest = Vec::new();
    if exact.is_empty() {
        all.sort_by(|a, b| {
            a.param_delta
                .unsigned_abs()
                .cmp(&b.param_delta.unsigned_abs())
                .then(proximity(a).total_cmp(&proximity(b)))
        });
        closest = all.into_iter().take(CLOSEST_KEPT).collect();
    }
    Ok(SearchReport { target_params, target_gflops, evaluated, exact, closest })
}

/// A graph holding one attention block over `[d, h, w]` image and alpha
/// features with `d` channels each.
pub fn attention_graph(d: usize, h: usize, w: usize, spec: AttentionSpec) -> ModelGraph {
    ModelGraph {
        name: "attention".into(),
        inputs: vec![
            GraphInput { name: "image_feature".into(), shape: [d, h, w] },
            GraphInput { name: "alpha_feature".into(), shape: [d, h, w] },
        ],
        layers: vec![LayerSpec {
            id: "non_local".into(),
            inputs: vec!["image_feature".into(), "alpha_feature".into()],
            op: LayerOp::Attention(spec),
        }],
        outputs: vec!["non_local".into()],
    }
}

/// Embedding widths {32, 64, 128}, kernels {1, 2, r}, a bias flag per conv
/// and `g'` width in {c_a, e}.
pub fn attention_search_space(d: usize, h: usize, w: usize, r: usize) -> Vec<(String, Option<AttentionSpec>, ModelGraph)> {
    let mut kernels = vec![1, 2, r];
    kernels.dedup();
    let mut out = Vec::new();
    for e in [32, 64, 128] {
        for &kernel in &kernels {
            for g_is_e in [false, true] {
                for bits in 0..16u8 {
                    let spec = AttentionSpec {
                        e,
                        c_g: g_is_e.then_some(e),
                        r,
                        kernel,
                        theta_bias: bits & 1 != 0,
                        phi_bias: bits & 2 != 0,
                        g_bias: bits & 4 != 0,
                        w_bias: bits & 8 != 0,
                    };
                    let label = format!(
                        "e={e} k={kernel}x{kernel} g'={} bias=[{}{}{}{}]",
                        if g_is_e { "e" } else { "c_a" },
                        bits & 1,
                        (bits >> 1) & 1,
                        (bits >> 2) & 1,
                        (bits >> 3) & 1
                    );
                    out.push((label, Some(spec.clone()), attention_graph(d, h, w, spec)));
                }
            }
        }
    }
    out
}

/// Full attention search at `[d, h, w]` with downscale ratio `r`.
pub fn search_attention_config(
    target_params: u64,
    target_gflops: f64,
    d: usize,
    h: usize,
    w: usize,
    r: usize,
) -> Result<SearchReport> {
    search_configs(&attention_search_space(d, h, w, r), target_params, target_gflops)
}
