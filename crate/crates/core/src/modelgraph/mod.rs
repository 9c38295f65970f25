//! Static layer graphs: shape inference, parameter counts and
//! multiply-accumulate accounting.
//!
//! Graphs are plain JSON. A graph lists named inputs with `[C, H, W]`
//! shapes, then layers in topological order, then output layer ids:
//!
//! ```json
//! {
//!   "name": "tiny",
//!   "inputs": [{ "name": "x", "shape": [3, 32, 32] }],
//!   "layers": [
//!     { "id": "c1", "kind": "conv", "inputs": ["x"], "out_channels": 8,
//!       "kernel": [3, 3], "stride": 1, "padding": 1, "bias": true },
//!     { "id": "r1", "kind": "activation", "inputs": ["c1"], "func": "relu" }
//!   ],
//!   "outputs": ["r1"]
//! }
//! ```
//!
//! Layer kinds: `conv`, `deconv`, `pool`, `upsample`, `concat`, `add`,
//! `attention`, `dropout`, `activation`, `norm`. An empty `inputs` list means
//! the previous layer (or the first graph input for the first layer).

mod search;
pub mod zoo;

pub use search::{attention_graph, attention_search_space, search_attention_config, search_configs, Candidate, Convention, SearchReport};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `[channels, height, width]`.
pub type Shape = [usize; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphInput {
    pub name: String,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub name: String,
    pub inputs: Vec<GraphInput>,
    pub layers: Vec<LayerSpec>,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(flatten)]
    pub op: LayerOp,
}

fn one() -> usize {
    1
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

fn is_false(v: &bool) -> bool {
    !*v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: [usize; 2],
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub stride: usize,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub padding: usize,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub dilation: usize,
    #[serde(default)]
    pub bias: bool,
    /// Weight reparameterization only; adds no trainable scalars.
    #[serde(default, skip_serializing_if = "is_false")]
    pub spectral_norm: bool,
    /// Transposed convolutions only.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub output_padding: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolOp {
    Max,
    Avg,
    GlobalAvg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub op: PoolOp,
    #[serde(default = "one")]
    pub kernel: usize,
    /// Defaults to `kernel`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub padding: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

/// Exactly one of `scale` and `size` must be set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpsampleSpec {
    pub mode: UpsampleMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<[usize; 2]>,
}

/// Non-local attention over inputs `[image, alpha]`. Keys and values are
/// downscaled by a `kernel×kernel` convolution of stride `r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub e: usize,
    /// Output channels of `g'`; `None` keeps the alpha channel count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_g: Option<usize>,
    pub r: usize,
    pub kernel: usize,
    #[serde(default)]
    pub theta_bias: bool,
    #[serde(default)]
    pub phi_bias: bool,
    #[serde(default)]
    pub g_bias: bool,
    #[serde(default)]
    pub w_bias: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationFn {
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Batch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerOp {
    Conv(ConvSpec),
    Deconv(ConvSpec),
    Pool(PoolSpec),
    Upsample(UpsampleSpec),
    Concat,
    Add,
    Attention(AttentionSpec),
    Dropout { rate: f64 },
    Activation { func: ActivationFn },
    Norm { norm: NormKind },
}

/// Cost of one layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub id: String,
    pub output: Shape,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountingReport {
    pub graph: String,
    pub total_params: u64,
    pub total_macs: u64,
    /// `MACs · 1e-9`.
    pub gflops_macs: f64,
    /// `2 · MACs · 1e-9`.
    pub gflops_2macs: f64,
    pub layers: Vec<LayerCost>,
}

fn graph_err<T>(layer: &str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Graph { layer: layer.to_string(), detail: detail.into() })
}

fn conv_extent(layer: &str, n: usize, k: usize, s: usize, p: usize, d: usize) -> Result<usize> {
    let span = d * (k - 1) + 1;
    if s == 0 || n + 2 * p < span {
        return graph_err(layer, format!("extent {n} too small for kernel {k} (dilation {d}, padding {p})"));
    }
    Ok((n + 2 * p - span) / s + 1)
}

fn deconv_extent(layer: &str, n: usize, k: usize, s: usize, p: usize, op: usize) -> Result<usize> {
    let full = (n - 1) * s + k + op;
    if full <= 2 * p {
        return graph_err(layer, format!("transposed extent of {n} is not positive"));
    }
    Ok(full - 2 * p)
}

impl ModelGraph {
    pub fn from_json(text: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn read_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn default_inputs(&self) -> HashMap<String, Shape> {
        self.inputs.iter().map(|i| (i.name.clone(), i.shape)).collect()
    }

    /// Ids are unique and every reference points backwards.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, ()> = self.inputs.iter().map(|i| (i.name.as_str(), ())).collect();
        if seen.len() != self.inputs.len() {
            return graph_err(&self.name, "duplicate input name");
        }
        for l in &self.layers {
            for r in &l.inputs {
                if !seen.contains_key(r.as_str()) {
                    return graph_err(&l.id, format!("input `{r}` is not defined earlier"));
                }
            }
            if seen.insert(&l.id, ()).is_some() {
                return graph_err(&l.id, "duplicate layer id");
            }
        }
        for o in &self.outputs {
            if !seen.contains_key(o.as_str()) {
                return graph_err(o, "output is not a layer or input");
            }
        }
        Ok(())
    }

    /// The first `n` layers, with outputs set to the last of them.
    pub fn prefix(&self, n: usize) -> Self {
        let layers: Vec<_> = self.layers[..n.min(self.layers.len())].to_vec();
        let outputs = layers.last().map(|l| vec![l.id.clone()]).unwrap_or_default();
        Self { name: format!("{}[..{n}]", self.name), inputs: self.inputs.clone(), layers, outputs }
    }

    pub fn layer(&self, id: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.id == id)
    }
}

fn resolve_inputs<'a>(g: &'a ModelGraph, idx: usize) -> Vec<&'a str> {
    let l = &g.layers[idx];
    if !l.inputs.is_empty() {
        return l.inputs.iter().map(String::as_str).collect();
    }
    if idx > 0 {
        vec![g.layers[idx - 1].id.as_str()]
    } else {
        g.inputs.first().map(|i| vec![i.name.as_str()]).unwrap_or_default()
    }
}

fn layer_cost(l: &LayerSpec, ins: &[Shape]) -> Result<(Shape, u64, u64)> {
    let id = l.id.as_str();
    let arity = |n: usize| -> Result<()> {
        if ins.len() != n {
            return graph_err(id, format!("expects {n} input(s), got {}", ins.len()));
        }
        Ok(())
    };
    let u = |v: usize| v as u64;
    match &l.op {
        LayerOp::Conv(c) => {
            arity(1)?;
            let [ci, h, w] = ins[0];
            let [kh, kw] = c.kernel;
            let ho = conv_extent(id, h, kh, c.stride, c.padding, c.dilation)?;
            let wo = conv_extent(id, w, kw, c.stride, c.padding, c.dilation)?;
            let params = u(kh * kw * ci * c.out_channels) + if c.bias { u(c.out_channels) } else { 0 };
            let macs = u(kh * kw * ci * c.out_channels) * u(ho * wo);
            Ok(([c.out_channels, ho, wo], params, macs))
        }
        LayerOp::Deconv(c) => {
            arity(1)?;
            let [ci, h, w] = ins[0];
            let [kh, kw] = c.kernel;
            if c.dilation != 1 {
                return graph_err(id, "dilated transposed convolution is not supported");
            }
            let ho = deconv_extent(id, h, kh, c.stride, c.padding, c.output_padding)?;
            let wo = deconv_extent(id, w, kw, c.stride, c.padding, c.output_padding)?;
            let params = u(kh * kw * ci * c.out_channels) + if c.bias { u(c.out_channels) } else { 0 };
            // Every input pixel scatters one full kernel.
            let macs = u(kh * kw * ci * c.out_channels) * u(h * w);
            Ok(([c.out_channels, ho, wo], params, macs))
        }
        LayerOp::Pool(p) => {
            arity(1)?;
            let [c, h, w] = ins[0];
            if p.op == PoolOp::GlobalAvg {
                return Ok(([c, 1, 1], 0, 0));
            }
            let s = p.stride.unwrap_or(p.kernel);
            Ok(([c, conv_extent(id, h, p.kernel, s, p.padding, 1)?, conv_extent(id, w, p.kernel, s, p.padding, 1)?], 0, 0))
        }
        LayerOp::Upsample(up) => {
            arity(1)?;
            let [c, h, w] = ins[0];
            match (up.scale, up.size) {
                (Some(s), None) if s >= 1 => Ok(([c, h * s, w * s], 0, 0)),
                (None, Some([ho, wo])) if ho >= 1 && wo >= 1 => Ok(([c, ho, wo], 0, 0)),
                _ => graph_err(id, "upsample needs exactly one of a positive `scale` or `size`"),
            }
        }
        LayerOp::Concat => {
            if ins.is_empty() {
                return graph_err(id, "concat needs at least one input");
            }
            let [_, h, w] = ins[0];
            if let Some(bad) = ins.iter().find(|s| s[1] != h || s[2] != w) {
                return graph_err(id, format!("spatial extent {:?} does not match {:?}", &bad[1..], [h, w]));
            }
            Ok(([ins.iter().map(|s| s[0]).sum(), h, w], 0, 0))
        }
        LayerOp::Add => {
            if ins.is_empty() {
                return graph_err(id, "add needs at least one input");
            }
            if let Some(bad) = ins.iter().find(|s| **s != ins[0]) {
                return graph_err(id, format!("shape {bad:?} does not match {:?}", ins[0]));
            }
            Ok((ins[0], 0, 0))
        }
        LayerOp::Attention(a) => {
            arity(2)?;
            let [d, h, w] = ins[0];
            let [ca, ha, wa] = ins[1];
            if (h, w) != (ha, wa) {
                return graph_err(id, format!("image {:?} and alpha {:?} differ spatially", ins[0], ins[1]));
            }
            let cg = a.c_g.unwrap_or(ca);
            let k2 = a.kernel * a.kernel;
            let hk = conv_extent(id, h, a.kernel, a.r, 0, 1)?;
            let wk = conv_extent(id, w, a.kernel, a.r, 0, 1)?;
            let (q, kv) = (u(h * w), u(hk * wk));
            let mut params = u(a.e * d) + u(a.e * d * k2) + u(cg * ca * k2) + u(ca * cg);
            params += [(a.theta_bias, a.e), (a.phi_bias, a.e), (a.g_bias, cg), (a.w_bias, ca)]
                .iter()
                .filter(|(b, _)| *b)
                .map(|(_, n)| u(*n))
                .sum::<u64>();
            let macs = u(a.e * d) * q
                + u(a.e * d * k2) * kv
                + u(cg * ca * k2) * kv
                + q * kv * u(a.e)
                + q * kv * u(cg)
                + u(ca * cg) * q;
            Ok((ins[1], params, macs))
        }
        LayerOp::Dropout { rate } => {
            arity(1)?;
            if !(0.0..1.0).contains(rate) {
                return graph_err(id, format!("dropout rate {rate} outside [0,1)"));
            }
            Ok((ins[0], 0, 0))
        }
        LayerOp::Activation { .. } => {
            arity(1)?;
            Ok((ins[0], 0, 0))
        }
        LayerOp::Norm { .. } => {
            arity(1)?;
            Ok((ins[0], u(2 * ins[0][0]), 0))
        }
    }
}

/// Cost of every layer under the given input shapes.
pub fn layer_costs(g: &ModelGraph, inputs: &HashMap<String, Shape>) -> Result<Vec<LayerCost>> {
    g.validate()?;
    let mut shapes: HashMap<&str, Shape> = HashMap::new();
    for i in &g.inputs {
        let s = inputs.get(&i.name).copied().unwrap_or(i.shape);
        if s.contains(&0) {
            return graph_err(&i.name, format!("input shape {s:?} has a zero extent"));
        }
        shapes.insert(&i.name, s);
    }
    let mut out = Vec::with_capacity(g.layers.len());
    for (idx, l) in g.layers.iter().enumerate() {
        let ins: Vec<Shape> = resolve_inputs(g, idx)
            .into_iter()
            .map(|r| shapes.get(r).copied().ok_or_else(|| Error::Graph { layer: l.id.clone(), detail: format!("unknown input `{r}`") }))
            .collect::<Result<_>>()?;
        let (shape, params, macs) = layer_cost(l, &ins)?;
        shapes.insert(&l.id, shape);
        out.push(LayerCost { id: l.id.clone(), output: shape, params, macs });
    }
    Ok(out)
}

/// Output shape of every layer, keyed by id.
pub fn infer_shapes(g: &ModelGraph, inputs: &HashMap<String, Shape>) -> Result<Vec<(String, Shape)>> {
    Ok(layer_costs(g, inputs)?.into_iter().map(|c| (c.id, c.output)).collect())
}

pub fn count_flops(g: &ModelGraph, inputs: &HashMap<String, Shape>) -> Result<AccountingReport> {
    let layers = layer_costs(g, inputs)?;
    let total_params = layers.iter().map(|l| l.params).sum();
    let total_macs: u64 = layers.iter().map(|l| l.macs).sum();
    Ok(AccountingReport {
        graph: g.name.clone(),
        total_params,
        total_macs,
        gflops_macs: total_macs as f64 * 1e-9,
        gflops_2macs: 2.0 * total_macs as f64 * 1e-9,
        layers,
    })
}

/// Accounting at the graph's declared input shapes.
pub fn count_params(g: &ModelGraph) -> Result<AccountingReport> {
    count_flops(g, &g.default_inputs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(op: LayerOp, input: Shape) -> ModelGraph {
        ModelGraph {
            name: "single".into(),
            inputs: vec![GraphInput { name: "x".into(), shape: input }],
            layers: vec![LayerSpec { id: "l".into(), inputs: vec!["x".into()], op }],
            outputs: vec!["l".into()],
        }
    }

    fn conv(out: usize, k: usize) -> ConvSpec {
        ConvSpec {
            out_channels: out,
            kernel: [k, k],
            stride: 1,
            padding: 0,
            dilation: 1,
            bias: false,
            spectral_norm: false,
            output_padding: 0,
        }
    }

    #[test]
    fn conv_closed_forms() {
        let r = count_params(&single(LayerOp::Conv(conv(64, 3)), [128, 8, 8])).unwrap();
        assert_eq!(r.total_params, 73_728);
        let r = count_flops(&single(LayerOp::Conv(conv(64, 1)), [128, 64, 64]), &HashMap::new()).unwrap();
        assert_eq!(r.total_params, 8_192);
        assert_eq!(r.total_macs, 33_554_432);
        assert_eq!(r.gflops_2macs, 2.0 * r.gflops_macs);
    }

    #[test]
    fn attention_matmul_macs() {
        // 1×1 kernels so only the two matmuls and the four projections remain.
        let a = AttentionSpec { e: 64, c_g: None, r: 4, kernel: 1, theta_bias: false, phi_bias: false, g_bias: false, w_bias: false };
        let g = ModelGraph {
            name: "att".into(),
            inputs: vec![
                GraphInput { name: "i".into(), shape: [128, 64, 64] },
                GraphInput { name: "a".into(), shape: [128, 64, 64] },
            ],
            layers: vec![LayerSpec { id: "nl".into(), inputs: vec!["i".into(), "a".into()], op: LayerOp::Attention(a) }],
            outputs: vec!["nl".into()],
        };
        let r = count_params(&g).unwrap();
        let (q, kv) = (4096u64, 256u64);
        let qk = q * kv * 64;
        assert_eq!(qk, 67_108_864);
        let expect = 64 * 128 * q + 64 * 128 * kv + 128 * 128 * kv + qk + q * kv * 128 + 128 * 128 * q;
        assert_eq!(r.total_macs, expect);
        assert_eq!(r.layers[0].output, [128, 64, 64]);
    }

    #[test]
    fn extents() {
        let mut c = conv(8, 3);
        c.stride = 2;
        c.padding = 1;
        assert_eq!(count_params(&single(LayerOp::Conv(c.clone()), [1, 512, 512])).unwrap().layers[0].output, [8, 256, 256]);
        c.padding = 1;
        c.kernel = [4, 4];
        assert_eq!(count_params(&single(LayerOp::Deconv(c), [1, 16, 16])).unwrap().layers[0].output, [8, 32, 32]);
        let p = PoolSpec { op: PoolOp::Max, kernel: 3, stride: Some(2), padding: 1 };
        assert_eq!(count_params(&single(LayerOp::Pool(p), [4, 256, 256])).unwrap().layers[0].output, [4, 128, 128]);
        let mut d = conv(8, 3);
        d.dilation = 18;
        d.padding = 18;
        assert_eq!(count_params(&single(LayerOp::Conv(d), [4, 32, 32])).unwrap().layers[0].output, [8, 32, 32]);
    }

    #[test]
    fn shape_conflicts_name_the_layer() {
        let mut g = single(LayerOp::Conv(conv(8, 5)), [1, 3, 3]);
        match count_params(&g) {
            Err(Error::Graph { layer, .. }) => assert_eq!(layer, "l"),
            other => panic!("{other:?}"),
        }
        g.layers[0].inputs = vec!["nope".into()];
        assert!(matches!(g.validate(), Err(Error::Graph { .. })));
    }

    #[test]
    fn json_round_trip_and_diagnostics() {
        let g = single(LayerOp::Norm { norm: NormKind::Batch }, [16, 4, 4]);
        let text = g.to_json().unwrap();
        assert_eq!(ModelGraph::from_json(&text).unwrap(), g);
        assert_eq!(count_params(&g).unwrap().total_params, 32);
        let bad = text.replace("\"norm\": \"batch\"", "\"norm\": 3");
        let msg = ModelGraph::from_json(&bad).unwrap_err().to_string();
        assert!(msg.contains("line"), "{msg}");
    }
}
