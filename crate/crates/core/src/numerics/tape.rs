use rand::Rng as _;

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{invalid, shape_err, Error, Result};
use crate::seed;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether stochastic layers (dropout) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Relu(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    RowSoftmax(Var),
    RowLogSoftmax(Var),
    ScaleRows(Var, Vec<f64>),
    Conv2d { input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize },
    Dropout(Var, Vec<f64>),
    UpsampleNearest2x(Var),
    UpsampleBilinear2x(Var),
    AvgPool2(Var),
    MaxPool2(Var, Vec<usize>),
    Concat(Vec<Var>),
    SliceChannels(Var, usize),
    Gather(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Define-by-run record of differentiable operations.
///
/// Nodes are appended in execution order; [`Tape::backward`] walks them in
/// exact reverse. Every recorded value is checked for NaN/Inf.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        value.ensure_finite("param")?;
        Ok(self.push_node(value, true, Op::Leaf))
    }

    /// Records a constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        value.ensure_finite("constant")?;
        Ok(self.push_node(value, false, Op::Leaf))
    }

    /// Copies the value of `v` as a constant (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.push_node(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_node(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, parents: &[Var], op: Op) -> Result<Var> {
        value.ensure_finite(op_name)?;
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_node(value, rg, op))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return shape_err(op, format!("{sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push("add", v, &[a, b], Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push("sub", v, &[a, b], Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push("mul", v, &[a, b], Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push("scale", v, &[a], Op::Scale(a, c))
    }

    /// Elementwise product with a constant of the same length.
    pub fn mul_const(&mut self, a: Var, factors: &[f64]) -> Result<Var> {
        let t = self.value(a);
        if t.len() != factors.len() {
            return shape_err("mul_const", format!("{} values vs {} factors", t.len(), factors.len()));
        }
        let data = t.data().iter().zip(factors).map(|(x, f)| x * f).collect();
        let v = Tensor::new(t.shape().to_vec(), data)?;
        self.push("mul_const", v, &[a], Op::MulConst(a, factors.to_vec()))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push("relu", v, &[a], Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push("leaky_relu", v, &[a], Op::LeakyRelu(a, slope))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::abs);
        self.push("abs", v, &[a], Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push("square", v, &[a], Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return invalid("mean", "empty tensor");
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", v, &[a], Op::Mean(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).mn()?;
        let (k2, n) = self.value(b).mn()?;
        if k != k2 {
            return shape_err("matmul", format!("[{m},{k}] x [{k2},{n}]"));
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let v = Tensor::new(vec![m, n], data)?;
        self.push("matmul", v, &[a, b], Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).mn()?;
        let v = Tensor::new(vec![n, m], kernels::transpose(self.value(a).data(), m, n))?;
        self.push("transpose", v, &[a], Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshaped(shape)?;
        self.push("reshape", v, &[a], Op::Reshape(a))
    }

    /// Softmax over each row of a `[M, N]` tensor, stabilized by subtracting
    /// the row maximum.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).mn()?;
        self.value(a).ensure_finite("row_softmax")?;
        let v = Tensor::new(vec![m, n], kernels::row_softmax(self.value(a).data(), m, n))?;
        self.push("row_softmax", v, &[a], Op::RowSoftmax(a))
    }

    pub fn row_log_softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).mn()?;
        let v = Tensor::new(vec![m, n], kernels::row_log_softmax(self.value(a).data(), m, n))?;
        self.push("row_log_softmax", v, &[a], Op::RowLogSoftmax(a))
    }

    /// Multiplies row `i` of a `[M, N]` tensor by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: &[f64]) -> Result<Var> {
        let (m, n) = self.value(a).mn()?;
        if factors.len() != m {
            return shape_err("scale_rows", format!("{m} rows vs {} factors", factors.len()));
        }
        let src = self.value(a).data();
        let data = (0..m * n).map(|i| src[i] * factors[i / n]).collect();
        let v = Tensor::new(vec![m, n], data)?;
        self.push("scale_rows", v, &[a], Op::ScaleRows(a, factors.to_vec()))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        if stride == 0 {
            return invalid("conv2d", "stride must be >= 1");
        }
        let g = self.conv_geom(input, weight, bias, stride, padding)?;
        let v = kernels::conv2d(self.value(input), self.value(weight), bias.map(|b| self.value(b)), &g);
        let mut parents = vec![input, weight];
        parents.extend(bias);
        self.push("conv2d", v, &parents, Op::Conv2d { input, weight, bias, stride, padding })
    }

    fn conv_geom(&self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<ConvGeom> {
        kernels::conv_geom(self.value(input), self.value(weight), bias.map(|b| self.value(b)), stride, padding)
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`.
    pub fn dropout(&mut self, a: Var, rate: f64, mode: Mode, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return invalid("dropout", format!("rate must lie in [0,1), got {rate}"));
        }
        let n = self.value(a).len();
        let mask = match mode {
            Mode::Eval => vec![1.0; n],
            Mode::Train if rate == 0.0 => vec![1.0; n],
            Mode::Train => {
                let mut rng = seed::rng(seed);
                let keep = 1.0 / (1.0 - rate);
                (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
            }
        };
        let t = self.value(a);
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let v = Tensor::new(t.shape().to_vec(), data)?;
        self.push("dropout", v, &[a], Op::Dropout(a, mask))
    }

    pub fn upsample_nearest2x(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).chw()?;
        let src = self.value(a).data();
        let (ho, wo) = (2 * h, 2 * w);
        let v = Tensor::from_fn(&[c, ho, wo], |i| {
            let ch = i / (ho * wo);
            let (oy, ox) = ((i / wo) % ho, i % wo);
            src[(ch * h + oy / 2) * w + ox / 2]
        });
        self.push("upsample_nearest2x", v, &[a], Op::UpsampleNearest2x(a))
    }

    pub fn upsample_bilinear2x(&mut self, a: Var) -> Result<Var> {
        let v = kernels::upsample_bilinear2x(self.value(a))?;
        self.push("upsample_bilinear2x", v, &[a], Op::UpsampleBilinear2x(a))
    }

    fn pool_extents(&self, op: &'static str, a: Var) -> Result<(usize, usize, usize)> {
        let (c, h, w) = self.value(a).chw()?;
        if h < 2 || w < 2 {
            return shape_err(op, format!("{h}x{w} input too small for 2x2 pooling"));
        }
        Ok((c, h, w))
    }

    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.pool_extents("avg_pool2", a)?;
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(a).data();
        let v = Tensor::from_fn(&[c, ho, wo], |i| {
            let ch = i / (ho * wo);
            let (oy, ox) = ((i / wo) % ho, i % wo);
            let at = |dy: usize, dx: usize| src[(ch * h + 2 * oy + dy) * w + 2 * ox + dx];
            0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1))
        });
        self.push("avg_pool2", v, &[a], Op::AvgPool2(a))
    }

    /// 2x2 max pooling, stride 2. Ties go to the first element in scan order.
    pub fn max_pool2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.pool_extents("max_pool2", a)?;
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(a).data();
        let mut arg = Vec::with_capacity(c * ho * wo);
        let mut out = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (ch * h + 2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    arg.push(best);
                    out.push(src[best]);
                }
            }
        }
        let v = Tensor::new(vec![c, ho, wo], out)?;
        self.push("max_pool2", v, &[a], Op::MaxPool2(a, arg))
    }

    /// Concatenates `[C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return invalid("concat_channels", "no inputs");
        }
        let (_, h, w) = self.value(parts[0]).chw()?;
        let mut c_total = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (c, hp, wp) = self.value(p).chw()?;
            if (hp, wp) != (h, w) {
                return shape_err("concat_channels", format!("{hp}x{wp} vs {h}x{w}"));
            }
            c_total += c;
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::new(vec![c_total, h, w], data)?;
        self.push("concat_channels", v, parts, Op::Concat(parts.to_vec()))
    }

    /// Channels `start..start+len` of a `[C, H, W]` tensor.
    pub fn slice_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (c, h, w) = self.value(a).chw()?;
        if len == 0 || start + len > c {
            return shape_err("slice_channels", format!("channels {start}..{} of {c}", start + len));
        }
        let plane = h * w;
        let data = self.value(a).data()[start * plane..(start + len) * plane].to_vec();
        let v = Tensor::new(vec![len, h, w], data)?;
        self.push("slice_channels", v, &[a], Op::SliceChannels(a, start))
    }

    /// Picks flat elements by index into a rank-1 tensor.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(a).data();
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return shape_err("gather", format!("index {bad} out of {} elements", src.len()));
        }
        let v = Tensor::new(vec![indices.len()], indices.iter().map(|&i| src[i]).collect())?;
        self.push("gather", v, &[a], Op::Gather(a, indices.to_vec()))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return shape_err("backward", format!("output must be scalar, got {:?}", out.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (g, n) in grads.iter().zip(&self.nodes) {
            if let Some(t) = g {
                if n.requires_grad {
                    t.ensure_finite("backward")?;
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        let shaped = |like: Var, data: Vec<f64>| {
            Tensor::new(self.value(like).shape().to_vec(), data).map_err(|_| Error::Shape {
                op: "backward",
                detail: "gradient shape".into(),
            })
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ga = gd.iter().zip(vb).map(|(d, y)| d * y).collect();
                let gb = gd.iter().zip(va).map(|(d, x)| d * x).collect();
                self.accumulate(grads, *a, shaped(*a, ga)?);
                self.accumulate(grads, *b, shaped(*b, gb)?);
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| x * c)),
            Op::MulConst(a, f) => {
                let ga = gd.iter().zip(f).map(|(d, k)| d * k).collect();
                self.accumulate(grads, *a, shaped(*a, ga)?);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let ga = gd.iter().zip(x).map(|(d, &v)| if v > 0.0 { *d } else { 0.0 }).collect();
                self.accumulate(grads, *a, shaped(*a, ga)?);
            }
            Op::LeakyRelu(a, s) => {
                let x = self.value(*a).data();
                let ga = gd.iter().zip(x).map(|(d, &v)| if v > 0.0 { *d } else { d * s }).collect();
                self.accumulate(grads, *a, shaped(*a, ga)?);
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                let ga = gd.iter().zip(x).map(|(d, &v)| d * sign(v)).collect();
                self.accumulate(grads, *a, shaped(*a, ga)?);
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                let ga = gd.iter().zip(x).map(|(d, &v)| 2.0 * d * v).collect();
                self.accumulate(grads, *a, shaped(*a, ga)?);
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, gd[0]));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(t.shape(), gd[0] / t.len() as f64));
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).mn()?;
                let (_, n) = self.value(*b).mn()?;
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let bt = kernels::transpose(vb, k, n);
                    self.accumulate(grads, *a, shaped(*a, kernels::matmul(gd, &bt, m, n, k))?);
                }
                if self.requires_grad(*b) {
                    let at = kernels::transpose(va, m, k);
                    self.accumulate(grads, *b, shaped(*b, kernels::matmul(&at, gd, k, m, n))?);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).mn()?;
                self.accumulate(grads, *a, shaped(*a, kernels::transpose(gd, n, m))?);
            }
            Op::Reshape(a) => self.accumulate(grads, *a, shaped(*a, gd.to_vec())?),
            Op::RowSoftmax(a) => {
                let (m, n) = self.value(*a).mn()?;
                let y = node.value.data();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let dot: f64 = gd[r.clone()].iter().zip(&y[r.clone()]).map(|(d, s)| d * s).sum();
                    for j in r {
                        ga[j] = y[j] * (gd[j] - dot);
                    }
                }
                self.accumulate(grads, *a, shaped(*a, ga)?);
            }
            Op::RowLogSoftmax(a) => {
                let (m, n) = self.value(*a).mn()?;
                let y = node.value.data();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let total: f64 = gd[r.clone()].iter().sum();
                    for j in r {
                        ga[j] = gd[j] - y[j].exp() * total;
                    }
                }
                self.accumulate(grads, *a, shaped(*a, ga)?);
            }
            Op::ScaleRows(a, f) => {
                let (_, n) = self.value(*a).mn()?;
                let ga = gd.iter().enumerate().map(|(i, d)| d * f[i / n]).collect();
                self.accumulate(grads, *a, shaped(*a, ga)?);
            }
            Op::Conv2d { input, weight, bias, stride, padding } => {
                let geom = self.conv_geom(*input, *weight, *bias, *stride, *padding)?;
                let (gx, gw, gb) = kernels::conv2d_backward(self.value(*input), self.value(*weight), &geom, g);
                self.accumulate(grads, *input, gx);
                self.accumulate(grads, *weight, gw);
                if let Some(b) = bias {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Dropout(a, mask) => {
                let ga = gd.iter().zip(mask).map(|(d, m)| d * m).collect();
                self.accumulate(grads, *a, shaped(*a, ga)?);
            }
            Op::UpsampleNearest2x(a) => {
                let (c, h, w) = self.value(*a).chw()?;
                let wo = 2 * w;
                let mut ga = vec![0.0; c * h * w];
                for (i, d) in gd.iter().enumerate() {
                    let ch = i / (4 * h * w);
                    let (oy, ox) = ((i / wo) % (2 * h), i % wo);
                    ga[(ch * h + oy / 2) * w + ox / 2] += d;
                }
                self.accumulate(grads, *a, shaped(*a, ga)?);
            }
            Op::UpsampleBilinear2x(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, kernels::upsample_bilinear2x_backward(&shape, g));
            }
            Op::AvgPool2(a) => {
                let (c, h, w) = self.value(*a).chw()?;
                let (ho, wo) = (h / 2, w / 2);
                let mut ga = vec![0.0; c * h * w];
                for (i, d) in gd.iter().enumerate() {
                    let ch = i / (ho * wo);
                    let (oy, ox) = ((i / wo) % ho, i % wo);
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        ga[(ch * h + 2 * oy + dy) * w + 2 * ox + dx] += 0.25 * d;
                    }
                }
                self.accumulate(grads, *a, shaped(*a, ga)?);
            }
            Op::MaxPool2(a, arg) => {
                let mut ga = vec![0.0; self.value(*a).len()];
                for (d, &src) in gd.iter().zip(arg) {
                    ga[src] += d;
                }
                self.accumulate(grads, *a, shaped(*a, ga)?);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(grads, p, shaped(p, gd[offset..offset + len].to_vec())?);
                    offset += len;
                }
            }
            Op::SliceChannels(a, start) => {
                let (_, h, w) = self.value(*a).chw()?;
                let mut ga = vec![0.0; self.value(*a).len()];
                let off = start * h * w;
                ga[off..off + gd.len()].copy_from_slice(gd);
                self.accumulate(grads, *a, shaped(*a, ga)?);
            }
            Op::Gather(a, idx) => {
                let mut ga = vec![0.0; self.value(*a).len()];
                for (d, &i) in gd.iter().zip(idx) {
                    ga[i] += d;
                }
                self.accumulate(grads, *a, shaped(*a, ga)?);
            }
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
