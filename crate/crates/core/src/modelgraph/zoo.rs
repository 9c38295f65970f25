//! Graph builders for the trimap network (`net_t`), the matting network
//! (`net_m`) and the refinement module (`refinement`).
//!
//! These are the source of the JSON fixtures under `fixtures/graphs`;
//! `write_fixtures` regenerates them.

use std::path::Path;

use super::{
    ActivationFn, AttentionSpec, ConvSpec, GraphInput, LayerOp, LayerSpec, ModelGraph, NormKind, PoolOp, PoolSpec, Shape,
    UpsampleMode, UpsampleSpec,
};
use crate::attention::AttentionConfig;
use crate::error::Result;
use ActivationFn::{LeakyRelu, Relu};

fn conv(out: usize, k: usize) -> ConvSpec {
    ConvSpec {
        out_channels: out,
        kernel: [k, k],
        stride: 1,
        padding: k / 2,
        dilation: 1,
        bias: false,
        spectral_norm: false,
        output_padding: 0,
    }
}

impl ConvSpec {
    fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    fn dilated(mut self, d: usize) -> Self {
        self.dilation = d;
        self.padding = d * (self.kernel[0] / 2);
        self
    }

    fn pad(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    fn bias(mut self) -> Self {
        self.bias = true;
        self
    }

    fn sn(mut self) -> Self {
        self.spectral_norm = true;
        self
    }
}

struct Builder {
    g: ModelGraph,
}

impl Builder {
    fn new(name: &str, inputs: &[(&str, Shape)]) -> Self {
        Self {
            g: ModelGraph {
                name: name.into(),
                inputs: inputs.iter().map(|(n, s)| GraphInput { name: (*n).into(), shape: *s }).collect(),
                layers: Vec::new(),
                outputs: Vec::new(),
            },
        }
    }

    fn push(&mut self, id: String, inputs: &[&str], op: LayerOp) -> String {
        self.g.layers.push(LayerSpec { id: id.clone(), inputs: inputs.iter().map(|s| (*s).into()).collect(), op });
        id
    }

    fn conv(&mut self, id: String, input: &str, c: ConvSpec) -> String {
        self.push(id, &[input], LayerOp::Conv(c))
    }

    fn deconv(&mut self, id: String, input: &str, c: ConvSpec) -> String {
        self.push(id, &[input], LayerOp::Deconv(c))
    }

    fn bn(&mut self, id: String, input: &str) -> String {
        self.push(id, &[input], LayerOp::Norm { norm: NormKind::Batch })
    }

    fn act(&mut self, id: String, input: &str, func: ActivationFn) -> String {
        self.push(id, &[input], LayerOp::Activation { func })
    }

    fn pool(&mut self, id: String, input: &str, op: PoolOp, kernel: usize, stride: usize, padding: usize) -> String {
        self.push(id, &[input], LayerOp::Pool(PoolSpec { op, kernel, stride: Some(stride), padding }))
    }

    fn up(&mut self, id: String, input: &str, mode: UpsampleMode, scale: usize) -> String {
        self.push(id, &[input], LayerOp::Upsample(UpsampleSpec { mode, scale: Some(scale), size: None }))
    }

    fn dropout(&mut self, id: String, input: &str, rate: f64) -> String {
        self.push(id, &[input], LayerOp::Dropout { rate })
    }

    fn add(&mut self, id: String, inputs: &[&str]) -> String {
        self.push(id, inputs, LayerOp::Add)
    }

    fn concat(&mut self, id: String, inputs: &[&str]) -> String {
        self.push(id, inputs, LayerOp::Concat)
    }

    /// conv → BN → activation.
    fn cba(&mut self, p: &str, input: &str, c: ConvSpec, func: ActivationFn) -> String {
        let x = self.conv(format!("{p}.conv"), input, c);
        let x = self.bn(format!("{p}.bn"), &x);
        self.act(format!("{p}.{}", act_name(func)), &x, func)
    }

    fn finish(mut self, outputs: &[&str]) -> ModelGraph {
        self.g.outputs = outputs.iter().map(|s| (*s).into()).collect();
        self.g
    }
}

fn act_name(f: ActivationFn) -> &'static str {
    match f {
        ActivationFn::Relu => "relu",
        ActivationFn::LeakyRelu => "lrelu",
        ActivationFn::Sigmoid => "sigmoid",
        ActivationFn::Tanh => "tanh",
    }
}

// ---- trimap network ----

/// ResNet bottleneck with expansion 4.
fn bottleneck(b: &mut Builder, p: &str, input: &str, in_ch: usize, planes: usize, stride: usize, dil: usize) -> String {
    let x = b.cba(&format!("{p}.a"), input, conv(planes, 1), Relu);
    let x = b.cba(&format!("{p}.b"), &x, conv(planes, 3).stride(stride).dilated(dil), Relu);
    let x = b.conv(format!("{p}.c.conv"), &x, conv(4 * planes, 1));
    let x = b.bn(format!("{p}.c.bn"), &x);
    let short = if stride != 1 || in_ch != 4 * planes {
        let s = b.conv(format!("{p}.downsample.conv"), input, conv(4 * planes, 1).stride(stride));
        b.bn(format!("{p}.downsample.bn"), &s)
    } else {
        input.to_string()
    };
    let x = b.add(format!("{p}.add"), &[&x, &short]);
    b.act(format!("{p}.relu"), &x, Relu)
}

fn res_layer(b: &mut Builder, name: &str, input: &str, in_ch: usize, planes: usize, strides: &[usize], atrous: &[usize]) -> String {
    let mut x = input.to_string();
    let mut c = in_ch;
    for (i, (&s, &d)) in strides.iter().zip(atrous).enumerate() {
        x = bottleneck(b, &format!("{name}.{i}"), &x, c, planes, s, d);
        c = 4 * planes;
    }
    x
}

/// Atrous backbone, ASPP and a two-shortcut decoder producing three-class
/// trimap logits. `input` is the network input shape.
pub fn net_t_with(input: Shape) -> ModelGraph {
    let mut b = Builder::new("net_t", &[("input", input)]);
    let x = b.cba("stem", "input", conv(64, 7).stride(2), Relu);
    let x = b.pool("layer1.pool".into(), &x, PoolOp::Max, 3, 2, 1);
    let l1 = res_layer(&mut b, "layer1", &x, 64, 64, &[1, 1, 1], &[1, 1, 1]);
    let l2 = res_layer(&mut b, "layer2", &l1, 256, 128, &[2, 1, 1, 1], &[1, 1, 1, 1]);
    let l3 = res_layer(&mut b, "layer3", &l2, 512, 256, &[2, 1, 1, 1, 1, 1], &[1; 6]);
    let l4 = res_layer(&mut b, "layer4", &l3, 1024, 512, &[1, 1, 1], &[1, 2, 1]);

    // ASPP at rate 1: dilations 1, 6, 12, 18 plus an image-pooling branch.
    let rate = 1;
    let mut branches = vec![b.cba("aspp.b0", &l4, conv(256, 1).bias(), Relu)];
    for (i, d) in [6, 12, 18].into_iter().enumerate() {
        branches.push(b.cba(&format!("aspp.b{}", i + 1), &l4, conv(256, 3).dilated(d * rate).bias(), Relu));
    }
    let gp = b.pool("aspp.pool.avg".into(), &l4, PoolOp::GlobalAvg, 1, 1, 0);
    let gp = b.cba("aspp.pool", &gp, conv(256, 1).bias(), Relu);
    let [_, fh, fw] = super::infer_shapes(&b.g, &b.g.default_inputs())
        .expect("backbone shapes")
        .into_iter()
        .find(|(id, _)| *id == l4)
        .map(|(_, s)| s)
        .expect("layer4 present");
    let gp = b.push(
        "aspp.pool.up".into(),
        &[&gp],
        LayerOp::Upsample(UpsampleSpec { mode: UpsampleMode::Bilinear, scale: None, size: Some([fh, fw]) }),
    );
    branches.push(gp);
    let refs: Vec<&str> = branches.iter().map(String::as_str).collect();
    let cat = b.concat("aspp.concat".into(), &refs);
    let x = b.cba("aspp.project", &cat, conv(256, 1).bias(), Relu);
    let aspp = b.dropout("aspp.dropout".into(), &x, 0.5);

    let s1 = b.cba("shortcut1", &l1, conv(48, 1).bias(), Relu);
    let l2u = b.up("shortcut2.up".into(), &l2, UpsampleMode::Bilinear, 2);
    let s2 = b.cba("shortcut2", &l2u, conv(48, 1).bias(), Relu);

    let au = b.up("cat.up".into(), &aspp, UpsampleMode::Bilinear, 4);
    let x = b.concat("cat.concat".into(), &[&au, &s2, &s1]);
    let x = b.cba("cat.conv4", &x, conv(256, 3).bias(), Relu);
    let x = b.dropout("cat.conv4.dropout".into(), &x, 0.1);
    // The stated output of this row has 48 channels.
    let x = b.cba("cat.conv5", &x, conv(48, 3).bias(), Relu);
    let x = b.dropout("cat.conv5.dropout".into(), &x, 0.1);

    let x = b.up("output.up".into(), &x, UpsampleMode::Bilinear, 4);
    let out = b.conv("output.conv".into(), &x, conv(3, 1).bias());
    b.finish(&[&out])
}

/// Trimap network at 512×512 over RGB plus the two soft segmentation
/// channels.
pub fn net_t() -> ModelGraph {
    net_t_with([5, 512, 512])
}

// ---- matting network ----

fn shortcut(b: &mut Builder, p: &str, input: &str, ch: usize) -> String {
    let mut x = input.to_string();
    for i in 0..2 {
        x = b.conv(format!("{p}.{i}.conv"), &x, conv(ch, 3).sn());
        x = b.act(format!("{p}.{i}.relu"), &x, Relu);
        x = b.bn(format!("{p}.{i}.bn"), &x);
    }
    x
}

fn res_block(b: &mut Builder, p: &str, input: &str, ch: usize, func: ActivationFn) -> String {
    let x = b.cba(&format!("{p}.conv1"), input, conv(ch, 3).sn(), func);
    let x = b.conv(format!("{p}.conv2.conv"), &x, conv(ch, 3).sn());
    let x = b.bn(format!("{p}.conv2.bn"), &x);
    let x = b.add(format!("{p}.add"), &[&x, input]);
    b.act(format!("{p}.{}", act_name(func)), &x, func)
}

fn res_blocks(b: &mut Builder, p: &str, input: &str, ch: usize, n: usize, func: ActivationFn) -> String {
    let mut x = input.to_string();
    for i in 0..n {
        x = res_block(b, &format!("{p}.{i}"), &x, ch, func);
    }
    x
}

/// Strided 3×3 main path; 2×2 average pool shortcut with a 1×1 projection
/// to the new width.
fn down_block(b: &mut Builder, p: &str, input: &str, out: usize) -> String {
    let x = b.cba(&format!("{p}.conv1"), input, conv(out, 3).stride(2).sn(), Relu);
    let x = b.conv(format!("{p}.conv2.conv"), &x, conv(out, 3).sn());
    let x = b.bn(format!("{p}.conv2.bn"), &x);
    let s = b.pool(format!("{p}.down.pool"), input, PoolOp::Avg, 2, 2, 0);
    let s = b.conv(format!("{p}.down.conv"), &s, conv(out, 1).sn());
    let s = b.bn(format!("{p}.down.bn"), &s);
    let x = b.add(format!("{p}.add"), &[&x, &s]);
    b.act(format!("{p}.relu"), &x, Relu)
}

/// 4×4 stride-2 transposed conv main path; nearest-upsampling shortcut with
/// a 1×1 projection to the new width.
fn up_block(b: &mut Builder, p: &str, input: &str, out: usize) -> String {
    let x = b.deconv(format!("{p}.deconv1.conv"), input, conv(out, 4).stride(2).pad(1).sn());
    let x = b.bn(format!("{p}.deconv1.bn"), &x);
    let x = b.act(format!("{p}.deconv1.lrelu"), &x, LeakyRelu);
    let x = b.conv(format!("{p}.conv2.conv"), &x, conv(out, 3).sn());
    let x = b.bn(format!("{p}.conv2.bn"), &x);
    let s = b.up(format!("{p}.up.nearest"), input, UpsampleMode::Nearest, 2);
    let s = b.conv(format!("{p}.up.conv"), &s, conv(out, 1).sn());
    let s = b.bn(format!("{p}.up.bn"), &s);
    let x = b.add(format!("{p}.add"), &[&x, &s]);
    b.act(format!("{p}.lrelu"), &x, LeakyRelu)
}

/// The [`AttentionSpec`] that materializes exactly the parameters of
/// [`crate::attention::AttentionParams::init`] under `cfg`.
pub fn attention_spec_for(cfg: &AttentionConfig) -> AttentionSpec {
    AttentionSpec {
        e: cfg.e,
        c_g: Some(cfg.c_g),
        r: cfg.r,
        kernel: cfg.r,
        theta_bias: cfg.bias,
        phi_bias: cfg.bias,
        g_bias: cfg.bias,
        w_bias: cfg.bias,
    }
}

/// U-shaped encoder/decoder with spectral-normalized residual blocks and a
/// non-local block at 1/8 resolution. `in_channels` is 6 for RGB + one-hot
/// trimap, 3 for RGB only.
pub fn net_m_with(in_channels: usize, size: usize) -> ModelGraph {
    let mut b = Builder::new("net_m", &[("image", [in_channels, size, size])]);
    let x = b.conv("stride_conv1.conv".into(), "image", conv(32, 3).stride(2).sn());
    let sc1_in = b.bn("stride_conv1.bn".into(), &x);
    let sc1 = shortcut(&mut b, "shortcut1", "image", 32);
    let x = b.conv("conv1.conv".into(), &sc1_in, conv(32, 3).sn());
    let c1 = b.bn("conv1.bn".into(), &x);
    let sc2 = shortcut(&mut b, "shortcut2", &c1, 32);
    let x = b.conv("stride_conv2.conv".into(), &c1, conv(64, 3).stride(2).sn());
    let x = b.bn("stride_conv2.bn".into(), &x);
    let rb1 = res_blocks(&mut b, "resblocks1", &x, 64, 3, Relu);
    let sc3 = shortcut(&mut b, "shortcut3", &rb1, 64);
    let x = down_block(&mut b, "down1", &rb1, 128);
    let rb2 = res_blocks(&mut b, "resblocks2", &x, 128, 3, Relu);
    // Image and alpha features both come from the same stage.
    let nl = b.push(
        "non_local".into(),
        &[&rb2, &rb2],
        LayerOp::Attention(attention_spec_for(&AttentionConfig::new(128, 128))),
    );
    let sc4 = shortcut(&mut b, "shortcut4", &nl, 128);
    let x = down_block(&mut b, "down2", &nl, 256);
    let rb3 = res_blocks(&mut b, "resblocks3", &x, 256, 3, Relu);
    let sc5 = shortcut(&mut b, "shortcut5", &rb3, 256);
    let x = down_block(&mut b, "down3", &rb3, 512);
    let x = res_blocks(&mut b, "resblock_deep", &x, 512, 1, Relu);

    let x = up_block(&mut b, "up1", &x, 256);
    let rb4 = res_blocks(&mut b, "resblocks4", &x, 256, 1, LeakyRelu);
    let s = b.add("up2.sum".into(), &[&sc5, &rb4]);
    let x = up_block(&mut b, "up2", &s, 128);
    let rb5 = res_blocks(&mut b, "resblocks5", &x, 128, 2, LeakyRelu);
    let s = b.add("up3.sum".into(), &[&sc4, &rb5]);
    let x = up_block(&mut b, "up3", &s, 64);
    let rb6 = res_blocks(&mut b, "resblocks6", &x, 64, 2, LeakyRelu);
    let s = b.add("up4.sum".into(), &[&sc3, &rb6]);
    let x = up_block(&mut b, "up4", &s, 32);
    let rb7 = res_blocks(&mut b, "resblocks7", &x, 32, 1, LeakyRelu);
    let s = b.add("deconv1.sum".into(), &[&sc2, &rb7]);
    let x = b.deconv("deconv1.conv".into(), &s, conv(32, 4).stride(2).pad(1).sn());
    let d1 = b.bn("deconv1.bn".into(), &x);
    let s = b.add("conv2.sum".into(), &[&sc1, &d1]);
    let x = b.conv("conv2.conv".into(), &s, conv(1, 3).bias().sn());
    let out = b.bn("conv2.bn".into(), &x);
    b.finish(&[&out])
}

pub fn net_m() -> ModelGraph {
    net_m_with(6, 512)
}

// ---- refinement ----

/// Small residual U-Net over a coarse alpha. Decoder skips take encoder
/// activations before pooling so extents line up.
pub fn refinement_with(size: usize) -> ModelGraph {
    let mut b = Builder::new("refinement", &[("coarse_alpha", [1, size, size])]);
    let mut x = b.conv("conv0".into(), "coarse_alpha", conv(1, 3).bias());
    let mut skips = Vec::new();
    for i in 1..=4 {
        let a = b.cba(&format!("conv{i}"), &x, conv(64, 3).bias(), Relu);
        x = b.pool(format!("conv{i}.pool"), &a, PoolOp::Max, 2, 2, 0);
        skips.push(a);
    }
    let a = b.cba("conv5", &x, conv(64, 3).bias(), Relu);
    x = b.up("conv5.up".into(), &a, UpsampleMode::Bilinear, 2);
    for (i, skip) in (6..=8).zip(skips[1..].iter().rev()) {
        let c = b.concat(format!("conv{i}.concat"), &[&x, skip]);
        let a = b.cba(&format!("conv{i}"), &c, conv(64, 3).bias(), Relu);
        x = b.up(format!("conv{i}.up"), &a, UpsampleMode::Bilinear, 2);
    }
    let c = b.concat("conv9.concat".into(), &[&x, &skips[0]]);
    let x = b.cba("conv9", &c, conv(64, 3).bias(), Relu);
    let x = b.conv("conv10".into(), &x, conv(1, 3).bias());
    let out = b.add("residual".into(), &[&x, "coarse_alpha"]);
    b.finish(&[&out])
}

pub fn refinement() -> ModelGraph {
    refinement_with(512)
}

/// Every zoo graph, keyed by file stem.
pub fn all() -> Vec<(&'static str, ModelGraph)> {
    vec![("net_t", net_t()), ("net_m", net_m()), ("refinement", refinement())]
}

/// Writes `<dir>/<name>.json` for every zoo graph.
pub fn write_fixtures(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, g) in all() {
        std::fs::write(dir.join(format!("{name}.json")), g.to_json()? + "\n")?;
    }
    Ok(())
}
