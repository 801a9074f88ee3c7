//! Attention-guided generator and mask fusion.
//!
//! The trunk is an encoder / residual / decoder stack whose last layer emits
//! four channels: channel 0 through a sigmoid is the attention mask, channels
//! 1..4 through a tanh are the content image. The translated image is
//! `content * mask + input * (1 - mask)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Builder, Grads, Mode, Network, Op, Tape};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::types::{AttentionMask, ContentMask, ImageBatch, MaskPair};

/// Smallest spatial size the generator accepts.
pub const MIN_SPATIAL: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenLayer {
    /// `c7s1_k`: reflection-padded 7x7 conv, norm, ReLU.
    Stem(usize),
    /// `dk`: 3x3 stride-2 conv, norm, ReLU.
    Down(usize),
    /// `Rk`: two 3x3 convs with a skip connection.
    Res(usize),
    /// `uk`: 3x3 stride-1/2 transposed conv, norm, ReLU.
    Up(usize),
    /// Final `c7s1_k`: 7x7 conv with bias, no norm; feeds the output heads.
    Head(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    None,
}

/// Layer list of a generator. The last layer must be a [`GenLayer::Head`]
/// with 4 outputs (attention + content) or 3 (content only).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub layers: Vec<GenLayer>,
    pub norm: NormKind,
}

/// Filter count scaled for desk-size runs: `max(4, floor(k * scale))`.
pub fn scaled(k: usize, scale: f64) -> usize {
    ((k as f64 * scale).floor() as usize).max(4)
}

impl GeneratorSpec {
    /// `[c7s1_64, d128, d256, R256 x6, u128, u64, c7s1_4]` with widths scaled.
    pub fn standard(channel_scale: f64, attention: bool) -> Self {
        let s = |k| scaled(k, channel_scale);
        let mut layers = vec![GenLayer::Stem(s(64)), GenLayer::Down(s(128)), GenLayer::Down(s(256))];
        layers.extend(std::iter::repeat_n(GenLayer::Res(s(256)), 6));
        layers.extend([
            GenLayer::Up(s(128)),
            GenLayer::Up(s(64)),
            GenLayer::Head(if attention { 4 } else { 3 }),
        ]);
        GeneratorSpec {
            layers,
            norm: NormKind::Batch,
        }
    }

    pub fn head_channels(&self) -> usize {
        match self.layers.last() {
            Some(GenLayer::Head(k)) => *k,
            _ => 0,
        }
    }

    pub fn has_attention(&self) -> bool {
        self.head_channels() == 4
    }

    pub fn residual_blocks(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, GenLayer::Res(_))).count()
    }

    pub fn validate(&self) -> Result<()> {
        let Some(GenLayer::Head(k)) = self.layers.last() else {
            return Err(Error::contract("generator spec must end with a c7s1 output layer"));
        };
        if *k != 3 && *k != 4 {
            return Err(Error::contract(format!("output layer must emit 3 or 4 channels, got {k}")));
        }
        if self.layers[..self.layers.len() - 1]
            .iter()
            .any(|l| matches!(l, GenLayer::Head(_)))
        {
            return Err(Error::contract("only the last layer may be an output layer"));
        }
        let mut c = 3;
        for l in &self.layers {
            match *l {
                GenLayer::Res(k) if k != c => {
                    return Err(Error::contract(format!("residual block R{k} receives {c} channels")));
                }
                GenLayer::Stem(k) | GenLayer::Down(k) | GenLayer::Res(k) | GenLayer::Up(k) | GenLayer::Head(k) => c = k,
            }
        }
        Ok(())
    }

    /// Output shape `(channels, height, width)` after each layer for an `h x w` input.
    pub fn feature_shapes(&self, h: usize, w: usize) -> Vec<[usize; 3]> {
        let (mut hh, mut ww) = (h, w);
        self.layers
            .iter()
            .map(|l| match *l {
                GenLayer::Stem(k) | GenLayer::Res(k) | GenLayer::Head(k) => [k, hh, ww],
                GenLayer::Down(k) => {
                    // 3x3, stride 2, pad 1
                    hh = (hh + 2 - 3) / 2 + 1;
                    ww = (ww + 2 - 3) / 2 + 1;
                    [k, hh, ww]
                }
                GenLayer::Up(k) => {
                    // (h - 1) * 2 - 2 + 3 + 1
                    hh *= 2;
                    ww *= 2;
                    [k, hh, ww]
                }
            })
            .collect()
    }
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .layers
            .iter()
            .map(|l| match *l {
                GenLayer::Stem(k) | GenLayer::Head(k) => format!("c7s1_{k}"),
                GenLayer::Down(k) => format!("d{k}"),
                GenLayer::Res(k) => format!("R{k}"),
                GenLayer::Up(k) => format!("u{k}"),
            })
            .collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

impl FromStr for GeneratorSpec {
    type Err = Error;

    /// Parses a layer string such as `c7s1_64, d128, R128, u64, c7s1_4`.
    /// The last `c7s1_k` is the output layer.
    fn from_str(s: &str) -> Result<Self> {
        let tokens: Vec<&str> = s
            .trim()
            .trim_start_matches('[')
            .trim_end_matches(']')
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .collect();
        let n = tokens.len();
        let num = |t: &str, digits: &str| -> Result<usize> {
            digits
                .parse()
                .map_err(|_| Error::contract(format!("bad layer token `{t}`")))
        };
        let mut layers = Vec::with_capacity(n);
        for (i, t) in tokens.iter().enumerate() {
            let layer = if let Some(d) = t.strip_prefix("c7s1_") {
                let k = num(t, d)?;
                if i + 1 == n {
                    GenLayer::Head(k)
                } else {
                    GenLayer::Stem(k)
                }
            } else if let Some(d) = t.strip_prefix('d') {
                GenLayer::Down(num(t, d)?)
            } else if let Some(d) = t.strip_prefix('R') {
                GenLayer::Res(num(t, d)?)
            } else if let Some(d) = t.strip_prefix('u') {
                GenLayer::Up(num(t, d)?)
            } else {
                return Err(Error::contract(format!("bad layer token `{t}`")));
            };
            layers.push(layer);
        }
        let spec = GeneratorSpec {
            layers,
            norm: NormKind::Batch,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Records one generator pass for backpropagation.
#[derive(Clone, Debug)]
pub struct GenTrace<T> {
    tape: Tape<T>,
    input: Tensor<T>,
    pub mask: Tensor<T>,
    pub content: Tensor<T>,
    pub output: Tensor<T>,
}

impl<T: Real> GenTrace<T> {
    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }
}

#[derive(Clone, Debug)]
pub struct Generator<T = f32> {
    spec: GeneratorSpec,
    net: Network<T>,
    layer_ends: Vec<usize>,
    mask_override: Option<f64>,
}

impl<T: Real> Generator<T> {
    pub fn new<R: Rng>(spec: GeneratorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let with_norm = spec.norm == NormKind::Batch;
        let mut b = Builder::<T, R>::new(rng);
        let mut ops = Vec::new();
        let mut layer_ends = Vec::new();
        let mut c = 3;
        for (i, layer) in spec.layers.iter().enumerate() {
            let name = format!("layer{i:02}");
            let norm = |b: &mut Builder<T, R>, ops: &mut Vec<Op>, nm: &str, k: usize| {
                if with_norm {
                    ops.push(b.batch_norm(nm, k));
                }
            };
            match *layer {
                GenLayer::Stem(k) => {
                    ops.push(Op::ReflectPad(3));
                    ops.push(b.conv(&format!("{name}.conv"), c, k, 7, 1, 0, !with_norm));
                    norm(&mut b, &mut ops, &format!("{name}.norm"), k);
                    ops.push(Op::Relu);
                    c = k;
                }
                GenLayer::Down(k) => {
                    ops.push(b.conv(&format!("{name}.conv"), c, k, 3, 2, 1, !with_norm));
                    norm(&mut b, &mut ops, &format!("{name}.norm"), k);
                    ops.push(Op::Relu);
                    c = k;
                }
                GenLayer::Res(k) => {
                    let mut body = vec![Op::ReflectPad(1)];
                    body.push(b.conv(&format!("{name}.conv1"), k, k, 3, 1, 0, !with_norm));
                    norm(&mut b, &mut body, &format!("{name}.norm1"), k);
                    body.push(Op::Relu);
                    body.push(Op::ReflectPad(1));
                    body.push(b.conv(&format!("{name}.conv2"), k, k, 3, 1, 0, !with_norm));
                    norm(&mut b, &mut body, &format!("{name}.norm2"), k);
                    ops.push(Op::Residual(body));
                }
                GenLayer::Up(k) => {
                    ops.push(b.conv_transpose(&format!("{name}.deconv"), c, k, 3, 2, 1, 1, !with_norm));
                    norm(&mut b, &mut ops, &format!("{name}.norm"), k);
                    ops.push(Op::Relu);
                    c = k;
                }
                GenLayer::Head(k) => {
                    ops.push(Op::ReflectPad(3));
                    ops.push(b.conv(&format!("{name}.conv"), c, k, 7, 1, 0, true));
                    c = k;
                }
            }
            layer_ends.push(ops.len());
        }
        Ok(Generator {
            spec,
            net: b.finish(ops),
            layer_ends,
            mask_override: None,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn count_parameters(&self) -> usize {
        self.net.count_parameters()
    }

    /// Forces every attention value to a constant (diagnostics only).
    pub fn set_mask_override(&mut self, value: Option<f64>) {
        self.mask_override = value;
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.c() != 3 {
            return Err(Error::dim("channels", format!("generator input needs 3 channels, got {}", x.c())));
        }
        for (axis, v) in [("height", x.h()), ("width", x.w())] {
            if v % 4 != 0 {
                return Err(Error::dim(axis, format!("{v} is not a multiple of 4")));
            }
            if v < MIN_SPATIAL {
                return Err(Error::dim(axis, format!("{v} is below the minimum of {MIN_SPATIAL}")));
            }
        }
        Ok(())
    }

    fn heads(&self, raw: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let [n, _, h, w] = raw.shape();
        if self.spec.has_attention() {
            let (m, r) = raw.split_channels(1);
            let mask = match self.mask_override {
                Some(v) => Tensor::full([n, 1, h, w], T::lit(v)),
                None => m.map(|v| T::lit(sigmoid(v.as_f64()))),
            };
            (mask, r.map(|v| v.tanh()))
        } else {
            (Tensor::full([n, 1, h, w], T::one()), raw.map(|v| v.tanh()))
        }
    }

    /// Attention and content masks for a batch.
    pub fn forward(&self, x: &ImageBatch<T>, mode: Mode) -> Result<MaskPair<T>> {
        self.check_input(x.tensor())?;
        let raw = self.net.forward(x.tensor(), mode)?;
        let (m, r) = self.heads(&raw);
        Ok(MaskPair {
            mask: AttentionMask::trusted(m),
            content: ContentMask::trusted(r),
        })
    }

    /// Translated images: the fusion of input and content, or the content
    /// alone when the generator has no attention head.
    pub fn translate(&self, x: &ImageBatch<T>, mode: Mode) -> Result<(ImageBatch<T>, MaskPair<T>)> {
        let pair = self.forward(x, mode)?;
        let out = if self.spec.has_attention() {
            fuse(x, &pair.mask, &pair.content)?
        } else {
            ImageBatch::trusted(pair.content.tensor().clone(), x.domain().other())
        };
        Ok((out, pair))
    }

    /// Outputs after each spec layer (pre-head), for shape inspection.
    pub fn layer_outputs(&self, x: &Tensor<T>, mode: Mode) -> Result<Vec<Tensor<T>>> {
        self.check_input(x)?;
        self.net.forward_segments(x, &self.layer_ends, mode)
    }

    /// Traced pass producing mask, content and fused output.
    pub fn forward_traced(&self, x: &Tensor<T>, mode: Mode) -> Result<GenTrace<T>> {
        self.check_input(x)?;
        let (raw, tape) = self.net.forward_traced(x, mode)?;
        let (mask, content) = self.heads(&raw);
        let output = if self.spec.has_attention() {
            fuse_tensors(x, &mask, &content)?
        } else {
            content.clone()
        };
        Ok(GenTrace {
            tape,
            input: x.clone(),
            mask,
            content,
            output,
        })
    }

    /// Backpropagates through fusion, heads and trunk.
    ///
    /// `d_output` is the gradient on the fused image, `d_mask` any extra
    /// gradient on the attention mask. Returns the gradient on the input image.
    pub fn backward(
        &self,
        trace: &GenTrace<T>,
        d_output: &Tensor<T>,
        d_mask: Option<&Tensor<T>>,
        grads: Option<&mut Grads<T>>,
    ) -> Result<Tensor<T>> {
        let (mut dx_direct, d_raw) = self.head_backward(trace, d_output, d_mask)?;
        let dx_net = self.net.backward(&trace.tape, d_raw, grads);
        dx_direct.add_assign(&dx_net);
        Ok(dx_direct)
    }

    /// Parameter gradients only, for passes whose input needs no gradient.
    pub fn backward_params(
        &self,
        trace: &GenTrace<T>,
        d_output: &Tensor<T>,
        d_mask: Option<&Tensor<T>>,
        grads: &mut Grads<T>,
    ) -> Result<()> {
        let (_, d_raw) = self.head_backward(trace, d_output, d_mask)?;
        self.net.backward_params(&trace.tape, d_raw, grads);
        Ok(())
    }

    /// Gradient through fusion and the output activations: returns the
    /// direct input gradient and the gradient on the raw head output.
    fn head_backward(
        &self,
        trace: &GenTrace<T>,
        d_output: &Tensor<T>,
        d_mask: Option<&Tensor<T>>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (dx_direct, mut dm, dr) = if self.spec.has_attention() {
            fuse_grad(&trace.input, &trace.mask, &trace.content, d_output)?
        } else {
            (Tensor::zeros(trace.input.shape()), Tensor::zeros(trace.mask.shape()), d_output.clone())
        };
        if let Some(extra) = d_mask {
            dm.add_assign(extra);
        }
        let d_content = dr.zip_map(&trace.content, |d, r| d * (T::one() - r * r))?;
        let d_raw = if self.spec.has_attention() {
            let d_logit = if self.mask_override.is_some() {
                Tensor::zeros(dm.shape())
            } else {
                dm.zip_map(&trace.mask, |d, m| d * m * (T::one() - m))?
            };
            Tensor::concat_channels(&d_logit, &d_content)?
        } else {
            d_content
        };
        Ok((dx_direct, d_raw))
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_fuse_shapes<T: Real>(x: &Tensor<T>, m: &Tensor<T>, r: &Tensor<T>) -> Result<()> {
    let [n, _, h, w] = x.shape();
    m.expect_shape([n, 1, h, w], "attention mask")?;
    r.expect_shape([n, 3, h, w], "content mask")?;
    Ok(())
}

/// `R * M + x * (1 - M)` with the mask broadcast over channels.
pub fn fuse_tensors<T: Real>(x: &Tensor<T>, m: &Tensor<T>, r: &Tensor<T>) -> Result<Tensor<T>> {
    check_fuse_shapes(x, m, r)?;
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let mut out = Tensor::zeros(x.shape());
    for i in 0..n {
        let mi = &m.item(i)[..plane];
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            for (k, &mv) in mi.iter().enumerate() {
                let xv = x.data()[base + k];
                let rv = r.data()[base + k];
                out.data_mut()[base + k] = rv * mv + xv * (T::one() - mv);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`fuse_tensors`]: `(dx, dmask, dcontent)` given `d_out`.
pub fn fuse_grad<T: Real>(
    x: &Tensor<T>,
    m: &Tensor<T>,
    r: &Tensor<T>,
    d_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    check_fuse_shapes(x, m, r)?;
    d_out.expect_shape(x.shape(), "fusion gradient")?;
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let mut dx = Tensor::zeros(x.shape());
    let mut dm = Tensor::zeros(m.shape());
    let mut dr = Tensor::zeros(r.shape());
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            for k in 0..plane {
                let mv = m.data()[i * plane + k];
                let d = d_out.data()[base + k];
                dx.data_mut()[base + k] = d * (T::one() - mv);
                dr.data_mut()[base + k] = d * mv;
                let acc = dm.data()[i * plane + k] + d * (r.data()[base + k] - x.data()[base + k]);
                dm.data_mut()[i * plane + k] = acc;
            }
        }
    }
    Ok((dx, dm, dr))
}

/// Blends content into the input where the mask is on.
pub fn fuse<T: Real>(x: &ImageBatch<T>, mask: &AttentionMask<T>, content: &ContentMask<T>) -> Result<ImageBatch<T>> {
    let out = fuse_tensors(x.tensor(), mask.tensor(), content.tensor())?;
    Ok(ImageBatch::trusted(out, x.domain().other()))
}
