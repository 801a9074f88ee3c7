//! Image and (mask, image) discriminators.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::generator::scaled;
use crate::nn::{Builder, Grads, Mode, Network, Op, Tape};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::types::{AttentionMask, ImageBatch};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const KERNEL: usize = 4;

/// `[C64, C128, C256, C512, C512]`: 4x4 convs with LeakyReLU, stride 2 except
/// the last block. The first block is unnormalized unless `first_block_norm`
/// is set; the last block is never normalized. A global average pool and a
/// 1x1 conv reduce the map to one score.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub first_block_norm: bool,
}

impl DiscriminatorSpec {
    pub fn standard(in_channels: usize, channel_scale: f64, first_block_norm: bool) -> Self {
        DiscriminatorSpec {
            in_channels,
            widths: [64, 128, 256, 512, 512].iter().map(|&k| scaled(k, channel_scale)).collect(),
            first_block_norm,
        }
    }

    fn stride(&self, i: usize) -> usize {
        if i + 1 == self.widths.len() { 1 } else { 2 }
    }

    fn normalized(&self, i: usize) -> bool {
        i + 1 != self.widths.len() && (i > 0 || self.first_block_norm)
    }

    /// Spatial size after each block for a square `size` input, or `None` if
    /// the map collapses.
    pub fn feature_sizes(&self, size: usize) -> Option<Vec<usize>> {
        let mut s = size;
        let mut out = Vec::with_capacity(self.widths.len());
        for i in 0..self.widths.len() {
            let padded = s + 2;
            if padded < KERNEL {
                return None;
            }
            s = (padded - KERNEL) / self.stride(i) + 1;
            if s == 0 {
                return None;
            }
            out.push(s);
        }
        Some(out)
    }
}

impl fmt::Display for DiscriminatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.widths.iter().map(|w| format!("C{w}")).collect();
        write!(f, "in{} [{}]", self.in_channels, parts.join(", "))
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator<T = f32> {
    spec: DiscriminatorSpec,
    net: Network<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new<R: Rng>(spec: DiscriminatorSpec, rng: &mut R) -> Result<Self> {
        if spec.widths.is_empty() {
            return Err(Error::contract("discriminator needs at least one block"));
        }
        let mut b = Builder::<T, R>::new(rng);
        let mut ops = Vec::new();
        let mut c = spec.in_channels;
        for (i, &k) in spec.widths.iter().enumerate() {
            let norm = spec.normalized(i);
            ops.push(b.conv(&format!("block{i}.conv"), c, k, KERNEL, spec.stride(i), 1, !norm));
            if norm {
                ops.push(b.batch_norm(&format!("block{i}.norm"), k));
            }
            ops.push(Op::LeakyRelu(LEAKY_SLOPE));
            c = k;
        }
        ops.push(Op::GlobalAvgPool);
        ops.push(b.conv("score", c, 1, 1, 1, 0, true));
        Ok(Discriminator { spec, net: b.finish(ops) })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
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

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.c() != self.spec.in_channels {
            return Err(Error::dim(
                "channels",
                format!("discriminator expects {} channels, got {}", self.spec.in_channels, x.c()),
            ));
        }
        Ok(())
    }

    /// Raw scores for a tensor with the configured channel count.
    pub fn scores(&self, x: &Tensor<T>, mode: Mode) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.net.forward(x, mode)?.into_vec())
    }

    /// One unbounded score per image.
    pub fn discriminate(&self, img: &ImageBatch<T>, mode: Mode) -> Result<Vec<T>> {
        self.scores(img.tensor(), mode)
    }

    /// Scores for the channel concatenation `[mask, img]`.
    pub fn discriminate_attended(&self, mask: &AttentionMask<T>, img: &ImageBatch<T>, mode: Mode) -> Result<Vec<T>> {
        let pair = attended_input(mask.tensor(), img.tensor())?;
        self.scores(&pair, mode)
    }

    pub fn forward_traced(&self, x: &Tensor<T>, mode: Mode) -> Result<(Vec<T>, Tape<T>)> {
        self.check_input(x)?;
        let (y, tape) = self.net.forward_traced(x, mode)?;
        Ok((y.into_vec(), tape))
    }

    /// Gradient of the scores, weighted by `d_scores`, with respect to the input.
    pub fn backward(&self, tape: &Tape<T>, d_scores: &[T], grads: Option<&mut Grads<T>>) -> Result<Tensor<T>> {
        let dy = Tensor::from_vec([d_scores.len(), 1, 1, 1], d_scores.to_vec())?;
        Ok(self.net.backward(tape, dy, grads))
    }
}

/// `[mask, img]` with a spatial alignment check.
pub fn attended_input<T: Real>(mask: &Tensor<T>, img: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, _, h, w] = img.shape();
    mask.expect_shape([n, 1, h, w], "attention mask")?;
    Tensor::concat_channels(mask, img)
}
