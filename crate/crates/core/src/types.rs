//! Validated image and mask containers shared by every module.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Slack allowed on range invariants to absorb accumulated rounding.
pub const RANGE_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    X,
    Y,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::X => Domain::Y,
            Domain::Y => Domain::X,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::X => "X",
            Domain::Y => "Y",
        })
    }
}

fn check_range<T: Real>(t: &Tensor<T>, lo: f64, hi: f64, what: &str) -> Result<()> {
    if !t.all_finite() {
        return Err(Error::contract(format!("{what} contains non-finite values")));
    }
    let (min, max) = t.min_max();
    if t.is_empty() {
        return Ok(());
    }
    if min.as_f64() < lo - RANGE_EPS || max.as_f64() > hi + RANGE_EPS {
        return Err(Error::contract(format!(
            "{what} values must lie in [{lo}, {hi}], found [{min}, {max}]"
        )));
    }
    Ok(())
}

/// Maps an 8-bit intensity to `[-1, 1]` as `2p/255 - 1`.
#[inline]
pub fn normalize_u8<T: Real>(p: u8) -> T {
    T::lit(2.0 * f64::from(p) / 255.0 - 1.0)
}

/// Inverse of [`normalize_u8`], rounding half away from zero and clamping.
#[inline]
pub fn denormalize_u8<T: Real>(v: T) -> u8 {
    let p = (v.as_f64() + 1.0) * 127.5;
    p.round().clamp(0.0, 255.0) as u8
}

/// A batch of RGB images `(N, 3, H, W)` with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch<T = f32> {
    data: Tensor<T>,
    domain: Domain,
}

impl<T: Real> ImageBatch<T> {
    pub fn new(data: Tensor<T>, domain: Domain) -> Result<Self> {
        if data.c() != 3 {
            return Err(Error::dim("channels", format!("images need 3 channels, got {}", data.c())));
        }
        if !data.h().is_multiple_of(4) {
            return Err(Error::dim("height", format!("{} is not a multiple of 4", data.h())));
        }
        if !data.w().is_multiple_of(4) {
            return Err(Error::dim("width", format!("{} is not a multiple of 4", data.w())));
        }
        check_range(&data, -1.0, 1.0, "image batch")?;
        Ok(ImageBatch { data, domain })
    }

    /// Wraps a tensor whose invariants hold by construction (e.g. a fusion output).
    pub(crate) fn trusted(data: Tensor<T>, domain: Domain) -> Self {
        debug_assert_eq!(data.c(), 3);
        ImageBatch { data, domain }
    }

    /// Builds a single-image batch from interleaved 8-bit RGB pixels.
    pub fn from_rgb8(pixels: &[u8], width: usize, height: usize, domain: Domain) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::dim(
                "data",
                format!("{width}x{height} RGB needs {} bytes, got {}", width * height * 3, pixels.len()),
            ));
        }
        let t = Tensor::from_fn([1, 3, height, width], |[_, c, y, x]| {
            normalize_u8(pixels[(y * width + x) * 3 + c])
        });
        ImageBatch::new(t, domain)
    }

    /// Interleaved 8-bit RGB pixels of batch item `i`.
    pub fn to_rgb8(&self, i: usize) -> Vec<u8> {
        let (h, w) = (self.data.h(), self.data.w());
        let mut out = vec![0u8; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out[(y * w + x) * 3 + c] = denormalize_u8(self.data.at([i, c, y, x]));
                }
            }
        }
        out
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.data.n()
    }

    pub fn is_empty(&self) -> bool {
        self.data.n() == 0
    }

    pub fn height(&self) -> usize {
        self.data.h()
    }

    pub fn width(&self) -> usize {
        self.data.w()
    }
}

/// Single-channel attention weights in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask<T = f32>(Tensor<T>);

impl<T: Real> AttentionMask<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        if data.c() != 1 {
            return Err(Error::dim("channels", format!("attention mask needs 1 channel, got {}", data.c())));
        }
        check_range(&data, 0.0, 1.0, "attention mask")?;
        Ok(AttentionMask(data))
    }

    pub(crate) fn trusted(data: Tensor<T>) -> Self {
        debug_assert_eq!(data.c(), 1);
        AttentionMask(data)
    }

    pub fn constant(n: usize, h: usize, w: usize, value: T) -> Self {
        AttentionMask(Tensor::full([n, 1, h, w], value))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

/// Three-channel candidate output in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentMask<T = f32>(Tensor<T>);

impl<T: Real> ContentMask<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        if data.c() != 3 {
            return Err(Error::dim("channels", format!("content mask needs 3 channels, got {}", data.c())));
        }
        check_range(&data, -1.0, 1.0, "content mask")?;
        Ok(ContentMask(data))
    }

    pub(crate) fn trusted(data: Tensor<T>) -> Self {
        debug_assert_eq!(data.c(), 3);
        ContentMask(data)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

/// Generator output before fusion.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair<T = f32> {
    pub mask: AttentionMask<T>,
    pub content: ContentMask<T>,
}
