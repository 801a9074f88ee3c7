//! Dense NCHW tensors.

use crate::error::{Error, Result};
use crate::real::Real;

/// A dense 4-d tensor in `(batch, channels, height, width)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::dim(
                "data",
                format!("shape {shape:?} needs {want} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for j in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([i, j, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of values in one batch item.
    #[inline]
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> T {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    #[inline]
    fn offset(&self, [i, c, y, x]: [usize; 4]) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((i * cs + c) * hs + y) * ws + x
    }

    pub fn item(&self, i: usize) -> &[T] {
        let l = self.item_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [T] {
        let l = self.item_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    /// Copies batch item `i` into a new single-item tensor.
    pub fn slice_item(&self, i: usize) -> Self {
        let [_, c, h, w] = self.shape;
        Tensor {
            shape: [1, c, h, w],
            data: self.item(i).to_vec(),
        }
    }

    /// Stacks single-image slices into one batch.
    pub fn stack(items: &[&[T]], chw: [usize; 3]) -> Result<Self> {
        let l = chw[0] * chw[1] * chw[2];
        let mut data = Vec::with_capacity(items.len() * l);
        for it in items {
            if it.len() != l {
                return Err(Error::dim("item", format!("expected {l} values, got {}", it.len())));
            }
            data.extend_from_slice(it);
        }
        Ok(Tensor {
            shape: [items.len(), chw[0], chw[1], chw[2]],
            data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape, "operand")?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// Concatenates two tensors along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        let [n, ca, h, w] = a.shape;
        let [nb, cb, hb, wb] = b.shape;
        if n != nb {
            return Err(Error::dim("batch", format!("{n} vs {nb}")));
        }
        if h != hb {
            return Err(Error::dim("height", format!("{h} vs {hb}")));
        }
        if w != wb {
            return Err(Error::dim("width", format!("{w} vs {wb}")));
        }
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        for i in 0..n {
            data.extend_from_slice(a.item(i));
            data.extend_from_slice(b.item(i));
        }
        Ok(Tensor {
            shape: [n, ca + cb, h, w],
            data,
        })
    }

    /// Splits off the first `at` channels: returns `(first, rest)`.
    pub fn split_channels(&self, at: usize) -> (Self, Self) {
        let [n, c, h, w] = self.shape;
        assert!(at <= c);
        let plane = h * w;
        let mut first = Vec::with_capacity(n * at * plane);
        let mut rest = Vec::with_capacity(n * (c - at) * plane);
        for i in 0..n {
            let item = self.item(i);
            first.extend_from_slice(&item[..at * plane]);
            rest.extend_from_slice(&item[at * plane..]);
        }
        (
            Tensor {
                shape: [n, at, h, w],
                data: first,
            },
            Tensor {
                shape: [n, c - at, h, w],
                data: rest,
            },
        )
    }

    /// Mirrors every plane left-to-right.
    pub fn flip_horizontal(&self) -> Self {
        let [_, _, _, w] = self.shape;
        let mut out = self.clone();
        for row in out.data.chunks_mut(w) {
            row.reverse();
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::lit(self.len() as f64)
    }

    pub fn expect_shape(&self, shape: [usize; 4], what: &str) -> Result<()> {
        const AXES: [&str; 4] = ["batch", "channels", "height", "width"];
        for (k, axis) in AXES.iter().enumerate() {
            if self.shape[k] != shape[k] {
                return Err(Error::dim(
                    axis,
                    format!("{what}: expected {}, got {}", shape[k], self.shape[k]),
                ));
            }
        }
        Ok(())
    }
}
