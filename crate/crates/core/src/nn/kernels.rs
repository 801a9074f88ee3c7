//! Convolution, normalization and padding kernels with their adjoints.

use crate::real::{matmul, Mat, Real};
use crate::tensor::Tensor;

/// Geometry of a sliding window over one image plane stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn conv(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        let span_h = height + 2 * pad;
        let span_w = width + 2 * pad;
        if span_h < kernel || span_w < kernel {
            return None;
        }
        Some(Window {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: (span_h - kernel) / stride + 1,
            out_w: (span_w - kernel) / stride + 1,
        })
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output columns `lo..hi` whose input column `ox*s - p + kx` lies inside `0..width`.
#[inline]
fn valid_cols(g: &Window, kx: usize) -> (usize, usize) {
    let (s, p) = (g.stride, g.pad);
    // smallest ox with ox*s + kx >= p
    let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
    // largest ox with ox*s + kx - p <= width - 1
    let hi = if g.width + p > kx { ((g.width + p - kx - 1) / s + 1).min(g.out_w) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds one item into a `(C*k*k, out_h*out_w)` matrix, zero outside the image.
pub fn im2col<T: Real>(src: &[T], g: &Window, cols: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let plane = g.cols();
    for c in 0..g.channels {
        let img = &src[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.out_h {
                    let iy = (oy * s) as isize - p + ky as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &img[iy as usize * g.width..(iy as usize + 1) * g.width];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    let start = lo * s + kx - g.pad;
                    if s == 1 {
                        line[lo..hi].copy_from_slice(&src_row[start..start + hi - lo]);
                    } else {
                        for (d, v) in line[lo..hi].iter_mut().zip(src_row[start..].iter().step_by(s)) {
                            *d = *v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `dst`.
pub fn col2im<T: Real>(cols: &[T], g: &Window, dst: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let plane = g.cols();
    for c in 0..g.channels {
        let img = &mut dst[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let srcr = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(g, kx);
                if lo >= hi {
                    continue;
                }
                let start = lo * s + kx - g.pad;
                for oy in 0..g.out_h {
                    let iy = (oy * s) as isize - p + ky as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut img[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let line = &srcr[oy * g.out_w + lo..oy * g.out_w + hi];
                    if s == 1 {
                        for (d, &v) in dst_row[start..start + hi - lo].iter_mut().zip(line) {
                            *d = *d + v;
                        }
                    } else {
                        for (d, &v) in dst_row[start..].iter_mut().step_by(s).zip(line) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// Output channel count up to which stride-1 unpadded convolutions skip
/// im2col; GEMM with so few rows is slower than direct row updates.
const DIRECT_MAX_OUT: usize = 8;

fn use_direct(g: &Window, out_c: usize) -> bool {
    out_c <= DIRECT_MAX_OUT && g.stride == 1 && g.pad == 0
}

#[inline]
fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * xv;
    }
}

#[inline]
fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] = acc[l] + a[l] * b[l];
        }
    }
    let mut s = acc.iter().copied().fold(T::zero(), |p, q| p + q);
    for (a, b) in xr.iter().zip(yr) {
        s = s + *a * *b;
    }
    s
}

/// Direct stride-1, pad-0 convolution of one item: `y += W * x`.
fn direct_forward<T: Real>(x: &[T], weight: &[T], out_c: usize, g: &Window, y: &mut [T]) {
    let (k, w, ow) = (g.kernel, g.width, g.out_w);
    let plane = g.height * w;
    for o in 0..out_c {
        let yo = &mut y[o * g.cols()..(o + 1) * g.cols()];
        for c in 0..g.channels {
            let xc = &x[c * plane..(c + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((o * g.channels + c) * k + ky) * k + kx];
                    for oy in 0..g.out_h {
                        let src = &xc[(oy + ky) * w + kx..][..ow];
                        axpy(wv, src, &mut yo[oy * ow..(oy + 1) * ow]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`direct_forward`] for one item.
fn direct_backward<T: Real>(
    x: &[T],
    weight: &[T],
    out_c: usize,
    g: &Window,
    dy: &[T],
    mut dw: Option<&mut [T]>,
    mut dx: Option<&mut [T]>,
) {
    let (k, w, ow) = (g.kernel, g.width, g.out_w);
    let plane = g.height * w;
    for o in 0..out_c {
        let dyo = &dy[o * g.cols()..(o + 1) * g.cols()];
        for c in 0..g.channels {
            for ky in 0..k {
                for kx in 0..k {
                    let wi = ((o * g.channels + c) * k + ky) * k + kx;
                    if let Some(dw) = dw.as_deref_mut() {
                        let xc = &x[c * plane..(c + 1) * plane];
                        let mut acc = T::zero();
                        for oy in 0..g.out_h {
                            acc = acc + dot(&xc[(oy + ky) * w + kx..][..ow], &dyo[oy * ow..(oy + 1) * ow]);
                        }
                        dw[wi] = dw[wi] + acc;
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let dxc = &mut dx[c * plane..(c + 1) * plane];
                        for oy in 0..g.out_h {
                            axpy(weight[wi], &dyo[oy * ow..(oy + 1) * ow], &mut dxc[(oy + ky) * w + kx..][..ow]);
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward. `weight` is `(out, C*k*k)`.
pub fn conv_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: Option<&[T]>, out_c: usize, g: &Window) -> Tensor<T> {
    let n = x.n();
    let mut y = Tensor::zeros([n, out_c, g.out_h, g.out_w]);
    let direct = use_direct(g, out_c);
    let mut cols = vec![T::zero(); if direct { 0 } else { g.rows() * g.cols() }];
    for i in 0..n {
        let yi = y.item_mut(i);
        if direct {
            direct_forward(x.item(i), weight, out_c, g, yi);
        } else {
            im2col(x.item(i), g, &mut cols);
            matmul(Mat::new(weight, out_c, g.rows()), Mat::new(&cols, g.rows(), g.cols()), T::zero(), yi);
        }
        if let Some(b) = bias {
            for (o, chunk) in yi.chunks_mut(g.cols()).enumerate() {
                for v in chunk {
                    *v = *v + b[o];
                }
            }
        }
    }
    y
}

/// Convolution adjoint. Accumulates into `dw`/`db` when given and returns `dx`
/// (left zero when `need_dx` is false).
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    out_c: usize,
    g: &Window,
    dy: &Tensor<T>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
    need_dx: bool,
) -> Tensor<T> {
    let n = x.n();
    let mut dx = Tensor::zeros(x.shape());
    if use_direct(g, out_c) {
        for i in 0..n {
            let dyi = dy.item(i);
            direct_backward(
                x.item(i),
                weight,
                out_c,
                g,
                dyi,
                dw.as_deref_mut(),
                if need_dx { Some(dx.item_mut(i)) } else { None },
            );
            if let Some(db) = db.as_deref_mut() {
                for (o, chunk) in dyi.chunks(g.cols()).enumerate() {
                    db[o] = db[o] + chunk.iter().copied().sum::<T>();
                }
            }
        }
        return dx;
    }
    let mut cols = vec![T::zero(); if dw.is_some() { g.rows() * g.cols() } else { 0 }];
    let mut dcols = vec![T::zero(); if need_dx { g.rows() * g.cols() } else { 0 }];
    for i in 0..n {
        let dyi = dy.item(i);
        if let Some(dw) = dw.as_deref_mut() {
            im2col(x.item(i), g, &mut cols);
            matmul(
                Mat::new(dyi, out_c, g.cols()),
                Mat::new(&cols, g.rows(), g.cols()).t(),
                T::one(),
                dw,
            );
        }
        if let Some(db) = db.as_deref_mut() {
            for (o, chunk) in dyi.chunks(g.cols()).enumerate() {
                db[o] = db[o] + chunk.iter().copied().sum::<T>();
            }
        }
        if need_dx {
            matmul(
                Mat::new(weight, out_c, g.rows()).t(),
                Mat::new(dyi, out_c, g.cols()),
                T::zero(),
                &mut dcols,
            );
            col2im(&dcols, g, dx.item_mut(i));
        }
    }
    dx
}

/// Transposed convolution forward.
///
/// `weight` is `(in, out*k*k)`; `g` describes the equivalent forward
/// convolution that maps the `(out, H', W')` result back to the input grid.
pub fn conv_t_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: Option<&[T]>, in_c: usize, g: &Window) -> Tensor<T> {
    let n = x.n();
    let out_c = g.channels;
    let mut y = Tensor::zeros([n, out_c, g.height, g.width]);
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    for i in 0..n {
        matmul(
            Mat::new(weight, in_c, g.rows()).t(),
            Mat::new(x.item(i), in_c, g.cols()),
            T::zero(),
            &mut cols,
        );
        let yi = y.item_mut(i);
        col2im(&cols, g, yi);
        if let Some(b) = bias {
            for (o, chunk) in yi.chunks_mut(g.height * g.width).enumerate() {
                for v in chunk {
                    *v = *v + b[o];
                }
            }
        }
    }
    y
}

pub fn conv_t_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    in_c: usize,
    g: &Window,
    dy: &Tensor<T>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) -> Tensor<T> {
    let n = x.n();
    let mut dx = Tensor::zeros(x.shape());
    let mut dcols = vec![T::zero(); g.rows() * g.cols()];
    let plane = g.height * g.width;
    for i in 0..n {
        let dyi = dy.item(i);
        im2col(dyi, g, &mut dcols);
        matmul(
            Mat::new(weight, in_c, g.rows()),
            Mat::new(&dcols, g.rows(), g.cols()),
            T::zero(),
            dx.item_mut(i),
        );
        if let Some(dw) = dw.as_deref_mut() {
            matmul(
                Mat::new(x.item(i), in_c, g.cols()),
                Mat::new(&dcols, g.rows(), g.cols()).t(),
                T::one(),
                dw,
            );
        }
        if let Some(db) = db.as_deref_mut() {
            for (o, chunk) in dyi.chunks(plane).enumerate() {
                db[o] = db[o] + chunk.iter().copied().sum::<T>();
            }
        }
    }
    dx
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

pub fn reflect_pad<T: Real>(x: &Tensor<T>, pad: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h + 2 * pad, w + 2 * pad);
    let p = pad as isize;
    let mut y = Tensor::zeros([n, c, ho, wo]);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut y.data_mut()[plane * ho * wo..(plane + 1) * ho * wo];
        for oy in 0..ho {
            let iy = reflect(oy as isize - p, h);
            for ox in 0..wo {
                dst[oy * wo + ox] = src[iy * w + reflect(ox as isize - p, w)];
            }
        }
    }
    y
}

pub fn reflect_pad_backward<T: Real>(dy: &Tensor<T>, in_shape: [usize; 4], pad: usize) -> Tensor<T> {
    let [n, c, h, w] = in_shape;
    let (ho, wo) = (h + 2 * pad, w + 2 * pad);
    let p = pad as isize;
    let mut dx = Tensor::zeros(in_shape);
    for plane in 0..n * c {
        let src = &dy.data()[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for oy in 0..ho {
            let iy = reflect(oy as isize - p, h);
            for ox in 0..wo {
                let o = iy * w + reflect(ox as isize - p, w);
                dst[o] = dst[o] + src[oy * wo + ox];
            }
        }
    }
    dx
}

/// Per-channel statistics of a batch-norm forward pass in training mode.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance (what normalization used).
    pub var: Vec<T>,
    /// Number of values per channel.
    pub count: usize,
}

/// Batch-normalizes with batch statistics; returns `(y, xhat, inv_std, stats)`.
pub fn batch_norm_train<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> (Tensor<T>, Tensor<T>, Vec<T>, BatchStats<T>) {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let count = n * plane;
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = 0.0f64;
        for i in 0..n {
            let base = (i * c + ch) * plane;
            s += x.data()[base..base + plane].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let m = s / count as f64;
        let mut q = 0.0f64;
        for i in 0..n {
            let base = (i * c + ch) * plane;
            q += x.data()[base..base + plane]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - m;
                    d * d
                })
                .sum::<f64>();
        }
        let v = q / count as f64;
        mean[ch] = T::lit(m);
        var[ch] = T::lit(v);
        inv_std[ch] = T::lit(1.0 / (v + eps).sqrt());
    }
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            let (m, is, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for k in base..base + plane {
                let xh = (x.data()[k] - m) * is;
                xhat.data_mut()[k] = xh;
                y.data_mut()[k] = g * xh + b;
            }
        }
    }
    (y, xhat, inv_std, BatchStats { mean, var, count })
}

pub fn batch_norm_eval<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> (Tensor<T>, Vec<T>) {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let inv_std: Vec<T> = running_var
        .iter()
        .map(|v| T::lit(1.0 / (v.as_f64() + eps).sqrt()))
        .collect();
    let mut y = Tensor::zeros(x.shape());
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            let scale = gamma[ch] * inv_std[ch];
            let shift = beta[ch] - running_mean[ch] * scale;
            for k in base..base + plane {
                y.data_mut()[k] = x.data()[k] * scale + shift;
            }
        }
    }
    (y, inv_std)
}

/// Adjoint of [`batch_norm_train`].
pub fn batch_norm_train_backward<T: Real>(
    dy: &Tensor<T>,
    xhat: &Tensor<T>,
    inv_std: &[T],
    gamma: &[T],
    mut dgamma: Option<&mut [T]>,
    mut dbeta: Option<&mut [T]>,
) -> Tensor<T> {
    let [n, c, h, w] = dy.shape();
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut dx = Tensor::zeros(dy.shape());
    for ch in 0..c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xh = 0.0f64;
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for k in base..base + plane {
                let d = dy.data()[k].as_f64();
                sum_dy += d;
                sum_dy_xh += d * xhat.data()[k].as_f64();
            }
        }
        if let Some(dg) = dgamma.as_deref_mut() {
            dg[ch] = dg[ch] + T::lit(sum_dy_xh);
        }
        if let Some(db) = dbeta.as_deref_mut() {
            db[ch] = db[ch] + T::lit(sum_dy);
        }
        let g = gamma[ch].as_f64() * inv_std[ch].as_f64();
        let mean_dy = sum_dy / count;
        let mean_dy_xh = sum_dy_xh / count;
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for k in base..base + plane {
                let v = g * (dy.data()[k].as_f64() - mean_dy - xhat.data()[k].as_f64() * mean_dy_xh);
                dx.data_mut()[k] = T::lit(v);
            }
        }
    }
    dx
}
