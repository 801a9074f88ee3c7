//! A small sequential network engine with explicit tapes.
//!
//! A [`Network`] is a list of [`Op`]s plus a flat [`ParamSet`]. A traced
//! forward pass records a [`Tape`]; [`Network::backward`] replays it in
//! reverse, accumulating parameter gradients into [`Grads`] and returning
//! the gradient with respect to the input. The same network can be traced
//! several times in one step; every trace owns its own tape.

pub mod kernels;

use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;
use kernels::{BatchStats, Window};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Running statistics; saved with the model but not trained.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub kind: ParamKind,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<NamedTensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<T>, kind: ParamKind) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.push(NamedTensor { name, shape, data, kind });
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[NamedTensor<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.entries
    }

    #[inline]
    pub fn get(&self, id: usize) -> &[T] {
        &self.entries[id].data
    }

    /// Number of trainable scalars.
    pub fn count_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.data.len())
            .sum()
    }

    /// Hash of every value's bit pattern, for cheap equality checks.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for e in &self.entries {
            e.name.hash(&mut h);
            for v in &e.data {
                v.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data: e.data.iter().map(|v| U::lit(v.as_f64())).collect(),
                    kind: e.kind,
                })
                .collect(),
        }
    }
}

/// Gradient buffers parallel to a [`ParamSet`]; buffers get empty vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    pub bufs: Vec<Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        Grads {
            bufs: params
                .entries()
                .iter()
                .map(|e| match e.kind {
                    ParamKind::Trainable => vec![T::zero(); e.data.len()],
                    ParamKind::Buffer => Vec::new(),
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.bufs.iter().flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.bufs.iter().flatten().all(|v| *v == T::zero())
    }
}

/// Whether batch-norm layers use batch or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Conv {
        weight: usize,
        bias: Option<usize>,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Transposed convolution; output size `(h-1)*stride - 2*pad + kernel + out_pad`.
    ConvTranspose {
        weight: usize,
        bias: Option<usize>,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
    },
    BatchNorm {
        gamma: usize,
        beta: usize,
        running_mean: usize,
        running_var: usize,
    },
    Relu,
    LeakyRelu(f64),
    ReflectPad(usize),
    /// `x + body(x)`.
    Residual(Vec<Op>),
    GlobalAvgPool,
}

#[derive(Clone, Debug)]
enum Cache<T> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    BnTrain { xhat: Tensor<T>, inv_std: Vec<T> },
    BnEval { x: Tensor<T>, inv_std: Vec<T> },
    Shape([usize; 4]),
    Residual(Vec<Cache<T>>),
}

#[derive(Clone, Debug)]
struct StatUpdate<T> {
    running_mean: usize,
    running_var: usize,
    stats: BatchStats<T>,
}

/// Record of one traced forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
    stats: Vec<StatUpdate<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub ops: Vec<Op>,
    pub params: ParamSet<T>,
}

impl Op {
    fn has_params(&self) -> bool {
        match self {
            Op::Conv { .. } | Op::ConvTranspose { .. } | Op::BatchNorm { .. } => true,
            Op::Residual(body) => body.iter().any(Op::has_params),
            _ => false,
        }
    }
}

fn window_for(x: &Tensor<impl Real>, kernel: usize, stride: usize, pad: usize) -> Result<Window> {
    Window::conv(x.c(), x.h(), x.w(), kernel, stride, pad).ok_or_else(|| {
        Error::dim(
            "height",
            format!("{}x{} input is too small for a {kernel}x{kernel} window", x.h(), x.w()),
        )
    })
}

impl<T: Real> Network<T> {
    pub fn count_parameters(&self) -> usize {
        self.params.count_trainable()
    }

    /// Forward pass without recording.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut stats = Vec::new();
        run_forward(&self.ops, &self.params, x.clone(), mode, None, &mut stats)
    }

    /// Forward pass returning the activation after each segment of ops;
    /// `ends` are exclusive op indices in increasing order.
    pub fn forward_segments(&self, x: &Tensor<T>, ends: &[usize], mode: Mode) -> Result<Vec<Tensor<T>>> {
        let mut stats = Vec::new();
        let mut cur = x.clone();
        let mut start = 0;
        let mut outs = Vec::with_capacity(ends.len());
        for &end in ends {
            cur = run_forward(&self.ops[start..end], &self.params, cur, mode, None, &mut stats)?;
            outs.push(cur.clone());
            start = end;
        }
        Ok(outs)
    }

    /// Forward pass recording everything [`Network::backward`] needs.
    pub fn forward_traced(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Tape<T>)> {
        let mut tape = Tape::default();
        let y = run_forward(&self.ops, &self.params, x.clone(), mode, Some(&mut tape.caches), &mut tape.stats)?;
        Ok((y, tape))
    }

    /// Backpropagates `dy` through a traced pass. Parameter gradients are
    /// accumulated into `grads` when given; the input gradient is returned.
    pub fn backward(&self, tape: &Tape<T>, dy: Tensor<T>, grads: Option<&mut Grads<T>>) -> Tensor<T> {
        let mut grads = grads;
        run_backward(&self.ops, &self.params, &tape.caches, dy, &mut grads, true)
    }

    /// Like [`Network::backward`] but only accumulates parameter gradients,
    /// skipping work that only feeds the input gradient.
    pub fn backward_params(&self, tape: &Tape<T>, dy: Tensor<T>, grads: &mut Grads<T>) {
        run_backward(&self.ops, &self.params, &tape.caches, dy, &mut Some(grads), false);
    }

    /// Folds the batch statistics of a training-mode trace into the running averages.
    pub fn commit_stats(&mut self, tape: &Tape<T>) {
        for u in &tape.stats {
            let m = BN_MOMENTUM;
            let unbias = if u.stats.count > 1 {
                u.stats.count as f64 / (u.stats.count - 1) as f64
            } else {
                1.0
            };
            let entries = self.params.entries_mut();
            for (rm, bm) in entries[u.running_mean].data.iter_mut().zip(&u.stats.mean) {
                *rm = T::lit((1.0 - m) * rm.as_f64() + m * bm.as_f64());
            }
            for (rv, bv) in entries[u.running_var].data.iter_mut().zip(&u.stats.var) {
                *rv = T::lit((1.0 - m) * rv.as_f64() + m * bv.as_f64() * unbias);
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            ops: self.ops.clone(),
            params: self.params.cast(),
        }
    }
}

fn run_forward<T: Real>(
    ops: &[Op],
    params: &ParamSet<T>,
    mut x: Tensor<T>,
    mode: Mode,
    mut caches: Option<&mut Vec<Cache<T>>>,
    stats: &mut Vec<StatUpdate<T>>,
) -> Result<Tensor<T>> {
    for op in ops {
        let (y, cache) = match *op {
            Op::Conv {
                weight,
                bias,
                in_c,
                out_c,
                kernel,
                stride,
                pad,
            } => {
                if x.c() != in_c {
                    return Err(Error::dim("channels", format!("conv expects {in_c} input channels, got {}", x.c())));
                }
                let g = window_for(&x, kernel, stride, pad)?;
                let y = kernels::conv_forward(&x, params.get(weight), bias.map(|b| params.get(b)), out_c, &g);
                (y, Cache::Input(x))
            }
            Op::ConvTranspose {
                weight,
                bias,
                in_c,
                out_c,
                kernel,
                stride,
                pad,
                out_pad,
            } => {
                if x.c() != in_c {
                    return Err(Error::dim("channels", format!("transposed conv expects {in_c} input channels, got {}", x.c())));
                }
                let ho = (x.h() - 1) * stride + kernel + out_pad - 2 * pad;
                let wo = (x.w() - 1) * stride + kernel + out_pad - 2 * pad;
                let g = Window::conv(out_c, ho, wo, kernel, stride, pad)
                    .filter(|g| g.out_h == x.h() && g.out_w == x.w())
                    .ok_or_else(|| Error::dim("height", "transposed conv geometry does not invert"))?;
                let y = kernels::conv_t_forward(&x, params.get(weight), bias.map(|b| params.get(b)), in_c, &g);
                (y, Cache::Input(x))
            }
            Op::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => match mode {
                Mode::Train => {
                    let (y, xhat, inv_std, st) = kernels::batch_norm_train(&x, params.get(gamma), params.get(beta), BN_EPS);
                    stats.push(StatUpdate {
                        running_mean,
                        running_var,
                        stats: st,
                    });
                    (y, Cache::BnTrain { xhat, inv_std })
                }
                Mode::Eval => {
                    let (y, inv_std) = kernels::batch_norm_eval(
                        &x,
                        params.get(gamma),
                        params.get(beta),
                        params.get(running_mean),
                        params.get(running_var),
                        BN_EPS,
                    );
                    (y, Cache::BnEval { x, inv_std })
                }
            },
            Op::Relu => {
                let y = x.map(|v| v.max(T::zero()));
                (y.clone(), Cache::Output(y))
            }
            Op::LeakyRelu(slope) => {
                let s = T::lit(slope);
                let y = x.map(|v| if v > T::zero() { v } else { v * s });
                (y, Cache::Input(x))
            }
            Op::ReflectPad(p) => {
                if p >= x.h() {
                    return Err(Error::dim("height", format!("reflection pad {p} needs height > {p}, got {}", x.h())));
                }
                if p >= x.w() {
                    return Err(Error::dim("width", format!("reflection pad {p} needs width > {p}, got {}", x.w())));
                }
                (kernels::reflect_pad(&x, p), Cache::Shape(x.shape()))
            }
            Op::Residual(ref body) => {
                let mut sub = caches.as_ref().map(|_| Vec::new());
                let mut y = run_forward(body, params, x.clone(), mode, sub.as_mut(), stats)?;
                x.expect_shape(y.shape(), "residual branch")?;
                y.add_assign(&x);
                (y, Cache::Residual(sub.unwrap_or_default()))
            }
            Op::GlobalAvgPool => {
                let [n, c, h, w] = x.shape();
                let plane = (h * w) as f64;
                let data = x
                    .data()
                    .chunks(h * w)
                    .map(|p| T::lit(p.iter().map(|v| v.as_f64()).sum::<f64>() / plane))
                    .collect();
                (Tensor::from_vec([n, c, 1, 1], data)?, Cache::Shape(x.shape()))
            }
        };
        if let Some(c) = caches.as_deref_mut() {
            c.push(cache);
        }
        x = y;
    }
    Ok(x)
}

fn grad_slot<'a, T>(grads: &'a mut Option<&mut Grads<T>>, id: usize) -> Option<&'a mut [T]> {
    grads.as_deref_mut().map(|g| g.bufs[id].as_mut_slice())
}

fn run_backward<T: Real>(
    ops: &[Op],
    params: &ParamSet<T>,
    caches: &[Cache<T>],
    mut dy: Tensor<T>,
    grads: &mut Option<&mut Grads<T>>,
    need_dx: bool,
) -> Tensor<T> {
    debug_assert_eq!(ops.len(), caches.len());
    // ops before the first parameterized one need no gradient when the input's is unused
    let first = if need_dx {
        0
    } else {
        ops.iter().position(Op::has_params).unwrap_or(ops.len())
    };
    for (i, (op, cache)) in ops.iter().zip(caches).enumerate().rev() {
        if i < first {
            break;
        }
        let dx_wanted = i > first || need_dx;
        dy = match (op, cache) {
            (
                &Op::Conv {
                    weight,
                    bias,
                    out_c,
                    kernel,
                    stride,
                    pad,
                    ..
                },
                Cache::Input(x),
            ) => {
                let g = Window::conv(x.c(), x.h(), x.w(), kernel, stride, pad).expect("validated in forward");
                let mut db = bias.and_then(|b| grad_slot(grads, b).map(|s| s.to_vec()));
                let dx = kernels::conv_backward(
                    x,
                    params.get(weight),
                    out_c,
                    &g,
                    &dy,
                    grad_slot(grads, weight),
                    db.as_deref_mut(),
                    dx_wanted,
                );
                if let (Some(b), Some(db)) = (bias, db) {
                    if let Some(s) = grad_slot(grads, b) {
                        s.copy_from_slice(&db);
                    }
                }
                dx
            }
            (
                &Op::ConvTranspose {
                    weight,
                    bias,
                    in_c,
                    out_c,
                    kernel,
                    stride,
                    pad,
                    ..
                },
                Cache::Input(x),
            ) => {
                let g = Window::conv(out_c, dy.h(), dy.w(), kernel, stride, pad).expect("validated in forward");
                let mut db = bias.and_then(|b| grad_slot(grads, b).map(|s| s.to_vec()));
                let dx = kernels::conv_t_backward(x, params.get(weight), in_c, &g, &dy, grad_slot(grads, weight), db.as_deref_mut());
                if let (Some(b), Some(db)) = (bias, db) {
                    if let Some(s) = grad_slot(grads, b) {
                        s.copy_from_slice(&db);
                    }
                }
                dx
            }
            (&Op::BatchNorm { gamma, beta, .. }, Cache::BnTrain { xhat, inv_std }) => {
                let mut dbeta = grad_slot(grads, beta).map(|s| s.to_vec());
                let dx = kernels::batch_norm_train_backward(
                    &dy,
                    xhat,
                    inv_std,
                    params.get(gamma),
                    grad_slot(grads, gamma),
                    dbeta.as_deref_mut(),
                );
                if let (Some(db), Some(s)) = (dbeta, grad_slot(grads, beta)) {
                    s.copy_from_slice(&db);
                }
                dx
            }
            (
                &Op::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    ..
                },
                Cache::BnEval { x, inv_std },
            ) => {
                // y = gamma * (x - mu) * s + beta with frozen mu and s
                let [n, c, h, w] = dy.shape();
                let plane = h * w;
                let g = params.get(gamma);
                let mu = params.get(running_mean);
                let mut dx = Tensor::zeros(dy.shape());
                let mut dg = vec![T::zero(); c];
                let mut dbt = vec![T::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * plane;
                        let k = g[ch] * inv_std[ch];
                        for o in base..base + plane {
                            let d = dy.data()[o];
                            dx.data_mut()[o] = d * k;
                            dg[ch] = dg[ch] + d * (x.data()[o] - mu[ch]) * inv_std[ch];
                            dbt[ch] = dbt[ch] + d;
                        }
                    }
                }
                for (id, acc) in [(gamma, dg), (beta, dbt)] {
                    if let Some(s) = grad_slot(grads, id) {
                        for (a, b) in s.iter_mut().zip(&acc) {
                            *a = *a + *b;
                        }
                    }
                }
                dx
            }
            (Op::Relu, Cache::Output(y)) => dy
                .zip_map(y, |d, v| if v > T::zero() { d } else { T::zero() })
                .expect("same shape"),
            (&Op::LeakyRelu(slope), Cache::Input(x)) => {
                let s = T::lit(slope);
                dy.zip_map(x, |d, v| if v > T::zero() { d } else { d * s }).expect("same shape")
            }
            (&Op::ReflectPad(p), Cache::Shape(shape)) => kernels::reflect_pad_backward(&dy, *shape, p),
            (Op::Residual(body), Cache::Residual(sub)) => {
                let mut dx = run_backward(body, params, sub, dy.clone(), grads, true);
                dx.add_assign(&dy);
                dx
            }
            (Op::GlobalAvgPool, Cache::Shape(shape)) => {
                let [_, _, h, w] = *shape;
                let inv = T::lit(1.0 / (h * w) as f64);
                let mut dx = Tensor::zeros(*shape);
                for (plane, &d) in dx.data_mut().chunks_mut(h * w).zip(dy.data()) {
                    plane.fill(d * inv);
                }
                dx
            }
            _ => unreachable!("tape does not match network"),
        };
    }
    dy
}

/// Allocates parameters with deterministic initialization while a network is assembled.
pub struct Builder<'r, T, R> {
    params: ParamSet<T>,
    rng: &'r mut R,
    normal: Normal<f64>,
}

impl<'r, T: Real, R: Rng> Builder<'r, T, R> {
    pub fn new(rng: &'r mut R) -> Self {
        Builder {
            params: ParamSet::default(),
            rng,
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
        }
    }

    fn gaussian(&mut self, n: usize, mean: f64) -> Vec<T> {
        (0..n).map(|_| T::lit(mean + self.normal.sample(self.rng))).collect()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(&mut self, name: &str, in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize, bias: bool) -> Op {
        let data = self.gaussian(out_c * in_c * kernel * kernel, 0.0);
        let weight = self.params.push(
            format!("{name}.weight"),
            vec![out_c, in_c, kernel, kernel],
            data,
            ParamKind::Trainable,
        );
        let bias = bias.then(|| {
            self.params
                .push(format!("{name}.bias"), vec![out_c], vec![T::zero(); out_c], ParamKind::Trainable)
        });
        Op::Conv {
            weight,
            bias,
            in_c,
            out_c,
            kernel,
            stride,
            pad,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv_transpose(
        &mut self,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
        bias: bool,
    ) -> Op {
        let data = self.gaussian(in_c * out_c * kernel * kernel, 0.0);
        let weight = self.params.push(
            format!("{name}.weight"),
            vec![in_c, out_c, kernel, kernel],
            data,
            ParamKind::Trainable,
        );
        let bias = bias.then(|| {
            self.params
                .push(format!("{name}.bias"), vec![out_c], vec![T::zero(); out_c], ParamKind::Trainable)
        });
        Op::ConvTranspose {
            weight,
            bias,
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            out_pad,
        }
    }

    pub fn batch_norm(&mut self, name: &str, c: usize) -> Op {
        let g = self.gaussian(c, 1.0);
        let gamma = self.params.push(format!("{name}.weight"), vec![c], g, ParamKind::Trainable);
        let beta = self
            .params
            .push(format!("{name}.bias"), vec![c], vec![T::zero(); c], ParamKind::Trainable);
        let running_mean = self
            .params
            .push(format!("{name}.running_mean"), vec![c], vec![T::zero(); c], ParamKind::Buffer);
        let running_var = self
            .params
            .push(format!("{name}.running_var"), vec![c], vec![T::one(); c], ParamKind::Buffer);
        Op::BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
        }
    }

    pub fn finish(self, ops: Vec<Op>) -> Network<T> {
        Network {
            ops,
            params: self.params,
        }
    }
}
