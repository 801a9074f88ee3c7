//! Training objectives and their analytic gradients.
//!
//! Every loss has a value function and a matching `*_grad` function so the
//! trainer can backpropagate without an autodiff graph. L1 terms are means
//! over all elements; the total-variation term is a plain sum.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::real::Real;
use crate::tensor::Tensor;
use crate::types::{AttentionMask, ImageBatch};

/// Functional form of the adversarial objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GanLossForm {
    NegLogLikelihood,
    #[default]
    LeastSquares,
}

impl fmt::Display for GanLossForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GanLossForm::NegLogLikelihood => "neg_log_likelihood",
            GanLossForm::LeastSquares => "least_squares",
        })
    }
}

impl FromStr for GanLossForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "neg_log_likelihood" | "nll" => Ok(GanLossForm::NegLogLikelihood),
            "least_squares" | "lsgan" => Ok(GanLossForm::LeastSquares),
            _ => Err(format!("unknown GAN loss form `{s}`")),
        }
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
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

fn check_scores<T: Real>(scores: &[T], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::contract(format!("{what} scores are empty")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::contract(format!("{what} scores contain non-finite values")));
    }
    Ok(())
}

fn mean_of<T: Real>(v: &[T], f: impl Fn(f64) -> f64) -> f64 {
    v.iter().map(|s| f(s.as_f64())).sum::<f64>() / v.len() as f64
}

/// Discriminator objective (before the trainer's halving).
///
/// Least squares: `½E[(real−1)²] + ½E[fake²]`.
/// Log form: `−E[log σ(real)] − E[log(1−σ(fake))]`.
pub fn adversarial_loss_d<T: Real>(real: &[T], fake: &[T], form: GanLossForm) -> Result<T> {
    check_scores(real, "real")?;
    check_scores(fake, "fake")?;
    let v = match form {
        GanLossForm::LeastSquares => {
            0.5 * mean_of(real, |s| (s - 1.0) * (s - 1.0)) + 0.5 * mean_of(fake, |s| s * s)
        }
        GanLossForm::NegLogLikelihood => mean_of(real, |s| softplus(-s)) + mean_of(fake, softplus),
    };
    Ok(T::lit(v))
}

/// Gradients of [`adversarial_loss_d`] with respect to `(real, fake)`.
pub fn adversarial_loss_d_grad<T: Real>(real: &[T], fake: &[T], form: GanLossForm) -> Result<(Vec<T>, Vec<T>)> {
    check_scores(real, "real")?;
    check_scores(fake, "fake")?;
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    Ok(match form {
        GanLossForm::LeastSquares => (
            real.iter().map(|s| T::lit((s.as_f64() - 1.0) / nr)).collect(),
            fake.iter().map(|s| T::lit(s.as_f64() / nf)).collect(),
        ),
        GanLossForm::NegLogLikelihood => (
            real.iter().map(|s| T::lit((sigmoid(s.as_f64()) - 1.0) / nr)).collect(),
            fake.iter().map(|s| T::lit(sigmoid(s.as_f64()) / nf)).collect(),
        ),
    })
}

/// Generator objective: `½E[(fake−1)²]`, or the non-saturating `−E[log σ(fake)]`.
pub fn adversarial_loss_g<T: Real>(fake: &[T], form: GanLossForm) -> Result<T> {
    check_scores(fake, "fake")?;
    let v = match form {
        GanLossForm::LeastSquares => 0.5 * mean_of(fake, |s| (s - 1.0) * (s - 1.0)),
        GanLossForm::NegLogLikelihood => mean_of(fake, |s| softplus(-s)),
    };
    Ok(T::lit(v))
}

pub fn adversarial_loss_g_grad<T: Real>(fake: &[T], form: GanLossForm) -> Result<Vec<T>> {
    check_scores(fake, "fake")?;
    let n = fake.len() as f64;
    Ok(match form {
        GanLossForm::LeastSquares => fake.iter().map(|s| T::lit((s.as_f64() - 1.0) / n)).collect(),
        GanLossForm::NegLogLikelihood => fake.iter().map(|s| T::lit((sigmoid(s.as_f64()) - 1.0) / n)).collect(),
    })
}

/// Attention-guided adversarial losses on `[mask, image]` pairs.
///
/// Returns `(d_loss, g_loss)`: the discriminator's target on the real pair
/// `[mask, real_img]` against the fake pair `[mask, fake_img]`, and the
/// generator's target on the fake pair.
pub fn attention_adversarial_losses<T: Real>(
    mask: &AttentionMask<T>,
    real_img: &ImageBatch<T>,
    fake_img: &ImageBatch<T>,
    disc: &Discriminator<T>,
    form: GanLossForm,
    mode: Mode,
) -> Result<(T, T)> {
    let real = disc.discriminate_attended(mask, real_img, mode)?;
    let fake = disc.discriminate_attended(mask, fake_img, mode)?;
    Ok((adversarial_loss_d(&real, &fake, form)?, adversarial_loss_g(&fake, form)?))
}

/// Mean absolute difference over all elements.
pub fn l1_mean<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    a.expect_shape(b.shape(), "L1 operands")?;
    if a.is_empty() {
        return Err(Error::contract("L1 of empty tensors"));
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
        .sum();
    Ok(T::lit(s / a.len() as f64))
}

/// Gradient of [`l1_mean`] with respect to `a` (the gradient for `b` is its negation).
pub fn l1_mean_grad<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let inv = T::lit(1.0 / a.len() as f64);
    a.zip_map(b, |x, y| {
        if x > y {
            inv
        } else if x < y {
            -inv
        } else {
            T::zero()
        }
    })
}

/// `E|cycled_x − x|₁ + E|cycled_y − y|₁`.
pub fn cycle_loss<T: Real>(x: &Tensor<T>, cycled_x: &Tensor<T>, y: &Tensor<T>, cycled_y: &Tensor<T>) -> Result<T> {
    Ok(l1_mean(cycled_x, x)? + l1_mean(cycled_y, y)?)
}

/// Gradients of [`cycle_loss`] for each argument, in argument order.
pub fn cycle_loss_grad<T: Real>(
    x: &Tensor<T>,
    cycled_x: &Tensor<T>,
    y: &Tensor<T>,
    cycled_y: &Tensor<T>,
) -> Result<[Tensor<T>; 4]> {
    let dcx = l1_mean_grad(cycled_x, x)?;
    let dcy = l1_mean_grad(cycled_y, y)?;
    Ok([dcx.scale(-T::one()), dcx, dcy.scale(-T::one()), dcy])
}

/// `E|G_xy(x) − x|₁ + E|G_yx(y) − y|₁`, measured against each generator's own input.
pub fn pixel_loss<T: Real>(x: &Tensor<T>, gen_y_from_x: &Tensor<T>, y: &Tensor<T>, gen_x_from_y: &Tensor<T>) -> Result<T> {
    Ok(l1_mean(gen_y_from_x, x)? + l1_mean(gen_x_from_y, y)?)
}

pub fn pixel_loss_grad<T: Real>(
    x: &Tensor<T>,
    gen_y_from_x: &Tensor<T>,
    y: &Tensor<T>,
    gen_x_from_y: &Tensor<T>,
) -> Result<[Tensor<T>; 4]> {
    cycle_loss_grad(x, gen_y_from_x, y, gen_x_from_y)
}

/// Anisotropic total variation, summed over batch and channels.
///
/// Differences whose neighbour would fall outside the plane are skipped.
pub fn tv_loss<T: Real>(mask: &Tensor<T>) -> T {
    let [_, _, h, w] = mask.shape();
    let mut s = 0.0f64;
    for plane in mask.data().chunks(h * w) {
        for yy in 0..h {
            for xx in 0..w {
                let v = plane[yy * w + xx].as_f64();
                if xx + 1 < w {
                    s += (plane[yy * w + xx + 1].as_f64() - v).abs();
                }
                if yy + 1 < h {
                    s += (plane[(yy + 1) * w + xx].as_f64() - v).abs();
                }
            }
        }
    }
    T::lit(s)
}

pub fn tv_loss_grad<T: Real>(mask: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = mask.shape();
    let mut g = Tensor::zeros(mask.shape());
    let sign = |d: T| {
        if d > T::zero() {
            T::one()
        } else if d < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    };
    for (plane, gp) in mask.data().chunks(h * w).zip(g.data_mut().chunks_mut(h * w)) {
        for yy in 0..h {
            for xx in 0..w {
                let i = yy * w + xx;
                if xx + 1 < w {
                    let s = sign(plane[i + 1] - plane[i]);
                    gp[i + 1] = gp[i + 1] + s;
                    gp[i] = gp[i] - s;
                }
                if yy + 1 < h {
                    let j = i + w;
                    let s = sign(plane[j] - plane[i]);
                    gp[j] = gp[j] + s;
                    gp[i] = gp[i] - s;
                }
            }
        }
    }
    g
}

/// Scalar losses of one training step.
///
/// The first eight fields are the generator-side components combined into
/// `total`; the `d_*` fields are the (already halved) discriminator losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub gan_xy: f64,
    pub gan_yx: f64,
    pub agan_xy: f64,
    pub agan_yx: f64,
    pub cycle: f64,
    pub pixel: f64,
    pub tv_x: f64,
    pub tv_y: f64,
    pub total: f64,
    pub d_x: f64,
    pub d_y: f64,
    pub d_xa: f64,
    pub d_ya: f64,
}

/// Names of the objective components, in [`LossReport::components`] order.
pub const COMPONENTS: [&str; 8] = ["gan_xy", "gan_yx", "agan_xy", "agan_yx", "cycle", "pixel", "tv_x", "tv_y"];

impl LossReport {
    pub fn components(&self) -> [f64; 8] {
        [
            self.gan_xy,
            self.gan_yx,
            self.agan_xy,
            self.agan_yx,
            self.cycle,
            self.pixel,
            self.tv_x,
            self.tv_y,
        ]
    }

    pub fn from_components(c: [f64; 8]) -> Self {
        LossReport {
            gan_xy: c[0],
            gan_yx: c[1],
            agan_xy: c[2],
            agan_yx: c[3],
            cycle: c[4],
            pixel: c[5],
            tv_x: c[6],
            tv_y: c[7],
            ..Default::default()
        }
    }

    /// Each component's weighted contribution to the total.
    pub fn contributions(&self, cfg: &TrainConfig, r: f64) -> Result<[(&'static str, f64); 8]> {
        let k = objective_coefficients(cfg, r)?;
        let c = self.components();
        Ok(std::array::from_fn(|i| (COMPONENTS[i], k[i] * c[i])))
    }

    /// Element-wise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        if reports.is_empty() {
            return LossReport::default();
        }
        let n = reports.len() as f64;
        let s = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        LossReport {
            gan_xy: s(|r| r.gan_xy),
            gan_yx: s(|r| r.gan_yx),
            agan_xy: s(|r| r.agan_xy),
            agan_yx: s(|r| r.agan_yx),
            cycle: s(|r| r.cycle),
            pixel: s(|r| r.pixel),
            tv_x: s(|r| r.tv_x),
            tv_y: s(|r| r.tv_y),
            total: s(|r| r.total),
            d_x: s(|r| r.d_x),
            d_y: s(|r| r.d_y),
            d_xa: s(|r| r.d_xa),
            d_ya: s(|r| r.d_ya),
        }
    }

    /// Name of the first non-finite field, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        let fields = [
            ("gan_xy", self.gan_xy),
            ("gan_yx", self.gan_yx),
            ("agan_xy", self.agan_xy),
            ("agan_yx", self.agan_yx),
            ("cycle", self.cycle),
            ("pixel", self.pixel),
            ("tv_x", self.tv_x),
            ("tv_y", self.tv_y),
            ("total", self.total),
            ("d_x", self.d_x),
            ("d_y", self.d_y),
            ("d_xa", self.d_xa),
            ("d_ya", self.d_ya),
        ];
        fields.iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| *n)
    }
}

/// Weights of each component in the curriculum objective, in
/// [`COMPONENTS`] order. This is also the gradient of [`full_objective`].
pub fn objective_coefficients(cfg: &TrainConfig, r: f64) -> Result<[f64; 8]> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::contract(format!("curriculum weight r must lie in [0, 1], got {r}")));
    }
    let adv = (1.0 - r) * cfg.lambda_gan;
    let att = if cfg.attention_discriminators { adv } else { 0.0 };
    let tv = (1.0 - r) * cfg.lambda_tv;
    Ok([
        adv,
        adv,
        att,
        att,
        r * cfg.lambda_cycle,
        r * cfg.lambda_pixel,
        tv,
        tv,
    ])
}

/// Curriculum objective
/// `r·[λc·cycle + λp·pixel] + (1−r)·[λg·Σ adversarial + λtv·(tv_x + tv_y)]`.
pub fn full_objective(components: &LossReport, cfg: &TrainConfig, r: f64) -> Result<f64> {
    objective_coefficients(cfg, r)?;
    let c = components.components();
    if let Some(i) = c.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { term: COMPONENTS[i] });
    }
    let recon = cfg.lambda_cycle * components.cycle + cfg.lambda_pixel * components.pixel;
    let mut adv = components.gan_xy + components.gan_yx;
    if cfg.attention_discriminators {
        adv += components.agan_xy + components.agan_yx;
    }
    let rest = cfg.lambda_gan * adv + cfg.lambda_tv * (components.tv_x + components.tv_y);
    Ok(r * recon + (1.0 - r) * rest)
}
