//! Alternating generator / discriminator optimization.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::checkpoint;
use crate::config::TrainConfig;
use crate::data::UnpairedDataset;
use crate::discriminator::{attended_input, Discriminator, DiscriminatorSpec};
use crate::error::{Error, Result};
use crate::generator::{GenTrace, Generator, GeneratorSpec};
use crate::losses::{self, objective_coefficients, GanLossForm, LossReport};
use crate::nn::{Grads, Mode, ParamSet};
use crate::optim::Adam;
use crate::pool::ImagePool;
use crate::seed::{seed_all, Purpose};
use crate::tensor::Tensor;
use crate::types::{AttentionMask, Domain, ImageBatch};

/// Network names, in checkpoint and initialization order.
pub const GROUPS: [&str; 6] = ["g_xy", "g_yx", "d_x", "d_y", "d_xa", "d_ya"];

/// Everything needed to continue training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    /// Global step counter.
    pub step: u64,
    /// Steps already taken inside `epoch`.
    pub step_in_epoch: usize,
    pub g_xy: Generator<f32>,
    pub g_yx: Generator<f32>,
    pub d_x: Discriminator<f32>,
    pub d_y: Discriminator<f32>,
    pub d_xa: Option<Discriminator<f32>>,
    pub d_ya: Option<Discriminator<f32>>,
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
    /// History of generated Y images (with their masks).
    pub pool_y: ImagePool<f32>,
    pub pool_x: ImagePool<f32>,
    pub r: f64,
    pub lr: f64,
}

impl TrainState {
    /// Freshly initialized networks for `cfg`.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let streams = seed_all(cfg.seed);
        let init = |i: u64| streams.stream(Purpose::Init, i);
        let gspec = GeneratorSpec::standard(cfg.channel_scale, cfg.attention_generator);
        let g_xy = Generator::new(gspec.clone(), &mut init(0))?;
        let g_yx = Generator::new(gspec, &mut init(1))?;
        let vanilla = DiscriminatorSpec::standard(3, cfg.channel_scale, cfg.first_block_norm);
        let d_x = Discriminator::new(vanilla.clone(), &mut init(2))?;
        let d_y = Discriminator::new(vanilla, &mut init(3))?;
        let (d_xa, d_ya) = if cfg.attention_discriminators {
            let att = DiscriminatorSpec::standard(4, cfg.channel_scale, cfg.first_block_norm);
            (
                Some(Discriminator::new(att.clone(), &mut init(4))?),
                Some(Discriminator::new(att, &mut init(5))?),
            )
        } else {
            (None, None)
        };
        let opt_g = Adam::new(cfg.adam_beta1, cfg.adam_beta2, &[&g_xy.network().params, &g_yx.network().params]);
        let mut state = TrainState {
            epoch: 0,
            step: 0,
            step_in_epoch: 0,
            g_xy,
            g_yx,
            d_x,
            d_y,
            d_xa,
            d_ya,
            opt_g,
            opt_d: Adam::new(cfg.adam_beta1, cfg.adam_beta2, &[]),
            pool_y: ImagePool::new(cfg.buffer_size, cfg.pool_swap_prob, streams, Purpose::PoolY),
            pool_x: ImagePool::new(cfg.buffer_size, cfg.pool_swap_prob, streams, Purpose::PoolX),
            r: cfg.r_at(0),
            lr: cfg.lr_at(0),
        };
        state.opt_d = Adam::new(cfg.adam_beta1, cfg.adam_beta2, &state.disc_params());
        Ok(state)
    }

    pub fn disc_params(&self) -> Vec<&ParamSet<f32>> {
        let mut v = vec![&self.d_x.network().params, &self.d_y.network().params];
        for d in [&self.d_xa, &self.d_ya].into_iter().flatten() {
            v.push(&d.network().params);
        }
        v
    }

    fn disc_params_mut(&mut self) -> Vec<&mut ParamSet<f32>> {
        let mut v = vec![&mut self.d_x.network_mut().params, &mut self.d_y.network_mut().params];
        for d in [&mut self.d_xa, &mut self.d_ya].into_iter().flatten() {
            v.push(&mut d.network_mut().params);
        }
        v
    }

    /// Hash of both generators' parameters and buffers.
    pub fn generator_fingerprint(&self) -> u64 {
        self.g_xy.network().params.fingerprint() ^ self.g_yx.network().params.fingerprint().rotate_left(1)
    }

    /// Hash of every discriminator's parameters and buffers.
    pub fn discriminator_fingerprint(&self) -> u64 {
        self.disc_params()
            .iter()
            .enumerate()
            .fold(0u64, |h, (i, p)| h ^ p.fingerprint().rotate_left(i as u32 + 1))
    }

    /// Parameter counts `(generators only, full system)`.
    pub fn parameter_counts(&self) -> (usize, usize) {
        let g = self.g_xy.count_parameters() + self.g_yx.count_parameters();
        let d: usize = self.disc_params().iter().map(|p| p.count_trainable()).sum();
        (g, g + d)
    }

    /// Sets `r` and `lr` for the current epoch.
    pub fn apply_schedule(&mut self, cfg: &TrainConfig) {
        self.r = cfg.r_at(self.epoch);
        self.lr = cfg.lr_at(self.epoch);
    }
}

fn finite(v: f64, term: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term })
    }
}

fn scaled(v: &[f32], k: f64) -> Vec<f32> {
    v.iter().map(|&s| (f64::from(s) * k) as f32).collect()
}

/// Generator-side adversarial term against one discriminator: returns the
/// loss and the gradient on the discriminator input (already weighted).
fn adversarial_g_term(
    disc: &Discriminator<f32>,
    input: &Tensor<f32>,
    form: GanLossForm,
    weight: f64,
) -> Result<(f64, Option<Tensor<f32>>)> {
    let (scores, tape) = disc.forward_traced(input, Mode::Train)?;
    let loss = f64::from(losses::adversarial_loss_g(&scores, form)?);
    if weight == 0.0 {
        return Ok((loss, None));
    }
    let ds = scaled(&losses::adversarial_loss_g_grad(&scores, form)?, weight);
    Ok((loss, Some(disc.backward(&tape, &ds, None)?)))
}

/// One discriminator's update on `(real, fake)`; returns the halved loss.
fn discriminator_term(
    disc: &mut Discriminator<f32>,
    real: &Tensor<f32>,
    fake: &Tensor<f32>,
    form: GanLossForm,
    weight: f64,
    grads: &mut Grads<f32>,
) -> Result<f64> {
    let (sr, tr) = disc.forward_traced(real, Mode::Train)?;
    let (sf, tf) = disc.forward_traced(fake, Mode::Train)?;
    let loss = 0.5 * f64::from(losses::adversarial_loss_d(&sr, &sf, form)?);
    if weight != 0.0 {
        let (gr, gf) = losses::adversarial_loss_d_grad(&sr, &sf, form)?;
        disc.backward(&tr, &scaled(&gr, 0.5 * weight), Some(grads))?;
        disc.backward(&tf, &scaled(&gf, 0.5 * weight), Some(grads))?;
    }
    disc.network_mut().commit_stats(&tr);
    disc.network_mut().commit_stats(&tf);
    Ok(loss)
}

fn add_opt(acc: &mut Tensor<f32>, g: Option<Tensor<f32>>) {
    if let Some(g) = g {
        acc.add_assign(&g);
    }
}

/// Forward products of the generator sub-step.
struct Fakes {
    tx: GenTrace<f32>,
    ty: GenTrace<f32>,
}

/// One generator step followed by one discriminator step.
///
/// The schedule (`r`, `lr`) is taken from `state.epoch`. Discriminator
/// losses in the report are halved; the discriminator gradient is further
/// weighted by the adversarial coefficient `(1 - r) * lambda_gan`.
pub fn train_step(
    state: &mut TrainState,
    x: &ImageBatch<f32>,
    y: &ImageBatch<f32>,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::contract(format!(
            "train_step needs equal nonempty batches, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.tensor().shape() != y.tensor().shape() {
        return Err(Error::dim("height", "X and Y batches differ in spatial size"));
    }
    state.apply_schedule(cfg);
    let (mut report, fakes) = generator_step(state, x, y, cfg)?;
    discriminator_step(state, x, y, &fakes, cfg, &mut report)?;
    state.step += 1;
    Ok(report)
}

fn generator_step(
    state: &mut TrainState,
    x: &ImageBatch<f32>,
    y: &ImageBatch<f32>,
    cfg: &TrainConfig,
) -> Result<(LossReport, Fakes)> {
    let k = objective_coefficients(cfg, state.r)?;
    let form = cfg.gan_loss;
    let (xt, yt) = (x.tensor(), y.tensor());

    let tx = state.g_xy.forward_traced(xt, Mode::Train)?;
    let ty = state.g_yx.forward_traced(yt, Mode::Train)?;
    let tcx = state.g_yx.forward_traced(&tx.output, Mode::Train)?;
    let tcy = state.g_xy.forward_traced(&ty.output, Mode::Train)?;

    let mut report = LossReport::default();
    let (gan_xy, d_gy_adv) = adversarial_g_term(&state.d_y, &tx.output, form, k[0])?;
    let (gan_yx, d_gx_adv) = adversarial_g_term(&state.d_x, &ty.output, form, k[1])?;
    report.gan_xy = finite(gan_xy, "gan_xy")?;
    report.gan_yx = finite(gan_yx, "gan_yx")?;

    let mut d_gy = Tensor::zeros(xt.shape());
    let mut d_gx = Tensor::zeros(yt.shape());
    let mut d_my = Tensor::zeros(tx.mask.shape());
    let mut d_mx = Tensor::zeros(ty.mask.shape());
    add_opt(&mut d_gy, d_gy_adv);
    add_opt(&mut d_gx, d_gx_adv);

    for (disc, trace, coef, d_img, d_mask, slot) in [
        (&state.d_ya, &tx, k[2], &mut d_gy, &mut d_my, &mut report.agan_xy),
        (&state.d_xa, &ty, k[3], &mut d_gx, &mut d_mx, &mut report.agan_yx),
    ] {
        let Some(disc) = disc else { continue };
        let pair = attended_input(&trace.mask, &trace.output)?;
        let (loss, grad) = adversarial_g_term(disc, &pair, form, coef)?;
        *slot = loss;
        if let Some(g) = grad {
            let (gm, gi) = g.split_channels(1);
            d_mask.add_assign(&gm);
            d_img.add_assign(&gi);
        }
    }
    report.agan_xy = finite(report.agan_xy, "agan_xy")?;
    report.agan_yx = finite(report.agan_yx, "agan_yx")?;

    report.cycle = finite(
        f64::from(losses::cycle_loss(xt, &tcx.output, yt, &tcy.output)?),
        "cycle",
    )?;
    let [_, d_cx, _, d_cy] = losses::cycle_loss_grad(xt, &tcx.output, yt, &tcy.output)?;
    report.pixel = finite(
        f64::from(losses::pixel_loss(xt, &tx.output, yt, &ty.output)?),
        "pixel",
    )?;
    let [_, d_py, _, d_px] = losses::pixel_loss_grad(xt, &tx.output, yt, &ty.output)?;
    d_gy.add_assign(&d_py.scale(k[5] as f32));
    d_gx.add_assign(&d_px.scale(k[5] as f32));

    report.tv_y = finite(f64::from(losses::tv_loss(&tx.mask)), "tv_y")?;
    report.tv_x = finite(f64::from(losses::tv_loss(&ty.mask)), "tv_x")?;
    if k[6] != 0.0 {
        d_mx.add_assign(&losses::tv_loss_grad(&ty.mask).scale(k[6] as f32));
        d_my.add_assign(&losses::tv_loss_grad(&tx.mask).scale(k[7] as f32));
    }
    report.total = finite(losses::full_objective(&report, cfg, state.r)?, "total")?;

    let mut grads_xy = Grads::zeros_like(&state.g_xy.network().params);
    let mut grads_yx = Grads::zeros_like(&state.g_yx.network().params);
    let via_cx = state
        .g_yx
        .backward(&tcx, &d_cx.scale(k[4] as f32), None, Some(&mut grads_yx))?;
    let via_cy = state
        .g_xy
        .backward(&tcy, &d_cy.scale(k[4] as f32), None, Some(&mut grads_xy))?;
    d_gy.add_assign(&via_cx);
    d_gx.add_assign(&via_cy);
    state.g_xy.backward_params(&tx, &d_gy, Some(&d_my), &mut grads_xy)?;
    state.g_yx.backward_params(&ty, &d_gx, Some(&d_mx), &mut grads_yx)?;
    if !grads_xy.all_finite() || !grads_yx.all_finite() {
        return Err(Error::NonFinite {
            term: "generator gradients",
        });
    }

    state.g_xy.network_mut().commit_stats(tx.tape());
    state.g_xy.network_mut().commit_stats(tcy.tape());
    state.g_yx.network_mut().commit_stats(ty.tape());
    state.g_yx.network_mut().commit_stats(tcx.tape());
    let lr = state.lr;
    let TrainState { g_xy, g_yx, opt_g, .. } = state;
    opt_g.step(
        &mut [&mut g_xy.network_mut().params, &mut g_yx.network_mut().params],
        &[&grads_xy, &grads_yx],
        lr,
    )?;
    Ok((report, Fakes { tx, ty }))
}

fn discriminator_step(
    state: &mut TrainState,
    x: &ImageBatch<f32>,
    y: &ImageBatch<f32>,
    fakes: &Fakes,
    cfg: &TrainConfig,
    report: &mut LossReport,
) -> Result<()> {
    let k = objective_coefficients(cfg, state.r)?;
    let form = cfg.gan_loss;
    let gen_y = ImageBatch::trusted(fakes.tx.output.clone(), Domain::Y);
    let gen_x = ImageBatch::trusted(fakes.ty.output.clone(), Domain::X);
    let (pool_y, pool_my) = state
        .pool_y
        .query_pairs(&gen_y, &AttentionMask::trusted(fakes.tx.mask.clone()))?;
    let (pool_x, pool_mx) = state
        .pool_x
        .query_pairs(&gen_x, &AttentionMask::trusted(fakes.ty.mask.clone()))?;

    let mut grads: Vec<Grads<f32>> = state.disc_params().iter().map(|p| Grads::zeros_like(p)).collect();
    report.d_x = finite(
        discriminator_term(&mut state.d_x, x.tensor(), pool_x.tensor(), form, k[1], &mut grads[0])?,
        "d_x",
    )?;
    report.d_y = finite(
        discriminator_term(&mut state.d_y, y.tensor(), pool_y.tensor(), form, k[0], &mut grads[1])?,
        "d_y",
    )?;
    if let (Some(d_xa), Some(d_ya)) = (state.d_xa.as_mut(), state.d_ya.as_mut()) {
        let real = attended_input(&fakes.ty.mask, x.tensor())?;
        let fake = attended_input(pool_mx.tensor(), pool_x.tensor())?;
        report.d_xa = finite(discriminator_term(d_xa, &real, &fake, form, k[3], &mut grads[2])?, "d_xa")?;
        let real = attended_input(&fakes.tx.mask, y.tensor())?;
        let fake = attended_input(pool_my.tensor(), pool_y.tensor())?;
        report.d_ya = finite(discriminator_term(d_ya, &real, &fake, form, k[2], &mut grads[3])?, "d_ya")?;
    }
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(Error::NonFinite {
            term: "discriminator gradients",
        });
    }
    let lr = state.lr;
    let mut opt = std::mem::replace(&mut state.opt_d, Adam::new(0.0, 0.0, &[]));
    let grad_refs: Vec<&Grads<f32>> = grads.iter().collect();
    let res = opt.step(&mut state.disc_params_mut(), &grad_refs, lr);
    state.opt_d = opt;
    res
}

/// Where and how long to train.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory for per-epoch checkpoints; none are written when unset.
    pub out_dir: Option<PathBuf>,
    /// Stop once the global step counter reaches this value.
    pub max_steps: Option<u64>,
}

/// Loss history of a [`train`] call.
#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub steps: Vec<LossReport>,
    /// Mean report of each completed epoch.
    pub epochs: Vec<LossReport>,
    pub checkpoints: Vec<PathBuf>,
}

/// Number of steps in one pass over the larger domain.
pub fn steps_per_epoch(nx: usize, ny: usize, batch: usize) -> usize {
    nx.max(ny).div_ceil(batch)
}

fn epoch_order(cfg: &TrainConfig, epoch: usize, n: usize, domain: u64) -> Vec<usize> {
    let mut rng = seed_all(cfg.seed).stream(Purpose::Shuffle, (epoch as u64) << 1 | domain);
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut rng);
    v
}

/// Trains from fresh initialization for `cfg.epochs` epochs.
pub fn train(
    dx: &UnpairedDataset,
    dy: &UnpairedDataset,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<(TrainState, TrainOutcome)> {
    let mut state = TrainState::new(cfg)?;
    let outcome = train_from(&mut state, dx, dy, cfg, opts)?;
    Ok((state, outcome))
}

/// Continues training `state` from its epoch and step counters.
///
/// Shuffles, flips and pool draws are keyed by epoch and step, so a state
/// restored from a checkpoint continues exactly as an uninterrupted run.
pub fn train_from(
    state: &mut TrainState,
    dx: &UnpairedDataset,
    dy: &UnpairedDataset,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dx.is_empty() || dy.is_empty() {
        return Err(Error::Dataset("both domains need at least one image".into()));
    }
    if dx.size != cfg.image_size || dy.size != cfg.image_size {
        return Err(Error::dim(
            "height",
            format!("datasets are {}/{} pixels, config expects {}", dx.size, dy.size, cfg.image_size),
        ));
    }
    let b = cfg.batch_size;
    let per_epoch = steps_per_epoch(dx.len(), dy.len(), b);
    let streams = seed_all(cfg.seed);
    let mut outcome = TrainOutcome::default();
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    while state.epoch < cfg.epochs {
        let ox = epoch_order(cfg, state.epoch, dx.len(), 0);
        let oy = epoch_order(cfg, state.epoch, dy.len(), 1);
        let mut epoch_reports = Vec::with_capacity(per_epoch);
        while state.step_in_epoch < per_epoch {
            if opts.max_steps.is_some_and(|m| state.step >= m) {
                return Ok(outcome);
            }
            let base = state.step_in_epoch * b;
            let ix: Vec<usize> = (0..b).map(|i| ox[(base + i) % ox.len()]).collect();
            let iy: Vec<usize> = (0..b).map(|i| oy[(base + i) % oy.len()]).collect();
            let mut frng = streams.stream(Purpose::Flip, state.step);
            let mut flips = |_| cfg.flip_augment && frng.random_bool(0.5);
            let fx: Vec<bool> = (0..b).map(&mut flips).collect();
            let fy: Vec<bool> = (0..b).map(&mut flips).collect();
            let x = dx.batch(&ix, &fx)?;
            let y = dy.batch(&iy, &fy)?;
            let report = train_step(state, &x, &y, cfg)?;
            log::debug!(
                "epoch {} step {} total {:.4} cycle {:.4}",
                state.epoch,
                state.step,
                report.total,
                report.cycle
            );
            epoch_reports.push(report);
            outcome.steps.push(report);
            state.step_in_epoch += 1;
        }
        let mean = LossReport::mean(&epoch_reports);
        log::info!(
            "epoch {}/{}: total {:.4} cycle {:.4} pixel {:.4} d_y {:.4} d_x {:.4} (r {}, lr {:.2e})",
            state.epoch + 1,
            cfg.epochs,
            mean.total,
            mean.cycle,
            mean.pixel,
            mean.d_y,
            mean.d_x,
            state.r,
            state.lr
        );
        outcome.epochs.push(mean);
        state.epoch += 1;
        state.step_in_epoch = 0;
        if let Some(dir) = &opts.out_dir {
            let due = cfg.checkpoint_every > 0 && state.epoch.is_multiple_of(cfg.checkpoint_every);
            if due || state.epoch == cfg.epochs {
                let path = dir.join(format!("checkpoint_{:04}.agck", state.epoch));
                checkpoint::save(state, cfg, &path)?;
                outcome.checkpoints.push(path);
            }
        }
    }
    Ok(outcome)
}
