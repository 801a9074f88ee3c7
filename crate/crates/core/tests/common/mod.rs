//! Criterion checks shared by the acceptance harness and the topic tests.
//!
//! Each check returns `Ok(summary)` or `Err(reason)`. Oracles here are
//! written independently of the library (plain loops, finite differences).

#![allow(
    dead_code,
    clippy::type_complexity,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::field_reassign_with_default,
    clippy::manual_repeat_n
)]

use std::path::Path;
use std::time::{Duration, Instant};

use attn_gan::ablation::{apply_ablation, Variant};
use attn_gan::checkpoint;
use attn_gan::data::{load_dataset, synth_domains, Split, UnpairedDataset};
use attn_gan::discriminator::{Discriminator, DiscriminatorSpec};
use attn_gan::eval::{mse, psnr_from_mse, ImageMetric, MetricReport, CompareMode};
use attn_gan::generator::{fuse, fuse_grad, fuse_tensors, Generator, GeneratorSpec};
use attn_gan::losses::{self, GanLossForm, LossReport};
use attn_gan::nn::Mode;
use attn_gan::pool::ImagePool;
use attn_gan::seed::{seed_all, Purpose};
use attn_gan::trainer::{self, train, train_from, TrainOptions, TrainState};
use attn_gan::{AttentionMask, ContentMask, Domain, ImageBatch, Tensor, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    if elapsed > limit {
        Err(format!("{what} took {elapsed:?}, limit {limit:?}"))
    } else {
        Ok(())
    }
}

fn uniform(r: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

// ---------------------------------------------------------------- fusion

pub fn fusion_algebra() -> Check {
    let t0 = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(1..=2);
        let h = 4 * r.random_range(1..=3);
        let w = 4 * r.random_range(1..=3);
        let x: Tensor<f32> = Tensor::from_fn([n, 3, h, w], |_| r.random_range(-1.0..=1.0));
        let m: Tensor<f32> = Tensor::from_fn([n, 1, h, w], |_| r.random_range(0.0..=1.0));
        let c: Tensor<f32> = Tensor::from_fn([n, 3, h, w], |_| r.random_range(-1.0..=1.0));
        let xb = ImageBatch::new(x.clone(), Domain::X).map_err(|e| e.to_string())?;
        let content = ContentMask::new(c.clone()).map_err(|e| e.to_string())?;
        let run = |mask: &AttentionMask<f32>| fuse(&xb, mask, &content).map_err(|e| e.to_string());

        let zero = run(&AttentionMask::constant(n, h, w, 0.0))?;
        let one = run(&AttentionMask::constant(n, h, w, 1.0))?;
        let mixed = run(&AttentionMask::new(m.clone()).map_err(|e| e.to_string())?)?;
        if mixed.domain() != Domain::Y {
            return Err("fused batch keeps the source domain".into());
        }
        for idx in 0..x.len() {
            let (xv, cv) = (f64::from(x.data()[idx]), f64::from(c.data()[idx]));
            let plane = h * w;
            let item = idx / (3 * plane);
            let mv = f64::from(m.data()[item * plane + idx % plane]);
            let e0 = (f64::from(zero.tensor().data()[idx]) - xv).abs();
            let e1 = (f64::from(one.tensor().data()[idx]) - cv).abs();
            let v = f64::from(mixed.tensor().data()[idx]);
            let oracle = cv * mv + xv * (1.0 - mv);
            let eo = (v - oracle).abs();
            let eb = (xv.min(cv) - v).max(v - xv.max(cv)).max(0.0);
            worst = worst.max(e0).max(e1).max(eo).max(eb);
        }
    }
    if worst > 1e-6 {
        return Err(format!("max deviation {worst:e} exceeds 1e-6"));
    }
    within(t0.elapsed(), Duration::from_secs(10), "fusion suite")?;
    Ok(format!("1000 triples, max abs deviation {worst:.1e}, {:.2?}", t0.elapsed()))
}

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Central-difference derivative of `f` with respect to every entry of
/// `inputs[k]`, compared against `analytic[k]`. Returns the worst relative error.
fn fd_compare(
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    f: &dyn Fn(&[Tensor<f64>]) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..inputs.len() {
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k].data()[i], numeric));
        }
    }
    worst
}

fn small_shape(r: &mut ChaCha8Rng, c: usize) -> [usize; 4] {
    [1, c, r.random_range(1..=4), r.random_range(1..=4)]
}

/// Tensor of the same shape whose entries differ from `a` by at least `gap`,
/// keeping L1 terms away from their kink.
fn away_from(r: &mut ChaCha8Rng, a: &Tensor<f64>, gap: f64) -> Tensor<f64> {
    Tensor::from_fn(a.shape(), |idx| {
        let av = a.at(idx);
        loop {
            let v: f64 = r.random_range(-1.0..1.0);
            if (v - av).abs() >= gap {
                return v;
            }
        }
    })
}

fn separated_pair(r: &mut ChaCha8Rng, shape: [usize; 4], gap: f64) -> (Tensor<f64>, Tensor<f64>) {
    let a = uniform(r, shape, -1.0, 1.0);
    let b = away_from(r, &a, gap);
    (a, b)
}

/// Mask whose neighbouring entries differ by at least `gap`.
fn separated_mask(r: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, gap: f64) -> Tensor<f64> {
    loop {
        let m = uniform(r, shape, lo, 1.0);
        let [_, _, h, w] = shape;
        let ok = m.data().chunks(h * w).all(|p| {
            (0..h).all(|y| {
                (0..w).all(|x| {
                    let v = p[y * w + x];
                    (x + 1 >= w || (p[y * w + x + 1] - v).abs() >= gap)
                        && (y + 1 >= h || (p[(y + 1) * w + x] - v).abs() >= gap)
                })
            })
        });
        if ok {
            return m;
        }
    }
}

fn scores(r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = r.random_range(1..=16);
    uniform(r, [n, 1, 1, 1], -3.0, 3.0)
}

fn vec_t(v: Vec<f64>) -> Tensor<f64> {
    let n = v.len();
    Tensor::from_vec([n, 1, 1, 1], v).unwrap()
}

const TRIALS: usize = 100;
const GAP: f64 = 2e-2;

pub fn grad_fuse() -> f64 {
    let mut r = rng(20);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let s = small_shape(&mut r, 3);
        let x = uniform(&mut r, s, -1.0, 1.0);
        let m = uniform(&mut r, [1, 1, s[2], s[3]], 0.0, 1.0);
        let c = uniform(&mut r, s, -1.0, 1.0);
        let wts = uniform(&mut r, s, -1.0, 1.0);
        let f = |v: &[Tensor<f64>]| {
            let out = fuse_tensors(&v[0], &v[1], &v[2]).unwrap();
            out.data().iter().zip(wts.data()).map(|(a, b)| a * b).sum()
        };
        let (dx, dm, dr) = fuse_grad(&x, &m, &c, &wts).unwrap();
        worst = worst.max(fd_compare(&[x, m, c], &[dx, dm, dr], &f));
    }
    worst
}

pub fn grad_adversarial(form: GanLossForm) -> f64 {
    let mut r = rng(21 + form as u64);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let (real, fake) = (scores(&mut r), scores(&mut r));
        let (dr, df) = losses::adversarial_loss_d_grad(real.data(), fake.data(), form).unwrap();
        let fd = |v: &[Tensor<f64>]| losses::adversarial_loss_d(v[0].data(), v[1].data(), form).unwrap();
        worst = worst.max(fd_compare(&[real, fake.clone()], &[vec_t(dr), vec_t(df)], &fd));
        let dg = losses::adversarial_loss_g_grad(fake.data(), form).unwrap();
        let fg = |v: &[Tensor<f64>]| losses::adversarial_loss_g(v[0].data(), form).unwrap();
        worst = worst.max(fd_compare(&[fake], &[vec_t(dg)], &fg));
    }
    worst
}

fn grad_l1_pairs(seed: u64, value: fn(&Tensor<f64>, &Tensor<f64>, &Tensor<f64>, &Tensor<f64>) -> f64, grad: fn(&Tensor<f64>, &Tensor<f64>, &Tensor<f64>, &Tensor<f64>) -> [Tensor<f64>; 4]) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let s1 = small_shape(&mut r, 3);
        let s2 = small_shape(&mut r, 3);
        let (x, gx) = separated_pair(&mut r, s1, GAP);
        let (y, gy) = separated_pair(&mut r, s2, GAP);
        let g = grad(&x, &gx, &y, &gy);
        let f = |v: &[Tensor<f64>]| value(&v[0], &v[1], &v[2], &v[3]);
        worst = worst.max(fd_compare(&[x, gx, y, gy], &g, &f));
    }
    worst
}

pub fn grad_cycle() -> f64 {
    grad_l1_pairs(
        30,
        |a, b, c, d| losses::cycle_loss(a, b, c, d).unwrap(),
        |a, b, c, d| losses::cycle_loss_grad(a, b, c, d).unwrap(),
    )
}

pub fn grad_pixel() -> f64 {
    grad_l1_pairs(
        31,
        |a, b, c, d| losses::pixel_loss(a, b, c, d).unwrap(),
        |a, b, c, d| losses::pixel_loss_grad(a, b, c, d).unwrap(),
    )
}

pub fn grad_tv() -> f64 {
    let mut r = rng(32);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let c = r.random_range(1..=2);
        let s = [r.random_range(1..=2), c, r.random_range(1..=4), r.random_range(1..=4)];
        let m = separated_mask(&mut r, s, 0.0, GAP / 4.0);
        let g = losses::tv_loss_grad(&m);
        worst = worst.max(fd_compare(&[m], &[g], &|v| losses::tv_loss(&v[0])));
    }
    worst
}

/// Full objective as a function of images, masks, cycled images and scores,
/// built from the individual losses; its analytic gradient is assembled by
/// the chain rule from the per-loss gradients and the objective weights.
pub fn grad_full_objective() -> f64 {
    let mut r = rng(33);
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let form = if trial % 2 == 0 {
            GanLossForm::LeastSquares
        } else {
            GanLossForm::NegLogLikelihood
        };
        let mut cfg = TrainConfig::default();
        cfg.lambda_gan = r.random_range(0.1..2.0);
        cfg.lambda_cycle = r.random_range(0.1..20.0);
        cfg.lambda_pixel = r.random_range(0.1..2.0);
        cfg.lambda_tv = r.random_range(0.01..1.0);
        cfg.attention_discriminators = trial % 3 != 0;
        let rr: f64 = r.random_range(0.0..1.0);
        let s = small_shape(&mut r, 3);
        let ms = [1, 1, s[2], s[3]];
        // inputs: x, y, m_y, c_y, m_x, c_x, cyc_x, cyc_y, four score vectors
        let x = uniform(&mut r, s, -1.0, 1.0);
        let y = uniform(&mut r, s, -1.0, 1.0);
        // masks of at least 0.1 and contents at least 0.5 from the input keep
        // the fused outputs away from the pixel-loss kink
        let m_y = separated_mask(&mut r, ms, 0.1, GAP);
        let m_x = separated_mask(&mut r, ms, 0.1, GAP);
        let c_y = away_from(&mut r, &x, 0.5);
        let c_x = away_from(&mut r, &y, 0.5);
        let cyc_x = away_from(&mut r, &x, GAP);
        let cyc_y = away_from(&mut r, &y, GAP);
        let sc: Vec<Tensor<f64>> = (0..4).map(|_| scores(&mut r)).collect();

        let objective = |v: &[Tensor<f64>]| {
            let ty = fuse_tensors(&v[0], &v[2], &v[3]).unwrap();
            let tx = fuse_tensors(&v[1], &v[4], &v[5]).unwrap();
            let rep = LossReport {
                gan_xy: losses::adversarial_loss_g(v[8].data(), form).unwrap(),
                gan_yx: losses::adversarial_loss_g(v[9].data(), form).unwrap(),
                agan_xy: losses::adversarial_loss_g(v[10].data(), form).unwrap(),
                agan_yx: losses::adversarial_loss_g(v[11].data(), form).unwrap(),
                cycle: losses::cycle_loss(&v[0], &v[6], &v[1], &v[7]).unwrap(),
                pixel: losses::pixel_loss(&v[0], &ty, &v[1], &tx).unwrap(),
                tv_y: losses::tv_loss(&v[2]),
                tv_x: losses::tv_loss(&v[4]),
                ..Default::default()
            };
            losses::full_objective(&rep, &cfg, rr).unwrap()
        };

        let k = losses::objective_coefficients(&cfg, rr).unwrap();
        let ty = fuse_tensors(&x, &m_y, &c_y).unwrap();
        let tx = fuse_tensors(&y, &m_x, &c_x).unwrap();
        let [dcx_x, dcx, dcy_y, dcy] = losses::cycle_loss_grad(&x, &cyc_x, &y, &cyc_y).unwrap();
        let [dp_x, dp_ty, dp_y, dp_tx] = losses::pixel_loss_grad(&x, &ty, &y, &tx).unwrap();
        let (fx_x, fx_m, fx_c) = fuse_grad(&x, &m_y, &c_y, &dp_ty.scale(k[5])).unwrap();
        let (fy_y, fy_m, fy_c) = fuse_grad(&y, &m_x, &c_x, &dp_tx.scale(k[5])).unwrap();
        let mut gx = dcx_x.scale(k[4]);
        gx.add_assign(&dp_x.scale(k[5]));
        gx.add_assign(&fx_x);
        let mut gy = dcy_y.scale(k[4]);
        gy.add_assign(&dp_y.scale(k[5]));
        gy.add_assign(&fy_y);
        let mut gmy = fx_m;
        gmy.add_assign(&losses::tv_loss_grad(&m_y).scale(k[7]));
        let mut gmx = fy_m;
        gmx.add_assign(&losses::tv_loss_grad(&m_x).scale(k[6]));
        let sg = |i: usize| vec_t(losses::adversarial_loss_g_grad(sc[i].data(), form).unwrap()).scale(k[i]);
        let analytic = vec![
            gx,
            gy,
            gmy,
            fx_c,
            gmx,
            fy_c,
            dcx.scale(k[4]),
            dcy.scale(k[4]),
            sg(0),
            sg(1),
            sg(2),
            sg(3),
        ];
        let mut inputs = vec![x, y, m_y, c_y, m_x, c_x, cyc_x, cyc_y];
        inputs.extend(sc);
        worst = worst.max(fd_compare(&inputs, &analytic, &objective));
    }
    worst
}

pub fn gradient_suite() -> Check {
    let t0 = Instant::now();
    let results = [
        ("fuse", grad_fuse()),
        ("adversarial/least_squares", grad_adversarial(GanLossForm::LeastSquares)),
        ("adversarial/neg_log_likelihood", grad_adversarial(GanLossForm::NegLogLikelihood)),
        ("cycle", grad_cycle()),
        ("pixel", grad_pixel()),
        ("tv", grad_tv()),
        ("full_objective", grad_full_objective()),
    ];
    let bad: Vec<String> = results
        .iter()
        .filter(|(_, e)| !(*e < FD_TOL))
        .map(|(n, e)| format!("{n} rel err {e:e}"))
        .collect();
    if !bad.is_empty() {
        return Err(bad.join("; "));
    }
    within(t0.elapsed(), Duration::from_secs(120), "gradient suite")?;
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(format!("{} functions x {TRIALS} inputs, worst rel err {worst:.1e}, {:.2?}", results.len(), t0.elapsed()))
}

// ---------------------------------------------------------------- tv oracle

pub fn tv_oracle(m: &[f64], h: usize, w: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..h {
        for j in 0..w {
            if j + 1 < w {
                s += (m[i * w + j + 1] - m[i * w + j]).abs();
            }
            if i + 1 < h {
                s += (m[(i + 1) * w + j] - m[i * w + j]).abs();
            }
        }
    }
    s
}

pub fn tv_exhaustive() -> Check {
    let mut masks = 0usize;
    for h in 1..=9 {
        for w in 1..=9 {
            if h * w > 9 {
                continue;
            }
            for bits in 0u32..(1 << (h * w)) {
                let m: Vec<f64> = (0..h * w).map(|k| f64::from((bits >> k) & 1)).collect();
                let t = Tensor::from_vec([1, 1, h, w], m.clone()).unwrap();
                let got = losses::tv_loss(&t);
                let want = tv_oracle(&m, h, w);
                if got != want {
                    return Err(format!("{h}x{w} mask {bits:b}: {got} vs oracle {want}"));
                }
                masks += 1;
            }
        }
    }
    let mut r = rng(40);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (h, w) = (r.random_range(1..=5), r.random_range(1..=5));
        let m: Vec<f64> = (0..h * w).map(|_| r.random_range(0.0..=1.0)).collect();
        let got = losses::tv_loss(&Tensor::from_vec([1, 1, h, w], m.clone()).unwrap());
        worst = worst.max((got - tv_oracle(&m, h, w)).abs());
    }
    if worst > 1e-9 {
        return Err(format!("random masks deviate by {worst:e}"));
    }
    Ok(format!("{masks} binary masks exact, 1000 real masks max err {worst:.1e}"))
}

// ---------------------------------------------------------------- objective

pub fn objective_arithmetic() -> Check {
    let cfg = TrainConfig::default();
    let rep = LossReport::from_components([0.5, 0.5, 0.5, 0.5, 2.0, 1.0, 0.0, 0.0]);
    let total = losses::full_objective(&rep, &cfg, 0.01).map_err(|e| e.to_string())?;
    let hand: f64 = 0.01 * (10.0 * 2.0 + 1.0 * 1.0) + 0.99 * (0.5 * 2.0);
    if (total - 1.20).abs() > 1e-12 || (hand - 1.20).abs() > 1e-12 {
        return Err(format!("total {total:.15}, hand {hand:.15}"));
    }
    for e in 0..cfg.epochs {
        let want = if e < 10 { 0.01 } else { 0.5 };
        if cfg.r_at(e) != want {
            return Err(format!("r at epoch {e} is {}", cfg.r_at(e)));
        }
    }
    Ok(format!("total {total:.12}; r = 0.01 for epochs 0..9, 0.5 from epoch 10"))
}

// ---------------------------------------------------------------- pool

pub fn pool_behaviour() -> Check {
    let mut p = ImagePool::<f64>::new(50, 0.5, seed_all(11), Purpose::PoolY);
    for i in 0..50 {
        let x = Tensor::full([1, 3, 4, 4], i as f64);
        let out = p.query(&x).map_err(|e| e.to_string())?;
        if out != x {
            return Err(format!("insert {i} was not passed through"));
        }
    }
    let mut swapped = 0;
    for i in 0..10_000 {
        let v = 100.0 + i as f64;
        let out = p.query(&Tensor::full([1, 3, 4, 4], v)).map_err(|e| e.to_string())?;
        if out.data()[0] != v {
            swapped += 1;
        }
    }
    let frac = swapped as f64 / 10_000.0;
    if !(0.47..=0.53).contains(&frac) {
        return Err(format!("swap fraction {frac}"));
    }
    Ok(format!("50 warm-up inserts exact, swap fraction {frac:.4}"))
}

// ---------------------------------------------------------------- determinism

/// Small, fast configuration for multi-step runs.
pub fn small_config() -> TrainConfig {
    TrainConfig {
        image_size: 32,
        channel_scale: 0.125,
        epochs: 20,
        checkpoint_pools: true,
        ..TrainConfig::default()
    }
}

pub fn small_data(dir: &Path, n: usize, size: usize) -> (UnpairedDataset, UnpairedDataset) {
    if !dir.join("trainB").exists() {
        synth_domains(dir, n, size, 3).unwrap();
    }
    let cfg = TrainConfig {
        image_size: size,
        ..TrainConfig::default()
    };
    (
        load_dataset(dir, Split::Train, Domain::X, &cfg).unwrap(),
        load_dataset(dir, Split::Train, Domain::Y, &cfg).unwrap(),
    )
}

fn run_steps(cfg: &TrainConfig, dx: &UnpairedDataset, dy: &UnpairedDataset, steps: u64) -> Result<(TrainState, Vec<LossReport>), String> {
    let opts = TrainOptions {
        out_dir: None,
        max_steps: Some(steps),
    };
    let (s, out) = train(dx, dy, cfg, &opts).map_err(|e| e.to_string())?;
    Ok((s, out.steps))
}

pub fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (dx, dy) = small_data(&tmp.path().join("data"), 30, 32);
    let cfg = small_config();
    let (s1, a) = run_steps(&cfg, &dx, &dy, 200)?;
    let (_, b) = run_steps(&cfg, &dx, &dy, 200)?;
    if a.len() != 200 || a != b {
        let first = a.iter().zip(&b).position(|(p, q)| p != q);
        return Err(format!("repeat run diverged at step {first:?}"));
    }
    // interrupted at step 110 (mid-epoch), saved, reloaded, continued
    let (half, first) = run_steps(&cfg, &dx, &dy, 110)?;
    let ck = tmp.path().join("mid.agck");
    checkpoint::save(&half, &cfg, &ck).map_err(|e| e.to_string())?;
    drop(half);
    let (mut resumed, rcfg) = checkpoint::load(&ck).map_err(|e| e.to_string())?;
    let opts = TrainOptions {
        out_dir: None,
        max_steps: Some(200),
    };
    let rest = train_from(&mut resumed, &dx, &dy, &rcfg, &opts).map_err(|e| e.to_string())?;
    let joined: Vec<LossReport> = first.into_iter().chain(rest.steps).collect();
    if joined != a {
        let first = joined.iter().zip(&a).position(|(p, q)| p != q);
        return Err(format!("resumed run diverged at step {first:?} (len {})", joined.len()));
    }
    if resumed.generator_fingerprint() != s1.generator_fingerprint()
        || resumed.discriminator_fingerprint() != s1.discriminator_fingerprint()
    {
        return Err("resumed weights differ from the uninterrupted run".into());
    }
    Ok("two 200-step runs identical; resume at step 110 matches bit for bit".into())
}

// ---------------------------------------------------------------- training progress

pub struct Progress {
    pub first_cycle: f64,
    pub last_cycle: f64,
    pub localized: usize,
    pub tested: usize,
    pub elapsed: Duration,
}

/// Fraction of the mask mass per pixel inside vs outside the sidecar region.
pub fn mask_inside_outside(mask: &[f32], region: &[bool]) -> (f64, f64) {
    let (mut a, mut na, mut o, mut no) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &inside) in mask.iter().zip(region) {
        if inside {
            a += f64::from(v);
            na += 1;
        } else {
            o += f64::from(v);
            no += 1;
        }
    }
    (a / na.max(1) as f64, o / no.max(1) as f64)
}

pub fn training_progress_run(root: &Path, steps: u64) -> Result<Progress, String> {
    let t0 = Instant::now();
    synth_domains(root, 200, 64, 0).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();
    assert_eq!((cfg.image_size, cfg.channel_scale), (64, 0.5));
    let dx = load_dataset(root, Split::Train, Domain::X, &cfg).map_err(|e| e.to_string())?;
    let dy = load_dataset(root, Split::Train, Domain::Y, &cfg).map_err(|e| e.to_string())?;
    let (state, trace) = run_steps(&cfg, &dx, &dy, steps)?;
    let window = (steps as usize / 10).max(1);
    let mean = |s: &[LossReport]| s.iter().map(|r| r.cycle).sum::<f64>() / s.len() as f64;
    let first_cycle = mean(&trace[..window]);
    let last_cycle = mean(&trace[trace.len() - window..]);
    let (mut localized, mut tested) = (0, 0);
    for (domain, g) in [(Domain::X, &state.g_xy), (Domain::Y, &state.g_yx)] {
        let test = load_dataset(root, Split::Test, domain, &cfg).map_err(|e| e.to_string())?;
        for i in 0..test.len() {
            let b = test.batch(&[i], &[false]).map_err(|e| e.to_string())?;
            let pair = g.forward(&b, Mode::Eval).map_err(|e| e.to_string())?;
            let region = test
                .sidecar(i)
                .map_err(|e| e.to_string())?
                .ok_or("missing sidecar mask")?;
            let (inside, outside) = mask_inside_outside(pair.mask.tensor().data(), &region);
            tested += 1;
            if inside > outside {
                localized += 1;
            }
        }
    }
    Ok(Progress {
        first_cycle,
        last_cycle,
        localized,
        tested,
        elapsed: t0.elapsed(),
    })
}

pub fn training_progress() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = training_progress_run(&tmp.path().join("synth"), 2000)?;
    let ratio = p.last_cycle / p.first_cycle;
    let frac = p.localized as f64 / p.tested as f64;
    let summary = format!(
        "cycle {:.4} -> {:.4} (ratio {ratio:.3}), mask localized on {}/{} test images ({:.1}%), {:.1?}",
        p.first_cycle,
        p.last_cycle,
        p.localized,
        p.tested,
        100.0 * frac,
        p.elapsed
    );
    let mut bad = Vec::new();
    if !(ratio < 0.5) {
        bad.push("cycle loss did not halve");
    }
    if frac < 0.6 {
        bad.push("mask not localized on 60% of test images");
    }
    if p.elapsed > Duration::from_secs(30 * 60) {
        bad.push("over the 30 minute budget");
    }
    if bad.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}: {summary}", bad.join(", ")))
    }
}

// ---------------------------------------------------------------- metrics

pub fn metrics_cases() -> Check {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    let img = [3u8, 200, 17, 99, 0, 255];
    if mse(&img, &img).map_err(|e| e.to_string())? != 0.0 || !psnr_from_mse(0.0).is_infinite() {
        return Err("identical images are not saturated".into());
    }
    let black = vec![0u8; 4 * 4 * 3];
    let white = vec![255u8; 4 * 4 * 3];
    let e = mse(&black, &white).map_err(|e| e.to_string())?;
    if !close(e, 65025.0) || !close(psnr_from_mse(e), 0.0) {
        return Err(format!("black/white mse {e}, psnr {}", psnr_from_mse(e)));
    }
    if !close(psnr_from_mse(650.25), 20.0) {
        return Err(format!("psnr(650.25) = {}", psnr_from_mse(650.25)));
    }
    let per = [100.0, 400.0]
        .iter()
        .enumerate()
        .map(|(i, &m)| ImageMetric {
            name: format!("img_{i}"),
            mse: m,
            psnr: psnr_from_mse(m),
        })
        .collect();
    let rep = MetricReport::from_per_image(per, CompareMode::Input).map_err(|e| e.to_string())?;
    let mean_of_psnr = (10.0 * (65025.0f64 / 100.0).log10() + 10.0 * (65025.0f64 / 400.0).log10()) / 2.0;
    let psnr_of_mean = 10.0 * (65025.0f64 / 250.0).log10();
    if !close(rep.mean_psnr, mean_of_psnr) || !close(rep.psnr_of_mean_mse, psnr_of_mean) {
        return Err("aggregation orders disagree with hand values".into());
    }
    let table = rep.table();
    let summary = rep.summary_json();
    if !(table.contains("mean of psnr") && table.contains("psnr of mean mse")) {
        return Err("table does not label both aggregation orders".into());
    }
    if !(summary.contains("\"mean_psnr\"") && summary.contains("\"psnr_of_mean_mse\"")) {
        return Err("summary does not carry both aggregation orders".into());
    }
    Ok(format!(
        "hand cases hold; aggregates: mean of psnr {mean_of_psnr:.4} dB, psnr of mean mse {psnr_of_mean:.4} dB"
    ))
}

// ---------------------------------------------------------------- ablation

/// Components each variant must zero out.
pub fn removed_terms(v: Variant) -> &'static [&'static str] {
    match v {
        Variant::Full => &[],
        Variant::NoAd => &["agan_xy", "agan_yx"],
        Variant::NoAdAg => &["agan_xy", "agan_yx", "tv_x", "tv_y"],
        Variant::NoAdPl => &["agan_xy", "agan_yx", "pixel"],
        Variant::NoAdAl => &["agan_xy", "agan_yx", "tv_x", "tv_y"],
        Variant::NoAdPlAl => &["agan_xy", "agan_yx", "pixel", "tv_x", "tv_y"],
    }
}

pub fn ablation_wiring() -> Check {
    let mut r = rng(90);
    let mut lines = Vec::new();
    for v in Variant::ALL {
        let cfg = apply_ablation(&small_config(), v.flags()).map_err(|e| e.to_string())?;
        let mut state = TrainState::new(&cfg).map_err(|e| e.to_string())?;
        let img = |r: &mut ChaCha8Rng, d| {
            ImageBatch::new(Tensor::from_fn([1, 3, 32, 32], |_| r.random_range(-1.0f32..1.0)), d).unwrap()
        };
        let (x, y) = (img(&mut r, Domain::X), img(&mut r, Domain::Y));
        let rep = trainer::train_step(&mut state, &x, &y, &cfg).map_err(|e| e.to_string())?;
        let contrib = rep.contributions(&cfg, state.r).map_err(|e| e.to_string())?;
        let removed = removed_terms(v);
        for (name, c) in contrib {
            let should_vanish = removed.contains(&name);
            if should_vanish && c != 0.0 {
                return Err(format!("{}: removed term {name} contributes {c}", v.name()));
            }
            if !should_vanish && c == 0.0 {
                return Err(format!("{}: retained term {name} contributes 0", v.name()));
            }
        }
        let sum: f64 = contrib.iter().map(|c| c.1).sum();
        if (sum - rep.total).abs() > 1e-9 * rep.total.abs().max(1.0) {
            return Err(format!("{}: contributions sum {sum} but total {}", v.name(), rep.total));
        }
        lines.push(format!("{}: -{}", v.name(), removed.len()));
    }
    Ok(format!("6 variants wired ({})", lines.join(", ")))
}

// ---------------------------------------------------------------- architecture

/// Shapes after each layer of the standard layer string, derived by hand.
pub fn hand_shapes(size: usize, k: usize) -> Vec<[usize; 3]> {
    let (s2, s4) = (size / 2, size / 4);
    let mut v = vec![[k, size, size], [2 * k, s2, s2], [4 * k, s4, s4]];
    v.extend(std::iter::repeat([4 * k, s4, s4]).take(6));
    v.extend([[2 * k, s2, s2], [k, size, size], [4, size, size]]);
    v
}

pub fn architecture() -> Check {
    let spec = GeneratorSpec::standard(1.0, true);
    if spec.to_string() != "[c7s1_64, d128, d256, R256, R256, R256, R256, R256, R256, u128, u64, c7s1_4]" {
        return Err(format!("unexpected layer string {spec}"));
    }
    let g = Generator::<f32>::new(spec.clone(), &mut rng(0)).map_err(|e| e.to_string())?;
    for size in [64, 256] {
        let want = hand_shapes(size, 64);
        if spec.feature_shapes(size, size) != want {
            return Err(format!("declared shapes at {size} differ"));
        }
        let x = Tensor::<f32>::zeros([1, 3, size, size]);
        let outs = g.layer_outputs(&x, Mode::Eval).map_err(|e| e.to_string())?;
        let got: Vec<[usize; 3]> = outs.iter().map(|t| [t.c(), t.h(), t.w()]).collect();
        if got != want {
            return Err(format!("at {size}: got {got:?}, want {want:?}"));
        }
    }
    // one 7x7 conv from 3 channels, with bias
    let counts = [
        ("c7s1_4", 3 * 4 * 49 + 4),
        ("c7s1_3", 3 * 3 * 49 + 3),
        // normalized stem has no bias, BN adds scale and shift
        ("c7s1_8, c7s1_4", 3 * 8 * 49 + 2 * 8 + 8 * 4 * 49 + 4),
    ];
    for (s, want) in counts {
        let g = Generator::<f32>::new(s.parse().map_err(|e: attn_gan::Error| e.to_string())?, &mut rng(0))
            .map_err(|e| e.to_string())?;
        if g.count_parameters() != want {
            return Err(format!("`{s}` has {} parameters, hand count {want}", g.count_parameters()));
        }
    }
    // single-block discriminator: 4x4 conv with bias, then a 1x1 scoring conv
    let d = Discriminator::<f32>::new(
        DiscriminatorSpec {
            in_channels: 3,
            widths: vec![8],
            first_block_norm: false,
        },
        &mut rng(0),
    )
    .map_err(|e| e.to_string())?;
    let want = 3 * 8 * 16 + 8 + 8 + 1;
    if d.count_parameters() != want {
        return Err(format!("1-block discriminator has {}, hand count {want}", d.count_parameters()));
    }
    Ok("layer shapes match at 64 and 256; 1-layer parameter counts match".into())
}
