//! Command-line surface: `synth-data`, `train`, `translate`, `eval`, `ablate`.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ablation::{apply_ablation, Variant};
use crate::checkpoint;
use crate::config::TrainConfig;
use crate::data::{domain_dir, load_dataset, load_folder, synth_domains, Split};
use crate::error::{Error, Result};
use crate::eval::{compare_dirs, emit_grids, evaluate_translation, save_png, to_image, CompareMode};
use crate::generator::Generator;
use crate::losses::LossReport;
use crate::nn::Mode;
use crate::trainer::{self, TrainOptions, TrainState};
use crate::types::Domain;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "attn-gan", version, about = "Attention-guided unpaired image translation")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the synthetic two-domain dataset.
    SynthData(SynthArgs),
    /// Train a model on `root/{trainA,trainB}`.
    Train(TrainArgs),
    /// Apply a checkpoint to a folder of images.
    Translate(TranslateArgs),
    /// Compute MSE/PSNR metrics.
    Eval(EvalArgs),
    /// Train one named ablation variant.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Images per split and domain.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Config sources, applied in order: defaults (or `--full-scale`), `--config`
/// file, `--set` pairs, then the dedicated flags.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from 256-pixel images and full channel widths.
    #[arg(long)]
    pub full_scale: bool,
    /// Override any config key, e.g. `--set lambda_tv=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub channel_scale: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> std::result::Result<TrainConfig, CliError> {
        let mut cfg = if self.full_scale {
            TrainConfig::full_scale()
        } else {
            TrainConfig::default()
        };
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).map_err(|e| CliError::Runtime(Error::io(p, e)))?;
            cfg.apply_text(&text).map_err(CliError::Runtime)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v).map_err(CliError::Usage)?;
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("image_size", self.image_size.map(|v| v.to_string())),
            ("channel_scale", self.channel_scale.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v).map_err(CliError::Usage)?;
            }
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root holding trainA/ and trainB/.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and loss logs.
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Stop after this many steps in total.
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Continue from a checkpoint (its config is used; config flags are ignored).
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Direction {
    /// Domain A to domain B.
    Xy,
    /// Domain B to domain A.
    Yx,
}

impl Direction {
    fn source(self) -> Domain {
        match self {
            Direction::Xy => Domain::X,
            Direction::Yx => Domain::Y,
        }
    }

    fn generators(self, s: &TrainState) -> (&Generator<f32>, &Generator<f32>) {
        match self {
            Direction::Xy => (&s.g_xy, &s.g_yx),
            Direction::Yx => (&s.g_yx, &s.g_xy),
        }
    }
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Folder of source-domain images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "xy")]
    pub direction: Direction,
    /// Skip the tiled mask/content/output grids.
    #[arg(long)]
    pub no_grids: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model to evaluate on the test split of `--data`.
    #[arg(long, requires = "data", conflicts_with = "generated")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset root holding testA/ and testB/.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Folder of already translated images (output of `translate`).
    #[arg(long)]
    pub generated: Option<PathBuf>,
    /// Paired ground truth, matched by file name; without it images are
    /// compared against their inputs.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "xy")]
    pub direction: Direction,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// One of full, -ad, -ad-ag, -ad-pl, -ad-al, -ad-pl-al.
    #[arg(long, allow_hyphen_values = true)]
    pub variant: String,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .try_init();
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn execute(cmd: Command) -> std::result::Result<(), CliError> {
    match cmd {
        Command::SynthData(a) => {
            if a.n == 0 {
                return Err(CliError::Usage("--n must be at least 1".into()));
            }
            let s = synth_domains(&a.out, a.n, a.size, a.seed)?;
            println!("wrote {} images and {} masks to {}", s.images.len(), s.masks.len(), a.out.display());
            Ok(())
        }
        Command::Train(a) => {
            let cfg = a.cfg.resolve()?;
            run_training(&a, cfg)
        }
        Command::Ablate(a) => {
            let variant: Variant = a.variant.parse().map_err(CliError::Usage)?;
            let base = a.train.cfg.resolve()?;
            let cfg = apply_ablation(&base, variant.flags()).map_err(|e| CliError::Usage(e.to_string()))?;
            log::info!("variant {} ({})", variant.name(), variant.label());
            run_training(&a.train, cfg)
        }
        Command::Translate(a) => translate(&a),
        Command::Eval(a) => eval(&a),
    }
}

fn run_training(a: &TrainArgs, cfg: TrainConfig) -> std::result::Result<(), CliError> {
    let (mut state, cfg) = match &a.resume {
        Some(p) => checkpoint::load(p)?,
        None => (TrainState::new(&cfg)?, cfg),
    };
    let dx = load_dataset(&a.data, Split::Train, Domain::X, &cfg)?;
    let dy = load_dataset(&a.data, Split::Train, Domain::Y, &cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    cfg.save(&a.out.join("config.txt"))?;
    let opts = TrainOptions {
        out_dir: Some(a.out.clone()),
        max_steps: a.max_steps,
    };
    let outcome = trainer::train_from(&mut state, &dx, &dy, &cfg, &opts)?;
    write_losses(&a.out.join("losses.jsonl"), &outcome.steps)?;
    if outcome.checkpoints.is_empty() {
        // stopped mid-epoch by --max-steps
        let path = a.out.join(format!("checkpoint_step{:07}.agck", state.step));
        checkpoint::save(&state, &cfg, &path)?;
        println!("{}", path.display());
    }
    for c in &outcome.checkpoints {
        println!("{}", c.display());
    }
    Ok(())
}

fn write_losses(path: &Path, steps: &[LossReport]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in steps {
        let line = serde_json::to_string(r).expect("report serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn translate(a: &TranslateArgs) -> std::result::Result<(), CliError> {
    let (state, cfg) = checkpoint::load(&a.checkpoint)?;
    let ds = load_folder(&a.input, cfg.image_size, a.direction.source())?;
    let (gen, rev) = a.direction.generators(&state);
    let img_dir = a.out.join("images");
    let grid_dir = a.out.join("grids");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    for i in 0..ds.len() {
        let x = ds.batch(&[i], &[false])?;
        let (out, _) = gen.translate(&x, Mode::Eval)?;
        let stem = Path::new(&ds.names[i]).with_extension("png");
        save_png(&to_image(&out, 0), &img_dir.join(stem))?;
        if !a.no_grids {
            emit_grids(gen, Some(rev), &x, &grid_dir, i)?;
        }
    }
    println!("translated {} images into {}", ds.len(), img_dir.display());
    Ok(())
}

fn eval(a: &EvalArgs) -> std::result::Result<(), CliError> {
    let report = match (&a.checkpoint, &a.generated) {
        (Some(ckpt), None) => {
            let data = a.data.as_ref().expect("clap enforces --data");
            let (state, cfg) = checkpoint::load(ckpt)?;
            let test = load_dataset(data, Split::Test, a.direction.source(), &cfg)?;
            let reference = match &a.reference {
                Some(r) => Some(load_folder(r, cfg.image_size, a.direction.source().other())?),
                None => None,
            };
            evaluate_translation(a.direction.generators(&state).0, &test, reference.as_ref())?
        }
        (None, Some(gen)) => {
            let (reference, mode) = match (&a.reference, &a.data) {
                (Some(r), _) => (r.clone(), CompareMode::Reference),
                (None, Some(d)) => (domain_dir(d, Split::Test, a.direction.source()), CompareMode::Input),
                (None, None) => {
                    return Err(CliError::Usage("--generated needs --reference or --data".into()));
                }
            };
            compare_dirs(gen, &reference, mode)?
        }
        _ => return Err(CliError::Usage("eval needs either --checkpoint or --generated".into())),
    };
    report.write(&a.out)?;
    print!("{}", report.table());
    Ok(())
}
