//! Command-line front end. Every subcommand resolves its flags into a config, validates
//! it, writes it as `config.json` in the output directory, and only then does heavy work.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::encoder::{archive, load_encoder, Encoder, EncoderSpec, WeightSource, WEIGHTS_ENV};
use crate::error::Error;
use crate::experiments::{self, AblationGrid, BenchmarkConfig, ExperimentManifest, InputDigest, ToyConfig};
use crate::image::Image;
use crate::losses::{FamilyKind, MomentWeights, StyleFamily, StyleLossConfig, DEFAULT_CMD_ORDER};
use crate::measures::LayerId;
use crate::optimizer::{self, write_trace_csv, AlignConfig, Init, OptimizationConfig, Stylizer};

#[derive(Debug, Parser)]
#[command(name = "cmdnst", version, about = "Style transfer by central moment discrepancy")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stylize one content image with one style image.
    Stylize(StylizeArgs),
    /// 1D toy alignment of Beta(2,3) samples to Beta(0.5,0.45) samples.
    Toy(ToyArgs),
    /// CMD moment-weight ablation grid.
    Ablate(AblateArgs),
    /// One stylization per content weight alpha.
    SweepAlpha(SweepAlphaArgs),
    /// One stylization per learning rate.
    SweepLr(SweepLrArgs),
    /// Time the optimization loop per loss family.
    Bench(BenchArgs),
    /// Convert VGG-19 safetensors weights into the tensor-archive format.
    ConvertWeights(ConvertArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderChoice {
    Vgg19,
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitChoice {
    Content,
    Noise,
}

#[derive(Debug, Args)]
pub struct EncoderArgs {
    #[arg(long, value_enum, default_value = "vgg19")]
    pub encoder: EncoderChoice,
    /// VGG-19 archive manifest.
    #[arg(long, env = WEIGHTS_ENV)]
    pub weights: Option<PathBuf>,
    /// Seed of the TINY encoder weights.
    #[arg(long, default_value_t = 0)]
    pub encoder_seed: u64,
    /// Comma-separated style layers (architecture default when omitted).
    #[arg(long, value_delimiter = ',')]
    pub style_layers: Option<Vec<String>>,
    #[arg(long)]
    pub content_layer: Option<String>,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// cmd, mmd (Gram), mm (mean/std) or ot (Gaussian W2).
    #[arg(long, default_value = "cmd")]
    pub loss: String,
    /// CMD moment order, with a_i = 1.
    #[arg(long = "K", default_value_t = DEFAULT_CMD_ORDER)]
    pub k: usize,
    /// CMD weights a_1..a_K, comma separated; the length sets K and overrides --K.
    #[arg(long, value_delimiter = ',')]
    pub moments: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct OptArgs {
    #[arg(long, default_value_t = optimizer::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 50)]
    pub stop_window: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub stop_tol: f64,
    /// Defaults to twice the stop window, capped at --max-iters.
    #[arg(long)]
    pub min_iters: Option<usize>,
    /// Run all --max-iters iterations.
    #[arg(long)]
    pub no_stop: bool,
    #[arg(long, value_enum, default_value = "content")]
    pub init: InitChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ImageArgs {
    #[arg(long)]
    pub content: Option<PathBuf>,
    #[arg(long)]
    pub style: Option<PathBuf>,
    /// Resize both images to WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_size, conflicts_with = "max_side")]
    pub resize: Option<(usize, usize)>,
    /// Scale both images so the longer side has this length.
    #[arg(long)]
    pub max_side: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Re-run from a resolved config written by an earlier run; other flags are ignored.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    #[command(flatten)]
    pub images: ImageArgs,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub opt: OptArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Families to compare; `cmd` uses --K, `cmd:50` sets K explicitly.
    #[arg(long, value_delimiter = ',', default_value = "cmd,mm")]
    pub losses: Vec<String>,
    #[arg(long = "K", default_value_t = DEFAULT_CMD_ORDER)]
    pub k: usize,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub images: ImageArgs,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub opt: OptArgs,
    #[arg(long = "K", default_value_t = DEFAULT_CMD_ORDER)]
    pub k: usize,
    /// Explicit weight vectors separated by `;`, e.g. `1,0,0,0,0;0,1,1,1,0`.
    /// Defaults to the upper-triangular grid of contiguous moment ranges.
    #[arg(long)]
    pub vectors: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SweepAlphaArgs {
    #[command(flatten)]
    pub images: ImageArgs,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub opt: OptArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.2,0.01,0")]
    pub alphas: Vec<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SweepLrArgs {
    #[command(flatten)]
    pub images: ImageArgs,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub opt: OptArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,0.2,0.3")]
    pub lrs: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[arg(long, value_delimiter = ',', default_value = "cmd,mmd")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Manifest path; the data file is written next to it.
    #[arg(long)]
    pub output: PathBuf,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s}"))?;
    let w: usize = w.trim().parse().map_err(|e| format!("bad width in {s}: {e}"))?;
    let h: usize = h.trim().parse().map_err(|e| format!("bad height in {s}: {e}"))?;
    if w == 0 || h == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((w, h))
}

/// Image inputs as recorded in a resolved config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInputs {
    pub content: PathBuf,
    pub style: PathBuf,
    /// `[width, height]`.
    pub resize: Option<(usize, usize)>,
    pub max_side: Option<usize>,
}

/// Grid cell `[i, j]` (if any) and the weight vector of one ablation run.
pub type GridEntry = (Option<(usize, usize)>, Vec<f64>);

/// Everything a run used, defaults included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum ResolvedConfig {
    Stylize {
        images: ImageInputs,
        encoder: EncoderSpec,
        loss: StyleLossConfig,
        optimization: OptimizationConfig,
    },
    Toy {
        toy: ToyConfig,
        workers: usize,
    },
    Ablate {
        images: ImageInputs,
        encoder: EncoderSpec,
        /// Layers and content layer; the family is replaced per grid entry.
        loss: StyleLossConfig,
        optimization: OptimizationConfig,
        /// Grid cell `[i, j]` (if any) and weight vector per run.
        grid: Vec<GridEntry>,
        workers: usize,
    },
    SweepAlpha {
        images: ImageInputs,
        encoder: EncoderSpec,
        loss: StyleLossConfig,
        optimization: OptimizationConfig,
        alphas: Vec<f64>,
    },
    SweepLr {
        images: ImageInputs,
        encoder: EncoderSpec,
        loss: StyleLossConfig,
        optimization: OptimizationConfig,
        learning_rates: Vec<f64>,
        workers: usize,
    },
    Bench {
        encoder: EncoderSpec,
        bench: BenchmarkConfig,
    },
}

impl ResolvedConfig {
    fn name(&self) -> &'static str {
        match self {
            ResolvedConfig::Stylize { .. } => "stylize",
            ResolvedConfig::Toy { .. } => "toy",
            ResolvedConfig::Ablate { .. } => "ablate",
            ResolvedConfig::SweepAlpha { .. } => "sweep-alpha",
            ResolvedConfig::SweepLr { .. } => "sweep-lr",
            ResolvedConfig::Bench { .. } => "bench",
        }
    }

    /// Checks everything that can be checked without touching images or weights.
    pub fn validate(&self) -> crate::error::Result<()> {
        let check_common = |encoder: &EncoderSpec, loss: &StyleLossConfig, opt: &OptimizationConfig| {
            encoder.validate()?;
            loss.validate()?;
            for l in loss.required_layers() {
                if encoder.architecture.channels(&l).is_none() {
                    return Err(Error::Config(format!(
                        "layer {l} does not exist in {}",
                        encoder.architecture.id()
                    )));
                }
            }
            opt.validate()
        };
        match self {
            ResolvedConfig::Stylize {
                encoder,
                loss,
                optimization,
                ..
            } => check_common(encoder, loss, optimization),
            ResolvedConfig::Toy { toy, .. } => {
                if toy.families.is_empty() {
                    return Err(Error::Config("no loss families given".into()));
                }
                if toy.n_samples < 100 {
                    return Err(Error::InvalidInput(format!(
                        "toy experiment needs at least 100 samples, got {}",
                        toy.n_samples
                    )));
                }
                if !(toy.align.learning_rate.is_finite() && toy.align.learning_rate > 0.0) {
                    return Err(Error::InvalidInput("learning rate must be positive".into()));
                }
                Ok(())
            }
            ResolvedConfig::Ablate {
                encoder,
                loss,
                optimization,
                grid,
                ..
            } => {
                check_common(encoder, loss, optimization)?;
                for (_, w) in grid {
                    MomentWeights::new(w.clone())?;
                }
                Ok(())
            }
            ResolvedConfig::SweepAlpha {
                encoder,
                loss,
                optimization,
                alphas,
                ..
            } => {
                check_common(encoder, loss, optimization)?;
                for &alpha in alphas {
                    OptimizationConfig {
                        alpha,
                        ..optimization.clone()
                    }
                    .validate()?;
                }
                Ok(())
            }
            ResolvedConfig::SweepLr {
                encoder,
                loss,
                optimization,
                learning_rates,
                ..
            } => {
                check_common(encoder, loss, optimization)?;
                if let Some(bad) = learning_rates.iter().find(|lr| !(lr.is_finite() && **lr > 0.0)) {
                    return Err(Error::InvalidInput(format!(
                        "learning rates must be positive, got {bad}"
                    )));
                }
                Ok(())
            }
            ResolvedConfig::Bench { encoder, bench } => {
                encoder.validate()?;
                for m in &bench.methods {
                    FamilyKind::from_str(m)?;
                }
                if bench.repeats == 0 || bench.iterations == 0 {
                    return Err(Error::InvalidInput("repeats and iterations must be >= 1".into()));
                }
                if bench.image_size < crate::encoder::MIN_IMAGE_SIDE {
                    return Err(Error::InvalidInput(format!(
                        "benchmark size must be at least {}",
                        crate::encoder::MIN_IMAGE_SIDE
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Failure of a CLI invocation; `Usage` maps to exit code 2, `Runtime` to 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "{}: {e}", category(e)),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn category(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) => "invalid input",
        Error::Contract(_) => "contract",
        Error::Numeric(_) | Error::Diverged { .. } => "numeric",
        Error::Config(_) => "config",
        Error::Load { .. } => "load",
        Error::Image(_) => "image",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("cmdnst: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> CliResult<()> {
    if let Command::ConvertWeights(a) = &command {
        let m = archive::convert_safetensors(&a.input, &a.output)?;
        println!(
            "wrote {} ({} tensors, sha256 {})",
            a.output.display(),
            m.tensors.len(),
            m.data_sha256
        );
        return Ok(());
    }
    let (resolved, out_dir) = resolve(command)?;
    resolved.validate().map_err(usage)?;
    std::fs::create_dir_all(&out_dir).map_err(Error::from)?;
    std::fs::write(
        out_dir.join("config.json"),
        serde_json::to_vec_pretty(&resolved).map_err(Error::from)?,
    )
    .map_err(Error::from)?;
    execute(&resolved, &out_dir)
}

/// Maps flags (or a config file) onto a resolved config without doing any work.
pub fn resolve(command: Command) -> CliResult<(ResolvedConfig, PathBuf)> {
    let out = match &command {
        Command::Stylize(a) => &a.out,
        Command::Toy(a) => &a.out,
        Command::Ablate(a) => &a.out,
        Command::SweepAlpha(a) => &a.out,
        Command::SweepLr(a) => &a.out,
        Command::Bench(a) => &a.out,
        Command::ConvertWeights(_) => return Err(CliError::Usage("convert-weights has no config".into())),
    };
    let out_dir = out.out_dir.clone();
    if let Some(path) = &out.config {
        let text = std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ResolvedConfig = serde_json::from_slice(&text)
            .map_err(|e| CliError::Usage(format!("{} is not a resolved config: {e}", path.display())))?;
        let want = command_name(&command);
        if cfg.name() != want {
            return Err(CliError::Usage(format!(
                "{} holds a {} config, not {want}",
                path.display(),
                cfg.name()
            )));
        }
        return Ok((cfg, out_dir));
    }
    let cfg = match command {
        Command::Stylize(a) => {
            let encoder = encoder_spec(&a.encoder)?;
            ResolvedConfig::Stylize {
                images: image_inputs(&a.images)?,
                loss: loss_config(&a.loss, &encoder)?,
                optimization: opt_config(&a.opt),
                encoder,
            }
        }
        Command::Toy(a) => {
            let families = a
                .losses
                .iter()
                .map(|s| toy_family(s, a.k))
                .collect::<CliResult<Vec<_>>>()?;
            ResolvedConfig::Toy {
                toy: ToyConfig {
                    families,
                    n_samples: a.samples,
                    align: AlignConfig {
                        steps: a.steps,
                        learning_rate: a.lr,
                        ..AlignConfig::default()
                    },
                    seed: a.seed,
                    ..ToyConfig::default()
                },
                workers: a.workers,
            }
        }
        Command::Ablate(a) => {
            let encoder = encoder_spec(&a.encoder)?;
            let grid = match &a.vectors {
                Some(v) => AblationGrid::from_vectors(parse_vectors(v)?).map_err(usage)?,
                None => AblationGrid::upper_triangular(a.k).map_err(usage)?,
            };
            let family = StyleFamily::cmd(a.k).map_err(usage)?;
            ResolvedConfig::Ablate {
                images: image_inputs(&a.images)?,
                loss: StyleLossConfig::equal_weights(family, &encoder.style_layers, encoder.content_layer.clone())
                    .map_err(usage)?,
                optimization: opt_config(&a.opt),
                grid: grid
                    .entries
                    .into_iter()
                    .map(|(c, w)| (c, w.as_slice().to_vec()))
                    .collect(),
                workers: a.workers,
                encoder,
            }
        }
        Command::SweepAlpha(a) => {
            let encoder = encoder_spec(&a.encoder)?;
            ResolvedConfig::SweepAlpha {
                images: image_inputs(&a.images)?,
                loss: loss_config(&a.loss, &encoder)?,
                optimization: opt_config(&a.opt),
                alphas: a.alphas,
                encoder,
            }
        }
        Command::SweepLr(a) => {
            let encoder = encoder_spec(&a.encoder)?;
            ResolvedConfig::SweepLr {
                images: image_inputs(&a.images)?,
                loss: loss_config(&a.loss, &encoder)?,
                optimization: opt_config(&a.opt),
                learning_rates: a.lrs,
                workers: a.workers,
                encoder,
            }
        }
        Command::Bench(a) => ResolvedConfig::Bench {
            encoder: encoder_spec(&a.encoder)?,
            bench: BenchmarkConfig {
                methods: a.methods,
                image_size: a.size,
                iterations: a.iters,
                repeats: a.repeats,
                seed: a.seed,
            },
        },
        Command::ConvertWeights(_) => unreachable!("handled above"),
    };
    Ok((cfg, out_dir))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Stylize(_) => "stylize",
        Command::Toy(_) => "toy",
        Command::Ablate(_) => "ablate",
        Command::SweepAlpha(_) => "sweep-alpha",
        Command::SweepLr(_) => "sweep-lr",
        Command::Bench(_) => "bench",
        Command::ConvertWeights(_) => "convert-weights",
    }
}

fn image_inputs(a: &ImageArgs) -> CliResult<ImageInputs> {
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone()
            .ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
    };
    if a.max_side == Some(0) {
        return Err(CliError::Usage("--max-side must be positive".into()));
    }
    Ok(ImageInputs {
        content: need(&a.content, "content")?,
        style: need(&a.style, "style")?,
        resize: a.resize,
        max_side: a.max_side,
    })
}

fn encoder_spec(a: &EncoderArgs) -> CliResult<EncoderSpec> {
    let mut spec = match a.encoder {
        EncoderChoice::Tiny => EncoderSpec::tiny(a.encoder_seed),
        EncoderChoice::Vgg19 => {
            let path = a.weights.clone().ok_or_else(|| {
                CliError::Usage(format!(
                    "VGG-19 needs --weights or {WEIGHTS_ENV} pointing at an archive manifest"
                ))
            })?;
            EncoderSpec::vgg19(path)
        }
    };
    if let Some(layers) = &a.style_layers {
        spec.style_layers = layers.iter().map(|l| LayerId::from(l.trim())).collect();
    }
    if let Some(l) = &a.content_layer {
        spec.content_layer = LayerId::from(l.trim());
    }
    Ok(spec)
}

fn loss_config(a: &LossArgs, encoder: &EncoderSpec) -> CliResult<StyleLossConfig> {
    let kind = FamilyKind::from_str(&a.loss).map_err(usage)?;
    let family = match (kind, &a.moments) {
        (FamilyKind::Cmd, Some(w)) => StyleFamily::Cmd {
            moment_weights: MomentWeights::new(w.clone()).map_err(usage)?,
        },
        (FamilyKind::Cmd, None) => StyleFamily::cmd(a.k).map_err(usage)?,
        (_, Some(_)) => return Err(CliError::Usage("--moments only applies to --loss cmd".into())),
        (other, None) => StyleFamily::default_for(other),
    };
    StyleLossConfig::equal_weights(family, &encoder.style_layers, encoder.content_layer.clone()).map_err(usage)
}

fn opt_config(a: &OptArgs) -> OptimizationConfig {
    OptimizationConfig {
        alpha: a.alpha,
        learning_rate: a.lr,
        max_iterations: a.max_iters,
        stop_window: a.stop_window,
        stop_rel_tol: a.stop_tol,
        min_iterations: a.min_iters.unwrap_or((2 * a.stop_window).min(a.max_iters)),
        stopping: !a.no_stop,
        seed: a.seed,
        init: match a.init {
            InitChoice::Content => Init::ContentCopy,
            InitChoice::Noise => Init::Noise,
        },
        ..OptimizationConfig::default()
    }
}

fn toy_family(s: &str, k: usize) -> CliResult<StyleFamily> {
    let (name, order) = match s.split_once(':') {
        Some((n, o)) => {
            let o: usize = o
                .parse()
                .map_err(|e| CliError::Usage(format!("bad moment order in {s}: {e}")))?;
            (n, o)
        }
        None => (s, k),
    };
    match FamilyKind::from_str(name.trim()).map_err(usage)? {
        FamilyKind::Cmd => StyleFamily::cmd(order).map_err(usage),
        other => Ok(StyleFamily::default_for(other)),
    }
}

fn parse_vectors(s: &str) -> CliResult<Vec<Vec<f64>>> {
    s.split(';')
        .filter(|v| !v.trim().is_empty())
        .map(|v| {
            v.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|e| CliError::Usage(format!("bad weight {x:?}: {e}")))
                })
                .collect()
        })
        .collect()
}

fn load_images(inputs: &ImageInputs) -> crate::error::Result<(Image, Image)> {
    let prep = |p: &Path| -> crate::error::Result<Image> {
        let img = Image::load(p)?;
        match (inputs.resize, inputs.max_side) {
            (Some((w, h)), _) => img.resized(w, h),
            (None, Some(m)) => img.resized_max_side(m),
            (None, None) => Ok(img),
        }
    };
    Ok((prep(&inputs.content)?, prep(&inputs.style)?))
}

fn image_digests(content: &Image, style: &Image) -> Vec<InputDigest> {
    vec![
        InputDigest {
            name: "content".into(),
            sha256: experiments::image_digest(content),
        },
        InputDigest {
            name: "style".into(),
            sha256: experiments::image_digest(style),
        },
    ]
}

fn encoder_digest(spec: &EncoderSpec) -> InputDigest {
    let sha256 = match &spec.weight_source {
        WeightSource::Archive { path } => std::fs::read(path).map(|b| archive::sha256_hex(&b)).unwrap_or_default(),
        WeightSource::Seed { seed, zero_bias } => archive::sha256_hex(format!("seed:{seed}:{zero_bias}").as_bytes()),
    };
    InputDigest {
        name: format!("encoder:{}", spec.architecture.id()),
        sha256,
    }
}

fn write_json(path: PathBuf, value: &impl Serialize) -> crate::error::Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn weights_tag(w: &[f64]) -> String {
    w.iter().map(|a| format!("{a}")).collect::<Vec<_>>().join("-")
}

fn execute(cfg: &ResolvedConfig, out: &Path) -> CliResult<()> {
    match cfg {
        ResolvedConfig::Stylize {
            images,
            encoder,
            loss,
            optimization,
        } => {
            let (content, style) = load_images(images)?;
            let enc = load_encoder(encoder)?;
            let run = optimizer::stylize(&content, &style, &enc, loss, optimization)?;
            run.image.save(out.join("out.png"))?;
            run.write_trace_csv(out.join("trace.csv"))?;
            write_json(out.join("run.json"), &run.metadata())?;
            let mut inputs = image_digests(&content, &style);
            inputs.push(encoder_digest(encoder));
            ExperimentManifest::new("stylize", cfg, inputs)?.write(out.join("manifest.json"))?;
            println!(
                "{} after {} iterations ({:?}); style {:.4e}, content {:.4e}",
                out.join("out.png").display(),
                run.iterations_executed,
                run.stop_reason,
                run.last().style,
                run.last().content
            );
        }
        ResolvedConfig::Toy { toy, workers } => {
            let report = experiments::run_toy_experiment(toy, *workers)?;
            report.write_gap_csv(out.join("gaps.csv"))?;
            report.write_histogram_csv(out.join("histograms.csv"), experiments::HISTOGRAM_BINS)?;
            ExperimentManifest::new("toy", cfg, Vec::new())?.write(out.join("manifest.json"))?;
            for row in &report.rows {
                let gaps: Vec<String> = row.gaps.iter().map(|g| format!("{g:.2e}")).collect();
                println!("{:<16} {}", row.label, gaps.join(" "));
            }
        }
        ResolvedConfig::Ablate {
            images,
            encoder,
            loss,
            optimization,
            grid,
            workers,
        } => {
            let (content, style) = load_images(images)?;
            let enc = load_encoder(encoder)?;
            let grid = AblationGrid {
                entries: grid
                    .iter()
                    .map(|(c, w)| Ok((*c, MomentWeights::new(w.clone())?)))
                    .collect::<crate::error::Result<_>>()?,
            };
            let runs = experiments::run_moment_ablation(&content, &style, &enc, loss, optimization, &grid, *workers)?;
            let mut w = csv::Writer::from_path(out.join("ablation.csv")).map_err(optimizer::csv_err)?;
            w.write_record([
                "row",
                "col",
                "weights",
                "iterations",
                "final_style",
                "final_content",
                "image",
            ])
            .map_err(optimizer::csv_err)?;
            for r in &runs {
                let tag = weights_tag(r.weights.as_slice());
                let name = format!("a_{tag}.png");
                r.run.image.save(out.join(&name))?;
                write_trace_csv(&r.run.trace, out.join(format!("trace_{tag}.csv")))?;
                let (row, col) = r.cell.map(|(i, j)| (i.to_string(), j.to_string())).unwrap_or_default();
                w.write_record([
                    row,
                    col,
                    tag,
                    r.run.iterations_executed.to_string(),
                    format!("{:e}", r.run.last().style),
                    format!("{:e}", r.run.last().content),
                    name,
                ])
                .map_err(optimizer::csv_err)?;
            }
            w.flush().map_err(Error::from)?;
            let mut inputs = image_digests(&content, &style);
            inputs.push(encoder_digest(encoder));
            ExperimentManifest::new("ablate", cfg, inputs)?.write(out.join("manifest.json"))?;
            println!("{} runs written to {}", runs.len(), out.display());
        }
        ResolvedConfig::SweepAlpha {
            images,
            encoder,
            loss,
            optimization,
            alphas,
        } => {
            let (content, style) = load_images(images)?;
            let enc = load_encoder(encoder)?;
            let runs = Stylizer::new(&content, &style, &enc, loss)?.alpha_sweep(optimization, alphas)?;
            let mut w = csv::Writer::from_path(out.join("sweep.csv")).map_err(optimizer::csv_err)?;
            w.write_record([
                "alpha",
                "iterations",
                "stop_reason",
                "final_total",
                "final_content",
                "final_style",
            ])
            .map_err(optimizer::csv_err)?;
            for (i, r) in runs.iter().enumerate() {
                r.image.save(out.join(format!("alpha_{i}.png")))?;
                r.write_trace_csv(out.join(format!("trace_alpha_{i}.csv")))?;
                let last = r.last();
                w.write_record([
                    format!("{}", r.config.alpha),
                    r.iterations_executed.to_string(),
                    format!("{:?}", r.stop_reason),
                    format!("{:e}", last.total),
                    format!("{:e}", last.content),
                    format!("{:e}", last.style),
                ])
                .map_err(optimizer::csv_err)?;
            }
            w.flush().map_err(Error::from)?;
            let mut inputs = image_digests(&content, &style);
            inputs.push(encoder_digest(encoder));
            ExperimentManifest::new("sweep-alpha", cfg, inputs)?.write(out.join("manifest.json"))?;
            println!("{} runs written to {}", runs.len(), out.display());
        }
        ResolvedConfig::SweepLr {
            images,
            encoder,
            loss,
            optimization,
            learning_rates,
            workers,
        } => {
            let (content, style) = load_images(images)?;
            let enc = load_encoder(encoder)?;
            let outcomes =
                experiments::run_lr_study(&content, &style, &enc, loss, optimization, learning_rates, *workers)?;
            let mut w = csv::Writer::from_path(out.join("sweep.csv")).map_err(optimizer::csv_err)?;
            w.write_record(["learning_rate", "iterations", "final_content", "final_style", "aborted"])
                .map_err(optimizer::csv_err)?;
            for (i, o) in outcomes.iter().enumerate() {
                write_trace_csv(&o.trace, out.join(format!("trace_lr_{i}.csv")))?;
                if let Some(r) = &o.run {
                    r.image.save(out.join(format!("lr_{i}.png")))?;
                }
                let last = o.trace.last();
                w.write_record([
                    format!("{}", o.learning_rate),
                    o.trace.len().to_string(),
                    last.map(|l| format!("{:e}", l.content)).unwrap_or_default(),
                    last.map(|l| format!("{:e}", l.style)).unwrap_or_default(),
                    o.aborted.clone().unwrap_or_default(),
                ])
                .map_err(optimizer::csv_err)?;
            }
            w.flush().map_err(Error::from)?;
            let mut inputs = image_digests(&content, &style);
            inputs.push(encoder_digest(encoder));
            ExperimentManifest::new("sweep-lr", cfg, inputs)?.write(out.join("manifest.json"))?;
            println!("{} runs written to {}", outcomes.len(), out.display());
        }
        ResolvedConfig::Bench { encoder, bench } => {
            let enc: Encoder = load_encoder(encoder)?;
            let reports = experiments::run_benchmark(bench, &enc)?;
            let mut w = csv::Writer::from_path(out.join("bench.csv")).map_err(optimizer::csv_err)?;
            for r in &reports {
                w.serialize(r).map_err(optimizer::csv_err)?;
                println!(
                    "{:<10} {}x{} {} iters: {:.3}s ± {:.3}s",
                    r.method, r.image_size, r.image_size, r.iterations, r.mean_seconds, r.std_seconds
                );
            }
            w.flush().map_err(Error::from)?;
            write_json(out.join("bench.json"), &reports)?;
            ExperimentManifest::new("bench", cfg, vec![encoder_digest(encoder)])?.write(out.join("manifest.json"))?;
        }
    }
    Ok(())
}
