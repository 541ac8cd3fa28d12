//! Command-line frontend: `segment`, `synth` and `eval`.
//!
//! Segmentation settings resolve as built-in defaults, then a `key = value`
//! config file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::imagegrid::{load_image, load_labels, save_field, save_image, save_labels, to_gray, RasterImage};
use crate::metrics::{evaluate, match_labels, report_csv};
use crate::model::ModelParams;
use crate::solver::{run, InitStrategy, SolveConfig, SolveMode, WeightInit};
use crate::synth::{make_phantom, parse_key_values, PhantomSpec};

pub const EXIT_CONVERGED: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "ieopf", version, about = "Level set segmentation with bias field estimation")]
pub struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment an image and estimate its bias field.
    Segment(SegmentArgs),
    /// Generate a synthetic phantom from a spec file.
    Synth(SynthArgs),
    /// Compare a predicted label map against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    Cv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Threshold,
    Disk,
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightInitArg {
    Random,
    Unit,
}

/// Comma-separated reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Floats(pub Vec<f64>);

impl FromStr for Floats {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{}` is not a number", t.trim())))
            .collect::<Result<Vec<_>, _>>()
            .map(Floats)
    }
}

/// Settings shared by flags and config files; unset fields fall through.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct Settings {
    /// Number of regions N.
    #[arg(long)]
    pub phases: Option<usize>,
    /// Number of basis functions M (1..=10).
    #[arg(long)]
    pub basis: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Label map used by `--init mask`.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Region weights, one per region or a single shared value.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<Floats>,
    /// Channel weights, one per channel or a single shared value.
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<Floats>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Magnitude of the initial binary step.
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub weight_init: Option<WeightInitArg>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Convert color input to gray first.
    #[arg(long, default_missing_value = "true", num_args = 0..=1)]
    pub gray: Option<bool>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> anyhow::Result<T> {
    value
        .parse()
        .map_err(|_| anyhow::anyhow!("config key `{key}`: cannot parse `{value}`"))
}

fn parse_enum<T: ValueEnum>(key: &str, value: &str) -> anyhow::Result<T> {
    T::from_str(value, true).map_err(|_| anyhow::anyhow!("config key `{key}`: unknown value `{value}`"))
}

impl Settings {
    pub fn from_config(text: &str) -> anyhow::Result<Self> {
        let mut s = Settings::default();
        for (line, key, value) in parse_key_values(text)? {
            let key = key.replace('-', "_");
            let v = value.as_str();
            match key.as_str() {
                "phases" => s.phases = Some(parse_value(&key, v)?),
                "basis" => s.basis = Some(parse_value(&key, v)?),
                "mode" => s.mode = Some(parse_enum(&key, v)?),
                "init" => s.init = Some(parse_enum(&key, v)?),
                "mask" => s.mask = Some(PathBuf::from(v)),
                "lambda" => s.lambda = Some(v.parse().map_err(anyhow::Error::msg)?),
                "gamma" => s.gamma = Some(v.parse().map_err(anyhow::Error::msg)?),
                "mu" => s.mu = Some(parse_value(&key, v)?),
                "nu" => s.nu = Some(parse_value(&key, v)?),
                "dt" => s.dt = Some(parse_value(&key, v)?),
                "eps" => s.eps = Some(parse_value(&key, v)?),
                "a" => s.a = Some(parse_value(&key, v)?),
                "seed" => s.seed = Some(parse_value(&key, v)?),
                "weight_init" => s.weight_init = Some(parse_enum(&key, v)?),
                "max_iters" => s.max_iters = Some(parse_value(&key, v)?),
                "tol" => s.tol = Some(parse_value(&key, v)?),
                "gray" => s.gray = Some(parse_value(&key, v)?),
                other => bail!("config line {line}: unknown key `{other}`"),
            }
        }
        Ok(s)
    }

    /// Fields set in `over` win.
    pub fn overlay(self, over: Settings) -> Settings {
        Settings {
            phases: over.phases.or(self.phases),
            basis: over.basis.or(self.basis),
            mode: over.mode.or(self.mode),
            init: over.init.or(self.init),
            mask: over.mask.or(self.mask),
            lambda: over.lambda.or(self.lambda),
            gamma: over.gamma.or(self.gamma),
            mu: over.mu.or(self.mu),
            nu: over.nu.or(self.nu),
            dt: over.dt.or(self.dt),
            eps: over.eps.or(self.eps),
            a: over.a.or(self.a),
            seed: over.seed.or(self.seed),
            weight_init: over.weight_init.or(self.weight_init),
            max_iters: over.max_iters.or(self.max_iters),
            tol: over.tol.or(self.tol),
            gray: over.gray.or(self.gray),
        }
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Input PGM or PPM image.
    pub input: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// `key = value` file with defaults for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Phantom spec file.
    pub spec: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted label map (PGM).
    pub pred: PathBuf,
    /// Ground truth label map (PGM).
    pub truth: PathBuf,
    #[arg(long)]
    pub phases: Option<usize>,
    /// Write the metrics CSV here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fully resolved segmentation run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub gray: bool,
    pub params: ModelParams,
    pub solve: SolveConfig,
}

fn broadcast(name: &str, values: Option<Floats>, n: usize) -> anyhow::Result<Option<Vec<f64>>> {
    match values {
        None => Ok(None),
        Some(Floats(v)) if v.len() == 1 => Ok(Some(vec![v[0]; n])),
        Some(Floats(v)) if v.len() == n => Ok(Some(v)),
        Some(Floats(v)) => bail!("--{name} has {} values, expected 1 or {n}", v.len()),
    }
}

impl RunConfig {
    /// Resolve settings against an image with `channels` channels.
    pub fn resolve(input: PathBuf, out_dir: PathBuf, s: Settings, channels: usize) -> anyhow::Result<Self> {
        let phases = s.phases.unwrap_or(2);
        if phases < 2 {
            bail!("--phases must be at least 2");
        }
        let gray = s.gray.unwrap_or(false);
        let channels = if gray { 1 } else { channels };
        let mut params = ModelParams::defaults(phases, channels);
        if let Some(v) = broadcast("lambda", s.lambda, phases)? {
            params.lambdas = v;
        }
        if let Some(v) = broadcast("gamma", s.gamma, channels)? {
            params.gammas = v;
        }
        params.basis_count = s.basis.unwrap_or(params.basis_count);
        params.mu = s.mu.unwrap_or(params.mu);
        params.nu = s.nu.unwrap_or(params.nu);
        params.dt = s.dt.unwrap_or(params.dt);
        params.epsilon = s.eps.unwrap_or(params.epsilon);
        params.a = s.a.unwrap_or(params.a);
        params.max_iters = s.max_iters.unwrap_or(params.max_iters);
        params.tol = s.tol.unwrap_or(params.tol);
        params.validate()?;

        let mode = match s.mode.unwrap_or(ModeArg::Full) {
            ModeArg::Full => SolveMode::Full,
            ModeArg::Cv => {
                if channels != 1 || phases != 2 {
                    bail!("--mode cv needs a single-channel image and two phases");
                }
                SolveMode::BiasFrozen
            }
        };
        let init = match s.init.unwrap_or(InitArg::Disk) {
            InitArg::Threshold => InitStrategy::Threshold,
            InitArg::Disk => InitStrategy::Disk,
            InitArg::Mask => {
                let path = s.mask.context("--init mask requires --mask <path>")?;
                InitStrategy::Labels(load_labels(&path, Some(phases))?)
            }
        };
        let weight_init = match s.weight_init.unwrap_or(WeightInitArg::Random) {
            WeightInitArg::Random => WeightInit::Random,
            WeightInitArg::Unit => WeightInit::Unit,
        };
        Ok(Self {
            input,
            out_dir,
            gray,
            params,
            solve: SolveConfig {
                phases,
                mode,
                init,
                weight_init,
                seed: s.seed.unwrap_or(42),
            },
        })
    }
}

/// Runs a segmentation and returns the process exit code.
pub fn cmd_segment(args: SegmentArgs) -> anyhow::Result<u8> {
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Settings::from_config(&text).with_context(|| format!("in config {}", path.display()))?
        }
        None => Settings::default(),
    };
    let settings = file.overlay(args.settings);
    let mut image = load_image(&args.input)?;
    let cfg = RunConfig::resolve(args.input, args.out_dir, settings, image.channels())?;
    if cfg.gray && image.channels() == 3 {
        image = to_gray(&image)?;
    } else if cfg.gray && image.channels() != 1 {
        bail!("--gray needs a 1- or 3-channel image");
    }
    let seg = run(&image, &cfg.solve, &cfg.params)?;

    let out = &cfg.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_labels(&seg.labels, out.join("labels.pgm"))?;
    for (j, b) in seg.bias.iter().enumerate() {
        save_field(b, out.join(format!("bias_{}.f64f", j + 1)))?;
    }
    for (j, c) in seg.corrected.iter().enumerate() {
        save_field(c, out.join(format!("corrected_{}.f64f", j + 1)))?;
    }
    write_corrected(&seg.corrected, out)?;
    for (q, phi) in seg.levelsets.fields().iter().enumerate() {
        save_field(phi, out.join(format!("phi_{}.f64f", q + 1)))?;
    }
    let trace = out.join("trace.csv");
    fs::write(&trace, seg.trace.to_csv()).with_context(|| format!("writing {}", trace.display()))?;

    info!(
        "{} after {} iterations",
        if seg.trace.converged { "converged" } else { "stopped" },
        seg.trace.iterations_run
    );
    Ok(if seg.trace.converged {
        EXIT_CONVERGED
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn write_corrected(corrected: &[crate::imagegrid::ScalarField], out: &Path) -> anyhow::Result<()> {
    if corrected.len() == 3 {
        save_image(&RasterImage::from_channels(corrected)?, out.join("corrected.ppm"))?;
    } else {
        for (j, c) in corrected.iter().enumerate() {
            let img = RasterImage::from_channels(std::slice::from_ref(c))?;
            save_image(&img, out.join(format!("corrected_{}.pgm", j + 1)))?;
        }
    }
    Ok(())
}

pub fn cmd_synth(args: SynthArgs) -> anyhow::Result<u8> {
    let spec = PhantomSpec::load(&args.spec)?;
    let ph = make_phantom(&spec)?;
    let out = &args.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let ext = if ph.image.channels() == 3 { "ppm" } else { "pgm" };
    if ph.image.channels() != 1 && ph.image.channels() != 3 {
        bail!("phantoms are written as PGM or PPM, so they need 1 or 3 channels");
    }
    save_image(&ph.image, out.join(format!("image.{ext}")))?;
    save_image(&ph.clean, out.join(format!("clean.{ext}")))?;
    save_labels(&ph.truth, out.join("truth.pgm"))?;
    for (j, b) in ph.bias.iter().enumerate() {
        save_field(b, out.join(format!("bias_{}.f64f", j + 1)))?;
    }
    Ok(EXIT_CONVERGED)
}

pub fn cmd_eval(args: EvalArgs) -> anyhow::Result<u8> {
    let phases = match args.phases {
        Some(n) => n,
        None => load_labels(&args.pred, None)?
            .phases()
            .max(load_labels(&args.truth, None)?.phases()),
    };
    let pred = load_labels(&args.pred, Some(phases))?;
    let truth = load_labels(&args.truth, Some(phases))?;
    let perm = match_labels(&pred, &truth, phases)?;
    let matched = pred.relabel(&perm)?;
    let csv = report_csv(&evaluate(&matched, &truth)?);
    print!("{csv}");
    if let Some(path) = &args.out {
        fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(EXIT_CONVERGED)
}

pub fn run_cli(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Segment(a) => cmd_segment(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

/// Parse arguments, run, and map the outcome onto the exit-code contract.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { EXIT_CONVERGED });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run_cli(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
