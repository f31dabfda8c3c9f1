//! `ganrx` command line: scene synthesis, training, detection, evaluation,
//! repeated-run experiments and the gradient self-check.
//!
//! Settings come from built-in defaults, then an optional `key=value`
//! config file, then flags. Exit codes: 0 success, 1 runtime or data error,
//! 2 usage error.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::detect::{detect, DetectOptions, Method, ScoreMap};
use crate::error::{Error, Result};
use crate::eval::{export_roc, multi_run, report_csv, roc_curve, run_seeds, write_report, RunConfig};
use crate::fsutil::read_all;
use crate::gan::{train, train_autoencoder, write_metrics, GanHyper, Generator};
use crate::hsi::{load_cube, load_mask, normalize_cube, save_cube, save_mask};
use crate::nn::gradcheck::{check_all, GradCheckConfig};
use crate::nn::{load_network, save_network, LayerKind};
use crate::synth::{generate_scene, SceneSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// What `train` optimizes: the full adversarial objective or the
/// reconstruction term alone (the autoencoder baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    #[default]
    Gan,
    Ae,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gan" => Ok(Objective::Gan),
            "ae" => Ok(Objective::Ae),
            _ => Err(Error::Config(format!("unknown objective {s:?}; valid: gan, ae"))),
        }
    }
}

/// Every tunable setting. Seeds stay `None` until a file or flag sets them;
/// commands that need one draw it at random and print it.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub scene: SceneSpec,
    pub scene_seed: Option<u64>,
    pub block: usize,
    pub abundances: Vec<f64>,
    pub hyper: GanHyper,
    pub seed: Option<u64>,
    pub objective: Objective,
    pub detect: DetectOptions,
    pub methods: Vec<Method>,
    pub runs: usize,
}

impl Default for Config {
    fn default() -> Self {
        let run = RunConfig::default();
        Self {
            scene: run.scene,
            scene_seed: None,
            block: run.block,
            abundances: run.abundances,
            hyper: run.hyper,
            seed: None,
            objective: Objective::Gan,
            detect: run.detect,
            methods: vec![Method::Rx, Method::GanRx],
            runs: 20,
        }
    }
}

/// Recognized config keys, in documentation order.
pub const CONFIG_KEYS: [&str; 20] = [
    "width",
    "height",
    "bands",
    "endmembers",
    "noise_sigma",
    "scene_seed",
    "block",
    "abundances",
    "alpha",
    "lr",
    "beta1",
    "beta2",
    "batch_size",
    "epochs",
    "seed",
    "objective",
    "ridge",
    "wrx_iterations",
    "methods",
    "runs",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    Ok(items)
}

fn parse_methods(value: &str) -> Result<Vec<Method>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Method::from_str)
        .collect()
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "width" => self.scene.width = parse_value(key, value)?,
            "height" => self.scene.height = parse_value(key, value)?,
            "bands" => self.scene.bands = parse_value(key, value)?,
            "endmembers" => self.scene.endmembers = parse_value(key, value)?,
            "noise_sigma" => self.scene.noise_sigma = parse_value(key, value)?,
            "scene_seed" => self.scene_seed = Some(parse_value(key, value)?),
            "block" => self.block = parse_value(key, value)?,
            "abundances" => self.abundances = parse_list(key, value)?,
            "alpha" => self.hyper.alpha = parse_value(key, value)?,
            "lr" => self.hyper.lr = parse_value(key, value)?,
            "beta1" => self.hyper.beta1 = parse_value(key, value)?,
            "beta2" => self.hyper.beta2 = parse_value(key, value)?,
            "batch_size" => self.hyper.batch_size = parse_value(key, value)?,
            "epochs" => self.hyper.epochs = parse_value(key, value)?,
            "seed" => self.seed = Some(parse_value(key, value)?),
            "objective" => self.objective = value.parse()?,
            "ridge" => self.detect.ridge = parse_value(key, value)?,
            "wrx_iterations" => self.detect.wrx_iterations = parse_value(key, value)?,
            "methods" => self.methods = parse_methods(value)?,
            "runs" => self.runs = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (number, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", number + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", number + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = Self::default();
        if let Some(path) = path {
            let bytes = read_all(path)?;
            let text = std::str::from_utf8(&bytes)
                .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
            config.apply_text(text)?;
        }
        Ok(config)
    }

    /// A config file that reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let s = &self.scene;
        let h = &self.hyper;
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "width={}\nheight={}\nbands={}", s.width, s.height, s.bands);
        let _ = writeln!(out, "endmembers={}\nnoise_sigma={}", s.endmembers, s.noise_sigma);
        if let Some(seed) = self.scene_seed {
            let _ = writeln!(out, "scene_seed={seed}");
        }
        let _ = writeln!(out, "block={}\nabundances={}", self.block, list(&self.abundances));
        let _ = writeln!(out, "alpha={}\nlr={}\nbeta1={}\nbeta2={}", h.alpha, h.lr, h.beta1, h.beta2);
        let _ = writeln!(out, "batch_size={}\nepochs={}", h.batch_size, h.epochs);
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "seed={seed}");
        }
        let objective = match self.objective {
            Objective::Gan => "gan",
            Objective::Ae => "ae",
        };
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        let _ = writeln!(out, "objective={objective}");
        let _ = writeln!(out, "ridge={}\nwrx_iterations={}", self.detect.ridge, self.detect.wrx_iterations);
        let _ = writeln!(out, "methods={}\nruns={}", methods.join(","), self.runs);
        out
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}

fn positive_usize(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn method_arg(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| strip_prefix(&e))
}

fn objective_arg(s: &str) -> std::result::Result<Objective, String> {
    s.parse().map_err(|e: Error| strip_prefix(&e))
}

fn layer_kind_arg(s: &str) -> std::result::Result<LayerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "ganrx", version, about = "GAN background suppression for hyperspectral anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with implanted targets.
    Synth(SynthArgs),
    /// Train a generator on a cube.
    Train(TrainArgs),
    /// Score every pixel of a cube.
    Detect(DetectArgs),
    /// ROC curve and AUC of a score map against a mask.
    Eval(EvalArgs),
    /// Repeated-seed experiment on one synthetic scene.
    Run(RunArgs),
    /// Check analytic gradients of every layer kind.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Default)]
pub struct SceneFlags {
    #[arg(long, value_parser = positive_usize)]
    pub width: Option<usize>,
    #[arg(long, value_parser = positive_usize)]
    pub height: Option<usize>,
    #[arg(long, value_parser = positive_usize)]
    pub bands: Option<usize>,
    #[arg(long, value_parser = positive_usize)]
    pub endmembers: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Side length of each square target block.
    #[arg(long, value_parser = positive_usize)]
    pub block: Option<usize>,
    /// Comma-separated abundances, one block each.
    #[arg(long)]
    pub abundances: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct HyperFlags {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_parser = positive_usize)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct DetectFlags {
    /// Relative covariance ridge.
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long, value_parser = positive_usize)]
    pub wrx_iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub scene: SceneFlags,
    /// Scene seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output prefix; writes `<out>.hsc` and `<out>_mask.pgm`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperFlags,
    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `gan` (default) or `ae` for the reconstruction-only baseline.
    #[arg(long, value_parser = objective_arg)]
    pub objective: Option<Objective>,
    #[arg(long)]
    pub model_out: PathBuf,
    /// Defaults to `<model-out stem>_metrics.csv` next to the model.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// Also save the discriminator.
    #[arg(long)]
    pub disc_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// One of rx, wrx, ae, gan-rx.
    #[arg(long, value_parser = method_arg)]
    pub method: Method,
    #[arg(long)]
    pub cube: PathBuf,
    /// Generator model; required by ae and gan-rx.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectFlags,
    /// Output prefix; writes `<out>.hsc` and `<out>.pgm`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub roc_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub scene: SceneFlags,
    #[command(flatten)]
    pub hyper: HyperFlags,
    #[command(flatten)]
    pub detect: DetectFlags,
    #[arg(long)]
    pub scene_seed: Option<u64>,
    /// First training seed; run `i` uses `seed + i`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = positive_usize)]
    pub runs: Option<usize>,
    /// Comma-separated methods.
    #[arg(long)]
    pub methods: Option<String>,
    /// Aggregate report path.
    #[arg(long, default_value = "report.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20, value_parser = positive_usize)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, hide = true, value_parser = layer_kind_arg)]
    pub inject_sign_error: Option<LayerKind>,
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn apply_scene(config: &mut Config, flags: &SceneFlags) -> Result<()> {
    let s = &mut config.scene;
    s.width = flags.width.unwrap_or(s.width);
    s.height = flags.height.unwrap_or(s.height);
    s.bands = flags.bands.unwrap_or(s.bands);
    s.endmembers = flags.endmembers.unwrap_or(s.endmembers);
    s.noise_sigma = flags.noise_sigma.unwrap_or(s.noise_sigma);
    config.block = flags.block.unwrap_or(config.block);
    if let Some(list) = &flags.abundances {
        config.abundances = parse_list("--abundances", list)?;
    }
    Ok(())
}

fn apply_hyper(config: &mut Config, flags: &HyperFlags) {
    let h = &mut config.hyper;
    h.alpha = flags.alpha.unwrap_or(h.alpha);
    h.lr = flags.lr.unwrap_or(h.lr);
    h.beta1 = flags.beta1.unwrap_or(h.beta1);
    h.beta2 = flags.beta2.unwrap_or(h.beta2);
    h.batch_size = flags.batch_size.unwrap_or(h.batch_size);
    h.epochs = flags.epochs.unwrap_or(h.epochs);
}

fn apply_detect(config: &mut Config, flags: &DetectFlags) {
    config.detect.ridge = flags.ridge.unwrap_or(config.detect.ridge);
    config.detect.wrx_iterations = flags.wrx_iterations.unwrap_or(config.detect.wrx_iterations);
}

/// Returns the configured seed or draws one and reports it.
fn resolve_seed(seed: Option<u64>, name: &str, out: &mut dyn Write) -> u64 {
    seed.unwrap_or_else(|| {
        let drawn: u64 = rand::random();
        let _ = writeln!(out, "{name}={drawn} (randomly drawn)");
        drawn
    })
}

fn check_scene(config: &Config) -> Result<()> {
    config.scene.validate().map_err(|e| Error::Config(strip_prefix(&e)))?;
    if config.abundances.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(Error::Config("abundances must lie in (0, 1]".into()));
    }
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> CmdResult {
    let mut config = Config::load(args.config.as_deref())?;
    apply_scene(&mut config, &args.scene)?;
    check_scene(&config)?;
    config.scene.seed = resolve_seed(args.seed.or(config.scene_seed), "seed", out);
    let scene = generate_scene(&config.scene, config.block, &config.abundances, None)
        .map_err(|e| match e {
            Error::Layout(msg) | Error::Placement(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other),
        })?;
    let cube_path = with_suffix(&args.out, ".hsc");
    let mask_path = with_suffix(&args.out, "_mask.pgm");
    save_cube(&scene.cube, &cube_path)?;
    save_mask(&scene.mask, &mask_path)?;
    let _ = writeln!(out, "anomaly_pixels={}", scene.mask.anomaly_count());
    let _ = writeln!(out, "wrote {} and {}", cube_path.display(), mask_path.display());
    Ok(())
}

fn default_metrics_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    model.with_file_name(format!("{stem}_metrics.csv"))
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> CmdResult {
    let mut config = Config::load(args.config.as_deref())?;
    apply_hyper(&mut config, &args.hyper);
    config.objective = args.objective.unwrap_or(config.objective);
    config.hyper.validate()?;
    let raw = load_cube(&args.cube)?;
    config.hyper.seed = resolve_seed(args.seed.or(config.seed), "seed", out);
    let normalized = normalize_cube(&raw).0;
    let (generator, metrics) = match config.objective {
        Objective::Gan => {
            let trained = train(&normalized, &config.hyper)?;
            if let Some(path) = &args.disc_out {
                save_network(&trained.discriminator, path)?;
            }
            (trained.generator, trained.metrics)
        }
        Objective::Ae => train_autoencoder(&normalized, &config.hyper)?,
    };
    save_network(generator.network(), &args.model_out)?;
    let metrics_path = args.metrics_out.clone().unwrap_or_else(|| default_metrics_path(&args.model_out));
    write_metrics(&metrics, &metrics_path)?;
    if let Some(last) = metrics.last() {
        let _ = writeln!(
            out,
            "epochs={} d_loss={:.6} g_adv={:.6} l1={:.6} total={:.6}",
            metrics.len(),
            last.d_loss,
            last.g_adv,
            last.l1,
            last.total
        );
    }
    let _ = writeln!(out, "wrote {} and {}", args.model_out.display(), metrics_path.display());
    Ok(())
}

fn load_generator(path: &Path) -> Result<Generator> {
    Generator::from_network(load_network(path)?)
}

fn cmd_detect(args: &DetectArgs, out: &mut dyn Write) -> CmdResult {
    let mut config = Config::load(args.config.as_deref())?;
    apply_detect(&mut config, &args.detect);
    let generator = match (&args.model, args.method.needs_model()) {
        (Some(path), true) => Some(load_generator(path)?),
        (None, true) => {
            return Err(Failure::Usage(format!("--method {} requires --model", args.method)));
        }
        _ => None,
    };
    let cube = load_cube(&args.cube)?;
    let map = detect(args.method, &cube, generator.as_ref(), &config.detect)?;
    let cube_path = with_suffix(&args.out, ".hsc");
    let pgm_path = with_suffix(&args.out, ".pgm");
    map.save_cube(&cube_path)?;
    map.save_pgm(&pgm_path)?;
    let _ = writeln!(out, "wrote {} and {}", cube_path.display(), pgm_path.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CmdResult {
    let scores = ScoreMap::from_cube(&load_cube(&args.scores)?)?;
    let mask = load_mask(&args.mask)?;
    if (scores.width(), scores.height()) != (mask.width(), mask.height()) {
        return Err(Failure::Usage(format!(
            "score map is {}x{} but mask is {}x{}",
            scores.width(),
            scores.height(),
            mask.width(),
            mask.height()
        )));
    }
    let curve = roc_curve(&scores, &mask)?;
    if let Some(path) = &args.roc_out {
        export_roc(&curve, path)?;
    }
    let _ = writeln!(out, "auc={:.6}", curve.auc);
    Ok(())
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> CmdResult {
    let mut config = Config::load(args.config.as_deref())?;
    apply_scene(&mut config, &args.scene)?;
    apply_hyper(&mut config, &args.hyper);
    apply_detect(&mut config, &args.detect);
    if let Some(methods) = &args.methods {
        config.methods = parse_methods(methods)?;
    }
    config.runs = args.runs.unwrap_or(config.runs);
    check_scene(&config)?;
    config.hyper.validate()?;
    config.scene.seed = resolve_seed(args.scene_seed.or(config.scene_seed), "scene_seed", out);
    let base = resolve_seed(args.seed.or(config.seed), "seed", out);
    let run = RunConfig {
        scene: config.scene.clone(),
        block: config.block,
        abundances: config.abundances.clone(),
        hyper: config.hyper.clone(),
        detect: config.detect,
        methods: config.methods.clone(),
    };
    let summaries = multi_run(&run, &run_seeds(base, config.runs)).map_err(Failure::Runtime)?;
    write_report(&summaries, &args.out)?;
    let _ = write!(out, "{}", report_csv(&summaries));
    let _ = writeln!(out, "wrote {}", args.out.display());
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> CmdResult {
    let config = GradCheckConfig {
        cases: args.cases,
        seed: args.seed,
        tolerance: args.tolerance,
        inject_sign_error: args.inject_sign_error,
        ..Default::default()
    };
    let checks = check_all(&config)?;
    let mut failed = Vec::new();
    for c in &checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        let op = if c.passed { "<" } else { ">=" };
        let _ = writeln!(
            out,
            "{:<16} {verdict} rel_err{op}{:e} max={:.3e} cases={}",
            c.kind.name(),
            config.tolerance,
            c.max_rel_err,
            c.cases
        );
        if !c.passed {
            failed.push(c.kind.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(Error::Numeric(format!(
            "gradient check failed for {}",
            failed.join(", ")
        ))))
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> CmdResult {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Detect(a) => cmd_detect(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Run(a) => cmd_run(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{rendered}")
            } else {
                write!(out, "{rendered}")
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let mut full = vec!["ganrx"];
        full.extend_from_slice(args);
        let code = main_with(full, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn config_parsing() {
        let c = Config::from_text("# scene\nwidth = 32\nbands=16 # trailing\n\nabundances=0.5, 1\nmethods=rx,wrx\nseed=9\n").unwrap();
        assert_eq!(c.scene.width, 32);
        assert_eq!(c.scene.bands, 16);
        assert_eq!(c.abundances, vec![0.5, 1.0]);
        assert_eq!(c.methods, vec![Method::Rx, Method::Wrx]);
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.scene.height, SceneSpec::default().height);
        let err = Config::from_text("widht=3\n").unwrap_err().to_string();
        assert!(err.contains("widht") && err.contains("line 1"), "{err}");
        assert!(Config::from_text("epochs=many\n").is_err());
        assert!(Config::from_text("just text\n").is_err());
        assert!(Config::from_text("methods=svdd\n").is_err());
    }

    #[test]
    fn config_text_roundtrip() {
        let mut c = Config::default();
        c.seed = Some(4);
        c.scene_seed = Some(8);
        c.objective = Objective::Ae;
        assert_eq!(Config::from_text(&c.to_text()).unwrap(), c);
        for key in CONFIG_KEYS {
            assert!(c.to_text().contains(&format!("{key}=")), "{key}");
        }
    }

    #[test]
    fn usage_errors_exit_2() {
        let (code, _, err) = run(&["synth", "--bands", "0", "--out", "x"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--bands"), "{err}");
        let (code, _, err) = run(&["detect", "--method", "svdd", "--cube", "c", "--out", "o"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("rx, wrx, ae, gan-rx"), "{err}");
        assert_eq!(run(&["bogus"]).0, EXIT_USAGE);
        assert_eq!(run(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn gradcheck_reports_every_kind() {
        let (code, out, _) = run(&["gradcheck", "--cases", "2"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out.lines().count(), LayerKind::ALL.len());
        for kind in LayerKind::ALL {
            assert_eq!(out.lines().filter(|l| l.split_whitespace().next() == Some(kind.name())).count(), 1);
        }
        assert!(out.lines().all(|l| l.contains("PASS rel_err<1e-4")), "{out}");
        let (code, out, _) = run(&["gradcheck", "--cases", "2", "--inject-sign-error", "tanh"]);
        assert_eq!(code, EXIT_RUNTIME);
        assert!(out.lines().any(|l| l.starts_with("tanh") && l.contains("FAIL")));
    }
}
