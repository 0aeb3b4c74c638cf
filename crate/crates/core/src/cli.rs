//! The `fmamba` command line: `fuse`, `train-toy`, `metrics` and `check`.
//!
//! Exit codes: 0 success, 1 check or training failure, 2 input error,
//! 3 model state or configuration error.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::autodiff::{AdamConfig, OpKind};
use crate::error::{Error, Result};
use crate::image_io::{read_image, write_image};
use crate::losses::LossWeights;
use crate::metrics::{evaluate_all, evaluate_pair, FusionReport};
use crate::network::{load_state, load_state_for, save_state, Model, ModelConfig};
use crate::selfcheck::{self, Suite};
use crate::tensor::Tensor;
use crate::train::{train_toy, TrainConfig};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "FMAMBA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fmamba", version, about = "Mamba-based multimodal image fusion on the CPU")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse two registered grayscale images.
    Fuse(FuseArgs),
    /// Overfit a small model on one or more pairs and save its state.
    TrainToy(TrainArgs),
    /// Evaluate fused images against their sources.
    Metrics(MetricsArgs),
    /// Run the built-in invariant suites.
    Check(CheckArgs),
}

/// Model shape flags shared by `fuse` and `train-toy`; unset fields fall
/// back to the `--config` file, then to the command's default.
#[derive(Debug, Default, Args)]
pub struct ModelArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub base_dim: Option<usize>,
    /// Blocks per level, e.g. `2,2,9,2`.
    #[arg(long)]
    pub depths: Option<String>,
    /// State size N of every scan.
    #[arg(long)]
    pub state_size: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Saved model state; without it the model is initialized from `--seed`.
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Write a one-row metric report (CSV).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// First-modality images, one per pair.
    #[arg(long, required = true, num_args = 1..)]
    pub a: Vec<PathBuf>,
    /// Second-modality images, matching `--a` in order.
    #[arg(long, required = true, num_args = 1..)]
    pub b: Vec<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output state file.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss weights `a1,a2,a3`.
    #[arg(long)]
    pub weights: Option<LossWeights>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub dir_a: PathBuf,
    #[arg(long)]
    pub dir_b: PathBuf,
    #[arg(long)]
    pub dir_f: PathBuf,
    /// CSV report.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON-lines mirror of the report.
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Run only these suites (ssm, ldc, grad, losses, metrics, arch).
    #[arg(long)]
    pub suite: Vec<Suite>,
    /// Corrupt the backward rule of one primitive.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

impl clap::ValueEnum for Suite {
    fn value_variants<'a>() -> &'a [Self] {
        &Suite::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

/// A command failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Check(String),
    Input(String),
    State(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Input(_) => 2,
            Failure::State(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Check(m) | Failure::Input(m) | Failure::State(m) => m,
        }
    }
}

fn input(e: Error) -> Failure {
    Failure::Input(e.to_string())
}

fn state(e: Error) -> Failure {
    Failure::State(e.to_string())
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}

const CONFIG_KEYS: [&str; 8] = ["base_dim", "depths", "state", "patch", "seed", "steps", "weights", "lr"];

struct Settings {
    file: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            None => BTreeMap::new(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| Error::Io { path: p.to_path_buf(), source })?;
                parse_config_file(&text)?
            }
        };
        if let Some(k) = file.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown configuration key `{k}`")));
        }
        Ok(Self { file })
    }

    /// Flag value, else file value, else `None`.
    fn get<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`"))),
        }
    }
}

fn parse_depths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("depths must be comma-separated integers, got `{s}`")))
}

/// Builds the model configuration from `base`, the file and the flags.
/// The second value tells whether anything overrode `base`.
fn model_config(args: &ModelArgs, settings: &Settings, base: ModelConfig) -> Result<(ModelConfig, bool)> {
    let mut cfg = base;
    let mut explicit = false;
    if let Some(c) = settings.get(args.base_dim, "base_dim")? {
        cfg.base_dim = c;
        explicit = true;
    }
    let depths = match &args.depths {
        Some(d) => Some(d.clone()),
        None => settings.file.get("depths").cloned(),
    };
    if let Some(d) = depths {
        cfg.depths = parse_depths(&d)?;
        cfg.levels = cfg.depths.len();
        explicit = true;
    }
    if let Some(n) = settings.get(args.state_size, "state")? {
        cfg.state = n;
        explicit = true;
    }
    if let Some(p) = settings.get(args.patch, "patch")? {
        cfg.patch = p;
        explicit = true;
    }
    if let Some(s) = settings.get(args.seed, "seed")? {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok((cfg, explicit))
}

fn read_pair(a: &Path, b: &Path) -> std::result::Result<(Tensor, Tensor), Failure> {
    let ia = read_image(a).map_err(input)?;
    let ib = read_image(b).map_err(input)?;
    if ia.shape() != ib.shape() {
        return Err(Failure::Input(format!(
            "image extents differ: {} is {:?}, {} is {:?}",
            a.display(),
            ia.shape(),
            b.display(),
            ib.shape()
        )));
    }
    Ok((ia, ib))
}

fn check_extents(img: &Tensor, cfg: &ModelConfig, path: &Path) -> Outcome {
    let div = cfg.extent_divisor();
    if img.shape().iter().any(|&e| e == 0 || e % div != 0) {
        return Err(Failure::Input(format!(
            "{}: extents {:?} must be positive multiples of {div}",
            path.display(),
            img.shape()
        )));
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|source| input(Error::Io { path: path.to_path_buf(), source }))
}

pub fn cmd_fuse(args: &FuseArgs) -> Outcome {
    let settings = Settings::load(args.model.config.as_deref()).map_err(state)?;
    let (a, b) = read_pair(&args.a, &args.b)?;
    let model = match &args.state {
        Some(p) => {
            let stored = load_state(p).map_err(state)?;
            let (cfg, explicit) = model_config(&args.model, &settings, stored.config.clone()).map_err(state)?;
            if explicit {
                load_state_for(p, &cfg).map_err(state)?
            } else {
                stored
            }
        }
        None => {
            let (cfg, _) = model_config(&args.model, &settings, ModelConfig::default()).map_err(state)?;
            Model::init(cfg).map_err(state)?
        }
    };
    check_extents(&a, &model.config, &args.a)?;
    let fused = model.fuse(&a, &b).map_err(|e| Failure::Check(e.to_string()))?;
    write_image(&fused, &args.out).map_err(input)?;
    println!("wrote {} ({}x{})", args.out.display(), fused.shape()[0], fused.shape()[1]);
    if let Some(path) = &args.report {
        let fused = read_image(&args.out).map_err(input)?;
        let id = args.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let row = evaluate_pair(&id, &a, &b, &fused).map_err(input)?;
        let report = FusionReport { rows: vec![row] };
        write_file(path, report.to_csv().as_bytes())?;
        print!("{report}");
    }
    Ok(())
}

pub fn cmd_train_toy(args: &TrainArgs) -> Outcome {
    let settings = Settings::load(args.model.config.as_deref()).map_err(state)?;
    let (cfg, _) = model_config(&args.model, &settings, ModelConfig::micro()).map_err(state)?;
    let steps = settings.get(args.steps, "steps").map_err(state)?.unwrap_or(200);
    if steps == 0 {
        return Err(Failure::Input("--steps must be at least 1".into()));
    }
    let weights = settings.get(args.weights, "weights").map_err(state)?.unwrap_or_default();
    let lr = settings.get(args.lr, "lr").map_err(state)?.unwrap_or(AdamConfig::default().lr);
    if args.a.len() != args.b.len() {
        return Err(Failure::Input(format!("{} --a images but {} --b images", args.a.len(), args.b.len())));
    }
    let mut pairs = Vec::with_capacity(args.a.len());
    for (a, b) in args.a.iter().zip(&args.b) {
        let pair = read_pair(a, b)?;
        check_extents(&pair.0, &cfg, a)?;
        pairs.push(pair);
    }
    let mut model = Model::init(cfg).map_err(state)?;
    println!("model: {} ({} parameters)", model.config, model.scalar_count());
    let train = TrainConfig { steps, adam: AdamConfig { lr, ..AdamConfig::default() }, weights };
    let trace = train_toy(&mut model, &pairs, &train, |step, loss| println!("step {step:>5}  {loss}"))
        .map_err(|e| Failure::Check(e.to_string()))?;
    save_state(&model, &args.out).map_err(input)?;
    let (first, last) = (trace[0].total, trace[trace.len() - 1].total);
    println!("first loss {first:.6}, last loss {last:.6}, ratio {:.4}", last / first);
    println!("saved {}", args.out.display());
    Ok(())
}

fn image_stems(dir: &Path) -> std::result::Result<BTreeMap<String, PathBuf>, Failure> {
    let entries = fs::read_dir(dir).map_err(|source| input(Error::Io { path: dir.to_path_buf(), source }))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|source| input(Error::Io { path: dir.to_path_buf(), source }))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("pgm" | "png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

pub fn cmd_metrics(args: &MetricsArgs) -> Outcome {
    let dirs = [&args.dir_a, &args.dir_b, &args.dir_f];
    let stems = dirs.map(|d| image_stems(d));
    let [sa, sb, sf] = match stems {
        [Ok(a), Ok(b), Ok(f)] => [a, b, f],
        [a, b, f] => return Err([a, b, f].into_iter().find_map(|s| s.err()).expect("one failed")),
    };
    let all: std::collections::BTreeSet<&String> = sa.keys().chain(sb.keys()).chain(sf.keys()).collect();
    let mut triples = Vec::new();
    for stem in all {
        match (sa.get(stem), sb.get(stem), sf.get(stem)) {
            (Some(a), Some(b), Some(f)) => {
                let (ia, ib) = read_pair(a, b)?;
                let fused = read_image(f).map_err(input)?;
                triples.push((stem.clone(), ia, ib, fused));
            }
            present => {
                let missing: Vec<&str> = [("a", present.0), ("b", present.1), ("f", present.2)]
                    .iter()
                    .filter(|(_, p)| p.is_none())
                    .map(|(n, _)| *n)
                    .collect();
                eprintln!("warning: `{stem}` has no match in dir-{}", missing.join(", dir-"));
            }
        }
    }
    if triples.is_empty() {
        return Err(Failure::Input("no file stem is present in all three directories".into()));
    }
    let report = evaluate_all(&triples).map_err(input)?;
    write_file(&args.out, report.to_csv().as_bytes())?;
    if let Some(path) = &args.jsonl {
        let mut buf = Vec::new();
        report.write_jsonl(&mut buf).expect("writing to memory");
        write_file(path, &buf)?;
    }
    for (pair, flag) in report.flags() {
        eprintln!("note: {pair}: {flag}");
    }
    print!("{report}");
    Ok(())
}

pub fn cmd_check(args: &CheckArgs) -> Outcome {
    let fault = match &args.inject_fault {
        None => None,
        Some(name) => Some(OpKind::parse(name).ok_or_else(|| Failure::Input(format!("unknown primitive `{name}`")))?),
    };
    let suites = if args.suite.is_empty() { Suite::ALL.to_vec() } else { args.suite.clone() };
    let outcomes = selfcheck::run(&suites, fault);
    for o in &outcomes {
        println!("{o}");
    }
    let mut failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| format!("{}/{}", o.suite, o.name)).collect();
    failed.dedup();
    if failed.is_empty() {
        println!("all {} checks passed", outcomes.len());
        Ok(())
    } else {
        let mut bad: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.suite.name()).collect();
        bad.dedup();
        Err(Failure::Check(format!("failing suites: {}; checks: {}", bad.join(", "), failed.join(", "))))
    }
}

/// Sizes the global worker pool from `FMAMBA_THREADS` when set.
pub fn configure_threads() -> Outcome {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::State(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::State(e.to_string()))
}

pub fn run(cli: &Cli) -> Outcome {
    configure_threads()?;
    match &cli.command {
        Command::Fuse(a) => cmd_fuse(a),
        Command::TrainToy(a) => cmd_train_toy(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Check(a) => cmd_check(a),
    }
}

/// Entry point of the `fmamba` binary.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = writeln!(std::io::stderr(), "error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
