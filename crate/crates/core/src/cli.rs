//! Command-line front end: `simulate`, `train-physics`, `train`,
//! `evaluate` and `render`.
//!
//! Every command writes into a fresh output directory and leaves a
//! `run_manifest.json` there describing the resolved configuration, seed,
//! build and the SHA-256 of every file it produced.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{
    make_splits, read_corpus, read_sequence, write_corpus, DataType, GridSequence, SplitSpec,
    SplitTag,
};
use crate::ode::{persistence_mse, single_step_mse, train_ode_corpus, OdeFitConfig, OdeNetConfig};
use crate::pde::{pde_error, train_pde, PdeCoefficients, PdeFitConfig};
use crate::stpcnn::{
    evaluate, rollout, train, Checkpoint, LstmCell, Physics, PhysicsSpec, StpcnnConfig, TrainConfig,
};
use crate::wave::{simulate, simulate_corpus, StartRule, WaveConfig};

pub const RUN_MANIFEST: &str = "run_manifest.json";
const SEED_ENV: &str = "PHYSICOUPLED_SEED";

#[derive(Parser, Debug, Serialize)]
#[command(
    name = "physicoupled",
    version,
    about = "Physics-coupled spatio-temporal forecasting toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate reflected-wave sequences.
    Simulate(SimulateArgs),
    /// Fit the PDE-learning or ODE-informed network to a dataset.
    TrainPhysics(TrainPhysicsArgs),
    /// Train the coupled forecaster.
    Train(TrainArgs),
    /// Score a forecaster checkpoint.
    Evaluate(EvaluateArgs),
    /// Write PGM heatmaps of a sequence.
    Render(RenderArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub h: usize,
    #[arg(long, default_value_t = 16)]
    pub w: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    #[arg(long, default_value_t = 1.0)]
    pub dx: f64,
    #[arg(long, default_value_t = 1.0)]
    pub dy: f64,
    /// Wave speed.
    #[arg(long, default_value_t = 3.0)]
    pub c: f64,
    #[arg(long, default_value_t = 0.34)]
    pub amplitude: f64,
    /// Variance of the initial Gaussian along both axes.
    #[arg(long, default_value_t = 0.5)]
    pub sigma2: f64,
    /// Frames per sequence.
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub sequences: usize,
    /// Initial bump center `i,j` for a single sequence (default: grid center).
    #[arg(long)]
    pub center: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    #[arg(long, value_enum, default_value_t = StartArg::Taylor)]
    pub start: StartArg,
    #[arg(long, value_enum, default_value_t = DtypeArg::F32)]
    pub dtype: DtypeArg,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StartArg {
    Taylor,
    Repeat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PhysicsKind {
    Pde,
    Ode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Truth {
    Wave,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainPhysicsArgs {
    #[arg(long, value_enum)]
    pub kind: PhysicsKind,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sequence index within a corpus (PDE default 0, ODE default all).
    #[arg(long)]
    pub sequence: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Report the error against the simulator's equation.
    #[arg(long, value_enum)]
    pub truth: Option<Truth>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub collocation: Option<usize>,
    #[arg(long)]
    pub lambda_d: Option<f64>,
    #[arg(long)]
    pub lambda_sparse: Option<f64>,
    #[arg(long)]
    pub fd_step: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Epochs between loss-curve rows (PDE) and log lines.
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub latent: Option<usize>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct SplitArgs {
    /// `train,val,test` counts: sequences for a corpus, frames for a single
    /// sequence.
    #[arg(long, default_value = "57,7,16")]
    pub split: String,
    /// Frames per training piece when a single sequence is split.
    #[arg(long, default_value_t = 40)]
    pub window: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// none | pde:<path> | ode:<path> | truth-wave
    #[arg(long, default_value = "none")]
    pub physics: String,
    /// Relative Gaussian noise on the PDE coefficients, e.g. 0.05 for +5%.
    #[arg(long, default_value_t = 0.0)]
    pub coefficient_noise: f64,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 50)]
    pub anneal_epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub val_tf: usize,
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, default_value_t = 32)]
    pub fusion_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub tn_hidden: usize,
    #[arg(long, default_value_t = 16)]
    pub positional_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub lateral_dim: usize,
    #[arg(long, value_enum, default_value_t = LstmArg::Standard)]
    pub lstm_cell: LstmArg,
    #[arg(long)]
    pub zero_lateral: bool,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LstmArg {
    Paper,
    Standard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
    /// Every sequence of the dataset.
    All,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Physics backend; defaults to the one the checkpoint was trained with.
    #[arg(long)]
    pub physics: Option<String>,
    /// Relative Gaussian noise on the PDE coefficients; defaults to the
    /// checkpoint's value and reuses its seed.
    #[arg(long)]
    pub coefficient_noise: Option<f64>,
    /// Teacher-forced frames for each multi-step score.
    #[arg(long, default_value = "10,20,30,40")]
    pub tf: String,
    /// Last frame of the closed-loop forecasts.
    #[arg(long, default_value_t = 80)]
    pub horizon_to: usize,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split_name: SplitName,
    /// Split counts; defaults to the ones recorded in the checkpoint.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Permit scoring sequences the model was trained on.
    #[arg(long)]
    pub allow_train_eval: bool,
    /// Save the closed-loop forecasts of the first `--tf` value.
    #[arg(long)]
    pub save_predictions: bool,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct RenderArgs {
    /// Sequence directory (dataset or saved predictions).
    #[arg(long)]
    pub data: PathBuf,
    /// Ground-truth sequence shown to the right of each frame.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Render only the first N frames.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Symmetric color limit; defaults to the largest magnitude shown.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

/// Provenance written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub artifact: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Output file (relative to the output directory) -> SHA-256.
    pub outputs: BTreeMap<String, String>,
}

/// Run with raw arguments (program name first) and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Replace `--config <json>` by the flags it holds. Flags given on the
/// command line win over the file.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut k = 0;
    while k < strs.len() {
        if strs[k] == "--config" {
            path = Some(
                strs.get(k + 1)
                    .ok_or_else(|| Error::config("--config needs a path"))?
                    .clone(),
            );
            k += 2;
            continue;
        }
        if let Some(p) = strs[k].strip_prefix("--config=") {
            path = Some(p.to_string());
            k += 1;
            continue;
        }
        rest.push(args[k].clone());
        k += 1;
    }
    let Some(path) = path else { return Ok(rest) };
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::config("--config file must hold a JSON object"))?;
    // Program name, then the subcommand (first non-flag argument).
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 2);
    let insert_at = sub.unwrap_or(rest.len());
    let given: Vec<String> = strs
        .iter()
        .filter(|s| s.starts_with("--"))
        .map(|s| s.split('=').next().unwrap_or("").to_string())
        .collect();
    let mut extra: Vec<OsString> = Vec::new();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        if given.contains(&flag) {
            continue;
        }
        let text = match v {
            serde_json::Value::Null | serde_json::Value::Bool(false) => continue,
            serde_json::Value::Bool(true) => {
                extra.push(flag.into());
                continue;
            }
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Array(items) => items
                .iter()
                .map(|i| i.as_str().map_or_else(|| i.to_string(), str::to_string))
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        };
        extra.push(flag.into());
        extra.push(text.into());
    }
    rest.splice(insert_at..insert_at, extra);
    Ok(rest)
}

fn execute(cli: &Cli) -> Result<()> {
    let started = now();
    let (out, seed, outputs) = match &cli.command {
        Command::Simulate(a) => (&a.out, a.seed, run_simulate(a)?),
        Command::TrainPhysics(a) => (&a.out, a.seed, run_train_physics(a)?),
        Command::Train(a) => (&a.out, a.seed, run_train(a)?),
        Command::Evaluate(a) => (&a.out, a.seed, run_evaluate(a)?),
        Command::Render(a) => (&a.out, a.seed, run_render(a)?),
    };
    let config = serde_json::to_value(&cli.command)?;
    let command = config
        .get("command")
        .and_then(|c| c.as_str())
        .unwrap_or("unknown")
        .to_string();
    let manifest = RunManifest {
        command,
        config,
        seed,
        artifact: artifact_version(),
        started_unix: started,
        finished_unix: now(),
        outputs: hash_outputs(out, &outputs)?,
    };
    fs::write(
        out.join(RUN_MANIFEST),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn artifact_version() -> String {
    let describe = option_env!("PHYSICOUPLED_GIT_DESCRIBE").unwrap_or("unknown");
    format!("{} ({describe})", env!("CARGO_PKG_VERSION"))
}

fn hash_outputs(root: &Path, files: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for f in files {
        let bytes = fs::read(root.join(f))?;
        out.insert(
            f.to_string_lossy().replace('\\', "/"),
            hex::encode(Sha256::digest(&bytes)),
        );
    }
    Ok(out)
}

/// Create `dir`, refusing to reuse a non-empty one.
fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        return Err(Error::config(format!(
            "output directory {} already exists and is not empty",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Every regular file below `dir`, relative to it, sorted.
fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != RUN_MANIFEST) {
                out.push(p.strip_prefix(dir).expect("below root").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn run_simulate(a: &SimulateArgs) -> Result<Vec<PathBuf>> {
    let center = match &a.center {
        Some(s) => parse_pair(s)?,
        None => ((a.h / 2) as f64, (a.w / 2) as f64),
    };
    let cfg = WaveConfig {
        height: a.h,
        width: a.w,
        dt: a.dt,
        dx: a.dx,
        dy: a.dy,
        speed: a.c,
        amplitude: a.amplitude,
        sigma2_x: a.sigma2,
        sigma2_y: a.sigma2,
        center,
        steps: a.steps,
        noise_std: a.noise_std,
        seed: a.seed,
        start: match a.start {
            StartArg::Taylor => StartRule::Taylor,
            StartArg::Repeat => StartRule::Repeat,
        },
    };
    cfg.validate()?;
    if a.sequences == 0 {
        return Err(Error::config("--sequences must be >= 1"));
    }
    let seqs = if a.sequences == 1 {
        vec![simulate(&cfg)?]
    } else {
        simulate_corpus(&cfg, a.sequences, a.seed)?
    };
    fresh_dir(&a.out)?;
    let dtype = match a.dtype {
        DtypeArg::F32 => DataType::F32,
        DtypeArg::F64 => DataType::F64,
    };
    write_corpus(&seqs, &a.out, dtype)?;
    log::info!("wrote {} sequences to {}", seqs.len(), a.out.display());
    list_files(&a.out)
}

fn parse_pair(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts[..] {
        [x, y] => {
            let p = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::config(format!("bad number {v:?} in {s:?}")))
            };
            Ok((p(x)?, p(y)?))
        }
        _ => Err(Error::config(format!("expected `i,j`, got {s:?}"))),
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("bad count {v:?} in {s:?}")))
        })
        .collect()
}

fn parse_split(s: &str) -> Result<SplitSpec> {
    match parse_list(s)?[..] {
        [train, val, test] => Ok(SplitSpec { train, val, test }),
        _ => Err(Error::config(format!(
            "split must be `train,val,test`, got {s:?}"
        ))),
    }
}

fn meta_f64(seq: &GridSequence, key: &str, default: f64) -> f64 {
    seq.meta
        .get(key)
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

/// `(speed, dx, dy)` recorded by the simulator, or `(3, 1, 1)`.
fn wave_meta(seq: &GridSequence) -> (f64, f64, f64) {
    (
        meta_f64(seq, "speed", 3.0),
        meta_f64(seq, "dx", 1.0),
        meta_f64(seq, "dy", 1.0),
    )
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct PdeLossRow {
    epoch: usize,
    loss: f64,
    l_u: f64,
    l_d: f64,
    l_sparse: f64,
}

fn run_train_physics(a: &TrainPhysicsArgs) -> Result<Vec<PathBuf>> {
    let corpus = read_corpus(&a.data)?;
    let (speed, dx, dy) = wave_meta(&corpus[0]);
    let pick = |k: usize| {
        corpus.get(k).cloned().ok_or_else(|| {
            Error::config(format!(
                "sequence {k} not in a {}-sequence dataset",
                corpus.len()
            ))
        })
    };
    match a.kind {
        PhysicsKind::Pde => {
            let seq = pick(a.sequence.unwrap_or(0))?;
            let d = PdeFitConfig::default();
            let cfg = PdeFitConfig {
                epochs: a.epochs.unwrap_or(d.epochs),
                lr: a.lr.unwrap_or(d.lr),
                samples: a.samples.unwrap_or(d.samples),
                collocation: a.collocation.unwrap_or(d.collocation),
                lambda_d: a.lambda_d.unwrap_or(d.lambda_d),
                lambda_sparse: a.lambda_sparse.unwrap_or(d.lambda_sparse),
                fd_step: a.fd_step.or(d.fd_step),
                seed: a.seed,
                dx,
                dy,
                log_every: a.log_every.unwrap_or(d.log_every),
                ..d
            };
            cfg.validate()?;
            fresh_dir(&a.out)?;
            let fit = train_pde(&seq, &cfg)?;
            let err = match a.truth {
                Some(Truth::Wave) => Some(pde_error(
                    fit.coefficients.values(),
                    PdeCoefficients::wave(speed).values(),
                )?),
                None => None,
            };
            fit.coefficients
                .save(&a.out.join("coefficients.json"), err)?;
            let rows: Vec<PdeLossRow> = fit
                .history
                .iter()
                .map(|e| PdeLossRow {
                    epoch: e.epoch,
                    loss: e.parts.loss,
                    l_u: e.parts.l_u,
                    l_d: e.parts.l_d,
                    l_sparse: e.parts.l_sparse,
                })
                .collect();
            write_csv(&a.out.join("loss.csv"), &rows)?;
            println!("coefficients {:?}", fit.coefficients.values());
            if let Some(e) = err {
                println!("err vs wave equation: {e:.4e}");
            }
            Ok(vec!["coefficients.json".into(), "loss.csv".into()])
        }
        PhysicsKind::Ode => {
            let data = match a.sequence {
                Some(k) => vec![pick(k)?],
                None => corpus.clone(),
            };
            let d = OdeFitConfig::default();
            let cfg = OdeFitConfig {
                net: OdeNetConfig {
                    latent: a.latent.unwrap_or(d.net.latent),
                    ..d.net
                },
                alpha: a.alpha.unwrap_or(d.alpha),
                lr: a.lr.unwrap_or(d.lr),
                epochs: a.epochs.unwrap_or(d.epochs),
                batch: a.batch.unwrap_or(d.batch),
                seed: a.seed,
                dx,
                dy,
                log_every: a.log_every.unwrap_or(d.log_every),
            };
            cfg.validate()?;
            fresh_dir(&a.out)?;
            let fit = train_ode_corpus(&data, &cfg)?;
            Checkpoint::for_ode(&fit.net, serde_json::to_value(&cfg)?)?.write(&a.out)?;
            write_csv(&a.out.join("loss.csv"), &fit.history)?;
            let mse = single_step_mse(&fit.net, &data[0], dx, dy)?;
            println!(
                "single-step mse {mse:.4e} (persistence {:.4e})",
                persistence_mse(&data[0])?
            );
            list_files(&a.out)
        }
    }
}

/// The three splits of a dataset, as sequences.
fn split_dataset(
    corpus: &[GridSequence],
    spec: SplitSpec,
    window: usize,
) -> Result<[Vec<GridSequence>; 3]> {
    let frames: Vec<usize> = corpus.iter().map(GridSequence::frames).collect();
    let sets = make_splits(&frames, spec)?;
    let cut = |tag: SplitTag| -> Result<Vec<GridSequence>> {
        let set = sets
            .iter()
            .find(|s| s.tag == tag)
            .expect("all tags present");
        let set = if corpus.len() == 1 {
            set.chop(window, 0, window)?
        } else {
            set.clone()
        };
        set.windows
            .iter()
            .map(|w| corpus[w.sequence].slice_frames(w.start, w.end()))
            .collect()
    };
    Ok([
        cut(SplitTag::Train)?,
        cut(SplitTag::Val)?,
        cut(SplitTag::Test)?,
    ])
}

/// SHA-256 over every sequence's shape, mask and values.
pub fn corpus_fingerprint(corpus: &[GridSequence]) -> String {
    let mut h = Sha256::new();
    for s in corpus {
        for d in [s.frames(), s.height(), s.width()] {
            h.update((d as u64).to_le_bytes());
        }
        h.update(s.mask().iter().map(|&m| u8::from(m)).collect::<Vec<_>>());
        for v in s.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Serialize)]
struct MetricRow {
    step: usize,
    split: &'static str,
    mse: f64,
    mae: f64,
}

fn run_train(a: &TrainArgs) -> Result<Vec<PathBuf>> {
    let spec = parse_split(&a.split.split)?;
    let physics_spec: PhysicsSpec = a.physics.parse()?;
    let corpus = read_corpus(&a.data)?;
    let (speed, dx, dy) = wave_meta(&corpus[0]);
    let physics = Physics::load(&physics_spec, speed, dx, dy)?
        .with_coefficient_noise(a.coefficient_noise, a.seed)?;
    let [train_set, val_set, _] = split_dataset(&corpus, spec, a.split.window)?;
    let model_cfg = StpcnnConfig {
        positional_dim: a.positional_dim,
        lateral_dim: a.lateral_dim,
        tn_hidden: a.tn_hidden,
        fusion_dim: a.fusion_dim,
        hidden: a.hidden,
        lstm_cell: match a.lstm_cell {
            LstmArg::Paper => LstmCell::Paper,
            LstmArg::Standard => LstmCell::Standard,
        },
        zero_lateral: a.zero_lateral,
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        patience: a.patience,
        anneal_epochs: a.anneal_epochs,
        val_tf_steps: a.val_tf,
        seed: a.seed,
        ..TrainConfig::default()
    };
    model_cfg.validate()?;
    cfg.validate()?;
    fresh_dir(&a.out)?;
    let outcome = train(model_cfg, &train_set, &val_set, &physics, &cfg)?;
    let mut ck = Checkpoint::for_stpcnn(
        &outcome.model,
        serde_json::to_value(&cfg)?,
        physics_spec.to_string(),
        Some(outcome.optimizer),
    )?;
    ck.config
        .meta
        .insert("dataset_sha256".into(), corpus_fingerprint(&corpus));
    ck.config.meta.insert("split".into(), a.split.split.clone());
    ck.config
        .meta
        .insert("window".into(), a.split.window.to_string());
    if a.coefficient_noise != 0.0 {
        ck.config
            .meta
            .insert("coefficient_noise".into(), a.coefficient_noise.to_string());
        ck.config
            .meta
            .insert("coefficient_noise_seed".into(), a.seed.to_string());
    }
    ck.config
        .meta
        .insert("best_epoch".into(), outcome.best_epoch.to_string());
    ck.config
        .meta
        .insert("best_val_loss".into(), format!("{:e}", outcome.best_val));
    ck.write(&a.out)?;
    let rows: Vec<MetricRow> = outcome
        .history
        .iter()
        .flat_map(|e| {
            [
                MetricRow {
                    step: e.epoch,
                    split: "train",
                    mse: e.train.mse,
                    mae: e.train.mae,
                },
                MetricRow {
                    step: e.epoch,
                    split: "val",
                    mse: e.val.mse,
                    mae: e.val.mae,
                },
            ]
        })
        .collect();
    write_csv(&a.out.join("metrics.csv"), &rows)?;
    println!(
        "best epoch {} validation loss {:.4e}",
        outcome.best_epoch, outcome.best_val
    );
    list_files(&a.out)
}

#[derive(Serialize)]
struct ScoreRow {
    model: String,
    kind: &'static str,
    tf_steps: Option<usize>,
    mse_mean: f64,
    mse_std: f64,
}

#[derive(Serialize)]
struct CurveRow {
    step: usize,
    split: &'static str,
    tf_steps: usize,
    mse: f64,
    mae: f64,
}

fn run_evaluate(a: &EvaluateArgs) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::read(&a.checkpoint)?;
    let model = ck.stpcnn()?;
    let physics_text = a
        .physics
        .clone()
        .or_else(|| ck.config.physics.clone())
        .unwrap_or_else(|| "none".into());
    let physics_spec: PhysicsSpec = physics_text.parse()?;
    let corpus = read_corpus(&a.data)?;
    let same_data = ck.config.meta.get("dataset_sha256").map(String::as_str)
        == Some(corpus_fingerprint(&corpus).as_str());
    let touches_train =
        matches!(a.split_name, SplitName::Train) || (same_data && a.split_name == SplitName::All);
    if touches_train && !a.allow_train_eval {
        return Err(Error::config(
            "refusing to evaluate on training sequences without --allow-train-eval",
        ));
    }
    let split_text = a
        .split
        .clone()
        .or_else(|| ck.config.meta.get("split").cloned())
        .unwrap_or_else(|| "57,7,16".into());
    let window = a
        .window
        .or_else(|| ck.config.meta.get("window").and_then(|w| w.parse().ok()))
        .unwrap_or(40);
    let data = match a.split_name {
        SplitName::All => corpus.clone(),
        name => {
            let [tr, va, te] = split_dataset(&corpus, parse_split(&split_text)?, window)?;
            match name {
                SplitName::Train => tr,
                SplitName::Val => va,
                _ => te,
            }
        }
    };
    let (speed, dx, dy) = wave_meta(&corpus[0]);
    let noise = match a.coefficient_noise {
        Some(f) => f,
        None => ck
            .config
            .meta
            .get("coefficient_noise")
            .map(|v| v.parse())
            .transpose()
            .map_err(|_| Error::format("bad coefficient_noise in checkpoint"))?
            .unwrap_or(0.0),
    };
    let noise_seed = ck
        .config
        .meta
        .get("coefficient_noise_seed")
        .and_then(|v| v.parse().ok())
        .unwrap_or(a.seed);
    let physics =
        Physics::load(&physics_spec, speed, dx, dy)?.with_coefficient_noise(noise, noise_seed)?;
    let tf_list = parse_list(&a.tf)?;
    fresh_dir(&a.out)?;
    let report = evaluate(&model, &data, &physics, &tf_list, a.horizon_to)?;
    let label = if noise == 0.0 {
        format!("stpcnn[{physics_spec}]")
    } else {
        format!("stpcnn[{physics_spec}+{noise}]")
    };
    let mut rows = vec![ScoreRow {
        model: label.clone(),
        kind: "single",
        tf_steps: None,
        mse_mean: report.single_step.mean,
        mse_std: report.single_step.std,
    }];
    let mut curves = Vec::new();
    for m in &report.multi_step {
        rows.push(ScoreRow {
            model: label.clone(),
            kind: "multi",
            tf_steps: Some(m.tf_steps),
            mse_mean: m.mse.mean,
            mse_std: m.mse.std,
        });
        curves.extend(m.curve.iter().map(|&(step, mse, mae)| CurveRow {
            step,
            split: "test",
            tf_steps: m.tf_steps,
            mse,
            mae,
        }));
    }
    write_csv(&a.out.join("metrics.csv"), &rows)?;
    write_csv(&a.out.join("curves.csv"), &curves)?;
    fs::write(
        a.out.join("report.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "physics": physics_spec.to_string(),
            "sequences": data.len(),
            "horizon_to": a.horizon_to,
            "report": report,
        }))? + "\n",
    )?;
    if a.save_predictions {
        let tf = *tf_list
            .first()
            .ok_or_else(|| Error::config("--tf is empty"))?;
        let preds = data
            .iter()
            .map(|s| {
                rollout(&model, s, tf, a.horizon_to.saturating_sub(tf), &physics)
                    .map(|r| r.predictions)
            })
            .collect::<Result<Vec<_>>>()?;
        write_corpus(&preds, &a.out.join("predictions"), DataType::F64)?;
    }
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "single-step mse {:.4e} +- {:.2e}",
        report.single_step.mean, report.single_step.std
    )?;
    for m in &report.multi_step {
        writeln!(
            out,
            "tf {:>3}: closed-loop mse {:.4e} +- {:.2e}",
            m.tf_steps, m.mse.mean, m.mse.std
        )?;
    }
    list_files(&a.out)
}

/// Gray level of `v` on a symmetric scale: 0 maps to mid-gray.
pub fn gray_level(v: f64, scale: f64) -> u8 {
    let s = if scale > 0.0 { scale } else { 1.0 };
    (127.5 + 127.5 * (v / s).clamp(-1.0, 1.0)).round() as u8
}

/// Binary PGM (P5) image.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::shape(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes)?;
    Ok(())
}

#[derive(Serialize)]
struct FrameMse {
    frame: usize,
    mse: f64,
}

fn run_render(a: &RenderArgs) -> Result<Vec<PathBuf>> {
    let seq = read_sequence(&a.data)?;
    let truth = a.truth.as_deref().map(read_sequence).transpose()?;
    let offset = seq
        .meta
        .get("time_offset")
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    let n = a.frames.unwrap_or(seq.frames()).min(seq.frames());
    if let Some(t) = &truth {
        if (t.height(), t.width()) != (seq.height(), seq.width()) {
            return Err(Error::shape("truth and data grids differ"));
        }
        if offset + n > t.frames() {
            return Err(Error::config(format!(
                "truth has {} frames, need {}",
                t.frames(),
                offset + n
            )));
        }
    }
    let scale = a.scale.unwrap_or_else(|| {
        let shown = (0..n).flat_map(|k| seq.frame(k).iter().copied());
        let from_truth = truth
            .iter()
            .flat_map(|t| (0..n).flat_map(move |k| t.frame(k + offset).iter().copied()));
        shown
            .chain(from_truth)
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    });
    fresh_dir(&a.out)?;
    let (h, w) = (seq.height(), seq.width());
    let mut files = Vec::new();
    let mut curve = Vec::new();
    for k in 0..n {
        let name = format!("frame_{k:04}.pgm");
        let pred = seq.frame(k);
        match &truth {
            None => {
                let px: Vec<u8> = pred.iter().map(|&v| gray_level(v, scale)).collect();
                write_pgm(&a.out.join(&name), w, h, &px)?;
            }
            Some(t) => {
                // Prediction | one black separator column | truth.
                let tr = t.frame(k + offset);
                let cw = 2 * w + 1;
                let mut px = Vec::with_capacity(cw * h);
                for i in 0..h {
                    px.extend(
                        pred[i * w..(i + 1) * w]
                            .iter()
                            .map(|&v| gray_level(v, scale)),
                    );
                    px.push(0);
                    px.extend(tr[i * w..(i + 1) * w].iter().map(|&v| gray_level(v, scale)));
                }
                write_pgm(&a.out.join(&name), cw, h, &px)?;
                let active = seq.mask().iter().filter(|&&m| m).count() as f64;
                let mse = pred
                    .iter()
                    .zip(tr)
                    .zip(seq.mask())
                    .filter(|(_, &m)| m)
                    .map(|((p, q), _)| (p - q).powi(2))
                    .sum::<f64>()
                    / active;
                curve.push(FrameMse {
                    frame: k + offset,
                    mse,
                });
            }
        }
        files.push(PathBuf::from(name));
    }
    if truth.is_some() {
        write_csv(&a.out.join("mse.csv"), &curve)?;
        files.push("mse.csv".into());
    }
    Ok(files)
}
