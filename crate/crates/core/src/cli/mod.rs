//! The `lilypad` command-line tool.
//!
//! Every subcommand reads one JSON config document (`--config`), applies
//! flag overrides on top (flags win), validates the result and writes flat
//! files into the output directory, each with a `<file>.provenance.json`
//! sidecar.
//!
//! Exit codes: 0 success, 1 validation, 2 I/O, 3 horizon or window too small,
//! 4 quality threshold breached or run interrupted.

mod commands;
pub mod svg;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::Error;

pub use commands::{
    AgeingConfig, BrwCmdConfig, ConvergeConfig, EnvSampleConfig, LilypadConfig, ProbeGrid, RenderConfig,
    SampleKind,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_HORIZON: i32 = 3;
pub const EXIT_QUALITY: i32 = 4;

/// Default output directory when neither the config nor a flag sets one.
pub const OUT_DIR_VAR: &str = "LILYPAD_OUT_DIR";

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => EXIT_IO,
            Error::HorizonExceeded { .. } => EXIT_HORIZON,
            Error::Accuracy(_) => EXIT_QUALITY,
            _ => EXIT_VALIDATION,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::validation(e.to_string())
    }
}

/// What a finished command reports back for the exit code.
#[derive(Clone, Copy, Debug)]
pub struct Outcome {
    pub complete: bool,
    pub flagged_fraction: f64,
    pub threshold: f64,
}

impl Outcome {
    fn clean() -> Self {
        Self { complete: true, flagged_fraction: 0.0, threshold: 0.0 }
    }

    pub fn exit_code(&self) -> i32 {
        if !self.complete || self.flagged_fraction > self.threshold {
            EXIT_QUALITY
        } else {
            EXIT_OK
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "lilypad", version, about = "Branching random walk in a Pareto potential and its lilypad limit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample an environment (Poisson or rescaled lattice) to JSON.
    EnvSample(EnvSampleArgs),
    /// Solve lilypad hitting times; write fields, the node table and frames.
    Lilypad(LilypadArgs),
    /// Simulate branching random walks and compare them with the lilypad fields.
    Brw(BrwArgs),
    /// Estimate ageing probabilities of the maximizer.
    Ageing(AgeingArgs),
    /// Compare hitting-time laws of the lattice and Poisson models across T.
    Converge(ConvergeArgs),
    /// Draw SVG frames from a solution JSON.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config document; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $LILYPAD_OUT_DIR, else the current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunFlags {
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct ModelFlags {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct EnvSampleArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    run: RunFlags,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long, value_enum)]
    kind: Option<SampleKind>,
    /// Time scale of the lattice model.
    #[arg(long = "t-scale")]
    t_scale: Option<f64>,
    /// Window radius.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args, Debug)]
struct LilypadArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    run: RunFlags,
    #[command(flatten)]
    model: ModelFlags,
    /// Environment JSON written by env-sample (or hand-built).
    #[arg(long)]
    env_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<SampleKind>,
    #[arg(long = "t-scale")]
    t_scale: Option<f64>,
    /// Fixed window radius instead of the automatic one.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    /// Frame and field times, comma separated.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// Skip SVG frames.
    #[arg(long)]
    no_svg: bool,
}

#[derive(Args, Debug)]
struct BrwArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    run: RunFlags,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long = "t-scale")]
    t_scale: Option<f64>,
    #[arg(long)]
    box_radius: Option<i64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    particle_cap: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    snapshot_times: Option<Vec<f64>>,
    #[arg(long)]
    max_flagged_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct AgeingArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    run: RunFlags,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long, value_enum)]
    kind: Option<SampleKind>,
    #[arg(long = "t-scale")]
    t_scale: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    thetas: Option<Vec<f64>>,
    /// Replicates.
    #[arg(long = "replicates")]
    m: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    max_flagged_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    run: RunFlags,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long = "t-values", value_delimiter = ',')]
    t_values: Option<Vec<f64>>,
    #[arg(long = "replicates")]
    m: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    probe: Option<Vec<f64>>,
    /// Compare two independent Poisson samples instead.
    #[arg(long)]
    self_test: bool,
    #[arg(long)]
    max_flagged_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    solution_file: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
}

macro_rules! put {
    ($map:ident, $($key:literal => $val:expr),* $(,)?) => {
        $(
            if let Some(v) = &$val {
                $map.insert($key.into(), serde_json::to_value(v).expect("flag values serialize"));
            }
        )*
    };
}

impl Common {
    fn load<C: DeserializeOwned>(&self, mut overrides: Map<String, Value>) -> Result<C, CliError> {
        let mut doc = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError { code: EXIT_IO, message: format!("{}: {e}", path.display()) })?;
                match serde_json::from_str::<Value>(&text)? {
                    Value::Object(m) => m,
                    _ => return Err(CliError::validation("config must be a JSON object")),
                }
            }
            None => Map::new(),
        };
        put!(overrides, "output_dir" => self.out_dir);
        doc.extend(overrides);
        serde_json::from_value(Value::Object(doc)).map_err(|e| CliError::validation(format!("config: {e}")))
    }
}

impl RunFlags {
    fn put(&self, m: &mut Map<String, Value>) {
        put!(m, "seed" => self.seed, "workers" => self.workers);
    }
}

impl ModelFlags {
    fn put(&self, m: &mut Map<String, Value>) {
        put!(m, "d" => self.d, "alpha" => self.alpha);
    }
}

fn dispatch(command: Command, cancel: Arc<AtomicBool>) -> Result<Outcome, CliError> {
    let mut m = Map::new();
    match command {
        Command::EnvSample(a) => {
            a.run.put(&mut m);
            a.model.put(&mut m);
            put!(m, "kind" => a.kind, "T" => a.t_scale, "R" => a.radius, "delta" => a.delta);
            commands::cmd_env_sample(&a.common.load(m)?)
        }
        Command::Lilypad(a) => {
            a.run.put(&mut m);
            a.model.put(&mut m);
            put!(m, "env_file" => a.env_file, "kind" => a.kind, "T" => a.t_scale, "R" => a.radius,
                 "delta" => a.delta, "t_max" => a.t_max, "times" => a.times);
            if a.no_svg {
                m.insert("svg".into(), Value::Bool(false));
            }
            commands::cmd_lilypad(&a.common.load(m)?)
        }
        Command::Brw(a) => {
            a.run.put(&mut m);
            a.model.put(&mut m);
            put!(m, "T" => a.t_scale, "box_radius" => a.box_radius, "t_max" => a.t_max, "runs" => a.runs,
                 "particle_cap" => a.particle_cap, "snapshot_times" => a.snapshot_times,
                 "max_flagged_fraction" => a.max_flagged_fraction);
            commands::cmd_brw(&a.common.load(m)?, cancel)
        }
        Command::Ageing(a) => {
            a.run.put(&mut m);
            a.model.put(&mut m);
            put!(m, "kind" => a.kind, "T" => a.t_scale, "thetas" => a.thetas, "M" => a.m, "delta" => a.delta,
                 "max_flagged_fraction" => a.max_flagged_fraction);
            commands::cmd_ageing(&a.common.load(m)?, cancel)
        }
        Command::Converge(a) => {
            a.run.put(&mut m);
            a.model.put(&mut m);
            put!(m, "T_values" => a.t_values, "M" => a.m, "delta" => a.delta, "probe" => a.probe,
                 "max_flagged_fraction" => a.max_flagged_fraction);
            if a.self_test {
                m.insert("self_test".into(), Value::Bool(true));
            }
            commands::cmd_converge(&a.common.load(m)?, cancel)
        }
        Command::Render(a) => {
            put!(m, "solution_file" => a.solution_file, "times" => a.times);
            commands::cmd_render(&a.common.load(m)?)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
///
/// Setting `cancel` makes long studies stop early and write reports marked
/// incomplete.
pub fn run<I, T>(args: I, cancel: Arc<AtomicBool>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match dispatch(cli.command, cancel) {
        Ok(outcome) => {
            let code = outcome.exit_code();
            if !outcome.complete {
                eprintln!("interrupted: reports were written and marked incomplete");
            } else if code == EXIT_QUALITY {
                eprintln!(
                    "flagged fraction {} exceeds the threshold {}",
                    outcome.flagged_fraction, outcome.threshold
                );
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

/// Resolved output directory and the provenance shared by a command's files.
struct Outputs {
    dir: PathBuf,
    command: &'static str,
    config: Value,
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    format_version: u32,
    command: &'static str,
    file: &'a str,
    complete: bool,
    config: &'a Value,
}

impl Outputs {
    /// `config` is recorded without the keys that cannot change the output.
    fn new<C: Serialize>(command: &'static str, output_dir: Option<&Path>, config: &C) -> Result<Self, CliError> {
        let dir = output_dir
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).map_err(|e| CliError { code: EXIT_IO, message: format!("{}: {e}", dir.display()) })?;
        let mut config = serde_json::to_value(config)?;
        if let Value::Object(m) = &mut config {
            m.remove("workers");
            m.remove("output_dir");
        }
        Ok(Self { dir, command, config })
    }

    fn write(&self, name: &str, contents: &str, complete: bool) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let io = |p: &Path, e: std::io::Error| CliError { code: EXIT_IO, message: format!("{}: {e}", p.display()) };
        fs::write(&path, contents).map_err(|e| io(&path, e))?;
        let prov = Provenance {
            tool: "lilypad",
            version: env!("CARGO_PKG_VERSION"),
            format_version: 1,
            command: self.command,
            file: name,
            complete,
            config: &self.config,
        };
        let side = self.dir.join(format!("{name}.provenance.json"));
        let mut text = serde_json::to_string_pretty(&prov)?;
        text.push('\n');
        fs::write(&side, text).map_err(|e| io(&side, e))?;
        Ok(path)
    }
}

fn check_workers(workers: usize) -> Result<(), CliError> {
    if workers == 0 {
        return Err(CliError::validation("workers must be at least 1"));
    }
    Ok(())
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
