use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use super::{check_workers, default_workers, svg, CliError, Outcome, Outputs, EXIT_HORIZON, EXIT_IO};
use crate::brw::{paired_run, BoundaryPolicy, BrwConfig, FieldComparison};
use crate::engine::{solve_set, solve_window, CertifiedSolution, EngineConfig};
use crate::env::{
    lattice_ball_count, poisson_mean_count, sample_lattice_env, sample_poisson_env, scaling_factors, EnvSource,
    MarkedPoint, MarkedPointSet, ModelParams,
};
use crate::error::Error;
use crate::experiments::{
    convergence_study, estimate_ageing_discrete, estimate_ageing_poisson, ks_noise_floor, ks_two_sample,
    poisson_hitting_samples, Exec,
};
use crate::lilypad::{auto_radius, SolutionDoc};
use crate::rng::{derive_seed, splitmix64};

/// Which environment law to sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    /// The limiting Poisson process Π.
    #[default]
    Poisson,
    /// The rescaled lattice process Π_T (needs `T`).
    Lattice,
}

fn params_of(d: usize, alpha: f64) -> Result<ModelParams, CliError> {
    Ok(ModelParams::new(d, alpha)?)
}

fn source_of(kind: SampleKind, params: ModelParams, t_scale: Option<f64>, seed: u64) -> Result<EnvSource, CliError> {
    match kind {
        SampleKind::Poisson => Ok(EnvSource::poisson(params, seed)),
        SampleKind::Lattice => {
            let t = t_scale.ok_or_else(|| CliError::validation("the lattice kind needs T"))?;
            Ok(EnvSource::lattice(params, t, seed)?)
        }
    }
}

fn exec(workers: usize, cancel: Arc<AtomicBool>) -> Exec {
    Exec { workers, cancel: Some(cancel) }
}

fn json_line<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn check_threshold(x: f64) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(CliError::validation(format!("max_flagged_fraction must lie in [0, 1], got {x}")));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSampleConfig {
    pub kind: SampleKind,
    pub d: usize,
    pub alpha: f64,
    #[serde(rename = "T")]
    pub t_scale: Option<f64>,
    #[serde(rename = "R")]
    pub radius: f64,
    pub delta: f64,
    pub seed: u64,
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for EnvSampleConfig {
    fn default() -> Self {
        Self {
            kind: SampleKind::Poisson,
            d: 2,
            alpha: 4.0,
            t_scale: None,
            radius: 1.0,
            delta: 0.5,
            seed: 0,
            workers: default_workers(),
            output_dir: None,
        }
    }
}

#[derive(Serialize)]
struct EnvSummary {
    kind: SampleKind,
    count: usize,
    max_mark: Option<f64>,
    expected_count: f64,
    #[serde(rename = "R")]
    radius: f64,
    delta: f64,
    seed: u64,
}

pub(super) fn cmd_env_sample(cfg: &EnvSampleConfig) -> Result<Outcome, CliError> {
    check_workers(cfg.workers)?;
    let params = params_of(cfg.d, cfg.alpha)?;
    let (set, expected) = match cfg.kind {
        SampleKind::Poisson => (
            sample_poisson_env(&params, cfg.radius, cfg.delta, cfg.seed)?,
            poisson_mean_count(&params, cfg.radius, cfg.delta),
        ),
        SampleKind::Lattice => {
            let t = cfg.t_scale.ok_or_else(|| CliError::validation("the lattice kind needs T"))?;
            let set = sample_lattice_env(&params, t, cfg.radius, cfg.delta, cfg.seed)?;
            let (a, r) = scaling_factors(t, &params)?;
            let sites = lattice_ball_count(params.d(), (cfg.radius * r).floor() as i64);
            (set, sites * (cfg.delta * a).powf(-params.alpha()).min(1.0))
        }
    };
    let out = Outputs::new("env-sample", cfg.output_dir.as_deref(), cfg)?;
    let mut doc = set.to_json()?;
    doc.push('\n');
    out.write("env.json", &doc, true)?;
    let summary = EnvSummary {
        kind: cfg.kind,
        count: set.len(),
        max_mark: set.max_mark(),
        expected_count: expected,
        radius: cfg.radius,
        delta: cfg.delta,
        seed: cfg.seed,
    };
    let text = json_line(&summary)?;
    out.write("env_summary.json", &text, true)?;
    print!("{text}");
    Ok(Outcome::clean())
}

/// Regular probe grid `lo + i (hi - lo)/(n - 1)` along each axis.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl ProbeGrid {
    fn points(&self, d: usize) -> Result<Vec<Vec<f64>>, CliError> {
        if self.n == 0 || !(self.lo <= self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(CliError::validation("grid needs n ≥ 1 and finite lo ≤ hi"));
        }
        let total = (self.n as f64).powi(d as i32);
        if total > 1e6 {
            return Err(CliError::validation(format!("grid has {total} points, at most 1e6 allowed")));
        }
        let axis: Vec<f64> = (0..self.n)
            .map(|i| if self.n == 1 { self.lo } else { self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64 })
            .collect();
        let mut pts = vec![Vec::new()];
        for _ in 0..d {
            pts = pts.into_iter().flat_map(|p| axis.iter().map(move |&x| [p.as_slice(), &[x]].concat())).collect();
        }
        Ok(pts)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LilypadConfig {
    /// Environment JSON; when set, the sampling keys below are ignored.
    pub env_file: Option<PathBuf>,
    pub kind: SampleKind,
    pub d: usize,
    pub alpha: f64,
    #[serde(rename = "T")]
    pub t_scale: Option<f64>,
    /// Fixed window radius; automatic when absent.
    #[serde(rename = "R")]
    pub radius: Option<f64>,
    pub delta: f64,
    /// Solve horizon; defaults to the largest requested time.
    pub t_max: Option<f64>,
    pub times: Vec<f64>,
    pub grid: Option<ProbeGrid>,
    /// Extra probe points appended after the grid.
    pub probes: Vec<Vec<f64>>,
    pub svg: bool,
    pub engine: EngineConfig,
    /// Exit with code 4 when an uncertified solution is flagged above this.
    pub max_flagged_fraction: f64,
    pub seed: u64,
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for LilypadConfig {
    fn default() -> Self {
        Self {
            env_file: None,
            kind: SampleKind::Poisson,
            d: 2,
            alpha: 4.0,
            t_scale: None,
            radius: None,
            delta: 0.1,
            t_max: None,
            times: vec![1.0, 2.0, 3.0],
            grid: Some(ProbeGrid { lo: -0.5, hi: 0.5, n: 11 }),
            probes: Vec::new(),
            svg: true,
            engine: EngineConfig::default(),
            max_flagged_fraction: 0.0,
            seed: 0,
            workers: default_workers(),
            output_dir: None,
        }
    }
}

#[derive(Serialize)]
struct FrameMaximizer {
    t: f64,
    point: Option<MarkedPoint>,
    value: f64,
    near_tie_gap: f64,
}

#[derive(Serialize)]
struct LilypadSummary {
    certified: bool,
    window: f64,
    delta: f64,
    t_max: f64,
    points: usize,
    settled: usize,
    active: usize,
    maximizers: Vec<FrameMaximizer>,
    frames: Vec<String>,
}

fn horizon_error(params: &ModelParams, delta: f64, margin: f64, value: f64, t_max: f64) -> CliError {
    let radius = auto_radius(params, delta, value, margin).map_or_else(|_| "unavailable".to_string(), |r| r.to_string());
    CliError {
        code: EXIT_HORIZON,
        message: format!(
            "a probe is not reached by the horizon {t_max}; t_max = {value} suffices (window radius R >= {radius})"
        ),
    }
}

fn solve_for(cfg: &LilypadConfig, t_max: f64) -> Result<CertifiedSolution, CliError> {
    if let Some(path) = &cfg.env_file {
        let text =
            fs::read_to_string(path).map_err(|e| CliError { code: EXIT_IO, message: format!("{}: {e}", path.display()) })?;
        let set = MarkedPointSet::from_json(&text)?;
        let delta = set.delta();
        return Ok(solve_set(Arc::new(set), delta, t_max)?);
    }
    let params = params_of(cfg.d, cfg.alpha)?;
    let source = source_of(cfg.kind, params, cfg.t_scale, cfg.seed)?;
    match cfg.radius {
        None => Ok(solve_window(&source, cfg.delta, t_max, &cfg.engine)?),
        Some(r) => {
            let need = auto_radius(&params, cfg.delta, t_max, cfg.engine.margin)?;
            if r < need {
                return Err(CliError {
                    code: EXIT_HORIZON,
                    message: format!("window R = {r} is too small for t_max = {t_max}; need R >= {need}"),
                });
            }
            let set = source.materialize(r, cfg.delta, |_| cfg.delta)?;
            Ok(solve_set(Arc::new(set), cfg.delta, t_max)?)
        }
    }
}

pub(super) fn cmd_lilypad(cfg: &LilypadConfig) -> Result<Outcome, CliError> {
    check_workers(cfg.workers)?;
    check_threshold(cfg.max_flagged_fraction)?;
    if cfg.times.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
        return Err(CliError::validation("times must be finite and non-negative"));
    }
    let t_max = cfg.t_max.unwrap_or_else(|| cfg.times.iter().copied().fold(0.0, f64::max));
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(CliError::validation("t_max must be finite and positive (set t_max or a positive time)"));
    }
    if let Some(&t) = cfg.times.iter().find(|&&t| t > t_max) {
        return Err(CliError::validation(format!("time {t} exceeds t_max = {t_max}")));
    }
    let solved = solve_for(cfg, t_max)?;
    let sol = &solved.solution;
    let params = *sol.params();
    let d = params.d();
    if cfg.svg && d > 2 {
        return Err(CliError::validation(format!("SVG frames need d ≤ 2, got d = {d}; set svg to false")));
    }
    let mut probes = match &cfg.grid {
        Some(g) => g.points(d)?,
        None => Vec::new(),
    };
    if let Some(p) = cfg.probes.iter().find(|p| p.len() != d) {
        return Err(CliError::validation(format!("probe {p:?} does not have dimension {d}")));
    }
    probes.extend(cfg.probes.iter().cloned());

    let mut csv: Vec<String> = (1..=d).map(|i| format!("z{i}")).collect();
    csv.push("h".into());
    csv.extend(cfg.times.iter().map(|t| format!("m@{t}")));
    let mut csv = csv.join(",") + "\n";
    for z in &probes {
        let h = match sol.hitting_at(z) {
            Ok(h) => h,
            Err(Error::HorizonExceeded { value, horizon }) => {
                return Err(horizon_error(&params, sol.delta(), cfg.engine.margin, value, horizon));
            }
            Err(e) => return Err(e.into()),
        };
        let mut row: Vec<String> = z.iter().map(|x| x.to_string()).collect();
        row.push(h.to_string());
        for &t in &cfg.times {
            row.push(sol.particles_at(z, t)?.to_string());
        }
        let _ = writeln!(csv, "{}", row.join(","));
    }

    let out = Outputs::new("lilypad", cfg.output_dir.as_deref(), cfg)?;
    let mut json = sol.to_json()?;
    json.push('\n');
    out.write("solution.json", &json, true)?;
    out.write("fields.csv", &csv, true)?;
    let mut frames = Vec::new();
    if cfg.svg {
        let doc: SolutionDoc = serde_json::from_str(&json)?;
        for (i, &t) in cfg.times.iter().enumerate() {
            let name = format!("frame_{i:03}.svg");
            out.write(&name, &svg::render_frame(&doc, t)?, true)?;
            frames.push(name);
        }
    }
    let maximizers = cfg
        .times
        .iter()
        .map(|&t| {
            let m = sol.maximizer(t)?;
            Ok(FrameMaximizer { t, point: m.point, value: m.value, near_tie_gap: m.near_tie_gap })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let summary = LilypadSummary {
        certified: solved.certified,
        window: solved.window,
        delta: sol.delta(),
        t_max,
        points: sol.set().len(),
        settled: sol.settled_count(),
        active: sol.active_count(),
        maximizers,
        frames,
    };
    out.write("lilypad_summary.json", &json_line(&summary)?, true)?;
    println!(
        "solved {} points in window {} (certified: {}); {} probes, {} frames",
        summary.points,
        summary.window,
        summary.certified,
        probes.len(),
        summary.frames.len()
    );
    Ok(Outcome {
        complete: true,
        flagged_fraction: if solved.certified { 0.0 } else { 1.0 },
        threshold: cfg.max_flagged_fraction,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub solution_file: Option<PathBuf>,
    pub times: Vec<f64>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { solution_file: None, times: vec![1.0], output_dir: None }
    }
}

pub(super) fn cmd_render(cfg: &RenderConfig) -> Result<Outcome, CliError> {
    let path = cfg.solution_file.as_ref().ok_or_else(|| CliError::validation("render needs solution_file"))?;
    let text = fs::read_to_string(path).map_err(|e| CliError { code: EXIT_IO, message: format!("{}: {e}", path.display()) })?;
    let doc: SolutionDoc = serde_json::from_str(&text)?;
    let frames = cfg.times.iter().map(|&t| svg::render_frame(&doc, t)).collect::<Result<Vec<_>, Error>>()?;
    let out = Outputs::new("render", cfg.output_dir.as_deref(), cfg)?;
    for (i, f) in frames.iter().enumerate() {
        out.write(&format!("frame_{i:03}.svg"), f, true)?;
    }
    println!("wrote {} frames", frames.len());
    Ok(Outcome::clean())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrwCmdConfig {
    pub d: usize,
    pub alpha: f64,
    #[serde(rename = "T")]
    pub t_scale: f64,
    /// Raw box radius; `⌈8 r(T)⌉ + 20` when absent.
    pub box_radius: Option<i64>,
    /// Rescaled final time.
    pub t_max: f64,
    pub particle_cap: u64,
    /// Rescaled snapshot times; also the comparison times.
    pub snapshot_times: Vec<f64>,
    pub boundary: BoundaryPolicy,
    pub runs: usize,
    /// Comparison window radius in rescaled units.
    pub window: f64,
    pub max_flagged_fraction: f64,
    pub seed: u64,
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for BrwCmdConfig {
    fn default() -> Self {
        Self {
            d: 1,
            alpha: 3.0,
            t_scale: 10.0,
            box_radius: None,
            t_max: 2.0,
            particle_cap: 1_000_000,
            snapshot_times: vec![0.25, 0.5],
            boundary: BoundaryPolicy::StopAndFlag,
            runs: 1,
            window: 1.0,
            max_flagged_fraction: 0.2,
            seed: 0,
            workers: default_workers(),
            output_dir: None,
        }
    }
}

#[derive(Serialize)]
struct BrwRunRow {
    run: usize,
    seed: u64,
    events: u64,
    truncated: bool,
    comparison: FieldComparison,
}

#[derive(Serialize)]
struct BrwSummary {
    box_radius: i64,
    runs: Vec<BrwRunRow>,
    median_hit_sup: Option<f64>,
    flagged: usize,
    complete: bool,
}

pub(super) fn cmd_brw(cfg: &BrwCmdConfig, cancel: Arc<AtomicBool>) -> Result<Outcome, CliError> {
    check_workers(cfg.workers)?;
    check_threshold(cfg.max_flagged_fraction)?;
    if cfg.runs == 0 {
        return Err(CliError::validation("runs must be at least 1"));
    }
    if !(cfg.window > 0.0) || !cfg.window.is_finite() {
        return Err(CliError::validation("window must be finite and positive"));
    }
    let params = params_of(cfg.d, cfg.alpha)?;
    let (_, r) = scaling_factors(cfg.t_scale, &params)?;
    let box_radius = cfg.box_radius.unwrap_or((8.0 * r).ceil() as i64 + 20);
    let run_cfg = |seed| BrwConfig {
        params,
        t_scale: cfg.t_scale,
        box_radius,
        t_max_rescaled: cfg.t_max,
        particle_cap: cfg.particle_cap,
        snapshot_times: cfg.snapshot_times.clone(),
        seed,
        boundary: cfg.boundary,
    };
    run_cfg(cfg.seed).validate()?;
    let results = exec(cfg.workers, cancel).map(cfg.runs, |i| paired_run(&run_cfg(derive_seed(cfg.seed, i as u64)), cfg.window, &cfg.snapshot_times))?;
    let complete = results.iter().all(Option::is_some);

    let out = Outputs::new("brw", cfg.output_dir.as_deref(), cfg)?;
    let mut rows = Vec::new();
    let mut csv = String::from("run,seed,events,truncated,flagged,censored_sites,hit_sup,count_sup\n");
    for (i, res) in results.into_iter().enumerate() {
        let Some(p) = res else { continue };
        out.write(&format!("brw_fields_{i:03}.csv"), &p.fields.to_csv(), true)?;
        let c = &p.comparison;
        let _ = writeln!(
            csv,
            "{i},{},{},{},{},{},{},{}",
            p.seed, p.events, p.truncated, c.flagged, c.censored_sites, c.hit_sup, c.count_sup
        );
        rows.push(BrwRunRow { run: i, seed: p.seed, events: p.events, truncated: p.truncated, comparison: p.comparison });
    }
    // truncation after the last comparison time leaves the comparison intact
    let flagged = rows.iter().filter(|r| r.comparison.flagged).count();
    let mut sups: Vec<f64> = rows.iter().map(|r| r.comparison.hit_sup).collect();
    sups.sort_by(f64::total_cmp);
    let median_hit_sup = (!sups.is_empty()).then(|| {
        let n = sups.len();
        if n % 2 == 1 { sups[n / 2] } else { 0.5 * (sups[n / 2 - 1] + sups[n / 2]) }
    });
    let summary = BrwSummary { box_radius, runs: rows, median_hit_sup, flagged, complete };
    out.write("brw_summary.csv", &csv, complete)?;
    out.write("brw_summary.json", &json_line(&summary)?, complete)?;
    println!(
        "{} runs, {} flagged, median hitting discrepancy {}",
        summary.runs.len(),
        flagged,
        median_hit_sup.map_or("n/a".into(), |m| m.to_string())
    );
    Ok(Outcome {
        complete,
        flagged_fraction: flagged as f64 / cfg.runs as f64,
        threshold: cfg.max_flagged_fraction,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgeingConfig {
    pub kind: SampleKind,
    pub d: usize,
    pub alpha: f64,
    #[serde(rename = "T")]
    pub t_scale: Option<f64>,
    pub thetas: Vec<f64>,
    #[serde(rename = "M")]
    pub replicates: usize,
    pub delta: f64,
    pub engine: EngineConfig,
    pub max_flagged_fraction: f64,
    pub seed: u64,
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for AgeingConfig {
    fn default() -> Self {
        Self {
            kind: SampleKind::Poisson,
            d: 2,
            alpha: 4.0,
            t_scale: None,
            thetas: vec![0.1, 0.5, 1.0, 2.0],
            replicates: 100,
            delta: 0.05,
            engine: EngineConfig::default(),
            max_flagged_fraction: 0.1,
            seed: 0,
            workers: default_workers(),
            output_dir: None,
        }
    }
}

pub(super) fn cmd_ageing(cfg: &AgeingConfig, cancel: Arc<AtomicBool>) -> Result<Outcome, CliError> {
    check_workers(cfg.workers)?;
    check_threshold(cfg.max_flagged_fraction)?;
    let params = params_of(cfg.d, cfg.alpha)?;
    let ex = exec(cfg.workers, cancel);
    let report = match cfg.kind {
        SampleKind::Poisson => {
            estimate_ageing_poisson(&params, &cfg.thetas, cfg.replicates, cfg.delta, cfg.seed, &cfg.engine, &ex)?
        }
        SampleKind::Lattice => {
            let t = cfg.t_scale.ok_or_else(|| CliError::validation("the lattice kind needs T"))?;
            estimate_ageing_discrete(&params, t, &cfg.thetas, cfg.replicates, cfg.delta, cfg.seed, &cfg.engine, &ex)?
        }
    };
    let out = Outputs::new("ageing", cfg.output_dir.as_deref(), cfg)?;
    out.write("ageing.csv", &report.to_csv(), report.complete)?;
    out.write("ageing.json", &json_line(&report)?, report.complete)?;
    for (i, th) in report.thetas.iter().enumerate() {
        match report.estimates[i] {
            Some(p) => println!("theta {th}: {p} [{}, {}]", report.ci_low[i].unwrap_or(0.0), report.ci_high[i].unwrap_or(1.0)),
            None => println!("theta {th}: no usable environment"),
        }
    }
    Ok(Outcome {
        complete: report.complete,
        flagged_fraction: report.uncertified as f64 / cfg.replicates as f64,
        threshold: cfg.max_flagged_fraction,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    pub d: usize,
    pub alpha: f64,
    #[serde(rename = "T_values")]
    pub t_values: Vec<f64>,
    #[serde(rename = "M")]
    pub replicates: usize,
    pub delta: f64,
    /// Probe point; `(1, 0, ..., 0)` when absent.
    pub probe: Option<Vec<f64>>,
    /// Two independent Poisson samples instead of lattice against Poisson.
    pub self_test: bool,
    pub engine: EngineConfig,
    pub max_flagged_fraction: f64,
    pub seed: u64,
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            d: 2,
            alpha: 4.0,
            t_values: vec![1e2, 1e4],
            replicates: 200,
            delta: 0.05,
            probe: None,
            self_test: false,
            engine: EngineConfig::default(),
            max_flagged_fraction: 0.1,
            seed: 0,
            workers: default_workers(),
            output_dir: None,
        }
    }
}

/// Second seed stream of the self-test.
const SELF_TEST_SALT: u64 = 0x5e1f_7e57;

#[derive(Serialize)]
struct SelfTestReport {
    params: ModelParams,
    delta: f64,
    seed: u64,
    replicates: usize,
    probe: Vec<f64>,
    ks: f64,
    noise_floor: f64,
    below_floor: bool,
    uncertified: u64,
    complete: bool,
}

pub(super) fn cmd_converge(cfg: &ConvergeConfig, cancel: Arc<AtomicBool>) -> Result<Outcome, CliError> {
    check_workers(cfg.workers)?;
    check_threshold(cfg.max_flagged_fraction)?;
    let params = params_of(cfg.d, cfg.alpha)?;
    let probe = cfg.probe.clone().unwrap_or_else(|| {
        let mut z = vec![0.0; params.d()];
        z[0] = 1.0;
        z
    });
    let ex = exec(cfg.workers, cancel);
    let out = Outputs::new("converge", cfg.output_dir.as_deref(), cfg)?;
    if cfg.self_test {
        if cfg.replicates < 2 {
            return Err(CliError::validation("need at least two replicates"));
        }
        let seeds = [cfg.seed, splitmix64(cfg.seed ^ SELF_TEST_SALT)];
        let mut samples = Vec::new();
        for s in seeds {
            samples.push(poisson_hitting_samples(&params, cfg.replicates, cfg.delta, &probe, s, &cfg.engine, &ex)?);
        }
        let complete = samples.iter().flatten().all(Option::is_some);
        let values: Vec<Vec<f64>> = samples.iter().map(|s| s.iter().flatten().map(|x| x.0).collect()).collect();
        let uncertified = samples.iter().flatten().flatten().filter(|x| !x.1).count() as u64;
        let ks = if values.iter().any(Vec::is_empty) { f64::NAN } else { ks_two_sample(&values[0], &values[1])? };
        let noise_floor = ks_noise_floor(cfg.replicates);
        let report = SelfTestReport {
            params,
            delta: cfg.delta,
            seed: cfg.seed,
            replicates: cfg.replicates,
            probe,
            ks,
            noise_floor,
            below_floor: ks < noise_floor,
            uncertified,
            complete,
        };
        let csv = format!("ks,noise_floor,uncertified\n{ks},{noise_floor},{uncertified}\n");
        out.write("converge.csv", &csv, complete)?;
        out.write("converge.json", &json_line(&report)?, complete)?;
        println!("self-test KS {ks} against noise floor {noise_floor}");
        return Ok(Outcome {
            complete,
            flagged_fraction: uncertified as f64 / (2 * cfg.replicates) as f64,
            threshold: cfg.max_flagged_fraction,
        });
    }
    let report = convergence_study(&params, &cfg.t_values, cfg.replicates, cfg.delta, &probe, cfg.seed, &cfg.engine, &ex)?;
    out.write("converge.csv", &report.to_csv(), report.complete)?;
    out.write("converge.json", &json_line(&report)?, report.complete)?;
    for (t, v) in report.t_values.iter().zip(&report.values) {
        println!("T {t}: KS {v} (noise floor {})", report.noise_floor);
    }
    let total = (cfg.replicates * (1 + cfg.t_values.len())) as f64;
    Ok(Outcome {
        complete: report.complete,
        flagged_fraction: report.uncertified.iter().sum::<u64>() as f64 / total,
        threshold: cfg.max_flagged_fraction,
    })
}
