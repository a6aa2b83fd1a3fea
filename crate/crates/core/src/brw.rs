//! Branching random walk in a fixed lattice potential.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{sample_pareto, scaling_factors, MarkedPoint, MarkedPointSet, ModelParams};
use crate::error::{invalid_input, invalid_params, Error, Result};
use crate::geometry::{hausdorff, HausdorffEstimate, SupportSet};
use crate::lilypad::{solve_hitting, LilypadSolution};
use crate::rng::{self, StreamTag};

/// Potential on a finite set of lattice sites.
#[derive(Clone, Debug)]
pub struct LatticePotential {
    d: usize,
    sites: Vec<Vec<i64>>,
    values: Vec<f64>,
    index: HashMap<Vec<i64>, u32>,
    /// Per site, the `2d` neighbors `+e_1, -e_1, +e_2, ...`; `None` off the set.
    neighbors: Vec<Vec<Option<u32>>>,
}

impl LatticePotential {
    /// Arbitrary values on an arbitrary finite site set.
    pub fn from_values(d: usize, sites: Vec<Vec<i64>>, values: Vec<f64>) -> Result<Self> {
        if d == 0 || sites.len() != values.len() {
            return Err(invalid_input("need d ≥ 1 and one value per site"));
        }
        if sites.len() >= u32::MAX as usize {
            return Err(Error::TooLarge(format!("{} sites", sites.len())));
        }
        let mut index = HashMap::with_capacity(sites.len());
        for (i, s) in sites.iter().enumerate() {
            if s.len() != d {
                return Err(invalid_input(format!("site {s:?} is not {d}-dimensional")));
            }
            if index.insert(s.clone(), i as u32).is_some() {
                return Err(invalid_input(format!("duplicate site {s:?}")));
            }
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(invalid_input(format!("potential value {v} must be finite and non-negative")));
        }
        if !index.contains_key(&vec![0; d]) {
            return Err(invalid_input("site set must contain the origin"));
        }
        let neighbors = sites
            .iter()
            .map(|s| {
                (0..2 * d)
                    .map(|dir| {
                        let mut n = s.clone();
                        n[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
                        index.get(&n).copied()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { d, sites, values, index, neighbors })
    }

    /// `f(z)` on the box `|z|₁ ≤ radius`.
    pub fn from_fn<F: FnMut(&[i64]) -> f64>(d: usize, radius: i64, mut f: F) -> Result<Self> {
        if radius < 0 {
            return Err(invalid_params("box radius must be non-negative"));
        }
        let sites = box_sites(d, radius);
        let values = sites.iter().map(|s| f(s)).collect();
        Self::from_values(d, sites, values)
    }

    /// I.i.d. Pareto(α) values on the box, one hashed draw per site.
    pub fn pareto(params: &ModelParams, radius: i64, seed: u64) -> Result<Self> {
        let alpha = params.alpha();
        Self::from_fn(params.d(), radius, |s| {
            let u = rng::hashed_unit(seed, StreamTag::LatticeSite, rng::site_key(s));
            sample_pareto(u, alpha).expect("hashed draws lie in (0, 1]")
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sites(&self) -> &[Vec<i64>] {
        &self.sites
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, site: &[i64]) -> Option<f64> {
        self.index.get(site).map(|&i| self.values[i as usize])
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Fingerprint of the site table, used to check pairings.
    pub fn digest(&self) -> u64 {
        let mut order: Vec<usize> = (0..self.sites.len()).collect();
        order.sort_by(|&a, &b| self.sites[a].cmp(&self.sites[b]));
        order.iter().fold(rng::splitmix64(self.d as u64), |acc, &i| {
            rng::splitmix64(acc ^ rng::site_key(&self.sites[i]) ^ self.values[i].to_bits().rotate_left(17))
        })
    }

    /// Π_T restricted to `|z|₁ ≤ window`: sites `z / r(T)` with marks
    /// `ξ(z) / a(T) ≥ delta`.
    pub fn to_point_set(&self, params: &ModelParams, t_scale: f64, delta: f64, window: f64) -> Result<MarkedPointSet> {
        if params.d() != self.d {
            return Err(invalid_input("parameter dimension does not match the potential"));
        }
        let (a, r) = scaling_factors(t_scale, params)?;
        let mut order: Vec<usize> = (0..self.sites.len()).collect();
        order.sort_by(|&i, &j| self.sites[i].cmp(&self.sites[j]));
        let points = order
            .into_iter()
            .filter_map(|i| {
                let site = &self.sites[i];
                let pos: Vec<f64> = site.iter().map(|&c| c as f64 / r).collect();
                let xi = self.values[i] / a;
                let norm: f64 = pos.iter().map(|x| x.abs()).sum();
                (xi >= delta && norm <= window).then(|| MarkedPoint { pos, xi, site: Some(site.clone()) })
            })
            .collect();
        MarkedPointSet::lattice_from_sites(*params, t_scale, delta, window, points, self.digest())
    }
}

/// Sites of `{z ∈ Z^d : |z|₁ ≤ radius}` in lexicographic order.
pub fn box_sites(d: usize, radius: i64) -> Vec<Vec<i64>> {
    fn rec(d: usize, left: i64, prefix: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if prefix.len() == d {
            out.push(prefix.clone());
            return;
        }
        for c in -left..=left {
            prefix.push(c);
            rec(d, left - c.abs(), prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, radius, &mut Vec::with_capacity(d), &mut out);
    out
}

/// What happens when a particle jumps off the site set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// End the run and flag it truncated.
    #[default]
    StopAndFlag,
    /// Remove the particle; the run continues.
    Absorb,
}

/// Run parameters; times other than raw event times are rescaled by `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrwConfig {
    pub params: ModelParams,
    #[serde(rename = "T")]
    pub t_scale: f64,
    pub box_radius: i64,
    pub t_max_rescaled: f64,
    #[serde(default = "default_cap")]
    pub particle_cap: u64,
    pub snapshot_times: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub boundary: BoundaryPolicy,
}

fn default_cap() -> u64 {
    1_000_000
}

impl BrwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particle_cap < 1 {
            return Err(invalid_params("particle cap must be at least 1"));
        }
        if !(self.t_scale > 0.0) || !(self.t_max_rescaled >= 0.0) || !self.t_max_rescaled.is_finite() {
            return Err(invalid_params("need T > 0 and finite t_max ≥ 0"));
        }
        if self.box_radius < 0 {
            return Err(invalid_params("box radius must be non-negative"));
        }
        if self.snapshot_times.iter().any(|&t| !(t >= 0.0 && t <= self.t_max_rescaled)) {
            return Err(invalid_params("snapshot times must lie in [0, t_max]"));
        }
        if self.snapshot_times.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid_params("snapshot times must be sorted"));
        }
        Ok(())
    }
}

/// Particle counts at one snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t_rescaled: f64,
    pub counts: BTreeMap<Vec<i64>, u64>,
}

/// Outcome of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrwRunResult {
    /// Raw first-hit time per site reached.
    pub first_hit: BTreeMap<Vec<i64>, f64>,
    /// Snapshots reached before the run ended, in time order.
    pub snapshots: Vec<Snapshot>,
    pub truncated: bool,
    pub capped: bool,
    pub escaped: bool,
    pub absorbed: u64,
    pub events_processed: u64,
    pub branch_events: u64,
    /// Raw time the run ended at.
    pub end_time: f64,
    pub env_digest: u64,
}

impl BrwRunResult {
    pub fn total_at(&self, snapshot: usize) -> u64 {
        self.snapshots[snapshot].counts.values().sum()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Clock {
    time: f64,
    particle: u32,
}

impl Eq for Clock {}

impl Ord for Clock {
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.particle.cmp(&self.particle))
    }
}

impl PartialOrd for Clock {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact event-driven simulation from one particle at the origin.
///
/// A particle at `z` jumps to each neighbor at rate 1 and splits in two at
/// rate `ξ(z)`; each particle holds one exponential clock of the total rate.
pub fn simulate_brw(env: &LatticePotential, cfg: &BrwConfig) -> Result<BrwRunResult> {
    cfg.validate()?;
    if env.d != cfg.params.d() {
        return Err(invalid_input("potential dimension does not match the parameters"));
    }
    let d2 = 2.0 * env.d as f64;
    let t_end = cfg.t_max_rescaled * cfg.t_scale;
    let snap_raw: Vec<f64> = cfg.snapshot_times.iter().map(|t| t * cfg.t_scale).collect();
    let mut rng = rng::stream(cfg.seed, StreamTag::Brw, 0);
    let origin = env.index[&vec![0; env.d]];

    let mut site_of: Vec<u32> = vec![origin];
    let mut counts = vec![0u64; env.sites.len()];
    let mut first = vec![f64::INFINITY; env.sites.len()];
    counts[origin as usize] = 1;
    first[origin as usize] = 0.0;
    let mut alive: u64 = 1;
    let mut heap = BinaryHeap::new();
    let rate = |s: u32| d2 + env.values[s as usize];
    heap.push(Clock { time: rng::exp1(&mut rng) / rate(origin), particle: 0 });

    let mut res = BrwRunResult {
        first_hit: BTreeMap::new(),
        snapshots: Vec::with_capacity(snap_raw.len()),
        truncated: false,
        capped: alive >= cfg.particle_cap,
        escaped: false,
        absorbed: 0,
        events_processed: 0,
        branch_events: 0,
        end_time: t_end,
        env_digest: env.digest(),
    };
    let take_snapshot = |counts: &[u64], t: f64| Snapshot {
        t_rescaled: t,
        counts: counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (env.sites[i].clone(), c))
            .collect(),
    };
    let mut next_snap = 0;
    let mut stopped = res.capped;
    if stopped {
        res.truncated = true;
        res.end_time = 0.0;
    }
    while !stopped {
        let Some(Clock { time, particle }) = heap.pop() else { break };
        if time > t_end {
            break;
        }
        while next_snap < snap_raw.len() && snap_raw[next_snap] <= time {
            res.snapshots.push(take_snapshot(&counts, cfg.snapshot_times[next_snap]));
            next_snap += 1;
        }
        res.events_processed += 1;
        let s = site_of[particle as usize];
        let xi = env.values[s as usize];
        let u: f64 = rng.gen::<f64>() * (d2 + xi);
        if u < xi {
            let child = site_of.len() as u32;
            site_of.push(s);
            counts[s as usize] += 1;
            alive += 1;
            res.branch_events += 1;
            heap.push(Clock { time: time + rng::exp1(&mut rng) / rate(s), particle });
            heap.push(Clock { time: time + rng::exp1(&mut rng) / rate(s), particle: child });
            if alive >= cfg.particle_cap {
                res.capped = true;
                stopped = true;
            }
        } else {
            let dir = ((u - xi) as usize).min(2 * env.d - 1);
            counts[s as usize] -= 1;
            match env.neighbors[s as usize][dir] {
                Some(n) => {
                    site_of[particle as usize] = n;
                    counts[n as usize] += 1;
                    if first[n as usize].is_infinite() {
                        first[n as usize] = time;
                    }
                    heap.push(Clock { time: time + rng::exp1(&mut rng) / rate(n), particle });
                }
                None => {
                    alive -= 1;
                    res.absorbed += 1;
                    if cfg.boundary == BoundaryPolicy::StopAndFlag {
                        res.escaped = true;
                        stopped = true;
                    }
                }
            }
        }
        if stopped {
            res.truncated = true;
            res.end_time = time;
        }
    }
    if !stopped {
        while next_snap < snap_raw.len() {
            res.snapshots.push(take_snapshot(&counts, cfg.snapshot_times[next_snap]));
            next_snap += 1;
        }
    }
    res.first_hit = first
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_finite())
        .map(|(i, &t)| (env.sites[i].clone(), t))
        .collect();
    Ok(res)
}

/// `u(z, t)` for `u' = Δu + ξu`, `u(·,0) = 1_{0}`, with `u ≡ 0` off the site set.
///
/// Classical RK4 with step at most `0.1 / (2d + max ξ)`; the step is halved
/// until two successive resolutions agree to `1e-9` relative.
pub fn pam_expectation(env: &LatticePotential, sites: &[Vec<i64>], t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid_input(format!("time must be finite and non-negative, got {t}")));
    }
    let idx: Vec<usize> = sites
        .iter()
        .map(|s| env.index.get(s).map(|&i| i as usize).ok_or_else(|| invalid_input(format!("site {s:?} outside the potential"))))
        .collect::<Result<_>>()?;
    let h_max = 0.1 / (2.0 * env.d as f64 + env.max_value());
    let mut steps = ((t / h_max).ceil() as usize).max(1);
    let mut coarse = integrate_pam(env, t, steps);
    for _ in 0..6 {
        steps *= 2;
        let fine = integrate_pam(env, t, steps);
        let scale = fine.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let diff = fine.iter().zip(&coarse).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if diff <= 1e-9 * scale {
            return Ok(idx.iter().map(|&i| fine[i]).collect());
        }
        coarse = fine;
    }
    Err(Error::Accuracy(format!("RK4 did not settle below 1e-9 relative with {steps} steps")))
}

fn integrate_pam(env: &LatticePotential, t: f64, steps: usize) -> Vec<f64> {
    let n = env.sites.len();
    let d2 = 2.0 * env.d as f64;
    let apply = |u: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let mut acc = (env.values[i] - d2) * u[i];
            for nb in env.neighbors[i].iter().flatten() {
                acc += u[*nb as usize];
            }
            out[i] = acc;
        }
    };
    let mut u = vec![0.0; n];
    u[env.index[&vec![0; env.d]] as usize] = 1.0;
    let h = t / steps as f64;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for _ in 0..steps {
        apply(&u, &mut k1);
        for i in 0..n {
            tmp[i] = u[i] + 0.5 * h * k1[i];
        }
        apply(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = u[i] + 0.5 * h * k2[i];
        }
        apply(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = u[i] + h * k3[i];
        }
        apply(&tmp, &mut k4);
        for i in 0..n {
            u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    u
}

/// `(H_T, M_T, S_T)` of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledFields {
    pub params: ModelParams,
    #[serde(rename = "T")]
    pub t_scale: f64,
    pub a_scale: f64,
    pub r_scale: f64,
    pub env_digest: u64,
    /// Rescaled first-hit time per raw site.
    pub hit: BTreeMap<Vec<i64>, f64>,
    pub snapshots: Vec<RescaledSnapshot>,
    /// Rescaled time the run was observed up to.
    pub observed_until: f64,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledSnapshot {
    pub t: f64,
    /// `log₊ N / (a(T) T)` per raw site with a positive count.
    pub m: BTreeMap<Vec<i64>, f64>,
}

impl RescaledSnapshot {
    /// Sites hit by this time: `S_T(t)`.
    pub fn support<'a>(&self, fields: &'a RescaledFields) -> impl Iterator<Item = &'a Vec<i64>> + 'a {
        let t = self.t;
        fields.hit.iter().filter(move |(_, &h)| h <= t).map(|(s, _)| s)
    }
}

impl RescaledFields {
    pub fn position(&self, site: &[i64]) -> Vec<f64> {
        site.iter().map(|&c| c as f64 / self.r_scale).collect()
    }

    /// Header `z1..zd,H_T,M_T@t...`; sites in lexicographic order.
    pub fn to_csv(&self) -> String {
        let d = self.params.d();
        let mut out = String::new();
        let mut header: Vec<String> = (1..=d).map(|i| format!("z{i}")).collect();
        header.push("H_T".into());
        header.extend(self.snapshots.iter().map(|s| format!("M_T@{}", s.t)));
        out.push_str(&header.join(","));
        out.push('\n');
        for (site, h) in &self.hit {
            let mut row: Vec<String> = self.position(site).iter().map(|x| format!("{x}")).collect();
            row.push(format!("{h}"));
            row.extend(self.snapshots.iter().map(|s| format!("{}", s.m.get(site).copied().unwrap_or(0.0))));
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// `log₊ x = log(max(x, 1))`.
pub fn log_plus(x: f64) -> f64 {
    x.max(1.0).ln()
}

pub fn rescale_run(run: &BrwRunResult, cfg: &BrwConfig) -> Result<RescaledFields> {
    let (a, r) = scaling_factors(cfg.t_scale, &cfg.params)?;
    let norm = a * cfg.t_scale;
    Ok(RescaledFields {
        params: cfg.params,
        t_scale: cfg.t_scale,
        a_scale: a,
        r_scale: r,
        env_digest: run.env_digest,
        hit: run.first_hit.iter().map(|(s, &t)| (s.clone(), t / cfg.t_scale)).collect(),
        snapshots: run
            .snapshots
            .iter()
            .map(|s| RescaledSnapshot {
                t: s.t_rescaled,
                m: s.counts.iter().map(|(z, &n)| (z.clone(), log_plus(n as f64) / norm)).collect(),
            })
            .collect(),
        observed_until: run.end_time / cfg.t_scale,
        truncated: run.truncated,
    })
}

/// Discrepancies between a run and the lilypad solution of its environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldComparison {
    pub window: f64,
    pub hit_sup: f64,
    pub count_sup: f64,
    /// Per requested time that the run reached.
    pub support_dh: Vec<(f64, HausdorffEstimate)>,
    /// Window sites the lilypad hits by the observation end but the run never did.
    pub censored_sites: usize,
    /// Requested times the run did not reach.
    pub missing_times: Vec<f64>,
    pub flagged: bool,
}

/// Compares `(H_T, M_T, S_T)` with `(h^δ, m^δ, s^δ)` over lattice sites in
/// `|z|₁ ≤ window`.
///
/// A window site never hit during the observed period `[0, t_obs]`
/// contributes `t_obs - h^δ(z)` when `h^δ(z) ≤ t_obs` (a lower bound on its
/// discrepancy) and nothing otherwise; any such site flags the comparison.
pub fn compare_fields(
    fields: &RescaledFields,
    sol: &LilypadSolution,
    window: f64,
    times: &[f64],
) -> Result<FieldComparison> {
    let set = sol.set();
    if set.digest() != Some(fields.env_digest) || *set.params() != fields.params {
        return Err(Error::InvalidPairing("solution was not built from the run's environment".into()));
    }
    if let crate::env::EnvKind::Lattice { t_scale, .. } = set.kind() {
        if t_scale != fields.t_scale {
            return Err(Error::InvalidPairing(format!("time scales differ: {t_scale} vs {}", fields.t_scale)));
        }
    }
    let d = fields.params.d();
    let t_obs = fields.observed_until;
    let raw_radius = (window * fields.r_scale + 1e-9).floor() as i64;
    let sites = box_sites(d, raw_radius);
    let mut hit_sup: f64 = 0.0;
    let mut censored = 0;
    for site in &sites {
        let z = fields.position(site);
        let h = sol.hitting_at(&z)?;
        match fields.hit.get(site) {
            Some(&ht) => hit_sup = hit_sup.max((ht - h).abs()),
            None if h <= t_obs => {
                censored += 1;
                hit_sup = hit_sup.max(t_obs - h);
            }
            None => {}
        }
    }
    let mut count_sup: f64 = 0.0;
    let mut support_dh = Vec::new();
    let mut missing = Vec::new();
    for &t in times {
        let Some(snap) = fields.snapshots.iter().find(|s| s.t == t) else {
            missing.push(t);
            continue;
        };
        for site in &sites {
            let z = fields.position(site);
            let m = snap.m.get(site).copied().unwrap_or(0.0);
            count_sup = count_sup.max((m - sol.particles_at(&z, t)?).abs());
        }
        let hit_set = SupportSet::from_points(snap.support(fields).map(|s| fields.position(s)))?;
        support_dh.push((t, hausdorff(&hit_set, &sol.support_at(t)?, 16)?));
    }
    Ok(FieldComparison {
        window,
        hit_sup,
        count_sup,
        support_dh,
        censored_sites: censored,
        flagged: censored > 0 || !missing.is_empty() || fields.truncated && t_obs < times.iter().copied().fold(0.0, f64::max),
        missing_times: missing,
    })
}

/// One run in a fresh Pareto environment compared with its lilypad field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    pub seed: u64,
    pub comparison: FieldComparison,
    pub truncated: bool,
    pub events: u64,
    pub fields: RescaledFields,
}

/// Draws a Pareto potential on the box, runs the BRW and compares it with
/// `h^δ` of the matching Π_T, using `δ = 1/a(T)` so every site is a pad.
pub fn paired_run(cfg: &BrwConfig, window: f64, times: &[f64]) -> Result<PairedRun> {
    let env = LatticePotential::pareto(&cfg.params, cfg.box_radius, cfg.seed)?;
    let run = simulate_brw(&env, cfg)?;
    let fields = rescale_run(&run, cfg)?;
    let delta = 1.0 / fields.a_scale;
    let extent = cfg.box_radius as f64 / fields.r_scale;
    let set = env.to_point_set(&cfg.params, cfg.t_scale, delta, extent.max(window))?;
    let sol = solve_hitting(Arc::new(set), delta, f64::INFINITY)?;
    let comparison = compare_fields(&fields, &sol, window, times)?;
    Ok(PairedRun { seed: cfg.seed, comparison, truncated: run.truncated, events: run.events_processed, fields })
}
