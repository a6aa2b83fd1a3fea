//! Model parameters and samplers for the Pareto environment.
//!
//! Both the rescaled lattice process Π_T and the Poisson process Π are
//! generated annulus by annulus. Space is cut into canonical L1 shells
//! `(ρ_k, ρ_{k+1}]` with `ρ_k = 2^{k/4}` (plus a tiny core ball), and each
//! shell owns its own counter-based random stream which emits the shell's
//! points in *decreasing* order of mark. A point set is therefore described
//! by a window radius and a per-shell mark floor, and
//!
//! * growing the window never perturbs points already drawn,
//! * lowering the cutoff δ only appends points (the sample for δ/2 contains
//!   the sample for δ),
//! * the largest mark of every shell is known without materializing the rest.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_params, Error, Result};
use crate::rng::{self, StreamTag};

/// Shells per doubling of the radius.
pub const SHELLS_PER_OCTAVE: i32 = 4;
/// Index of the innermost shell, the ball `B(0, 2^{-63.75})`.
pub const CORE_SHELL: i32 = -256;
/// Refuse to materialize more points than this in one set.
pub const MAX_POINTS: usize = 20_000_000;

// Lattice shells with at most this many sites are enumerated and shuffled;
// larger ones draw sites directly and reject repeats.
const ENUMERATE_LIMIT: f64 = 65_536.0;

/// Dimension, tail index and the derived exponents `q` and `γ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    d: usize,
    alpha: f64,
    q: f64,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    d: usize,
    alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ModelParams::new(raw.d, raw.alpha)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams { d: p.d, alpha: p.alpha, q: Some(p.q), gamma: Some(p.gamma) }
    }
}

impl ModelParams {
    /// Validates `alpha > d` and derives `q = d/(α-d)`, `γ = (d+α)/(2α)`.
    pub fn new(d: usize, alpha: f64) -> Result<Self> {
        if d == 0 {
            return Err(invalid_params("dimension d must be a positive integer"));
        }
        if !alpha.is_finite() || alpha <= d as f64 {
            return Err(invalid_params(format!(
                "tail index alpha must exceed the dimension (alpha > d), got alpha={alpha}, d={d}"
            )));
        }
        let df = d as f64;
        Ok(Self { d, alpha, q: df / (alpha - df), gamma: (df + alpha) / (2.0 * alpha) })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `(a(T), r(T))`, see [`scaling_factors`].
    pub fn scaling_factors(&self, t: f64) -> Result<(f64, f64)> {
        scaling_factors(t, self)
    }
}

/// Same as [`ModelParams::new`].
pub fn derive_exponents(d: usize, alpha: f64) -> Result<ModelParams> {
    ModelParams::new(d, alpha)
}

/// Potential and space scales `a(T) = (T/log T)^q`, `r(T) = (T/log T)^{q+1}`.
pub fn scaling_factors(t: f64, params: &ModelParams) -> Result<(f64, f64)> {
    if !(t > 1.0) || !t.is_finite() {
        return Err(invalid_params(format!("time scale T must exceed 1, got {t}")));
    }
    let base = t / t.ln();
    let a = base.powf(params.q);
    Ok((a, a * base))
}

/// Inverse-CDF Pareto draw `u^{-1/α}` for `u ∈ (0, 1]`.
pub fn sample_pareto(u: f64, alpha: f64) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(invalid_input(format!("uniform variate must lie in (0, 1], got {u}")));
    }
    if !(alpha > 0.0) {
        return Err(invalid_params(format!("alpha must be positive, got {alpha}")));
    }
    Ok(u.powf(-1.0 / alpha))
}

/// Lebesgue volume of the L1 ball of radius `r` in `d` dimensions, `(2r)^d/d!`.
pub fn l1_ball_volume(d: usize, r: f64) -> f64 {
    let mut v = 1.0;
    for i in 1..=d {
        v *= 2.0 * r / i as f64;
    }
    v
}

/// Expected number of points of Π in `B(0,R) × [δ, ∞)`.
pub fn poisson_mean_count(params: &ModelParams, radius: f64, delta: f64) -> f64 {
    l1_ball_volume(params.d, radius) * delta.powf(-params.alpha)
}

pub(crate) fn l1_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

// ---------------------------------------------------------------------------
// shells

/// Inner radius of shell `k` (zero for the core ball).
pub fn shell_inner(k: i32) -> f64 {
    if k <= CORE_SHELL {
        0.0
    } else {
        (k as f64 / SHELLS_PER_OCTAVE as f64).exp2()
    }
}

/// Outer radius of shell `k`.
pub fn shell_outer(k: i32) -> f64 {
    ((k + 1) as f64 / SHELLS_PER_OCTAVE as f64).exp2()
}

/// Index of the shell containing L1 radius `radius`.
pub fn shell_of(radius: f64) -> i32 {
    if !(radius > shell_outer(CORE_SHELL)) {
        return CORE_SHELL;
    }
    let mut k = ((radius.log2() * SHELLS_PER_OCTAVE as f64).ceil() as i32 - 1).max(CORE_SHELL);
    while shell_outer(k) < radius {
        k += 1;
    }
    while k > CORE_SHELL && shell_outer(k - 1) >= radius {
        k -= 1;
    }
    k
}

/// Number of integer points with L1 norm at most `m` (zero for `m < 0`).
pub fn lattice_ball_count(d: usize, m: i64) -> f64 {
    if m < 0 {
        return 0.0;
    }
    let mf = m as f64;
    let mut total = 0.0;
    for k in 0..=d.min(m.min(64) as usize) {
        total += 2f64.powi(k as i32) * binom(d as f64, k) * binom(mf, k);
    }
    total
}

fn binom(n: f64, k: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c *= (n - i as f64) / (i + 1) as f64;
    }
    c
}

/// Integer radii `(m0, m1]` of the lattice sites in shell `k` at space scale `r`.
fn lattice_shell_radii(k: i32, r_scale: f64) -> (i64, i64) {
    let m0 = if k <= CORE_SHELL { -1 } else { (shell_inner(k) * r_scale).floor() as i64 };
    let m1 = (shell_outer(k) * r_scale).floor() as i64;
    (m0, m1)
}

/// A point emitted by a shell stream.
#[derive(Clone, Debug)]
struct ShellPoint {
    pos: Vec<f64>,
    site: Option<Vec<i64>>,
    xi: f64,
    norm: f64,
}

struct PoissonShell {
    rng: ChaCha8Rng,
    d: usize,
    inv_alpha: f64,
    volume: f64,
    inner_pow: f64,
    outer_pow: f64,
    arrivals: f64,
}

impl Iterator for PoissonShell {
    type Item = ShellPoint;

    fn next(&mut self) -> Option<ShellPoint> {
        if !(self.volume > 0.0) {
            return None;
        }
        // arrival times of a unit-rate process in s = V x^{-α}
        self.arrivals += rng::exp1(&mut self.rng);
        let xi = (self.arrivals / self.volume).powf(-self.inv_alpha);
        let u = rng::open_unit(&mut self.rng);
        let rho = (self.inner_pow + u * (self.outer_pow - self.inner_pow)).powf(1.0 / self.d as f64);
        let weights: Vec<f64> = (0..self.d).map(|_| rng::exp1(&mut self.rng)).collect();
        let total: f64 = weights.iter().sum();
        let pos: Vec<f64> = weights
            .iter()
            .map(|w| {
                let sign = if self.rng.gen::<bool>() { 1.0 } else { -1.0 };
                sign * rho * w / total
            })
            .collect();
        let norm = l1_norm(&pos);
        Some(ShellPoint { pos, site: None, xi, norm })
    }
}

enum SitePicker {
    Enumerated { sites: Vec<Vec<i64>>, next: usize },
    Sparse { d: usize, m0: i64, m1: i64, base: f64, span: f64, seen: HashSet<Vec<i64>> },
}

impl SitePicker {
    fn new(d: usize, m0: i64, m1: i64, n: f64) -> Self {
        if n <= ENUMERATE_LIMIT {
            let mut sites = Vec::with_capacity(n as usize);
            for m in (m0 + 1).max(0)..=m1 {
                enumerate_sphere(d, m, &mut Vec::with_capacity(d), &mut sites);
            }
            SitePicker::Enumerated { sites, next: 0 }
        } else {
            let base = lattice_ball_count(d, m0);
            SitePicker::Sparse { d, m0, m1, base, span: n, seen: HashSet::new() }
        }
    }

    fn pick(&mut self, rng: &mut ChaCha8Rng) -> Option<Vec<i64>> {
        match self {
            SitePicker::Enumerated { sites, next } => {
                if *next >= sites.len() {
                    return None;
                }
                let j = rng.gen_range(*next..sites.len());
                sites.swap(*next, j);
                *next += 1;
                Some(sites[*next - 1].clone())
            }
            SitePicker::Sparse { d, m0, m1, base, span, seen } => loop {
                let target = *base + rng::open_unit(rng) * *span;
                let (mut lo, mut hi) = (*m0 + 1, *m1);
                while lo < hi {
                    let mid = lo + (hi - lo) / 2;
                    if lattice_ball_count(*d, mid) >= target {
                        hi = mid;
                    } else {
                        lo = mid + 1;
                    }
                }
                let site = sample_sphere_site(*d, lo, rng);
                if seen.insert(site.clone()) {
                    return Some(site);
                }
            },
        }
    }
}

fn enumerate_sphere(d: usize, m: i64, prefix: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
    if d == 1 {
        if m == 0 {
            prefix.push(0);
            out.push(prefix.clone());
            prefix.pop();
        } else {
            for c in [-m, m] {
                prefix.push(c);
                out.push(prefix.clone());
                prefix.pop();
            }
        }
        return;
    }
    for c in -m..=m {
        prefix.push(c);
        enumerate_sphere(d - 1, m - c.abs(), prefix, out);
        prefix.pop();
    }
}

/// Uniform integer point with L1 norm exactly `m`.
fn sample_sphere_site(d: usize, m: i64, rng: &mut ChaCha8Rng) -> Vec<i64> {
    let mut site = vec![0i64; d];
    if m == 0 {
        return site;
    }
    // number of non-zero coordinates, weighted by the count of such points
    let kmax = d.min(m.min(64) as usize);
    let weights: Vec<f64> = (1..=kmax)
        .map(|k| binom(d as f64, k) * 2f64.powi(k as i32) * binom((m - 1) as f64, k - 1))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut pick = rng::open_unit(rng) * total;
    let mut k = kmax;
    for (i, w) in weights.iter().enumerate() {
        if pick <= *w {
            k = i + 1;
            break;
        }
        pick -= w;
    }
    let mut slots: Vec<usize> = (0..d).collect();
    for i in 0..k {
        let j = rng.gen_range(i..d);
        slots.swap(i, j);
    }
    // uniform composition of m into k positive parts
    let mut cuts: Vec<i64> = Vec::with_capacity(k + 1);
    while cuts.len() < k - 1 {
        let c = rng.gen_range(1..m);
        if !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.sort_unstable();
    cuts.push(m);
    let mut prev = 0;
    for (i, &c) in cuts.iter().enumerate() {
        let part = c - prev;
        prev = c;
        site[slots[i]] = if rng.gen::<bool>() { part } else { -part };
    }
    site
}

struct LatticeShell {
    rng: ChaCha8Rng,
    inv_alpha: f64,
    a_scale: f64,
    r_scale: f64,
    sites: f64,
    taken: f64,
    level: f64,
    picker: SitePicker,
}

impl Iterator for LatticeShell {
    type Item = ShellPoint;

    fn next(&mut self) -> Option<ShellPoint> {
        if self.taken >= self.sites {
            return None;
        }
        // next order statistic of the remaining uniforms u = ξ^{-α}
        let e = rng::exp1(&mut self.rng);
        let step = -(-e / (self.sites - self.taken)).exp_m1();
        self.level += (1.0 - self.level) * step;
        self.taken += 1.0;
        let xi = self.level.powf(-self.inv_alpha) / self.a_scale;
        let site = self.picker.pick(&mut self.rng)?;
        let pos: Vec<f64> = site.iter().map(|&c| c as f64 / self.r_scale).collect();
        let norm = site.iter().map(|c| c.unsigned_abs() as f64).sum::<f64>() / self.r_scale;
        Some(ShellPoint { pos, site: Some(site), xi, norm })
    }
}

// ---------------------------------------------------------------------------
// point sets

/// What a point set was sampled from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EnvKind {
    /// The Poisson process Π with intensity `dz ⊗ α x^{-(α+1)} dx`.
    Poisson,
    /// The rescaled lattice process Π_T.
    Lattice { t_scale: f64, a_scale: f64, r_scale: f64 },
    /// A hand-built set.
    Explicit,
}

/// A lazily generated environment: the law plus the seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvSource {
    params: ModelParams,
    kind: EnvKind,
    seed: u64,
}

impl EnvSource {
    pub fn poisson(params: ModelParams, seed: u64) -> Self {
        Self { params, kind: EnvKind::Poisson, seed }
    }

    pub fn lattice(params: ModelParams, t_scale: f64, seed: u64) -> Result<Self> {
        let (a_scale, r_scale) = scaling_factors(t_scale, &params)?;
        Ok(Self { params, kind: EnvKind::Lattice { t_scale, a_scale, r_scale }, seed })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn shell_stream(&self, k: i32) -> Box<dyn Iterator<Item = ShellPoint>> {
        let d = self.params.d;
        let inv_alpha = 1.0 / self.params.alpha;
        match self.kind {
            EnvKind::Poisson => {
                let (inner, outer) = (shell_inner(k), shell_outer(k));
                Box::new(PoissonShell {
                    rng: rng::stream(self.seed, StreamTag::PoissonShell, k as i64 as u64),
                    d,
                    inv_alpha,
                    volume: l1_ball_volume(d, outer) - l1_ball_volume(d, inner),
                    inner_pow: inner.powi(d as i32),
                    outer_pow: outer.powi(d as i32),
                    arrivals: 0.0,
                })
            }
            EnvKind::Lattice { a_scale, r_scale, .. } => {
                let (m0, m1) = lattice_shell_radii(k, r_scale);
                let sites = lattice_ball_count(d, m1) - lattice_ball_count(d, m0);
                Box::new(LatticeShell {
                    rng: rng::stream(self.seed, StreamTag::LatticeShell, k as i64 as u64),
                    inv_alpha,
                    a_scale,
                    r_scale,
                    sites,
                    taken: 0.0,
                    level: 0.0,
                    picker: SitePicker::new(d, m0, m1, sites),
                })
            }
            EnvKind::Explicit => Box::new(std::iter::empty()),
        }
    }

    /// Draws every shell meeting `B(0, window)`, keeping the points of shell `k`
    /// whose mark is at least `max(delta, floor(k))`.
    pub fn materialize<F>(&self, window: f64, delta: f64, floor: F) -> Result<MarkedPointSet>
    where
        F: Fn(i32) -> f64,
    {
        if !(window > 0.0) || !window.is_finite() {
            return Err(invalid_params(format!("window radius must be positive, got {window}")));
        }
        if !(delta > 0.0) {
            return Err(invalid_params(format!("mark cutoff delta must be positive, got {delta}")));
        }
        if matches!(self.kind, EnvKind::Explicit) {
            return Err(invalid_input("explicit sets have no generating source"));
        }
        let last = shell_of(window);
        let mut points = Vec::new();
        let mut shells = Vec::with_capacity((last - CORE_SHELL + 1) as usize);
        for k in CORE_SHELL..=last {
            let shell_floor = floor(k).max(delta);
            let mut top = None;
            for p in self.shell_stream(k) {
                if top.is_none() {
                    top = Some((p.xi, p.norm));
                }
                if p.xi < shell_floor {
                    break;
                }
                if p.norm <= window {
                    if points.len() >= MAX_POINTS {
                        return Err(Error::TooLarge(format!(
                            "more than {MAX_POINTS} points in window {window} at cutoff {delta}"
                        )));
                    }
                    points.push(MarkedPoint { pos: p.pos, xi: p.xi, site: p.site });
                }
            }
            shells.push(ShellRecord {
                index: k,
                floor: shell_floor,
                top_mark: top.map(|t| t.0),
                top_radius: top.map(|t| t.1),
            });
        }
        Ok(MarkedPointSet {
            params: self.params,
            kind: self.kind,
            window_radius: window,
            delta,
            seed_record: Some(SeedRecord { seed: self.seed, outermost_shell: last }),
            points,
            shells,
            digest: None,
        })
    }
}

/// A point of a marked point process: an L1 position and its potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkedPoint {
    pub pos: Vec<f64>,
    pub xi: f64,
    /// Integer lattice coordinates, for points of Π_T.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<Vec<i64>>,
}

impl MarkedPoint {
    pub fn new(pos: Vec<f64>, xi: f64) -> Self {
        Self { pos, xi, site: None }
    }

    pub fn norm(&self) -> f64 {
        l1_norm(&self.pos)
    }
}

/// Seed plus the outermost annulus drawn so far.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub outermost_shell: i32,
}

/// Mark floor and largest mark of one annulus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellRecord {
    pub index: i32,
    pub floor: f64,
    pub top_mark: Option<f64>,
    pub top_radius: Option<f64>,
}

/// Finite sample of Π or Π_T restricted to a window and a mark cutoff.
///
/// Sets drawn from an [`EnvSource`] may carry per-shell floors above `delta`
/// (see [`crate::engine`]); such sets only omit points that provably never
/// influence the hitting-time field up to the horizon they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkedPointSet {
    params: ModelParams,
    kind: EnvKind,
    window_radius: f64,
    delta: f64,
    seed_record: Option<SeedRecord>,
    points: Vec<MarkedPoint>,
    shells: Vec<ShellRecord>,
    digest: Option<u64>,
}

impl MarkedPointSet {
    /// Hand-built set. Marks must be at least `delta`, positions distinct and
    /// inside the window.
    pub fn from_points(
        params: ModelParams,
        delta: f64,
        window_radius: f64,
        points: Vec<MarkedPoint>,
    ) -> Result<Self> {
        Self::validated(params, EnvKind::Explicit, delta, window_radius, points, None)
    }

    /// Lattice set over explicitly listed sites (used to pair with a BRW run).
    pub fn lattice_from_sites(
        params: ModelParams,
        t_scale: f64,
        delta: f64,
        window_radius: f64,
        points: Vec<MarkedPoint>,
        digest: u64,
    ) -> Result<Self> {
        let (a_scale, r_scale) = scaling_factors(t_scale, &params)?;
        let kind = EnvKind::Lattice { t_scale, a_scale, r_scale };
        Self::validated(params, kind, delta, window_radius, points, Some(digest))
    }

    fn validated(
        params: ModelParams,
        kind: EnvKind,
        delta: f64,
        window_radius: f64,
        points: Vec<MarkedPoint>,
        digest: Option<u64>,
    ) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(invalid_params(format!("mark cutoff delta must be positive, got {delta}")));
        }
        if !(window_radius > 0.0) {
            return Err(invalid_params(format!("window radius must be positive, got {window_radius}")));
        }
        let mut seen = HashSet::with_capacity(points.len());
        for p in &points {
            if p.pos.len() != params.d {
                return Err(invalid_input(format!(
                    "point has dimension {}, expected {}",
                    p.pos.len(),
                    params.d
                )));
            }
            if !(p.xi >= delta) || !p.xi.is_finite() {
                return Err(invalid_input(format!("mark {} below cutoff {delta}", p.xi)));
            }
            if p.norm() > window_radius {
                return Err(invalid_input(format!(
                    "point at radius {} outside window {window_radius}",
                    p.norm()
                )));
            }
            let key: Vec<u64> = p.pos.iter().map(|x| (x + 0.0).to_bits()).collect();
            if !seen.insert(key) {
                return Err(invalid_input(format!("duplicate position {:?}", p.pos)));
            }
        }
        Ok(Self {
            params,
            kind,
            window_radius,
            delta,
            seed_record: None,
            points,
            shells: Vec::new(),
            digest,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn window_radius(&self) -> f64 {
        self.window_radius
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn seed_record(&self) -> Option<SeedRecord> {
        self.seed_record
    }

    pub fn points(&self) -> &[MarkedPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn shells(&self) -> &[ShellRecord] {
        &self.shells
    }

    /// Fingerprint of the raw potential a paired lattice set was built from.
    pub fn digest(&self) -> Option<u64> {
        self.digest
    }

    /// True when every point of the window with mark ≥ δ is present.
    pub fn is_complete(&self) -> bool {
        self.shells.iter().all(|s| s.floor <= self.delta)
    }

    pub fn max_mark(&self) -> Option<f64> {
        self.points.iter().map(|p| p.xi).fold(None, |m, x| Some(m.map_or(x, |m: f64| m.max(x))))
    }

    /// The source this set was drawn from, if any.
    pub fn source(&self) -> Option<EnvSource> {
        match (self.kind, self.seed_record, self.digest) {
            (EnvKind::Explicit, _, _) | (_, None, _) | (_, _, Some(_)) => None,
            (kind, Some(rec), None) => Some(EnvSource { params: self.params, kind, seed: rec.seed }),
        }
    }

    /// Points with `|pos|₁ ≤ radius`, in their original order.
    pub fn restrict(&self, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || radius > self.window_radius {
            return Err(invalid_input(format!(
                "restriction radius must lie in (0, {}], got {radius}",
                self.window_radius
            )));
        }
        let last = shell_of(radius);
        let mut out = self.clone();
        out.window_radius = radius;
        out.points.retain(|p| p.norm() <= radius);
        if !out.shells.is_empty() {
            out.shells.retain(|s| s.index <= last);
            if let Some(rec) = out.seed_record.as_mut() {
                rec.outermost_shell = last;
            }
        }
        Ok(out)
    }

    /// Floor of the shell containing radius `rho` (δ for explicit sets).
    pub fn floor_at(&self, rho: f64) -> f64 {
        let k = shell_of(rho);
        self.shells.iter().find(|s| s.index == k).map_or(self.delta, |s| s.floor)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PointSetDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PointSetDoc = serde_json::from_str(text)?;
        doc.try_into()
    }
}

/// JSON layout of a [`MarkedPointSet`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointSetDoc {
    kind: EnvKind,
    params: ModelParams,
    #[serde(rename = "R")]
    window_radius: f64,
    delta: f64,
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    outermost_shell: Option<i32>,
    points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sites: Option<Vec<Vec<i64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    shells: Vec<ShellRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    digest: Option<u64>,
}

impl From<&MarkedPointSet> for PointSetDoc {
    fn from(set: &MarkedPointSet) -> Self {
        let points = set
            .points
            .iter()
            .map(|p| p.pos.iter().copied().chain(std::iter::once(p.xi)).collect())
            .collect();
        let sites = if set.points.iter().all(|p| p.site.is_some()) && !set.points.is_empty() {
            Some(set.points.iter().map(|p| p.site.clone().unwrap_or_default()).collect())
        } else {
            None
        };
        PointSetDoc {
            kind: set.kind,
            params: set.params,
            window_radius: set.window_radius,
            delta: set.delta,
            seed: set.seed_record.map(|r| r.seed),
            outermost_shell: set.seed_record.map(|r| r.outermost_shell),
            points,
            sites,
            shells: set.shells.clone(),
            digest: set.digest,
        }
    }
}

impl TryFrom<PointSetDoc> for MarkedPointSet {
    type Error = Error;

    fn try_from(doc: PointSetDoc) -> Result<Self> {
        let d = doc.params.d;
        let mut points = Vec::with_capacity(doc.points.len());
        for (i, row) in doc.points.iter().enumerate() {
            if row.len() != d + 1 {
                return Err(invalid_input(format!("point row {i} has {} entries, expected {}", row.len(), d + 1)));
            }
            let site = doc.sites.as_ref().and_then(|s| s.get(i).cloned());
            points.push(MarkedPoint { pos: row[..d].to_vec(), xi: row[d], site });
        }
        let mut set = MarkedPointSet::validated(
            doc.params,
            doc.kind,
            doc.delta,
            doc.window_radius,
            points,
            doc.digest,
        )?;
        if let (Some(seed), Some(outermost_shell)) = (doc.seed, doc.outermost_shell) {
            set.seed_record = Some(SeedRecord { seed, outermost_shell });
        }
        set.shells = doc.shells;
        Ok(set)
    }
}

/// Sample of Π in `B(0,R) × [δ, ∞)`.
pub fn sample_poisson_env(params: &ModelParams, radius: f64, delta: f64, seed: u64) -> Result<MarkedPointSet> {
    if !(radius > 0.0) || !(delta > 0.0) {
        return Err(invalid_params(format!("need R > 0 and delta > 0, got R={radius}, delta={delta}")));
    }
    let mean = poisson_mean_count(params, radius, delta);
    if mean > MAX_POINTS as f64 / 2.0 {
        return Err(Error::TooLarge(format!(
            "expected {mean:.3e} points in window {radius} at cutoff {delta}"
        )));
    }
    EnvSource::poisson(*params, seed).materialize(radius, delta, |_| delta)
}

/// Sample of Π_T: lattice sites of `L_T ∩ B(0,R)` with rescaled potential at least δ.
pub fn sample_lattice_env(
    params: &ModelParams,
    t_scale: f64,
    radius: f64,
    delta: f64,
    seed: u64,
) -> Result<MarkedPointSet> {
    if !(radius > 0.0) || !(delta > 0.0) {
        return Err(invalid_params(format!("need R > 0 and delta > 0, got R={radius}, delta={delta}")));
    }
    let source = EnvSource::lattice(*params, t_scale, seed)?;
    if let EnvKind::Lattice { a_scale, r_scale, .. } = source.kind {
        let sites = lattice_ball_count(params.d, (radius * r_scale).floor() as i64);
        let keep = (delta * a_scale).powf(-params.alpha).min(1.0);
        if sites * keep > MAX_POINTS as f64 / 2.0 {
            return Err(Error::TooLarge(format!(
                "expected {:.3e} retained sites in window {radius} at cutoff {delta}",
                sites * keep
            )));
        }
    }
    source.materialize(radius, delta, |_| delta)
}

/// Grows the window to `new_radius`, keeping every existing point.
pub fn extend_annulus(set: &MarkedPointSet, new_radius: f64) -> Result<MarkedPointSet> {
    let delta = set.delta;
    extend_with(set, new_radius, |_| delta)
}

/// Like [`extend_annulus`], with floors for shells not drawn before.
pub(crate) fn extend_with<F: Fn(i32) -> f64>(
    set: &MarkedPointSet,
    new_radius: f64,
    new_floor: F,
) -> Result<MarkedPointSet> {
    if !(new_radius > set.window_radius) {
        return Err(invalid_input(format!(
            "new radius {new_radius} must exceed current window {}",
            set.window_radius
        )));
    }
    let source = set
        .source()
        .ok_or_else(|| invalid_input("set has no generating source to extend"))?;
    let floors: Vec<(i32, f64)> = set.shells.iter().map(|s| (s.index, s.floor)).collect();
    source.materialize(new_radius, set.delta, |k| {
        floors.iter().find(|(i, _)| *i == k).map_or_else(|| new_floor(k), |(_, f)| *f)
    })
}

// ---------------------------------------------------------------------------
// growth conditions

/// Outcome of [`check_a1`].
#[derive(Clone, Debug, PartialEq)]
pub struct A1Report {
    pub holds: bool,
    /// Binding radius of the worst point (largest mark relative to `qR^γ`).
    pub worst_radius: f64,
    pub worst_point: Option<MarkedPoint>,
    /// Largest ratio mark / `qR^γ` seen (points and unsampled shell bounds).
    pub worst_ratio: f64,
}

/// Checks `sup_{y ∈ B(0,R)} ξ(y) ≤ q R^γ` for every `R ∈ [R0, window]`.
///
/// A point at radius `|y|` first enters the supremum at `R = max(|y|, R0)`,
/// where the bound is smallest, so one pass over the points decides the
/// condition. For sets with raised shell floors the marks that were not
/// materialized are bounded by `min(floor, shell maximum)` and checked too.
pub fn check_a1(set: &MarkedPointSet, r0: f64) -> A1Report {
    let q = set.params.q;
    let gamma = set.params.gamma;
    let bound = |rho: f64| q * rho.max(r0).powf(gamma);
    let mut report = A1Report { holds: true, worst_radius: r0, worst_point: None, worst_ratio: 0.0 };
    let mut first_violation: Option<(f64, MarkedPoint)> = None;
    let mut order: Vec<&MarkedPoint> = set.points.iter().collect();
    order.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    for p in order {
        let rho = p.norm();
        let ratio = p.xi / bound(rho);
        if ratio > report.worst_ratio {
            report.worst_ratio = ratio;
            report.worst_radius = rho.max(r0);
            report.worst_point = Some(p.clone());
        }
        if ratio > 1.0 && first_violation.is_none() {
            first_violation = Some((rho.max(r0), p.clone()));
        }
    }
    for s in &set.shells {
        if s.floor <= set.delta {
            continue;
        }
        let inner = shell_inner(s.index);
        if inner > set.window_radius {
            continue;
        }
        let unseen = s.top_mark.map_or(0.0, |t| t.min(s.floor));
        let ratio = unseen / bound(inner);
        if ratio > report.worst_ratio {
            report.worst_ratio = ratio;
            report.worst_radius = inner.max(r0);
            report.worst_point = None;
        }
        if ratio > 1.0 {
            report.holds = false;
        }
    }
    if let Some((radius, p)) = first_violation {
        report.holds = false;
        report.worst_radius = radius;
        report.worst_point = Some(p);
    }
    report
}

/// Outcome of [`check_a2`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct A2Report {
    pub holds: bool,
    pub failing_k: Option<u32>,
}

/// Checks, for `k = 0..=K`, that some point lies in the open ball
/// `B(0, r0 2^{-k})` with mark at least `(r0 2^{-k})^γ`.
pub fn check_a2(set: &MarkedPointSet, r0: f64, k_max: u32) -> A2Report {
    let gamma = set.params.gamma;
    let mut witnesses: Vec<(f64, f64)> = set.points.iter().map(|p| (p.norm(), p.xi)).collect();
    for s in &set.shells {
        if let (Some(m), Some(r)) = (s.top_mark, s.top_radius) {
            if r <= set.window_radius {
                witnesses.push((r, m));
            }
        }
    }
    for k in 0..=k_max {
        let rho = r0 * 0.5f64.powi(k as i32);
        let need = rho.powf(gamma);
        if !witnesses.iter().any(|&(r, m)| r < rho && m >= need) {
            return A2Report { holds: false, failing_k: Some(k) };
        }
    }
    A2Report { holds: true, failing_k: None }
}
