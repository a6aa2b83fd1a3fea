//! Monte Carlo studies: ageing of the maximizer and discrete-to-Poisson
//! convergence of hitting times.
//!
//! Replicate `i` of a study seeded with `s` always uses `derive_seed(s, i)`,
//! and results are collected in replicate order, so reports do not depend on
//! the number of worker threads.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{solve_window, CertifiedSolution, EngineConfig};
use crate::env::{EnvSource, ModelParams};
use crate::error::{invalid_input, Error, Result};
use crate::rng::{derive_seed, splitmix64};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Maximizer gap below which a decision counts as a near tie.
pub const NEAR_TIE: f64 = 1e-9;

/// Wilson score interval at 95%.
pub fn wilson_ci(successes: u64, n: u64) -> Result<(f64, f64)> {
    if n == 0 || successes > n {
        return Err(invalid_input(format!("need 0 ≤ successes ≤ n and n ≥ 1, got {successes}/{n}")));
    }
    let (k, n) = (successes as f64, n as f64);
    let p = k / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let low = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if successes as f64 == n { 1.0 } else { (center + half).min(1.0) };
    Ok((low, high))
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid_input("KS statistic needs two non-empty samples"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(invalid_input("KS samples contain NaN"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut sup: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

/// The 95% null level `1.36 √(2/M)` for two samples of size `M`.
pub fn ks_noise_floor(m: usize) -> f64 {
    1.36 * (2.0 / m as f64).sqrt()
}

/// Worker pool size and an optional cancellation flag.
#[derive(Clone, Debug, Default)]
pub struct Exec {
    /// Zero means one thread per core.
    pub workers: usize,
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Exec {
    pub fn with_workers(workers: usize) -> Self {
        Self { workers, cancel: None }
    }

    fn cancelled(&self) -> bool {
        self.cancel.as_ref().is_some_and(|c| c.load(Ordering::Relaxed))
    }

    /// `f(i)` for `i < n` in parallel, in index order; `None` once cancelled.
    pub fn map<T, F>(&self, n: usize, f: F) -> Result<Vec<Option<T>>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidParameters(format!("worker pool: {e}")))?;
        pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| if self.cancelled() { Ok(None) } else { f(i).map(Some) })
                .collect()
        })
    }
}

/// Ageing probabilities `P(w(1) = w(1+θ))` with Wilson intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgeingReport {
    /// `"poisson"` or `"lattice"`.
    pub kind: String,
    #[serde(rename = "T")]
    pub t_scale: Option<f64>,
    pub params: ModelParams,
    pub delta: f64,
    pub seed: u64,
    pub replicates: usize,
    pub thetas: Vec<f64>,
    /// `None` where no environment was usable.
    pub estimates: Vec<Option<f64>>,
    pub ci_low: Vec<Option<f64>>,
    pub ci_high: Vec<Option<f64>>,
    pub successes: Vec<u64>,
    pub included: Vec<u64>,
    pub excluded: Vec<u64>,
    /// Environments whose window could not be certified.
    pub uncertified: u64,
    /// Decisions with a maximizer gap below [`NEAR_TIE`].
    pub near_tie_count: u64,
    /// False when the study was interrupted.
    pub complete: bool,
}

impl AgeingReport {
    /// Half-width of the interval at `i`, if defined.
    pub fn half_width(&self, i: usize) -> Option<f64> {
        Some((self.ci_high[i]? - self.ci_low[i]?) / 2.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,estimate,ci_low,ci_high,successes,included,excluded\n");
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v}"));
        for i in 0..self.thetas.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.thetas[i],
                opt(self.estimates[i]),
                opt(self.ci_low[i]),
                opt(self.ci_high[i]),
                self.successes[i],
                self.included[i],
                self.excluded[i]
            );
        }
        out
    }
}

/// Per-environment ageing outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct AgeingOutcome {
    pub certified: bool,
    /// Per θ: `Some(same)` when both maximizers exist.
    pub same: Vec<Option<bool>>,
    pub near_ties: u64,
}

/// Compares the maximizer at `t = 1` with the one at `1 + θ` for each θ.
pub fn ageing_outcome(sol: &CertifiedSolution, thetas: &[f64]) -> Result<AgeingOutcome> {
    if !sol.certified {
        return Ok(AgeingOutcome { certified: false, same: vec![None; thetas.len()], near_ties: 0 });
    }
    let w1 = sol.solution.maximizer(1.0)?;
    let mut near_ties = u64::from(w1.index.is_some() && w1.near_tie_gap < NEAR_TIE);
    let mut same = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let w2 = sol.solution.maximizer(1.0 + theta)?;
        if w2.index.is_some() && w2.near_tie_gap < NEAR_TIE {
            near_ties += 1;
        }
        same.push(match (w1.index, w2.index) {
            (Some(a), Some(b)) => Some(a == b),
            _ => None,
        });
    }
    Ok(AgeingOutcome { certified: true, same, near_ties })
}

fn check_thetas(thetas: &[f64], m: usize) -> Result<()> {
    if m == 0 {
        return Err(invalid_input("need at least one replicate"));
    }
    if thetas.is_empty() || thetas.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(invalid_input("thetas must be non-empty, positive and finite"));
    }
    Ok(())
}

/// Aggregates per-replicate solutions into an ageing report.
pub fn estimate_ageing_with<F>(thetas: &[f64], m: usize, exec: &Exec, replicate: F) -> Result<AgeingReport>
where
    F: Fn(usize) -> Result<CertifiedSolution> + Sync,
{
    check_thetas(thetas, m)?;
    let outcomes = exec.map(m, |i| ageing_outcome(&replicate(i)?, thetas))?;
    let k = thetas.len();
    let mut r = AgeingReport {
        kind: "explicit".into(),
        t_scale: None,
        params: ModelParams::new(1, 2.0)?,
        delta: 0.0,
        seed: 0,
        replicates: m,
        thetas: thetas.to_vec(),
        estimates: vec![None; k],
        ci_low: vec![None; k],
        ci_high: vec![None; k],
        successes: vec![0; k],
        included: vec![0; k],
        excluded: vec![0; k],
        uncertified: 0,
        near_tie_count: 0,
        complete: outcomes.iter().all(Option::is_some),
    };
    for o in outcomes.iter().flatten() {
        r.uncertified += u64::from(!o.certified);
        r.near_tie_count += o.near_ties;
        for (j, s) in o.same.iter().enumerate() {
            match s {
                Some(same) => {
                    r.included[j] += 1;
                    r.successes[j] += u64::from(*same);
                }
                None => r.excluded[j] += 1,
            }
        }
    }
    for j in 0..k {
        if r.included[j] > 0 {
            let (lo, hi) = wilson_ci(r.successes[j], r.included[j])?;
            r.estimates[j] = Some(r.successes[j] as f64 / r.included[j] as f64);
            r.ci_low[j] = Some(lo);
            r.ci_high[j] = Some(hi);
        }
    }
    Ok(r)
}

fn horizon(thetas: &[f64]) -> f64 {
    1.0 + thetas.iter().copied().fold(0.0, f64::max)
}

/// Ageing probabilities for the Poisson lilypad model.
pub fn estimate_ageing_poisson(
    params: &ModelParams,
    thetas: &[f64],
    m: usize,
    delta: f64,
    seed: u64,
    engine: &EngineConfig,
    exec: &Exec,
) -> Result<AgeingReport> {
    let t_max = horizon(thetas);
    let mut r = estimate_ageing_with(thetas, m, exec, |i| {
        solve_window(&EnvSource::poisson(*params, derive_seed(seed, i as u64)), delta, t_max, engine)
    })?;
    r.kind = "poisson".into();
    r.params = *params;
    r.delta = delta;
    r.seed = seed;
    Ok(r)
}

/// Ageing probabilities for the lilypad model of Π_T.
#[allow(clippy::too_many_arguments)]
pub fn estimate_ageing_discrete(
    params: &ModelParams,
    t_scale: f64,
    thetas: &[f64],
    m: usize,
    delta: f64,
    seed: u64,
    engine: &EngineConfig,
    exec: &Exec,
) -> Result<AgeingReport> {
    EnvSource::lattice(*params, t_scale, seed)?;
    let t_max = horizon(thetas);
    let mut r = estimate_ageing_with(thetas, m, exec, |i| {
        let src = EnvSource::lattice(*params, t_scale, derive_seed(seed, i as u64))?;
        solve_window(&src, delta, t_max, engine)
    })?;
    r.kind = "lattice".into();
    r.t_scale = Some(t_scale);
    r.params = *params;
    r.delta = delta;
    r.seed = seed;
    Ok(r)
}

/// `h^δ(z0)` for one environment, doubling the horizon until it is reached.
///
/// `h^δ(z0) ≤ q|z0|/δ`, so the doubling stops.
pub fn hitting_sample(source: &EnvSource, delta: f64, z0: &[f64], engine: &EngineConfig) -> Result<(f64, bool)> {
    let q = source.params().q();
    let cap = q * z0.iter().map(|x| x.abs()).sum::<f64>() / delta;
    let mut t_max = cap.min(3.0);
    loop {
        let sol = solve_window(source, delta, t_max, engine)?;
        match sol.solution.hitting_at(z0) {
            Ok(h) => return Ok((h, sol.certified)),
            Err(Error::HorizonExceeded { .. }) if t_max < cap => t_max = (2.0 * t_max).min(cap * (1.0 + 1e-9)),
            Err(e) => return Err(e),
        }
    }
}

/// Distance between the laws of `h^δ_{Π_T}(z0)` and `h^δ_Π(z0)` across `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub params: ModelParams,
    pub delta: f64,
    pub seed: u64,
    #[serde(rename = "T_values")]
    pub t_values: Vec<f64>,
    /// Always `"hitting_cdf_distance"`: two-sample KS statistic.
    pub statistic: String,
    pub values: Vec<f64>,
    pub replicates: usize,
    pub probe: Vec<f64>,
    pub noise_floor: f64,
    /// Environments (reference first, then per T) with an uncertified window.
    pub uncertified: Vec<u64>,
    pub complete: bool,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("T,ks,noise_floor,uncertified\n");
        for (i, t) in self.t_values.iter().enumerate() {
            let _ = writeln!(out, "{t},{},{},{}", self.values[i], self.noise_floor, self.uncertified[i + 1]);
        }
        out
    }
}

fn check_probe(z0: &[f64], params: &ModelParams) -> Result<()> {
    if z0.len() != params.d() {
        return Err(invalid_input("probe dimension does not match the parameters"));
    }
    if z0.iter().all(|&x| x == 0.0) {
        return Err(invalid_input("probe z0 = 0 is degenerate (h ≡ 0 there)"));
    }
    Ok(())
}

/// `M` independent samples of `h^δ_Π(z0)`, with certification flags.
pub fn poisson_hitting_samples(
    params: &ModelParams,
    m: usize,
    delta: f64,
    z0: &[f64],
    seed: u64,
    engine: &EngineConfig,
    exec: &Exec,
) -> Result<Vec<Option<(f64, bool)>>> {
    check_probe(z0, params)?;
    exec.map(m, |i| hitting_sample(&EnvSource::poisson(*params, derive_seed(seed, i as u64)), delta, z0, engine))
}

/// KS statistic between `h^δ_{Π_T}(z0)` and `h^δ_Π(z0)` samples for each `T`.
///
/// One Poisson reference sample is drawn and reused for every `T`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    params: &ModelParams,
    t_values: &[f64],
    m: usize,
    delta: f64,
    z0: &[f64],
    seed: u64,
    engine: &EngineConfig,
    exec: &Exec,
) -> Result<ConvergenceReport> {
    check_probe(z0, params)?;
    if m < 2 {
        return Err(invalid_input("need at least two replicates"));
    }
    for &t in t_values {
        EnvSource::lattice(*params, t, 0)?;
    }
    let reference = poisson_hitting_samples(params, m, delta, z0, seed, engine, exec)?;
    let mut complete = reference.iter().all(Option::is_some);
    let values_of = |s: &[Option<(f64, bool)>]| -> (Vec<f64>, u64) {
        let v = s.iter().flatten().map(|x| x.0).collect();
        (v, s.iter().flatten().filter(|x| !x.1).count() as u64)
    };
    let (ref_vals, ref_unc) = values_of(&reference);
    let mut uncertified = vec![ref_unc];
    let mut values = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let tseed = splitmix64(seed ^ t.to_bits());
        let sample = exec.map(m, |i| {
            let src = EnvSource::lattice(*params, t, derive_seed(tseed, i as u64))?;
            hitting_sample(&src, delta, z0, engine)
        })?;
        complete &= sample.iter().all(Option::is_some);
        let (vals, unc) = values_of(&sample);
        uncertified.push(unc);
        values.push(if vals.is_empty() || ref_vals.is_empty() { f64::NAN } else { ks_two_sample(&vals, &ref_vals)? });
    }
    Ok(ConvergenceReport {
        params: *params,
        delta,
        seed,
        t_values: t_values.to_vec(),
        statistic: "hitting_cdf_distance".into(),
        values,
        replicates: m,
        probe: z0.to_vec(),
        noise_floor: ks_noise_floor(m),
        uncertified,
        complete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::solve_set;
    use crate::env::{MarkedPoint, MarkedPointSet};
    use proptest::prelude::*;

    #[test]
    fn wilson_worked_values() {
        assert_eq!(wilson_ci(0, 10).unwrap().0, 0.0);
        assert_eq!(wilson_ci(10, 10).unwrap().1, 1.0);
        let (lo, hi) = wilson_ci(50, 100).unwrap();
        // evaluated offline from the score formula
        assert!((lo - 0.403_831_530_365_995_6).abs() < 1e-12, "{lo}");
        assert!((hi - 0.596_168_469_634_004_4).abs() < 1e-12, "{hi}");
        assert!(wilson_ci(1, 0).is_err());
    }

    #[test]
    fn ks_worked_values() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert!((ks_two_sample(&[1.0, 3.0], &[2.0, 4.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn wilson_contains_estimate(n in 1u64..500, k in 0u64..500) {
            let k = k.min(n);
            let (lo, hi) = wilson_ci(k, n).unwrap();
            let p = k as f64 / n as f64;
            prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        }

        #[test]
        fn ks_matches_direct_sup(a in prop::collection::vec(0.0..1.0f64, 1..30), b in prop::collection::vec(0.0..1.0f64, 1..30)) {
            let ks = ks_two_sample(&a, &b).unwrap();
            let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
            let direct = a.iter().chain(&b).map(|&x| (cdf(&a, x) - cdf(&b, x)).abs()).fold(0.0, f64::max);
            prop_assert!((ks - direct).abs() < 1e-12);
        }
    }

    fn switching_set() -> CertifiedSolution {
        // marks and δ of the two-point example scaled by 3: switch at t = 4/3
        let p = ModelParams::new(1, 2.0).unwrap();
        let set = MarkedPointSet::from_points(
            p,
            1.5,
            200.0,
            vec![MarkedPoint::new(vec![1.0], 6.0), MarkedPoint::new(vec![4.0], 24.0)],
        )
        .unwrap();
        solve_set(Arc::new(set), 1.5, 2.0).unwrap()
    }

    #[test]
    fn forced_switch_gives_zero() {
        let r = estimate_ageing_with(&[1.0], 3, &Exec::with_workers(1), |_| Ok(switching_set())).unwrap();
        assert_eq!(r.estimates, vec![Some(0.0)]);
        assert_eq!(r.included[0] + r.excluded[0], 3);
        assert_eq!(r.uncertified, 0);
        let stay = estimate_ageing_with(&[0.2], 1, &Exec::with_workers(1), |_| Ok(switching_set())).unwrap();
        assert_eq!(stay.estimates, vec![Some(1.0)]);
    }

    #[test]
    fn single_replicate_is_bernoulli() {
        let p = ModelParams::new(2, 4.0).unwrap();
        let r = estimate_ageing_poisson(&p, &[0.5, 1.0], 1, 0.1, 3, &EngineConfig::default(), &Exec::with_workers(1)).unwrap();
        for (j, e) in r.estimates.iter().enumerate() {
            assert_eq!(r.included[j] + r.excluded[j], 1);
            if let Some(e) = e {
                assert!(*e == 0.0 || *e == 1.0);
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_reports() {
        let p = ModelParams::new(2, 4.0).unwrap();
        let run = |w| {
            estimate_ageing_poisson(&p, &[0.5], 24, 0.1, 9, &EngineConfig::default(), &Exec::with_workers(w)).unwrap()
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn probe_validation() {
        let p = ModelParams::new(2, 4.0).unwrap();
        let e = EngineConfig::default();
        assert!(convergence_study(&p, &[100.0], 10, 0.1, &[0.0, 0.0], 1, &e, &Exec::default()).is_err());
        assert!(estimate_ageing_poisson(&p, &[1.0], 0, 0.1, 1, &e, &Exec::default()).is_err());
    }

    #[test]
    fn cancellation_marks_incomplete() {
        let p = ModelParams::new(2, 4.0).unwrap();
        let flag = Arc::new(AtomicBool::new(true));
        let exec = Exec { workers: 1, cancel: Some(flag) };
        let r = estimate_ageing_poisson(&p, &[1.0], 5, 0.1, 1, &EngineConfig::default(), &exec).unwrap();
        assert!(!r.complete);
        assert_eq!(r.included[0] + r.excluded[0], 0);
    }
}
