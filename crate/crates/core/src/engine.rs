//! Window-certified solves of large or small-cutoff environments.
//!
//! Two facts make the δ-truncated problem tractable on desk hardware.
//!
//! A window `B(0,R)` whose marks all satisfy `ξ ≤ qR^γ` (condition A1 at
//! `R0 = R`) forces every point outside it to be hit after
//! `min(R^{1-γ}, qR/δ)`, so with `R` from [`auto_radius`] nothing beyond the
//! window can matter up to the horizon.
//!
//! A point `b` that relaxes edges (is not dominated) is reached by a chain of
//! strictly increasing marks starting at the origin, hence
//! `ξ(b) ≥ q|b| / H(b)`. Any upper bound `U` on `H` over an annulus therefore
//! bounds from below the marks that can matter there. The engine draws each
//! annulus only down to such a floor, solves, recomputes the floors from the
//! solution (whose hitting times dominate the true ones) and lowers any floor
//! that turned out too high, until every floor is justified.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{
    check_a1, shell_inner, shell_of, shell_outer, A1Report, EnvKind, EnvSource, MarkedPointSet,
    CORE_SHELL,
};
use crate::error::{invalid_input, Result};
use crate::lilypad::{auto_radius, solve_hitting, LilypadSolution};

/// Tuning knobs for [`solve_window`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    /// Relative slack passed to [`auto_radius`].
    pub margin: f64,
    /// Window doublings attempted when A1 fails.
    pub max_doublings: u32,
    /// Draw annuli only down to their relevance floor.
    pub prune: bool,
    /// Initial floor guess `c0 ρ^{d/α}` before the first solve.
    pub floor_scale: f64,
    /// Solve/refloor rounds before falling back to the plain cutoff.
    pub max_rounds: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { margin: 0.1, max_doublings: 3, prune: true, floor_scale: 0.6, max_rounds: 12 }
    }
}

/// A solution together with the evidence that the window sufficed.
#[derive(Clone, Debug)]
pub struct CertifiedSolution {
    pub solution: LilypadSolution,
    pub window: f64,
    /// A1 held on the final window.
    pub certified: bool,
    pub doublings: u32,
    pub a1: A1Report,
    /// Solves performed on the final window.
    pub rounds: u32,
}

impl CertifiedSolution {
    pub fn set(&self) -> &Arc<MarkedPointSet> {
        self.solution.set()
    }
}

/// Solves `h^δ` up to `t_max` on an automatically sized, certified window.
pub fn solve_window(source: &EnvSource, delta: f64, t_max: f64, cfg: &EngineConfig) -> Result<CertifiedSolution> {
    if !(delta > 0.0) || !(t_max > 0.0) || !t_max.is_finite() {
        return Err(invalid_input(format!("need delta > 0 and finite t_max > 0, got {delta}, {t_max}")));
    }
    let params = *source.params();
    let mut window = auto_radius(&params, delta, t_max, cfg.margin)?;
    let mut doublings = 0;
    loop {
        let (solution, rounds) = solve_pruned(source, window, delta, t_max, cfg)?;
        let a1 = check_a1(solution.set(), window);
        if a1.holds || doublings >= cfg.max_doublings {
            return Ok(CertifiedSolution {
                certified: a1.holds,
                solution,
                window,
                doublings,
                a1,
                rounds,
            });
        }
        window *= 2.0;
        doublings += 1;
    }
}

/// Solves an already materialized set up to `t_max`, certifying its window.
///
/// A hand-built set is the whole environment and needs no certificate.
pub fn solve_set(set: Arc<MarkedPointSet>, delta: f64, t_max: f64) -> Result<CertifiedSolution> {
    let window = set.window_radius();
    let p = *set.params();
    let a1 = check_a1(&set, window);
    let reach = window.powf(1.0 - p.gamma()).min(p.q() * window / delta);
    let certified = matches!(set.kind(), EnvKind::Explicit) || a1.holds && reach > t_max;
    let solution = solve_hitting(set, delta, t_max)?;
    Ok(CertifiedSolution { certified, solution, window, doublings: 0, a1, rounds: 1 })
}

fn solve_pruned(
    source: &EnvSource,
    window: f64,
    delta: f64,
    t_max: f64,
    cfg: &EngineConfig,
) -> Result<(LilypadSolution, u32)> {
    let params = source.params();
    let (q, exponent) = (params.q(), params.d() as f64 / params.alpha());
    let last = shell_of(window);
    let count = (last - CORE_SHELL + 1) as usize;
    let mut floors: Vec<f64> = if cfg.prune {
        (CORE_SHELL..=last)
            .map(|k| {
                let rho = shell_inner(k);
                delta.max(q * rho / t_max).max(cfg.floor_scale * rho.powf(exponent))
            })
            .collect()
    } else {
        vec![delta; count]
    };
    let mut rounds = 0;
    loop {
        rounds += 1;
        let set = source.materialize(window, delta, |k| floors[(k - CORE_SHELL) as usize])?;
        let solution = solve_hitting(Arc::new(set), delta, t_max)?;
        if !cfg.prune {
            return Ok((solution, rounds));
        }
        let justified = relevance_floors(&solution, window, delta, t_max);
        let mut lowered = false;
        for (f, j) in floors.iter_mut().zip(&justified) {
            if *f > *j {
                // strictly below the justified floor, so round-off cannot cycle
                *f = (*j * (1.0 - 1e-9)).max(delta);
                lowered = true;
            }
        }
        if !lowered {
            return Ok((solution, rounds));
        }
        if rounds >= cfg.max_rounds {
            floors.iter_mut().for_each(|f| *f = delta);
        }
    }
}

/// Largest floor per shell that provably keeps every relevant point.
///
/// `U_k = min_a H(a) + q(|a| + ρ_{k+1}) / speed(a)` over relaxing nodes bounds
/// the hitting time of the solved subset, and so of the full set, on shell
/// `k`; a relevant point there has mark at least `q ρ_k / min(U_k, t_max)`.
pub(crate) fn relevance_floors(sol: &LilypadSolution, window: f64, delta: f64, t_max: f64) -> Vec<f64> {
    let q = sol.params().q();
    let nodes: Vec<(f64, f64, f64)> = sol
        .active_nodes()
        .iter()
        .map(|&a| {
            let a = a as usize;
            (sol.hit_node(a), sol.node_norm(a), sol.node_speed(a))
        })
        .collect();
    (CORE_SHELL..=shell_of(window))
        .map(|k| {
            let inner = shell_inner(k);
            let outer = shell_outer(k).min(window);
            let upper = nodes
                .iter()
                .map(|&(h, r, s)| h + q * (r + outer) / s)
                .fold(f64::INFINITY, f64::min)
                .min(t_max);
            delta.max(q * inner / upper)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_poisson_env, ModelParams};

    fn p2() -> ModelParams {
        ModelParams::new(2, 4.0).unwrap()
    }

    fn probes(r: f64) -> Vec<Vec<f64>> {
        (0..40)
            .map(|i| {
                let a = i as f64 * 0.157;
                let s = r * (0.2 + 0.8 * ((i * 7) % 11) as f64 / 10.0);
                vec![s * a.cos() * 0.5, s * a.sin() * 0.5]
            })
            .collect()
    }

    #[test]
    fn pruning_preserves_every_field() {
        let src = EnvSource::poisson(p2(), 17);
        let delta = 0.2;
        let t_max = 1.5;
        let pruned = solve_window(&src, delta, t_max, &EngineConfig::default()).unwrap();
        let plain_cfg = EngineConfig { prune: false, ..EngineConfig::default() };
        let plain = solve_window(&src, delta, t_max, &plain_cfg).unwrap();
        assert_eq!(pruned.window, plain.window);
        assert!(pruned.set().len() < plain.set().len());
        for z in probes(2.0) {
            let a = plain.solution.hitting_at(&z);
            let b = pruned.solution.hitting_at(&z);
            match (a, b) {
                (Ok(a), Ok(b)) => assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                other => panic!("mismatch {other:?}"),
            }
            for t in [0.5, 1.0, 1.5] {
                let ma = plain.solution.particles_at(&z, t).unwrap();
                let mb = pruned.solution.particles_at(&z, t).unwrap();
                assert_eq!(ma, mb);
            }
        }
        for t in [0.5, 1.0, 1.5] {
            let a = plain.solution.maximizer(t).unwrap();
            let b = pruned.solution.maximizer(t).unwrap();
            assert_eq!(a.point, b.point);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn window_matches_direct_sampling() {
        let src = EnvSource::poisson(p2(), 5);
        let cfg = EngineConfig { prune: false, max_doublings: 0, ..EngineConfig::default() };
        let sol = solve_window(&src, 0.3, 0.8, &cfg).unwrap();
        let direct = sample_poisson_env(&p2(), sol.window, 0.3, 5).unwrap();
        assert_eq!(sol.set().points(), direct.points());
    }

    #[test]
    fn certification_reflects_a1() {
        let explicit = MarkedPointSet::from_points(
            p2(),
            0.5,
            2.0,
            vec![crate::env::MarkedPoint::new(vec![1.0, 0.0], 5.0)],
        )
        .unwrap();
        assert!(solve_set(Arc::new(explicit), 0.5, 1.0).unwrap().certified);
        // a sampled window too small for its largest mark
        let src = EnvSource::poisson(p2(), 3);
        let set = src.materialize(4.0, 0.3, |_| 0.3).unwrap();
        let bound = p2().q() * 4f64.powf(p2().gamma());
        let c = solve_set(Arc::new(set.clone()), 0.3, 1.0).unwrap();
        let reach_ok = 4f64.powf(0.25) > 1.0;
        assert_eq!(c.certified, set.max_mark().unwrap() <= bound && reach_ok);
        assert_eq!(c.a1.holds, set.max_mark().unwrap() <= bound);
    }
}
