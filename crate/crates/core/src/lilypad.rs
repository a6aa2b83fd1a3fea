//! δ-truncated lilypad hitting times and the fields derived from them.
//!
//! Node 0 is a virtual pad at the origin with speed mark δ; node `i + 1` is
//! point `i` of the set. Growth from node `a` reaches `b` after
//! `q |b - a|₁ / speed(a)`, so hitting times are single-source shortest paths.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{l1_norm, MarkedPoint, MarkedPointSet, ModelParams};
use crate::error::{invalid_input, Error, Result};
use crate::geometry::{l1_dist_unchecked, L1Ball, SupportSet};

const NO_PRED: u32 = u32::MAX;

/// Hitting times of every node up to a horizon.
#[derive(Clone, Debug)]
pub struct LilypadSolution {
    set: Arc<MarkedPointSet>,
    delta: f64,
    horizon: f64,
    q: f64,
    /// `INFINITY` for nodes not settled by the horizon.
    hit: Vec<f64>,
    pred: Vec<u32>,
    /// Settled, non-dominated nodes in settling order; origin first.
    active: Vec<u32>,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    time: f64,
    node: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on time, then node index
        other.time.total_cmp(&self.time).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Computes `H` for every point with `H ≤ horizon`.
///
/// A settled node whose predecessor is a point with mark at least its own has
/// a cone `H(b) + q|z - b|/ξ(b)` bounded below by the predecessor's cone, so
/// it never relaxes edges; this leaves every hitting time unchanged.
pub fn solve_hitting(set: Arc<MarkedPointSet>, delta: f64, horizon: f64) -> Result<LilypadSolution> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(invalid_input(format!("delta must be positive and finite, got {delta}")));
    }
    if !(horizon > 0.0) {
        return Err(invalid_input(format!("horizon must be positive, got {horizon}")));
    }
    if let Some(p) = set.points().iter().find(|p| p.xi < delta) {
        return Err(invalid_input(format!("mark {} below delta {delta}", p.xi)));
    }
    let n = set.len() + 1;
    if n > NO_PRED as usize {
        return Err(Error::TooLarge(format!("{n} nodes exceed the solver's index range")));
    }
    let q = set.params().q();
    let d = set.params().d();
    let origin = vec![0.0; d];
    let pos = |i: usize| -> &[f64] { if i == 0 { &origin } else { &set.points()[i - 1].pos } };
    let speed = |i: usize| if i == 0 { delta } else { set.points()[i - 1].xi };

    // points sorted by norm; |b - a| ≥ ||b| - |a|| bounds the scan per pad
    let norms: Vec<f64> = std::iter::once(0.0).chain(set.points().iter().map(|p| p.norm())).collect();
    let mut by_norm: Vec<u32> = (1..n as u32).collect();
    by_norm.sort_by(|&a, &b| norms[a as usize].total_cmp(&norms[b as usize]).then(a.cmp(&b)));
    let sorted_norms: Vec<f64> = by_norm.iter().map(|&i| norms[i as usize]).collect();

    let mut tentative = vec![f64::INFINITY; n];
    let mut hit = vec![f64::INFINITY; n];
    let mut pred = vec![NO_PRED; n];
    let mut settled = vec![false; n];
    let mut active = Vec::new();
    let mut heap = BinaryHeap::new();
    tentative[0] = 0.0;
    heap.push(Entry { time: 0.0, node: 0 });

    while let Some(Entry { time, node }) = heap.pop() {
        let a = node as usize;
        if settled[a] || time > tentative[a] {
            continue;
        }
        settled[a] = true;
        hit[a] = time;
        let p = pred[a];
        if p != NO_PRED && p != 0 && speed(p as usize) >= speed(a) {
            continue;
        }
        active.push(node);
        let sa = speed(a);
        let reach = sa * (horizon - time) / q;
        let lo = sorted_norms.partition_point(|&r| r < norms[a] - reach);
        let hi = sorted_norms.partition_point(|&r| r <= norms[a] + reach);
        let pa = pos(a);
        for &b in &by_norm[lo..hi] {
            let b = b as usize;
            if settled[b] {
                continue;
            }
            let cand = time + q * l1_dist_unchecked(pos(b), pa) / sa;
            if cand < tentative[b] && cand <= horizon {
                tentative[b] = cand;
                pred[b] = node;
                heap.push(Entry { time: cand, node: b as u32 });
            }
        }
    }
    for (i, s) in settled.iter().enumerate() {
        if !s {
            pred[i] = NO_PRED;
        }
    }
    Ok(LilypadSolution { set, delta, horizon, q, hit, pred, active })
}

/// Outcome of [`LilypadSolution::maximizer`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximizerResult {
    pub point: Option<MarkedPoint>,
    /// Index of the point in the source set.
    pub index: Option<usize>,
    pub value: f64,
    /// Value minus the runner-up value (0 when the field is absent).
    pub near_tie_gap: f64,
}

impl LilypadSolution {
    pub fn set(&self) -> &Arc<MarkedPointSet> {
        &self.set
    }

    pub fn params(&self) -> &ModelParams {
        self.set.params()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of nodes including the origin.
    pub fn node_count(&self) -> usize {
        self.hit.len()
    }

    /// Hitting time of point `i`, or `None` when it exceeds the horizon.
    pub fn point_hit(&self, i: usize) -> Option<f64> {
        let h = self.hit[i + 1];
        h.is_finite().then_some(h)
    }

    /// Predecessor of point `i`: `Some(None)` for the origin, `Some(Some(j))`
    /// for point `j`, `None` when unsettled.
    pub fn point_pred(&self, i: usize) -> Option<Option<usize>> {
        match self.pred[i + 1] {
            NO_PRED => None,
            0 => Some(None),
            j => Some(Some(j as usize - 1)),
        }
    }

    pub fn settled_count(&self) -> usize {
        self.hit.iter().filter(|h| h.is_finite()).count()
    }

    /// Number of settled nodes that relax edges, origin included.
    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub(crate) fn hit_node(&self, node: usize) -> f64 {
        self.hit[node]
    }

    pub(crate) fn active_nodes(&self) -> &[u32] {
        &self.active
    }

    pub(crate) fn node_speed(&self, node: usize) -> f64 {
        if node == 0 {
            self.delta
        } else {
            self.set.points()[node - 1].xi
        }
    }

    pub(crate) fn node_norm(&self, node: usize) -> f64 {
        if node == 0 {
            0.0
        } else {
            self.set.points()[node - 1].norm()
        }
    }

    fn node_pos(&self, node: usize) -> Option<&[f64]> {
        (node > 0).then(|| self.set.points()[node - 1].pos.as_slice())
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.params().d() {
            return Err(invalid_input(format!(
                "probe has dimension {}, expected {}",
                z.len(),
                self.params().d()
            )));
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0) {
            return Err(invalid_input(format!("time must be non-negative, got {t}")));
        }
        if t > self.horizon {
            return Err(Error::HorizonExceeded { value: t, horizon: self.horizon });
        }
        Ok(())
    }

    /// `h^δ(z)`, the first time a pad covers `z`.
    pub fn hitting_at(&self, z: &[f64]) -> Result<f64> {
        self.check_dim(z)?;
        let mut best = self.q * l1_norm(z) / self.delta;
        for &a in &self.active[1..] {
            let a = a as usize;
            let pos = self.node_pos(a).unwrap_or_default();
            let v = self.hit[a] + self.q * l1_dist_unchecked(z, pos) / self.node_speed(a);
            best = best.min(v);
        }
        if best > self.horizon {
            return Err(Error::HorizonExceeded { value: best, horizon: self.horizon });
        }
        Ok(best)
    }

    /// `m^δ(z, t) = max_y ξ(y)(t - H(y)) - q|y - z|₁`, clamped at zero.
    pub fn particles_at(&self, z: &[f64], t: f64) -> Result<f64> {
        self.check_dim(z)?;
        self.check_time(t)?;
        let mut best: f64 = 0.0;
        for &a in &self.active[1..] {
            let a = a as usize;
            if self.hit[a] >= t {
                continue;
            }
            let pos = self.node_pos(a).unwrap_or_default();
            let v = self.node_speed(a) * (t - self.hit[a]) - self.q * l1_dist_unchecked(z, pos);
            best = best.max(v);
        }
        Ok(best)
    }

    /// `{z : h^δ(z) ≤ t}` as pads of radius `speed (t - H) / q`.
    ///
    /// Dominated pads lie inside their predecessor's pad and are left out.
    pub fn support_at(&self, t: f64) -> Result<SupportSet> {
        self.check_time(t)?;
        let d = self.params().d();
        let mut balls = Vec::new();
        for &a in &self.active {
            let a = a as usize;
            if self.hit[a] > t {
                continue;
            }
            let center = self.node_pos(a).map_or_else(|| vec![0.0; d], <[f64]>::to_vec);
            let radius = self.node_speed(a) * (t - self.hit[a]) / self.q;
            balls.push(L1Ball { center, radius });
        }
        SupportSet::new(balls)
    }

    /// Point maximizing `ξ(y)(t - H(y))`, ties to the larger mark and then the
    /// lexicographically smaller position.
    pub fn maximizer(&self, t: f64) -> Result<MaximizerResult> {
        self.check_time(t)?;
        let points = self.set.points();
        let mut best: Option<(usize, f64)> = None;
        let mut runner_up: f64 = 0.0;
        for (i, p) in points.iter().enumerate() {
            let h = self.hit[i + 1];
            if !(h < t) {
                continue;
            }
            let v = p.xi * (t - h);
            match best {
                None => best = Some((i, v)),
                Some((j, w)) => {
                    if beats(v, p, w, &points[j]) {
                        runner_up = runner_up.max(w);
                        best = Some((i, v));
                    } else {
                        runner_up = runner_up.max(v);
                    }
                }
            }
        }
        Ok(match best {
            Some((i, v)) if v > 0.0 => MaximizerResult {
                point: Some(points[i].clone()),
                index: Some(i),
                value: v,
                near_tie_gap: v - runner_up,
            },
            _ => MaximizerResult { point: None, index: None, value: 0.0, near_tie_gap: 0.0 },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let d = self.params().d();
        let nodes = (0..self.node_count())
            .map(|a| NodeRow {
                pos: self.node_pos(a).map_or_else(|| vec![0.0; d], <[f64]>::to_vec),
                mark: self.node_speed(a),
                h: self.hit[a].is_finite().then_some(self.hit[a]),
                pred: (self.pred[a] != NO_PRED).then_some(self.pred[a] as usize),
            })
            .collect();
        let doc = SolutionDoc {
            params: *self.params(),
            delta: self.delta,
            horizon: self.horizon,
            window_radius: self.set.window_radius(),
            nodes,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

fn beats(v: f64, p: &MarkedPoint, w: f64, incumbent: &MarkedPoint) -> bool {
    prefer((v, p.xi, &p.pos), (w, incumbent.xi, &incumbent.pos))
}

/// Maximizer order on `(value, mark, position)`: larger value, then larger
/// mark, then lexicographically smaller position.
pub(crate) fn prefer(a: (f64, f64, &[f64]), b: (f64, f64, &[f64])) -> bool {
    match a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => lex_less(a.2, b.2),
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).find_map(|(x, y)| match x.total_cmp(y) {
        Ordering::Equal => None,
        o => Some(o == Ordering::Less),
    }) == Some(true)
}

/// Node table of a solution; node 0 is the origin.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionDoc {
    pub params: ModelParams,
    pub delta: f64,
    pub horizon: f64,
    pub window_radius: f64,
    pub nodes: Vec<NodeRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRow {
    pub pos: Vec<f64>,
    pub mark: f64,
    #[serde(rename = "H")]
    pub h: Option<f64>,
    pub pred: Option<usize>,
}

/// Outcome of [`delta_error_bound`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub epsilon: f64,
    pub valid: bool,
}

/// `ε(δ) = 4qδ^{1-γ} / (1 - 2^{γ-1})`, valid when `(δ/4)^γ ≥ 2δ` and `δ ≤ r0`.
pub fn delta_error_bound(params: &ModelParams, delta: f64, r0: f64) -> ErrorBound {
    let (q, g) = (params.q(), params.gamma());
    let epsilon = 4.0 * q * delta.powf(1.0 - g) / (1.0 - 2f64.powf(g - 1.0));
    let valid = delta > 0.0 && (delta / 4.0).powf(g) >= 2.0 * delta && delta <= r0;
    ErrorBound { epsilon, valid }
}

/// Smallest `R ≥ 1` with `min(R^{1-γ}, qR/δ) > t_max (1 + margin)`.
pub fn auto_radius(params: &ModelParams, delta: f64, t_max: f64, margin: f64) -> Result<f64> {
    if !(t_max > 0.0) || !(margin >= 0.0) || !(delta > 0.0) {
        return Err(invalid_input(format!(
            "need t_max > 0, margin ≥ 0, delta > 0; got {t_max}, {margin}, {delta}"
        )));
    }
    let (q, g) = (params.q(), params.gamma());
    let target = t_max * (1.0 + margin);
    let ok = |r: f64| r.powf(1.0 - g).min(q * r / delta) > target;
    let mut r = 1f64.max(target.powf(1.0 / (1.0 - g))).max(delta * target / q);
    while !ok(r) {
        r = f64::from_bits(r.to_bits() + 1);
    }
    Ok(r)
}

/// Largest set [`brute_force_hitting`] will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// `h^δ(z)` by enumerating every chain of distinct points of length ≤ `max_len`.
pub fn brute_force_hitting(set: &MarkedPointSet, delta: f64, z: &[f64], max_len: usize) -> Result<f64> {
    if set.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!(
            "brute force refuses {} points (limit {BRUTE_FORCE_LIMIT})",
            set.len()
        )));
    }
    if z.len() != set.params().d() {
        return Err(invalid_input("probe dimension does not match the set"));
    }
    let q = set.params().q();
    let pts = set.points();
    let mut used = vec![false; pts.len()];
    let mut best = f64::INFINITY;
    extend_chain(pts, q, delta, z, 0.0, max_len, &mut used, &mut best);
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn extend_chain(
    pts: &[MarkedPoint],
    q: f64,
    delta: f64,
    last: &[f64],
    cost: f64,
    left: usize,
    used: &mut [bool],
    best: &mut f64,
) {
    *best = best.min(cost + q * l1_norm(last) / delta);
    if left == 0 {
        return;
    }
    for j in 0..pts.len() {
        if used[j] {
            continue;
        }
        used[j] = true;
        let step = q * l1_dist_unchecked(last, &pts[j].pos) / pts[j].xi;
        extend_chain(pts, q, delta, &pts[j].pos, cost + step, left - 1, used, best);
        used[j] = false;
    }
}
