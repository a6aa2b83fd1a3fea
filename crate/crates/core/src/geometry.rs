//! Unions of closed L1 balls and Hausdorff distances between them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};

/// L1 distance `Σ |x_i - y_i|`.
pub fn l1_dist(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid_input(format!("dimension mismatch: {} vs {}", x.len(), y.len())));
    }
    Ok(l1_dist_unchecked(x, y))
}

#[inline]
pub(crate) fn l1_dist_unchecked(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum()
}

/// Closed L1 ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl L1Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(invalid_input(format!("ball radius must be non-negative, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }
}

/// Non-empty finite union of closed L1 balls in a common dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    balls: Vec<L1Ball>,
}

impl SupportSet {
    pub fn new(balls: Vec<L1Ball>) -> Result<Self> {
        let Some(first) = balls.first() else {
            return Err(invalid_input("support set must contain at least one ball"));
        };
        let d = first.dim();
        if balls.iter().any(|b| b.dim() != d) {
            return Err(invalid_input("support set balls have mixed dimensions"));
        }
        if balls.iter().any(|b| !(b.radius >= 0.0)) {
            return Err(invalid_input("support set contains a negative radius"));
        }
        Ok(Self { balls })
    }

    /// Union of zero-radius balls, one per point.
    pub fn from_points<I: IntoIterator<Item = Vec<f64>>>(points: I) -> Result<Self> {
        Self::new(points.into_iter().map(|c| L1Ball { center: c, radius: 0.0 }).collect())
    }

    pub fn balls(&self) -> &[L1Ball] {
        &self.balls
    }

    pub fn dim(&self) -> usize {
        self.balls[0].dim()
    }

    pub fn max_radius(&self) -> f64 {
        self.balls.iter().map(|b| b.radius).fold(0.0, f64::max)
    }

    /// Membership with an additive slack on the ball radii.
    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        self.balls.iter().any(|b| l1_dist_unchecked(x, &b.center) <= b.radius + slack)
    }
}

/// Distance from `x` to the union, `min_b (|x - c_b| - r_b) ∨ 0`.
pub fn dist_to_set(x: &[f64], set: &SupportSet) -> f64 {
    set.balls
        .iter()
        .map(|b| l1_dist_unchecked(x, &b.center) - b.radius)
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// Hausdorff estimate with the sampling resolution it was computed at.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HausdorffEstimate {
    pub value: f64,
    /// Zero when the value is exact.
    pub resolution: f64,
}

/// Hausdorff distance between two unions of L1 balls.
///
/// In one dimension the sets are unions of intervals and the distance is
/// computed exactly. Otherwise each directed distance is evaluated at every
/// ball center plus the first `samples` points of a fixed boundary sequence
/// on every ball, which gives a lower bound that grows with `samples`.
pub fn hausdorff(a: &SupportSet, b: &SupportSet, samples: usize) -> Result<HausdorffEstimate> {
    if a.dim() != b.dim() {
        return Err(invalid_input(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    if samples == 0 {
        return Err(invalid_input("need at least one boundary sample per ball"));
    }
    if a.dim() == 1 {
        return Ok(HausdorffEstimate { value: hausdorff_intervals(a, b), resolution: 0.0 });
    }
    let value = directed_sampled(a, b, samples).max(directed_sampled(b, a, samples));
    let d = a.dim() as f64;
    let r_max = a.max_radius().max(b.max_radius());
    Ok(HausdorffEstimate { value, resolution: 2.0 * d * r_max / samples as f64 })
}

fn directed_sampled(from: &SupportSet, to: &SupportSet, samples: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let mut buf = vec![0.0; from.dim()];
    for ball in &from.balls {
        // a ball inside a single target ball contributes exactly zero
        if to.balls.iter().any(|t| l1_dist_unchecked(&ball.center, &t.center) + ball.radius <= t.radius) {
            continue;
        }
        worst = worst.max(dist_to_set(&ball.center, to));
        if ball.radius == 0.0 {
            continue;
        }
        for i in 0..samples {
            sphere_sample(&ball.center, ball.radius, i, &mut buf);
            worst = worst.max(dist_to_set(&buf, to));
        }
    }
    worst
}

/// `i`-th point of a nested, eventually dense sequence on the L1 sphere:
/// the `2d` vertices first, then low-discrepancy points spread over the
/// `2^d` facets.
pub fn sphere_sample(center: &[f64], radius: f64, i: usize, out: &mut [f64]) {
    let d = center.len();
    out.copy_from_slice(center);
    if i < 2 * d {
        let axis = i / 2;
        out[axis] += if i % 2 == 0 { radius } else { -radius };
        return;
    }
    let j = i - 2 * d;
    let facets = 1usize << d.min(16);
    let facet = j % facets;
    let n = (j / facets + 1) as u64;
    // d-1 radical inverses, sorted, give barycentric weights on the simplex
    let mut cuts: Vec<f64> = (0..d - 1).map(|k| radical_inverse(n, PRIMES[k % PRIMES.len()])).collect();
    cuts.sort_by(f64::total_cmp);
    let mut prev = 0.0;
    for k in 0..d {
        let next = if k + 1 < d { cuts[k] } else { 1.0 };
        let w = next - prev;
        prev = next;
        let sign = if (facet >> k) & 1 == 0 { 1.0 } else { -1.0 };
        out[k] += sign * radius * w;
    }
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut n: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut x = 0.0;
    while n > 0 {
        x += (n % base) as f64 * f;
        n /= base;
        f *= inv;
    }
    x
}

/// Merged, sorted intervals of a one-dimensional support set.
pub fn merged_intervals(set: &SupportSet) -> Vec<(f64, f64)> {
    let mut iv: Vec<(f64, f64)> =
        set.balls.iter().map(|b| (b.center[0] - b.radius, b.center[0] + b.radius)).collect();
    iv.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
    for (lo, hi) in iv {
        match out.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

fn dist_to_intervals(x: f64, iv: &[(f64, f64)]) -> f64 {
    iv.iter()
        .map(|&(lo, hi)| if x < lo { lo - x } else if x > hi { x - hi } else { 0.0 })
        .fold(f64::INFINITY, f64::min)
}

fn directed_intervals(from: &[(f64, f64)], to: &[(f64, f64)]) -> f64 {
    // distance to `to` is piecewise linear; its maximum over an interval is at
    // an endpoint or at the midpoint of a gap of `to`
    let gaps: Vec<f64> = to.windows(2).map(|w| 0.5 * (w[0].1 + w[1].0)).collect();
    let mut worst: f64 = 0.0;
    for &(lo, hi) in from {
        worst = worst.max(dist_to_intervals(lo, to)).max(dist_to_intervals(hi, to));
        for &m in gaps.iter().filter(|&&m| m >= lo && m <= hi) {
            worst = worst.max(dist_to_intervals(m, to));
        }
    }
    worst
}

fn hausdorff_intervals(a: &SupportSet, b: &SupportSet) -> f64 {
    let (ia, ib) = (merged_intervals(a), merged_intervals(b));
    directed_intervals(&ia, &ib).max(directed_intervals(&ib, &ia))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ball(c: &[f64], r: f64) -> L1Ball {
        L1Ball::new(c.to_vec(), r).unwrap()
    }

    #[test]
    fn l1_worked_values() {
        assert_eq!(l1_dist(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(l1_dist(&[1.0, 2.0], &[4.0, -2.0]).unwrap(), 7.0);
        assert!(l1_dist(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn distance_to_union() {
        let s = SupportSet::new(vec![ball(&[0.0], 1.0)]).unwrap();
        assert_eq!(dist_to_set(&[4.0], &s), 3.0);
        assert_eq!(dist_to_set(&[0.5], &s), 0.0);
        assert!(SupportSet::new(vec![]).is_err());
        assert!(L1Ball::new(vec![0.0], -1.0).is_err());
    }

    #[test]
    fn hausdorff_worked_values() {
        let s1 = SupportSet::new(vec![ball(&[0.0], 1.0)]).unwrap();
        let s2 = SupportSet::new(vec![ball(&[0.0], 1.0), ball(&[3.0], 1.0)]).unwrap();
        assert_eq!(hausdorff(&s1, &s2, 8).unwrap().value, 3.0);
        let big = SupportSet::new(vec![ball(&[0.0], 2.0)]).unwrap();
        assert_eq!(hausdorff(&s1, &big, 8).unwrap().value, 1.0);
        // nested balls in the plane: the vertices are sampled first
        let a = SupportSet::new(vec![ball(&[0.0, 0.0], 1.0)]).unwrap();
        let b = SupportSet::new(vec![ball(&[0.0, 0.0], 2.0)]).unwrap();
        assert_eq!(hausdorff(&a, &b, 8).unwrap().value, 1.0);
        assert_eq!(hausdorff(&a, &a, 8).unwrap().value, 0.0);
    }

    #[test]
    fn sphere_samples_lie_on_the_sphere() {
        let mut buf = vec![0.0; 3];
        for i in 0..200 {
            sphere_sample(&[1.0, -2.0, 0.5], 2.5, i, &mut buf);
            let r = l1_dist(&buf, &[1.0, -2.0, 0.5]).unwrap();
            assert!((r - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_midpoint_drives_the_interval_distance() {
        let a = SupportSet::new(vec![ball(&[5.0], 5.0)]).unwrap();
        let b = SupportSet::new(vec![ball(&[0.5], 0.5), ball(&[6.5], 3.5)]).unwrap();
        assert_eq!(hausdorff(&a, &b, 2).unwrap().value, 1.0);
    }

    fn balls_2d() -> impl Strategy<Value = SupportSet> {
        prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, 0.0..2.0f64), 1..5).prop_map(|v| {
            SupportSet::new(v.into_iter().map(|(x, y, r)| ball(&[x, y], r)).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn metric_axioms(x in prop::collection::vec(-5.0..5.0f64, 3),
                         y in prop::collection::vec(-5.0..5.0f64, 3),
                         z in prop::collection::vec(-5.0..5.0f64, 3)) {
            let xy = l1_dist(&x, &y).unwrap();
            prop_assert_eq!(xy, l1_dist(&y, &x).unwrap());
            prop_assert!(l1_dist(&x, &z).unwrap() <= xy + l1_dist(&y, &z).unwrap() + 1e-12);
        }

        #[test]
        fn hausdorff_symmetric_and_refining(a in balls_2d(), b in balls_2d()) {
            prop_assert_eq!(hausdorff(&a, &a, 8).unwrap().value, 0.0);
            let ab = hausdorff(&a, &b, 16).unwrap().value;
            prop_assert_eq!(ab, hausdorff(&b, &a, 16).unwrap().value);
            let mut prev = 0.0;
            for k in [8, 9, 16, 33, 64] {
                let v = hausdorff(&a, &b, k).unwrap().value;
                prop_assert!(v >= prev);
                prev = v;
            }
        }

        #[test]
        fn distance_matches_grid(a in balls_2d(), px in -4.0..4.0f64, py in -4.0..4.0f64) {
            // brute force: nearest grid point or center of the union, step h
            let h = 0.02;
            let mut best = a.balls().iter().map(|b| l1_dist(&b.center, &[px, py]).unwrap()).fold(f64::INFINITY, f64::min);
            for i in -300..=300 {
                for j in -300..=300 {
                    let g = [i as f64 * h, j as f64 * h];
                    if a.contains(&g, 0.0) {
                        best = best.min(l1_dist(&g, &[px, py]).unwrap());
                    }
                }
            }
            let exact = dist_to_set(&[px, py], &a);
            if best.is_finite() {
                prop_assert!(exact <= best + 1e-12);
                prop_assert!(best - exact <= 2.0 * h + 1e-9);
            }
        }
    }
}
