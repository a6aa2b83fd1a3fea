//! Static SVG frames of the lilypad support.
//!
//! Each frame draws the pads reached by time `t` as L1 balls, i.e. squares
//! rotated by 45° in the plane and intervals on the line.

use std::fmt::Write;

use crate::error::{invalid_input, Result};
use crate::lilypad::{prefer, SolutionDoc};

const SIZE: u32 = 640;
const ORIGIN_FILL: &str = "#7f7f7f";
const MAXIMIZER_STROKE: &str = "#d62728";

struct Pad<'a> {
    node: usize,
    center: &'a [f64],
    mark: f64,
    radius: f64,
}

/// Node maximizing `mark · (t - H)` among points hit strictly before `t`.
pub fn frame_maximizer(doc: &SolutionDoc, t: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, n) in doc.nodes.iter().enumerate().skip(1) {
        let Some(h) = n.h.filter(|&h| h < t) else { continue };
        let v = n.mark * (t - h);
        let wins = match best {
            None => true,
            Some((j, w)) => prefer((v, n.mark, &n.pos), (w, doc.nodes[j].mark, &doc.nodes[j].pos)),
        };
        if wins {
            best = Some((i, v));
        }
    }
    best.filter(|&(_, v)| v > 0.0).map(|(i, _)| i)
}

fn dominated(doc: &SolutionDoc, i: usize) -> bool {
    matches!(doc.nodes[i].pred, Some(p) if p > 0 && doc.nodes[p].mark >= doc.nodes[i].mark)
}

/// One frame at time `t`, for `d ≤ 2`.
pub fn render_frame(doc: &SolutionDoc, t: f64) -> Result<String> {
    let d = doc.params.d();
    if d > 2 {
        return Err(invalid_input(format!("frames need d ≤ 2, got d = {d}")));
    }
    if !(t >= 0.0) || t > doc.horizon {
        return Err(invalid_input(format!("frame time {t} outside [0, {}]", doc.horizon)));
    }
    let q = doc.params.q();
    let pads: Vec<Pad> = doc
        .nodes
        .iter()
        .enumerate()
        .filter(|&(i, n)| n.h.is_some_and(|h| h <= t) && !dominated(doc, i))
        .map(|(i, n)| Pad { node: i, center: &n.pos, mark: n.mark, radius: n.mark * (t - n.h.unwrap_or(t)) / q })
        .collect();
    let maximizer = frame_maximizer(doc, t);

    let mut marks: Vec<f64> = pads.iter().filter(|p| p.node > 0).map(|p| p.mark).collect();
    marks.sort_by(f64::total_cmp);
    marks.dedup();
    let rank_hue = |mark: f64| {
        let r = marks.partition_point(|&m| m < mark) as f64;
        let top = (marks.len().max(2) - 1) as f64;
        220.0 * (1.0 - r / top)
    };

    let extent = pads
        .iter()
        .map(|p| p.center.iter().fold(0.0f64, |m, x| m.max(x.abs())) + p.radius)
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.05;
    let stroke = extent / 300.0;
    let bar = extent / 40.0;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SIZE}" height="{SIZE}" viewBox="{} {} {} {}">"#,
        -extent,
        -extent,
        2.0 * extent,
        2.0 * extent
    );
    let _ = writeln!(s, "<title>lilypad support at t = {t}</title>");
    let _ = writeln!(s, r##"<rect x="{}" y="{}" width="{}" height="{}" fill="#ffffff"/>"##, -extent, -extent, 2.0 * extent, 2.0 * extent);
    let _ = writeln!(s, r#"<g transform="scale(1,-1)" stroke-linejoin="round">"#);
    for p in &pads {
        let (x, y) = (p.center[0], if d == 2 { p.center[1] } else { 0.0 });
        let r = p.radius;
        let points = if d == 2 {
            format!("{},{} {},{} {},{} {},{}", x + r, y, x, y + r, x - r, y, x, y - r)
        } else {
            format!("{},{} {},{} {},{} {},{}", x - r, -bar, x + r, -bar, x + r, bar, x - r, bar)
        };
        let (class, fill) = if p.node == 0 {
            ("pad origin".to_string(), ORIGIN_FILL.to_string())
        } else {
            ("pad".to_string(), format!("hsl({:.1},70%,55%)", rank_hue(p.mark)))
        };
        let is_max = maximizer == Some(p.node);
        let _ = writeln!(
            s,
            r#"<polygon class="{}" data-node="{}" data-mark="{}" data-radius="{}" points="{points}" fill="{fill}" fill-opacity="0.45" stroke="{}" stroke-width="{}"/>"#,
            if is_max { format!("{class} maximizer") } else { class },
            p.node,
            p.mark,
            r,
            if is_max { MAXIMIZER_STROKE } else { "#303030" },
            if is_max { 3.0 * stroke } else { stroke },
        );
    }
    if let Some(m) = maximizer {
        let c = &doc.nodes[m].pos;
        let _ = writeln!(
            s,
            r#"<circle class="maximizer-mark" data-node="{m}" cx="{}" cy="{}" r="{}" fill="{MAXIMIZER_STROKE}"/>"#,
            c[0],
            if d == 2 { c[1] } else { 0.0 },
            4.0 * stroke
        );
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{MarkedPoint, MarkedPointSet, ModelParams};
    use crate::lilypad::solve_hitting;
    use std::sync::Arc;

    fn doc(points: Vec<MarkedPoint>, d: usize, alpha: f64, horizon: f64) -> SolutionDoc {
        let p = ModelParams::new(d, alpha).unwrap();
        let set = MarkedPointSet::from_points(p, 0.5, 10.0, points).unwrap();
        let sol = solve_hitting(Arc::new(set), 0.5, horizon).unwrap();
        serde_json::from_str(&sol.to_json().unwrap()).unwrap()
    }

    #[test]
    fn two_point_frame() {
        let d = doc(vec![MarkedPoint::new(vec![1.0], 2.0), MarkedPoint::new(vec![3.0], 1.0)], 1, 2.0, 10.0);
        assert_eq!(frame_maximizer(&d, 4.0), Some(1));
        let svg = render_frame(&d, 4.0).unwrap();
        // the pad at 3 lies inside the pad at 1
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert_eq!(svg.matches("maximizer\"").count(), 1);
        assert!(svg.contains(ORIGIN_FILL));
    }

    #[test]
    fn no_maximizer_before_first_hit() {
        let d = doc(vec![MarkedPoint::new(vec![1.0, 0.0], 2.0)], 2, 4.0, 10.0);
        assert_eq!(frame_maximizer(&d, 0.1), None);
        assert!(!render_frame(&d, 0.1).unwrap().contains("maximizer-mark"));
    }

    #[test]
    fn rejects_three_dimensions() {
        let d = doc(vec![], 3, 7.0, 1.0);
        assert!(render_frame(&d, 0.5).is_err());
    }
}
