//! SVG plots of the SL plane (zones, obstacles, path) and the ST diagram.

use std::fmt::Write;

use crate::decomposition::Decomposition;
use crate::path::PathResult;
use crate::planner::Trajectory;
use crate::scenario::Scenario;
use crate::speed::{ObstacleDecision, SpeedResult, StPolygon, Verdict};

const WIDTH: f64 = 1000.0;
const HEIGHT: f64 = 360.0;
const PAD: f64 = 40.0;

/// Affine map from plot coordinates to SVG pixels; `v` grows upwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub u0: f64,
    pub u1: f64,
    pub v0: f64,
    pub v1: f64,
}

impl Frame {
    pub fn map(&self, u: f64, v: f64) -> (f64, f64) {
        let x = PAD + (u - self.u0) / (self.u1 - self.u0) * (WIDTH - 2.0 * PAD);
        let y = HEIGHT - PAD - (v - self.v0) / (self.v1 - self.v0) * (HEIGHT - 2.0 * PAD);
        (x, y)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">
<title>{title}</title>
<style>
.zone {{ fill: #dff0d8; stroke: #3c763d; stroke-width: 1; fill-opacity: 0.6 }}
.obstacle {{ fill: #d9534f; stroke: #a94442 }}
.inflated {{ fill: none; stroke: #a94442; stroke-dasharray: 4 3 }}
.corridor {{ fill: none; stroke: #333; stroke-width: 1.5 }}
.path {{ fill: none; stroke: #337ab7; stroke-width: 2 }}
.profile {{ fill: none; stroke: #337ab7; stroke-width: 2 }}
.yield {{ fill: #f0ad4e; fill-opacity: 0.7 }}
.follow {{ fill: #5bc0de; fill-opacity: 0.7 }}
.overtake {{ fill: #9b59b6; fill-opacity: 0.7 }}
text {{ font-family: monospace; font-size: 10px }}
</style>
<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
}

fn points(frame: &Frame, pts: impl Iterator<Item = (f64, f64)>) -> String {
    pts.map(|(u, v)| {
        let (x, y) = frame.map(u, v);
        format!("{x:.2},{y:.2}")
    })
    .collect::<Vec<_>>()
    .join(" ")
}

fn rect(out: &mut String, frame: &Frame, class: &str, u: [f64; 2], v: [f64; 2], id: Option<&str>) {
    let (x0, y0) = frame.map(u[0], v[1]);
    let (x1, y1) = frame.map(u[1], v[0]);
    let id = id.map(|i| format!(r#" id="{i}""#)).unwrap_or_default();
    let _ = writeln!(
        out,
        r#"<rect class="{class}"{id} x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}"/>"#,
        x1 - x0,
        y1 - y0
    );
}

/// SL plane frame: stations of the decomposition, corridor width plus 1 m.
pub fn sl_frame(scenario: &Scenario, decomp: &Decomposition) -> Frame {
    let s0 = decomp
        .zones
        .iter()
        .map(|z| z.s_interval[0])
        .fold(f64::INFINITY, f64::min);
    let s1 = decomp
        .zones
        .iter()
        .map(|z| z.s_interval[1])
        .fold(f64::NEG_INFINITY, f64::max);
    let c = &scenario.corridor;
    let mut probes = vec![s0];
    probes.extend(c.breaks_within(s0, s1));
    let lo = probes
        .iter()
        .map(|&s| c.bounds_at(s).0)
        .fold(f64::INFINITY, f64::min);
    let hi = probes
        .iter()
        .map(|&s| c.bounds_at(s).1)
        .fold(f64::NEG_INFINITY, f64::max);
    Frame {
        u0: s0,
        u1: s1,
        v0: lo - 1.0,
        v1: hi + 1.0,
    }
}

pub fn sl_svg(
    scenario: &Scenario,
    decomp: &Decomposition,
    path: Option<&PathResult>,
    trajectory: Option<&Trajectory>,
) -> String {
    let frame = sl_frame(scenario, decomp);
    let mut out = String::new();
    header(&mut out, "SL plane");
    for z in &decomp.zones {
        let id = z.id.to_string();
        rect(
            &mut out,
            &frame,
            "zone",
            z.s_interval,
            z.l_interval,
            Some(&id),
        );
        let (x, y) = frame.map(
            0.5 * (z.s_interval[0] + z.s_interval[1]),
            0.5 * (z.l_interval[0] + z.l_interval[1]),
        );
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="middle">{id}</text>"#
        );
    }
    for o in &decomp.obstacles {
        let b = o.raw;
        rect(
            &mut out,
            &frame,
            "obstacle",
            [b.s_min, b.s_max],
            [b.l_min, b.l_max],
            None,
        );
        let i = o.inflated;
        rect(
            &mut out,
            &frame,
            "inflated",
            [i.s_min, i.s_max],
            [i.l_min, i.l_max],
            None,
        );
    }
    let c = &scenario.corridor;
    let mut stations = vec![frame.u0];
    for b in c.breaks_within(frame.u0, frame.u1) {
        stations.push(b);
        stations.push(b);
    }
    stations.push(frame.u1);
    let edge = |lower: bool| {
        stations
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                // duplicated break stations take the value before, then after
                let probe = if k % 2 == 1 && k + 1 < stations.len() {
                    s - 1e-9
                } else {
                    s
                };
                let (lo, hi) = c.bounds_at(probe);
                (s, if lower { lo } else { hi })
            })
            .collect::<Vec<_>>()
    };
    for lower in [true, false] {
        let pts = points(&frame, edge(lower).into_iter());
        let _ = writeln!(out, r#"<polyline class="corridor" points="{pts}"/>"#);
    }
    if let Some(p) = path {
        let pts = points(&frame, p.samples.iter().map(|q| (q.s, q.l)));
        let _ = writeln!(out, r#"<polyline class="path" points="{pts}"/>"#);
    }
    if let Some(t) = trajectory {
        for q in t.points.iter().filter(|q| q.s <= frame.u1) {
            let (x, y) = frame.map(q.s, q.l);
            let _ = writeln!(
                out,
                r#"<circle class="path" cx="{x:.2}" cy="{y:.2}" r="1.5"/>"#
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

pub fn st_frame(polygons: &[StPolygon], speed: &SpeedResult, horizon: f64) -> Frame {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in &speed.samples {
        lo = lo.min(p.s);
        hi = hi.max(p.s);
    }
    for p in polygons {
        for q in &p.samples {
            lo = lo.min(q.s_min);
            hi = hi.max(q.s_max);
        }
    }
    if !(hi > lo) {
        hi = lo + 1.0;
    }
    Frame {
        u0: 0.0,
        u1: horizon,
        v0: lo - 2.0,
        v1: hi + 2.0,
    }
}

fn verdict_class(v: Verdict) -> &'static str {
    match v {
        Verdict::Yield => "yield",
        Verdict::Follow => "follow",
        Verdict::Overtake => "overtake",
    }
}

pub fn st_svg(
    polygons: &[StPolygon],
    verdicts: &[ObstacleDecision],
    speed: &SpeedResult,
    horizon: f64,
) -> String {
    let frame = st_frame(polygons, speed, horizon);
    let mut out = String::new();
    header(&mut out, "ST diagram");
    for (i, p) in polygons.iter().enumerate() {
        let class = verdicts
            .iter()
            .find(|d| d.polygon == i)
            .map_or("yield", |d| verdict_class(d.verdict));
        let outline = p
            .samples
            .iter()
            .map(|q| (q.t, q.s_min))
            .chain(p.samples.iter().rev().map(|q| (q.t, q.s_max)));
        let pts = points(&frame, outline);
        let _ = writeln!(
            out,
            r#"<polygon class="{class}" data-obstacle="{}" points="{pts}"/>"#,
            p.obstacle_id
        );
    }
    let pts = points(&frame, speed.samples.iter().map(|q| (q.t, q.s)));
    let _ = writeln!(out, r#"<polyline class="profile" points="{pts}"/>"#);
    out.push_str("</svg>\n");
    out
}
