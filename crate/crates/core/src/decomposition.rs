//! Splits the non-convex SL free space into rectangular convex zones, links
//! them into a decision tree and scores each root path geometrically.
//!
//! The corridor is cut into slabs at every inflated obstacle boundary and
//! corridor breakpoint. Inside a slab the free lateral intervals become
//! zones `Zone_<slab>_<cell>`, cells numbered from the lowest `l` upward. A
//! zone links to a zone of the previous slab when their lateral overlap can
//! hold the ego width, and every root path through those links is one
//! driving decision.

use std::fmt;

use serde::Serialize;

use crate::config::{Config, CostMode};
use crate::error::{Error, Result};
use crate::scenario::{Scenario, SlBox};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ZoneId {
    pub slab: usize,
    pub cell: usize,
}

impl fmt::Display for ZoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Zone_{}_{}", self.slab, self.cell)
    }
}

impl Serialize for ZoneId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexZone {
    pub id: ZoneId,
    pub s_interval: [f64; 2],
    pub l_interval: [f64; 2],
    /// Previous-slab zone with the widest admissible overlap.
    pub parent: Option<ZoneId>,
    /// Every previous-slab zone whose overlap admits the ego width.
    pub links: Vec<ZoneId>,
    pub area_cost: f64,
    pub link_cost: f64,
    pub lane_cost: f64,
}

impl ConvexZone {
    pub fn length(&self) -> f64 {
        self.s_interval[1] - self.s_interval[0]
    }

    pub fn width(&self) -> f64 {
        self.l_interval[1] - self.l_interval[0]
    }

    pub fn area(&self) -> f64 {
        self.length() * self.width()
    }

    pub fn center_l(&self) -> f64 {
        0.5 * (self.l_interval[0] + self.l_interval[1])
    }

    pub fn contains(&self, s: f64, l: f64) -> bool {
        s >= self.s_interval[0]
            && s <= self.s_interval[1]
            && l >= self.l_interval[0]
            && l <= self.l_interval[1]
    }

    pub fn contains_strict(&self, s: f64, l: f64) -> bool {
        s > self.s_interval[0]
            && s < self.s_interval[1]
            && l > self.l_interval[0]
            && l < self.l_interval[1]
    }
}

fn overlap(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[1].min(b[1]) - a[0].max(b[0])
}

#[derive(Debug, Clone, Serialize)]
pub struct InflatedObstacle {
    pub id: String,
    pub raw: SlBox,
    pub inflated: SlBox,
}

#[derive(Debug, Clone, Serialize)]
pub struct Decomposition {
    pub zones: Vec<ConvexZone>,
    /// Slab `i` covers `slabs[i]`; zones of slab `i` start at `slab_offsets[i]`.
    pub slabs: Vec<[f64; 2]>,
    slab_offsets: Vec<usize>,
    pub obstacles: Vec<InflatedObstacle>,
    pub root: ZoneId,
    pub ego_width: f64,
}

impl Decomposition {
    pub fn zone(&self, id: ZoneId) -> &ConvexZone {
        &self.zones[self.slab_offsets[id.slab] + id.cell]
    }

    fn zone_mut(&mut self, id: ZoneId) -> &mut ConvexZone {
        let i = self.slab_offsets[id.slab] + id.cell;
        &mut self.zones[i]
    }

    pub fn slab_zones(&self, slab: usize) -> &[ConvexZone] {
        let end = self
            .slab_offsets
            .get(slab + 1)
            .copied()
            .unwrap_or(self.zones.len());
        &self.zones[self.slab_offsets[slab]..end]
    }
}

/// Obstacle footprints (static boxes, dynamic footprints at t = 0) grown by
/// half the ego width plus `inflation_margin` laterally and half the ego
/// length plus the margin longitudinally. Obstacles entirely behind the
/// ego are left out.
pub fn inflated_obstacles(scenario: &Scenario, config: &Config) -> Vec<InflatedObstacle> {
    let ego = &scenario.ego;
    let ds = 0.5 * ego.length + config.inflation_margin;
    let dl = 0.5 * ego.width + config.inflation_margin;
    scenario
        .obstacles
        .iter()
        .filter_map(|o| {
            let raw = o.box_at_sample(0);
            if raw.s_max < scenario.s_start() - 0.5 * ego.length {
                return None;
            }
            Some(InflatedObstacle {
                id: o.id.clone(),
                raw,
                inflated: raw.inflated(ds, dl),
            })
        })
        .collect()
}

/// Free-space decomposition of `[s_start, s_end]` into convex zones.
pub fn decompose_free_space(scenario: &Scenario, config: &Config) -> Result<Decomposition> {
    let (s0, s1) = (scenario.s_start(), scenario.s_end());
    let corridor = &scenario.corridor;
    let obstacles = inflated_obstacles(scenario, config);

    let mut cuts = vec![s0, s1];
    for o in &obstacles {
        for s in [o.inflated.s_min, o.inflated.s_max] {
            if s > s0 && s < s1 {
                cuts.push(s);
            }
        }
    }
    cuts.extend(corridor.breaks_within(s0, s1));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= EPS);

    let mut zones = Vec::new();
    let mut slabs = Vec::new();
    let mut slab_offsets = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= EPS {
            continue;
        }
        let slab = slabs.len();
        slabs.push([a, b]);
        slab_offsets.push(zones.len());
        let mid = 0.5 * (a + b);
        let (lo, hi) = corridor.bounds_at(mid);
        let mut blocked: Vec<[f64; 2]> = obstacles
            .iter()
            .filter(|o| o.inflated.s_min < b - EPS && o.inflated.s_max > a + EPS)
            .map(|o| [o.inflated.l_min, o.inflated.l_max])
            .collect();
        blocked.sort_by(|x, y| x[0].total_cmp(&y[0]));
        let mut cursor = lo;
        let mut cell = 0;
        let mut push = |from: f64, to: f64, zones: &mut Vec<ConvexZone>| {
            if to - from > EPS {
                zones.push(ConvexZone {
                    id: ZoneId { slab, cell },
                    s_interval: [a, b],
                    l_interval: [from, to],
                    parent: None,
                    links: Vec::new(),
                    area_cost: 0.0,
                    link_cost: 0.0,
                    lane_cost: 0.0,
                });
                cell += 1;
            }
        };
        for iv in blocked {
            if iv[0] > cursor {
                push(cursor, iv[0].min(hi), &mut zones);
            }
            cursor = cursor.max(iv[1]);
            if cursor >= hi {
                break;
            }
        }
        if cursor < hi {
            push(cursor, hi, &mut zones);
        }
    }

    let ego = &scenario.ego;
    let mut decomp = Decomposition {
        zones,
        slabs,
        slab_offsets,
        obstacles,
        root: ZoneId { slab: 0, cell: 0 },
        ego_width: ego.width,
    };

    // parent links
    for slab in 1..decomp.slabs.len() {
        let prev: Vec<(ZoneId, [f64; 2])> = decomp
            .slab_zones(slab - 1)
            .iter()
            .map(|z| (z.id, z.l_interval))
            .collect();
        let cur: Vec<(ZoneId, [f64; 2])> = decomp
            .slab_zones(slab)
            .iter()
            .map(|z| (z.id, z.l_interval))
            .collect();
        for (id, iv) in cur {
            let mut links = Vec::new();
            let mut best: Option<(ZoneId, f64)> = None;
            for &(pid, piv) in &prev {
                let ov = overlap(iv, piv);
                if ov >= ego.width - EPS {
                    links.push(pid);
                    if best.is_none_or(|(_, b)| ov > b) {
                        best = Some((pid, ov));
                    }
                }
            }
            let z = decomp.zone_mut(id);
            z.links = links;
            z.parent = best.map(|b| b.0);
        }
    }

    let root = decomp
        .slab_zones(0)
        .iter()
        .find(|z| z.contains(s0, ego.l))
        .map(|z| z.id)
        .ok_or(Error::NoFreeSpace { s: s0, l: ego.l })?;
    decomp.root = root;
    Ok(decomp)
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeNode {
    pub zone: ZoneId,
    /// Index of the parent node.
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    /// Enumeration stopped at the configured decision cap.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionPath {
    /// Position in depth-first enumeration order.
    pub index: usize,
    pub zones: Vec<ZoneId>,
    /// Station extent of the path, from the start station.
    pub longitudinal: f64,
    pub move_cost: f64,
    pub geometric_cost: f64,
    pub decision_cost: Option<f64>,
}

impl DecisionPath {
    pub fn end(&self, decomp: &Decomposition) -> f64 {
        decomp
            .zone(*self.zones.last().expect("non-empty path"))
            .s_interval[1]
    }

    pub fn label(&self) -> String {
        self.zones
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(">")
    }
}

/// Depth-first enumeration of every root path (interior nodes included),
/// children visited in ascending cell order. Stops after `max_decisions`.
pub fn build_decision_tree(
    decomp: &Decomposition,
    max_decisions: usize,
) -> (DecisionTree, Vec<DecisionPath>) {
    let mut nodes = Vec::new();
    let mut paths = Vec::new();
    let mut truncated = false;
    let start = decomp.slabs[decomp.root.slab][0];

    #[allow(clippy::too_many_arguments)]
    fn visit(
        decomp: &Decomposition,
        zone: ZoneId,
        parent: Option<usize>,
        stack: &mut Vec<ZoneId>,
        nodes: &mut Vec<TreeNode>,
        paths: &mut Vec<DecisionPath>,
        start: f64,
        cap: usize,
        truncated: &mut bool,
    ) {
        if paths.len() >= cap {
            *truncated = true;
            return;
        }
        let node = nodes.len();
        nodes.push(TreeNode { zone, parent });
        stack.push(zone);
        paths.push(DecisionPath {
            index: paths.len(),
            zones: stack.clone(),
            longitudinal: decomp.zone(zone).s_interval[1] - start,
            move_cost: 0.0,
            geometric_cost: 0.0,
            decision_cost: None,
        });
        if zone.slab + 1 < decomp.slabs.len() {
            for child in decomp.slab_zones(zone.slab + 1) {
                if child.links.contains(&zone) {
                    visit(
                        decomp,
                        child.id,
                        Some(node),
                        stack,
                        nodes,
                        paths,
                        start,
                        cap,
                        truncated,
                    );
                }
            }
        }
        stack.pop();
    }

    let mut stack = Vec::new();
    visit(
        decomp,
        decomp.root,
        None,
        &mut stack,
        &mut nodes,
        &mut paths,
        start,
        max_decisions,
        &mut truncated,
    );
    (DecisionTree { nodes, truncated }, paths)
}

/// Fills the per-zone area, link and lane costs and the per-path move and
/// geometric costs.
pub fn geometric_costs(
    decomp: &mut Decomposition,
    paths: &mut [DecisionPath],
    scenario: &Scenario,
    config: &Config,
) {
    let corridor = &scenario.corridor;
    let max_area = decomp
        .zones
        .iter()
        .map(ConvexZone::area)
        .fold(0.0_f64, f64::max);
    let apply = |mode: CostMode, ratio: f64| match mode {
        CostMode::Complement => 1.0 - ratio,
        CostMode::Ratio => ratio,
    };
    let parents: Vec<Option<[f64; 2]>> = decomp
        .zones
        .iter()
        .map(|z| z.parent.map(|p| decomp.zone(p).l_interval))
        .collect();
    for (z, parent_iv) in decomp.zones.iter_mut().zip(parents) {
        let mid = 0.5 * (z.s_interval[0] + z.s_interval[1]);
        z.area_cost = if max_area > 0.0 {
            apply(config.area_cost_mode, z.area() / max_area)
        } else {
            0.0
        };
        let (lo, hi) = corridor.bounds_at(mid);
        z.link_cost = match parent_iv {
            Some(piv) => 1.0 - overlap(z.l_interval, piv).max(0.0) / (hi - lo),
            None => 0.0,
        };
        let (tl, th) = corridor.target_at(mid);
        let covered = overlap(z.l_interval, [tl, th]).max(0.0) / z.width();
        z.lane_cost = apply(config.lane_cost_mode, covered);
    }
    let max_len = paths.iter().map(|p| p.longitudinal).fold(0.0_f64, f64::max);
    for p in paths.iter_mut() {
        let ratio = if max_len > 0.0 {
            p.longitudinal / max_len
        } else {
            0.0
        };
        p.move_cost = config.w_move
            * if config.invert_move_cost {
                1.0 - ratio
            } else {
                ratio
            };
        let area: f64 = p.zones.iter().map(|&id| decomp.zone(id).area_cost).sum();
        p.geometric_cost = area + p.move_cost;
    }
}

/// The `k` paths with the smallest geometric cost, ties kept in
/// enumeration order.
pub fn prune_topk(paths: &[DecisionPath], k: usize) -> Result<Vec<DecisionPath>> {
    if paths.is_empty() {
        return Err(Error::EmptyDecisionSet);
    }
    let mut sorted = paths.to_vec();
    sorted.sort_by(|a, b| a.geometric_cost.total_cmp(&b.geometric_cost));
    sorted.truncate(k);
    Ok(sorted)
}
