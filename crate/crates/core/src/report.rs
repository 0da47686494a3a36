//! Trajectory JSON and the debug dumps.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::coarse::{DecisionScore, Rejected};
use crate::config::Config;
use crate::decomposition::Decomposition;
use crate::error::{Error, Result};
use crate::planner::{
    Collision, Fallback, IterationState, MeetingWindow, PlanOutcome, TrajectoryPoint,
};
use crate::qp::{QpLog, QpStatus};
use crate::speed::{ObstacleDecision, SpeedResult, StPolygon};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub status: String,
    pub iters: usize,
    pub ms: f64,
    pub config_hash: String,
    pub converged: bool,
    pub decision: String,
    pub fallbacks: Vec<Fallback>,
    pub qp_solves: usize,
    pub max_kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub decision: String,
    pub windows: Vec<MeetingWindow>,
    pub active: Vec<usize>,
    pub delta_path: f64,
    pub delta_speed: f64,
    pub collision_free: bool,
    pub collision: Option<Collision>,
    pub path_objective: f64,
    pub speed_objective: f64,
    pub relaxed_times: usize,
    pub qp_solves: usize,
    pub micros: u64,
}

impl From<&IterationState> for IterationRecord {
    fn from(s: &IterationState) -> Self {
        Self {
            index: s.index,
            decision: s.decision.clone(),
            windows: s.windows.clone(),
            active: s.active.clone(),
            delta_path: s.delta_path,
            delta_speed: s.delta_speed,
            collision_free: s.collision_free,
            collision: s.collision.clone(),
            path_objective: s.path_objective,
            speed_objective: s.speed_objective,
            relaxed_times: s.relaxed_times,
            qp_solves: s.qp_solves,
            micros: s.micros,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub meta: Meta,
    pub trajectory: Vec<TrajectoryPoint>,
    pub iterations: Vec<IterationRecord>,
}

/// Largest KKT residual over the solves that reached optimality.
pub fn max_kkt_residual(log: &QpLog) -> f64 {
    log.records
        .iter()
        .filter(|r| r.status == QpStatus::Optimal)
        .map(|r| r.kkt_residual)
        .fold(0.0, f64::max)
}

impl Report {
    pub fn from_outcome(outcome: &PlanOutcome, config: &Config, ms: f64) -> Self {
        Self {
            meta: Meta {
                status: "ok".into(),
                iters: outcome.iters(),
                ms,
                config_hash: config.hash(),
                converged: outcome.converged,
                decision: outcome.decision.decision.label(),
                fallbacks: outcome.fallbacks.clone(),
                qp_solves: outcome.qp.records.len(),
                max_kkt_residual: max_kkt_residual(&outcome.qp),
            },
            trajectory: outcome.trajectory.points.clone(),
            iterations: outcome
                .iterations
                .iter()
                .map(IterationRecord::from)
                .collect(),
        }
    }

    /// Zeroes wall-clock fields so the output depends on inputs only.
    pub fn strip_timing(&mut self) {
        self.meta.ms = 0.0;
        for it in &mut self.iterations {
            it.micros = 0;
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

/// Zones with their links, and the inflated obstacles.
pub fn zones_json(decomp: &Decomposition) -> String {
    let edges: Vec<(String, String)> = decomp
        .zones
        .iter()
        .flat_map(|z| {
            z.links
                .iter()
                .map(move |c| (z.id.to_string(), c.to_string()))
        })
        .collect();
    pretty(&json!({
        "root": decomp.root,
        "zones": decomp.zones,
        "edges": edges,
        "obstacles": decomp.obstacles,
    }))
}

pub fn decisions_json(scores: &[DecisionScore], rejected: &[Rejected]) -> String {
    let ranked: Vec<_> = scores
        .iter()
        .enumerate()
        .map(|(rank, s)| {
            json!({
                "rank": rank,
                "label": s.decision.label(),
                "score": s,
            })
        })
        .collect();
    let rejected: Vec<_> = rejected
        .iter()
        .map(|r| json!({"label": r.decision.label(), "reason": r.reason}))
        .collect();
    pretty(&json!({"decisions": ranked, "rejected": rejected}))
}

pub fn st_json(
    polygons: &[StPolygon],
    verdicts: &[ObstacleDecision],
    speed: &SpeedResult,
) -> String {
    pretty(&json!({
        "polygons": polygons,
        "decisions": verdicts,
        "profile": speed.samples,
    }))
}

pub fn qp_records_json(log: &QpLog) -> String {
    pretty(&json!({ "solves": log.records }))
}
