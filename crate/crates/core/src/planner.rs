//! Alternating path and speed optimization with meeting-time updates,
//! decision fallback, trajectory fusion and the collision gate.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coarse::{evaluate_decisions, DecisionScore, Rejected};
use crate::config::Config;
use crate::decomposition::{
    build_decision_tree, decompose_free_space, geometric_costs, prune_topk, Decomposition,
};
use crate::error::{Error, Result};
use crate::path::{optimize_path, PathConstraintProfile, PathResult};
use crate::qp::QpLog;
use crate::scenario::{grid_time, ReferenceLine, Scenario};
use crate::speed::{
    classify_decisions, optimize_speed, project_st, InitSt, ObstacleDecision, SpeedConstraints,
    SpeedResult, StPolygon,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub s: f64,
    pub l: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub a: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

/// Samples `l(s(t))` on the 0.1 s grid and converts to Cartesian poses.
pub fn fuse_trajectory(
    path: &PathResult,
    speed: &SpeedResult,
    reference: &ReferenceLine,
    steps: usize,
) -> Trajectory {
    let points = (0..=steps)
        .map(|k| {
            let t = grid_time(k);
            let (s, v, a) = speed.eval(t);
            let (l, dl, ddl) = path.eval(s);
            let (x, y, heading) = reference.frenet_to_cartesian_unchecked(s, l, dl);
            let kappa = reference.curvature(s) + ddl / (1.0 + dl * dl).powf(1.5);
            TrajectoryPoint {
                t,
                s,
                l,
                x,
                y,
                heading,
                v: v.max(0.0),
                a,
                kappa,
            }
        })
        .collect();
    Trajectory { points }
}

/// Oriented rectangle: centre, heading, half length, half width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedBox {
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        let (a, b) = (self.half_length, self.half_width);
        [(a, b), (-a, b), (-a, -b), (a, -b)]
            .map(|(u, w)| (self.cx + u * c - w * s, self.cy + u * s + w * c))
    }

    /// Separating-axis test; touching boxes do not intersect.
    pub fn intersects(&self, other: &OrientedBox) -> bool {
        let (pa, pb) = (self.corners(), other.corners());
        for h in [self.heading, other.heading] {
            for (ax, ay) in [(h.cos(), h.sin()), (-h.sin(), h.cos())] {
                let proj = |p: &[(f64, f64); 4]| {
                    p.iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, y)| {
                            let d = x * ax + y * ay;
                            (lo.min(d), hi.max(d))
                        })
                };
                let (a0, a1) = proj(&pa);
                let (b0, b1) = proj(&pb);
                if a1 <= b0 || b1 <= a0 {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collision {
    pub t: f64,
    pub obstacle_id: String,
}

/// First sample at which the ego box, centred on the trajectory pose,
/// overlaps an obstacle box at the same time.
pub fn first_collision(trajectory: &Trajectory, scenario: &Scenario) -> Option<Collision> {
    let ego = &scenario.ego;
    let reference = &scenario.reference_line;
    for (k, p) in trajectory.points.iter().enumerate() {
        let ego_box = OrientedBox {
            cx: p.x,
            cy: p.y,
            heading: p.heading,
            half_length: 0.5 * ego.length,
            half_width: 0.5 * ego.width,
        };
        for o in &scenario.obstacles {
            let b = o.box_at_sample(k);
            let (sc, lc) = b.center();
            let (cx, cy, heading) = reference.frenet_to_cartesian_unchecked(sc, lc, 0.0);
            let ob = OrientedBox {
                cx,
                cy,
                heading,
                half_length: 0.5 * b.length(),
                half_width: 0.5 * b.width(),
            };
            if ego_box.intersects(&ob) {
                return Some(Collision {
                    t: p.t,
                    obstacle_id: o.id.clone(),
                });
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetingWindow {
    pub polygon: usize,
    pub obstacle_id: String,
    pub t1: f64,
    pub t2: f64,
}

/// Polygons whose margin-extended blocked interval the profile enters.
/// The window is the polygon's time extent.
pub fn compute_meeting_windows(
    speed: &SpeedResult,
    polygons: &[StPolygon],
    config: &Config,
) -> Vec<MeetingWindow> {
    let tol = 1e-6;
    polygons
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let mut prev: Option<i8> = None;
            p.samples.iter().any(|q| {
                let s = speed.eval(q.t).0;
                let lo = q.s_min - config.yield_margin;
                let hi = q.s_max + config.overtake_margin;
                let side = if s <= lo + tol {
                    -1
                } else if s >= hi - tol {
                    1
                } else {
                    0
                };
                // a jump across the whole interval between samples also meets
                let crossed = prev.is_some_and(|a| a != side);
                prev = Some(side);
                side == 0 || crossed
            })
        })
        .map(|(i, p)| MeetingWindow {
            polygon: i,
            obstacle_id: p.obstacle_id.clone(),
            t1: p.t1,
            t2: p.t2,
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationState {
    pub index: usize,
    pub decision: String,
    pub windows: Vec<MeetingWindow>,
    /// Polygons constrained in this iteration's speed QP.
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
    #[serde(skip)]
    pub path: PathResult,
    #[serde(skip)]
    pub speed: SpeedResult,
}

/// `(max |l_a - l_b|, max |s_a - s_b|)` over the path stations of `a` and
/// the 0.1 s grid.
pub fn iterate_deltas(
    a: (&PathResult, &SpeedResult),
    b: (&PathResult, &SpeedResult),
    steps: usize,
) -> (f64, f64) {
    let dp =
        a.0.samples
            .iter()
            .map(|p| (p.l - b.0.eval(p.s).0).abs())
            .fold(0.0, f64::max);
    let ds = (0..=steps)
        .map(|k| {
            let t = grid_time(k);
            (a.1.eval(t).0 - b.1.eval(t).0).abs()
        })
        .fold(0.0, f64::max);
    (dp, ds)
}

pub fn check_convergence(
    current: &IterationState,
    previous: &IterationState,
    eps_l: f64,
    eps_s: f64,
) -> bool {
    let steps = current.speed.samples.len().saturating_sub(1);
    let (dp, ds) = iterate_deltas(
        (&current.path, &current.speed),
        (&previous.path, &previous.speed),
        steps,
    );
    current.collision_free && dp < eps_l && ds < eps_s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fallback {
    pub decision: String,
    pub reason: String,
}

/// Everything a planning cycle produced.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub trajectory: Trajectory,
    pub iterations: Vec<IterationState>,
    /// Index into `iterations` of the returned iterate.
    pub selected: usize,
    pub converged: bool,
    pub decision: DecisionScore,
    pub path: PathResult,
    pub path_profile: PathConstraintProfile,
    pub speed: SpeedResult,
    pub polygons: Vec<StPolygon>,
    pub verdicts: Vec<ObstacleDecision>,
    pub decomposition: Decomposition,
    pub scores: Vec<DecisionScore>,
    pub rejected: Vec<Rejected>,
    pub fallbacks: Vec<Fallback>,
    pub qp: QpLog,
}

impl PlanOutcome {
    pub fn iters(&self) -> usize {
        self.iterations[self.selected].index
    }
}

/// Partial results kept when planning fails, for dumps.
#[derive(Debug)]
pub struct PlanFailure {
    pub error: Error,
    pub decomposition: Option<Decomposition>,
    pub scores: Vec<DecisionScore>,
    pub fallbacks: Vec<Fallback>,
    pub qp: QpLog,
}

struct DecisionRun {
    iterations: Vec<IterationState>,
    selected: usize,
    converged: bool,
    path: PathResult,
    profile: PathConstraintProfile,
    polygons: Vec<StPolygon>,
    verdicts: Vec<ObstacleDecision>,
}

enum RunEnd {
    Done(Box<DecisionRun>),
    Fallback(String, Vec<IterationState>),
}

fn run_decision(
    score: &DecisionScore,
    decomp: &Decomposition,
    scenario: &Scenario,
    config: &Config,
    log: &mut QpLog,
    first_index: usize,
) -> Result<RunEnd> {
    let label = score.decision.label();
    let steps = scenario.limits.time_steps();
    let started = Instant::now();
    let solves0 = log.records.len();
    let (path, profile) =
        match optimize_path(&score.decision, decomp, scenario, config, log, "path") {
            Ok(p) => p,
            Err(Error::InfeasibleCorridor) => {
                return Ok(RunEnd::Fallback("path qp infeasible".into(), Vec::new()))
            }
            Err(e) => return Err(e),
        };
    let polygons = project_st(&path, scenario, config);
    let init = InitSt::from_scenario(scenario);
    let verdicts = classify_decisions(&polygons, init, &scenario.limits, config);

    let seed_speed = SpeedResult::speed_limit(init, &scenario.limits);
    let seed_path = PathResult::constant(scenario.s_start(), path.end(), scenario.ego.l);
    let mut prev = IterationState {
        index: first_index - 1,
        decision: label.clone(),
        windows: compute_meeting_windows(&seed_speed, &polygons, config),
        active: Vec::new(),
        delta_path: 0.0,
        delta_speed: 0.0,
        collision_free: false,
        collision: None,
        path_objective: 0.0,
        speed_objective: 0.0,
        relaxed_times: 0,
        qp_solves: 0,
        micros: 0,
        path: seed_path,
        speed: seed_speed,
    };
    let mut active = vec![false; polygons.len()];
    for w in &prev.windows {
        active[w.polygon] = true;
    }

    let mut iterations: Vec<IterationState> = Vec::new();
    let mut clock = started;
    let mut solves = solves0;
    for n in 0..config.max_iter {
        let cons = SpeedConstraints::new(
            &polygons,
            &verdicts,
            &active,
            init,
            &scenario.limits,
            config,
        );
        let speed = match optimize_speed(&cons, &scenario.limits, config, log, "speed") {
            Ok(s) => s,
            Err(Error::InfeasibleDecisionSet) => {
                return Ok(RunEnd::Fallback("speed qp infeasible".into(), iterations))
            }
            Err(e) => return Err(e),
        };
        let trajectory = fuse_trajectory(&path, &speed, &scenario.reference_line, steps);
        let collision = first_collision(&trajectory, scenario);
        let (delta_path, delta_speed) =
            iterate_deltas((&path, &speed), (&prev.path, &prev.speed), steps);
        let windows = compute_meeting_windows(&speed, &polygons, config);
        let mut next_active = active.clone();
        for w in &windows {
            next_active[w.polygon] = true;
        }
        let now = Instant::now();
        let state = IterationState {
            index: first_index + n,
            decision: label.clone(),
            windows,
            active: (0..active.len()).filter(|&i| active[i]).collect(),
            delta_path,
            delta_speed,
            collision_free: collision.is_none(),
            collision,
            path_objective: path.objective,
            speed_objective: speed.objective,
            relaxed_times: speed.relaxed_times.len(),
            qp_solves: log.records.len() - solves,
            micros: now.duration_since(clock).as_micros() as u64,
            path: path.clone(),
            speed,
        };
        clock = now;
        solves = log.records.len();
        // an unchanged active set reproduces this iterate exactly
        let fixed_point = next_active == active;
        let converged = check_convergence(&state, &prev, config.eps_l, config.eps_s)
            || (fixed_point && check_convergence(&state, &state, config.eps_l, config.eps_s));
        let stuck = fixed_point && !state.collision_free;
        iterations.push(state);
        if converged {
            let selected = iterations.len() - 1;
            return Ok(RunEnd::Done(Box::new(DecisionRun {
                iterations,
                selected,
                converged: true,
                path,
                profile,
                polygons,
                verdicts,
            })));
        }
        if stuck {
            return Ok(RunEnd::Fallback(
                "collision with all windows active".into(),
                iterations,
            ));
        }
        active = next_active;
        prev = iterations.last().expect("pushed").clone();
    }
    match iterations.iter().rposition(|s| s.collision_free) {
        Some(selected) => Ok(RunEnd::Done(Box::new(DecisionRun {
            iterations,
            selected,
            converged: false,
            path,
            profile,
            polygons,
            verdicts,
        }))),
        None => Ok(RunEnd::Fallback(
            "no collision-free iterate".into(),
            iterations,
        )),
    }
}

/// One planning cycle. Decomposition and decision ranking run once; the
/// ranked decisions are then tried in order until one yields a
/// collision-free plan.
pub fn iterate_plan(
    scenario: &Scenario,
    config: &Config,
) -> std::result::Result<PlanOutcome, Box<PlanFailure>> {
    iterate_plan_with(scenario, config, false)
}

/// As [`iterate_plan`], optionally keeping every assembled QP in the log.
pub fn iterate_plan_with(
    scenario: &Scenario,
    config: &Config,
    keep_problems: bool,
) -> std::result::Result<PlanOutcome, Box<PlanFailure>> {
    let mut log = QpLog::new(config.qp_settings(), keep_problems);
    match plan_with_log(scenario, config, &mut log) {
        Ok(mut outcome) => {
            outcome.qp = log;
            Ok(outcome)
        }
        Err(failure) => {
            let (error, decomposition, scores, fallbacks) = *failure;
            Err(Box::new(PlanFailure {
                error,
                decomposition,
                scores,
                fallbacks,
                qp: log,
            }))
        }
    }
}

type Failure = Box<(
    Error,
    Option<Decomposition>,
    Vec<DecisionScore>,
    Vec<Fallback>,
)>;

fn plan_with_log(
    scenario: &Scenario,
    config: &Config,
    log: &mut QpLog,
) -> std::result::Result<PlanOutcome, Failure> {
    config
        .validate()
        .map_err(|e| Box::new((e, None, Vec::new(), Vec::new())))?;
    let mut decomp = decompose_free_space(scenario, config)
        .map_err(|e| Box::new((e, None, Vec::new(), Vec::new())))?;
    let (_, mut paths) = build_decision_tree(&decomp, config.max_decisions);
    geometric_costs(&mut decomp, &mut paths, scenario, config);
    let fail = |e: Error, d: &Decomposition, s: Vec<DecisionScore>, f: Vec<Fallback>| {
        Box::new((e, Some(d.clone()), s, f))
    };
    let top =
        prune_topk(&paths, config.k_prune).map_err(|e| fail(e, &decomp, Vec::new(), Vec::new()))?;
    let (scores, rejected) = evaluate_decisions(&decomp, &top, scenario, config, log)
        .map_err(|e| fail(e, &decomp, Vec::new(), Vec::new()))?;

    let mut fallbacks = Vec::new();
    let mut history: Vec<IterationState> = Vec::new();
    for score in &scores {
        let end = run_decision(score, &decomp, scenario, config, log, history.len() + 1)
            .map_err(|e| fail(e, &decomp, scores.clone(), fallbacks.clone()))?;
        match end {
            RunEnd::Done(run) => {
                let offset = history.len();
                history.extend(run.iterations);
                let selected = offset + run.selected;
                let chosen = &history[selected];
                let trajectory = fuse_trajectory(
                    &run.path,
                    &chosen.speed,
                    &scenario.reference_line,
                    scenario.limits.time_steps(),
                );
                return Ok(PlanOutcome {
                    trajectory,
                    speed: chosen.speed.clone(),
                    selected,
                    converged: run.converged,
                    decision: score.clone(),
                    path: run.path,
                    path_profile: run.profile,
                    polygons: run.polygons,
                    verdicts: run.verdicts,
                    iterations: history,
                    decomposition: decomp,
                    scores,
                    rejected,
                    fallbacks,
                    qp: QpLog::new(config.qp_settings(), false),
                });
            }
            RunEnd::Fallback(reason, its) => {
                history.extend(its);
                fallbacks.push(Fallback {
                    decision: score.decision.label(),
                    reason,
                });
            }
        }
    }
    let reason = if scores.is_empty() {
        "no decision survived coarse evaluation".to_string()
    } else {
        format!("all {} decisions failed", scores.len())
    };
    Err(fail(
        Error::PlanningFailed(reason),
        &decomp,
        scores,
        fallbacks,
    ))
}
