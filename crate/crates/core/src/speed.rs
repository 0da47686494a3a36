//! ST projection of obstacles onto the path, per-obstacle verdicts, and the
//! longitudinal profile `s(t)` as a C2 piecewise quintic.

use serde::Serialize;

use crate::config::{Config, YieldSpeedCap};
use crate::error::{Error, Result};
use crate::path::PathResult;
use crate::poly::{self, PiecewiseQuintic, NC};
use crate::qp::{QpBuilder, QpLog, QpProblem, QpStatus};
use crate::scenario::{grid_time, PlannerLimits, Scenario, PREDICTION_DT};

/// Path sampling step used to locate blocked stations.
pub const PROJECTION_DS: f64 = 0.1;
/// Grid on which solved profiles are re-checked between constraint times.
pub const CHECK_DT: f64 = 0.05;
/// Fraction of the acceleration limits used for the fallback envelopes.
pub const ENVELOPE_FRACTION: f64 = 0.8;
/// Time the envelopes hold the initial acceleration before switching.
pub const ENVELOPE_DELAY: f64 = 0.3;
const REFINE_ROUNDS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StSample {
    pub t: f64,
    pub s_min: f64,
    pub s_max: f64,
    /// Obstacle speed along the path.
    pub s_dot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StPolygon {
    pub obstacle_id: String,
    pub obstacle_index: usize,
    pub samples: Vec<StSample>,
    pub t1: f64,
    pub t2: f64,
}

impl StPolygon {
    /// Linear interpolation of the samples, `None` outside `[t1, t2]`.
    pub fn at(&self, t: f64) -> Option<StSample> {
        if t < self.t1 - 1e-9 || t > self.t2 + 1e-9 {
            return None;
        }
        let i = self.samples.partition_point(|p| p.t <= t);
        if i == 0 {
            return Some(self.samples[0]);
        }
        if i == self.samples.len() {
            return self.samples.last().copied();
        }
        let (a, b) = (self.samples[i - 1], self.samples[i]);
        let w = (t - a.t) / (b.t - a.t);
        let lerp = |x: f64, y: f64| x + w * (y - x);
        Some(StSample {
            t,
            s_min: lerp(a.s_min, b.s_min),
            s_max: lerp(a.s_max, b.s_max),
            s_dot: lerp(a.s_dot, b.s_dot),
        })
    }

    pub fn mean_speed(&self) -> f64 {
        self.samples.iter().map(|p| p.s_dot).sum::<f64>() / self.samples.len() as f64
    }
}

/// Blocked station interval of one footprint against the path, or `None`.
///
/// A path station `s` is blocked when it lies within half the summed
/// lengths of the obstacle centre and the lateral gap between the ego and
/// the obstacle at `s` is below `lateral_buffer`.
#[allow(clippy::too_many_arguments)]
fn blocked_interval(
    path: &PathResult,
    sc: f64,
    lc: f64,
    half_len: f64,
    half_wid: f64,
    buffer: f64,
    s_lo: f64,
    s_hi: f64,
) -> Option<(f64, f64)> {
    let a = (sc - half_len).max(s_lo);
    let b = (sc + half_len).min(s_hi);
    if a > b {
        return None;
    }
    let hit = |s: f64| (path.eval(s).0 - lc).abs() - half_wid < buffer;
    let n = ((b - a) / PROJECTION_DS).ceil().max(1.0) as usize;
    let station = |k: usize| {
        if k == n {
            b
        } else {
            a + k as f64 * (b - a) / n as f64
        }
    };
    let first = (0..=n).find(|&k| hit(station(k)))?;
    let last = (0..=n).rev().find(|&k| hit(station(k)))?;
    let refine = |mut inside: f64, mut outside: f64| {
        for _ in 0..40 {
            let m = 0.5 * (inside + outside);
            if hit(m) {
                inside = m;
            } else {
                outside = m;
            }
        }
        inside
    };
    let lo = if first == 0 {
        a
    } else {
        refine(station(first), station(first - 1))
    };
    let hi = if last == n {
        b
    } else {
        refine(station(last), station(last + 1))
    };
    Some((lo, hi))
}

/// Furthest station the ego could reach within the horizon, plus slack.
fn reach_limit(scenario: &Scenario) -> f64 {
    let v = scenario.limits.v_max.max(scenario.ego.v);
    scenario.s_start() + v * scenario.limits.horizon + 10.0
}

pub fn project_st(path: &PathResult, scenario: &Scenario, config: &Config) -> Vec<StPolygon> {
    let ego = &scenario.ego;
    let steps = scenario.limits.time_steps();
    let s_hi = reach_limit(scenario);
    let mut polygons = Vec::new();
    for (idx, obs) in scenario.obstacles.iter().enumerate() {
        let mut run: Vec<StSample> = Vec::new();
        let mut flush = |run: &mut Vec<StSample>| {
            if run.is_empty() {
                return;
            }
            if run.len() == 1 {
                // a single contact sample is widened to one grid step
                let mut extra = run[0];
                if run[0].t + PREDICTION_DT <= scenario.limits.horizon + 1e-9 {
                    extra.t = run[0].t + PREDICTION_DT;
                    run.push(extra);
                } else {
                    extra.t = run[0].t - PREDICTION_DT;
                    run.insert(0, extra);
                }
            }
            polygons.push(StPolygon {
                obstacle_id: obs.id.clone(),
                obstacle_index: idx,
                t1: run[0].t,
                t2: run.last().expect("non-empty").t,
                samples: std::mem::take(run),
            });
        };
        for k in 0..=steps {
            let b = obs.box_at_sample(k);
            let (sc, lc) = b.center();
            let blocked = blocked_interval(
                path,
                sc,
                lc,
                0.5 * (ego.length + b.length()),
                0.5 * (ego.width + b.width()),
                config.lateral_buffer,
                f64::NEG_INFINITY,
                s_hi,
            );
            match blocked {
                Some((s_min, s_max)) => run.push(StSample {
                    t: grid_time(k),
                    s_min,
                    s_max,
                    s_dot: obs.s_dot_at_sample(k),
                }),
                None => flush(&mut run),
            }
        }
        flush(&mut run);
    }
    polygons
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yield,
    Follow,
    Overtake,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObstacleDecision {
    pub polygon: usize,
    pub obstacle_id: String,
    pub verdict: Verdict,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitSt {
    pub s: f64,
    pub v: f64,
    pub a: f64,
}

impl InitSt {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let l = &scenario.limits;
        Self {
            s: scenario.s_start(),
            v: scenario.ego.v,
            a: scenario.ego.a.clamp(l.acc_min, l.acc_max),
        }
    }
}

/// Constant-acceleration motion from `(s, v)` over `dt`, speed saturating
/// at `0` or `cap`.
fn advance(s: f64, v: f64, a: f64, dt: f64, cap: f64) -> (f64, f64) {
    if a == 0.0 || dt <= 0.0 {
        return (s + v * dt.max(0.0), v);
    }
    let target = if a > 0.0 { cap.max(v) } else { 0.0 };
    let tc = ((target - v) / a).max(0.0);
    if dt <= tc {
        (s + v * dt + 0.5 * a * dt * dt, v + a * dt)
    } else {
        (s + v * tc + 0.5 * a * tc * tc + target * (dt - tc), target)
    }
}

/// Kinematic envelope from the initial state: acceleration `a0` for
/// `delay`, then `acc`, speed clamped to `[0, cap]`.
#[derive(Debug, Clone, Copy)]
struct Envelope {
    s0: f64,
    v0: f64,
    a0: f64,
    delay: f64,
    acc: f64,
    cap: f64,
}

impl Envelope {
    fn state(&self, t: f64) -> (f64, f64) {
        let t1 = t.min(self.delay);
        let (s, v) = advance(self.s0, self.v0, self.a0, t1, self.cap);
        advance(s, v, self.acc, t - t1, self.cap)
    }

    fn velocity(&self, t: f64) -> f64 {
        self.state(t).1
    }

    fn position(&self, t: f64) -> f64 {
        self.state(t).0
    }
}

fn speed_cap(init: InitSt, limits: &PlannerLimits) -> f64 {
    limits.v_max.max(init.v)
}

/// Verdict per polygon: overtake when full acceleration clears the blocked
/// interval plus margin at every sample of the window or the obstacle
/// enters behind the ego, follow when it moves along the path until the
/// horizon, otherwise yield.
pub fn classify_decisions(
    polygons: &[StPolygon],
    init: InitSt,
    limits: &PlannerLimits,
    config: &Config,
) -> Vec<ObstacleDecision> {
    let accel = Envelope {
        s0: init.s,
        v0: init.v,
        a0: 0.0,
        delay: 0.0,
        acc: limits.acc_max,
        cap: speed_cap(init, limits),
    };
    polygons
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let clears = p
                .samples
                .iter()
                .all(|q| accel.position(q.t) >= q.s_max + config.overtake_margin);
            // entering the path behind the ego at constant speed
            let first = p.samples[0];
            let behind = first.s_max < init.s + init.v * first.t;
            let (verdict, margin) = if clears || behind {
                (Verdict::Overtake, config.overtake_margin)
            } else if p.t2 >= limits.horizon - 1e-9 && p.mean_speed() > 0.0 {
                (Verdict::Follow, follow_gap(init, config))
            } else {
                (Verdict::Yield, config.yield_margin)
            };
            ObstacleDecision {
                polygon: i,
                obstacle_id: p.obstacle_id.clone(),
                verdict,
                margin,
            }
        })
        .collect()
}

pub fn follow_gap(init: InitSt, config: &Config) -> f64 {
    config.follow_gap_min.max(config.follow_headway * init.v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedBounds {
    pub s_lo: f64,
    pub s_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    /// Some obstacle bound was loosened to the kinematic envelope.
    pub relaxed: bool,
}

/// Time-dependent bounds on `s` and `s_dot` from the global speed limits
/// and the verdicts of the active polygons.
#[derive(Debug, Clone, Serialize)]
pub struct SpeedConstraints {
    pub init: InitSt,
    pub v_cap: f64,
    pub acc_min: f64,
    pub acc_max: f64,
    pub horizon: f64,
    pub yield_speed_cap: bool,
    pub rows: Vec<(StPolygon, ObstacleDecision)>,
}

impl SpeedConstraints {
    pub fn new(
        polygons: &[StPolygon],
        decisions: &[ObstacleDecision],
        active: &[bool],
        init: InitSt,
        limits: &PlannerLimits,
        config: &Config,
    ) -> Self {
        let rows = decisions
            .iter()
            .filter(|d| active.get(d.polygon).copied().unwrap_or(false))
            .map(|d| (polygons[d.polygon].clone(), d.clone()))
            .collect();
        Self {
            init,
            v_cap: speed_cap(init, limits),
            acc_min: limits.acc_min,
            acc_max: limits.acc_max,
            horizon: limits.horizon,
            yield_speed_cap: config.yield_speed_cap == YieldSpeedCap::Stop,
            rows,
        }
    }

    fn brake(&self) -> Envelope {
        Envelope {
            s0: self.init.s,
            v0: self.init.v,
            a0: self.init.a,
            delay: ENVELOPE_DELAY,
            acc: ENVELOPE_FRACTION * self.acc_min,
            cap: self.v_cap,
        }
    }

    fn accel(&self) -> Envelope {
        Envelope {
            s0: self.init.s,
            v0: self.init.v,
            a0: self.init.a,
            delay: ENVELOPE_DELAY,
            acc: ENVELOPE_FRACTION * self.acc_max,
            cap: self.v_cap,
        }
    }

    /// Raw obstacle bounds at `t` before any relaxation.
    pub fn raw_bounds_at(&self, t: f64) -> SpeedBounds {
        let mut b = SpeedBounds {
            s_lo: f64::NEG_INFINITY,
            s_hi: f64::INFINITY,
            v_lo: 0.0,
            v_hi: self.v_cap,
            relaxed: false,
        };
        for (poly, dec) in &self.rows {
            let Some(q) = poly.at(t) else { continue };
            match dec.verdict {
                Verdict::Overtake => {
                    b.s_lo = b.s_lo.max(q.s_max + dec.margin);
                    b.v_lo = b.v_lo.max(q.s_dot);
                }
                Verdict::Yield => {
                    b.s_hi = b.s_hi.min(q.s_min - dec.margin);
                    if self.yield_speed_cap {
                        b.v_hi = b.v_hi.min(0.0);
                    }
                }
                Verdict::Follow => {
                    b.s_hi = b.s_hi.min(q.s_min - dec.margin);
                    b.v_hi = b.v_hi.min(q.s_dot.max(0.0));
                }
            }
        }
        b
    }

    /// Bounds at `t`, with any obstacle bound that the ego cannot meet
    /// from its initial state loosened to the braking or acceleration
    /// envelope.
    pub fn bounds_at(&self, t: f64) -> SpeedBounds {
        let mut b = self.raw_bounds_at(t);
        let (brake, accel) = (self.brake(), self.accel());
        let relax = |bound: &mut f64, env: f64, upper: bool, flag: &mut bool| {
            if (upper && *bound < env) || (!upper && *bound > env) {
                *bound = env;
                *flag = true;
            }
        };
        let mut flag = false;
        relax(&mut b.s_hi, brake.position(t), true, &mut flag);
        relax(&mut b.v_hi, brake.velocity(t), true, &mut flag);
        relax(&mut b.s_lo, accel.position(t), false, &mut flag);
        relax(&mut b.v_lo, accel.velocity(t), false, &mut flag);
        b.relaxed = flag;
        b
    }
}

/// Block intervals of `block_len` over `[0, horizon]`, the last absorbing a
/// remainder shorter than half a block.
pub fn build_st_blocks(horizon: f64, block_len: f64) -> Vec<(f64, f64)> {
    let n = ((horizon / block_len) + 1e-9).floor().max(1.0) as usize;
    let n = if horizon - n as f64 * block_len >= 0.5 - 1e-9 {
        n + 1
    } else {
        n
    };
    (0..n)
        .map(|i| {
            let a = i as f64 * block_len;
            let b = if i + 1 == n {
                horizon
            } else {
                (i + 1) as f64 * block_len
            };
            (a, b)
        })
        .collect()
}

fn block_index(bounds: &[(f64, f64)], t: f64) -> usize {
    bounds
        .iter()
        .position(|&(_, b)| t < b)
        .unwrap_or(bounds.len() - 1)
}

/// Block-major layout, six local coefficients per block. Constraint rows
/// sit on the `speed_con_dt` grid plus any `extra_times`.
pub fn assemble_speed_qp(
    bounds: &[(f64, f64)],
    cons: &SpeedConstraints,
    limits: &PlannerLimits,
    config: &Config,
    extra_times: &[f64],
) -> QpProblem {
    let n = bounds.len();
    let nv = NC * n;
    let mut b = QpBuilder::new(nv);
    let init = cons.init;
    let w = [
        config.speed_w0,
        config.speed_w1,
        config.speed_w2,
        config.speed_w3,
    ];
    for (i, &(t0, t1)) in bounds.iter().enumerate() {
        let off = NC * i;
        let h = t1 - t0;
        let c0 = init.s + limits.v_max * t0;
        let m00 = poly::moment(0, 0, 0.0, h);
        let m01 = poly::moment(0, 1, 0.0, h);
        let m10 = poly::moment(1, 0, 0.0, h);
        for (d, &wd) in w.iter().enumerate() {
            let g = poly::gram(d, 0.0, h);
            for j in 0..NC {
                for k in 0..NC {
                    b.h[(off + j, off + k)] += 2.0 * wd * g[j][k];
                }
            }
        }
        for j in 0..NC {
            b.g[off + j] -= 2.0 * w[0] * (c0 * m00[j] + limits.v_max * m01[j]);
            b.g[off + j] -= 2.0 * w[1] * limits.v_expect * m10[j];
        }
    }

    let mut row = vec![0.0; nv];
    for (d, v) in [init.s, init.v, init.a].into_iter().enumerate() {
        row.fill(0.0);
        row[..NC].copy_from_slice(&poly::basis(d, 0.0));
        b.add_eq(&row, v);
    }
    for i in 1..n {
        let h = bounds[i - 1].1 - bounds[i - 1].0;
        for d in 0..3 {
            row.fill(0.0);
            row[NC * (i - 1)..NC * i].copy_from_slice(&poly::basis(d, h));
            for (r, v) in row[NC * i..NC * (i + 1)]
                .iter_mut()
                .zip(poly::basis(d, 0.0))
            {
                *r = -v;
            }
            b.add_eq(&row, 0.0);
        }
    }

    let place = |t: f64, d: usize, row: &mut Vec<f64>, scale: f64| {
        let i = block_index(bounds, t);
        let tau = t - bounds[i].0;
        for (r, v) in row[NC * i..NC * (i + 1)]
            .iter_mut()
            .zip(poly::basis(d, tau))
        {
            *r += scale * v;
        }
    };

    let dt = config.speed_con_dt;
    let kmax = ((limits.horizon / dt) + 1e-9).floor() as usize;
    let grid: Vec<f64> = (1..=kmax).map(|k| k as f64 * dt).collect();
    for (k, &t) in grid.iter().enumerate() {
        let tp = if k == 0 { 0.0 } else { grid[k - 1] };
        let h = t - tp;
        // position increment over the interval
        row.fill(0.0);
        place(t, 0, &mut row, 1.0);
        place(tp, 0, &mut row, -1.0);
        place(tp, 1, &mut row, -h);
        b.add_row(
            &row,
            0.5 * limits.acc_min * h * h,
            0.5 * limits.acc_max * h * h,
        );
        row.fill(0.0);
        place(t, 1, &mut row, 1.0);
        place(tp, 1, &mut row, -1.0);
        b.add_row(&row, limits.acc_min * h, limits.acc_max * h);
    }

    let mut times: Vec<f64> = grid.clone();
    times.extend(extra_times.iter().copied());
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let is_extra = |t: f64| extra_times.iter().any(|&e| (e - t).abs() < 1e-9);
    for &t in &times {
        let bd = cons.bounds_at(t);
        if bd.s_lo.is_finite() || bd.s_hi.is_finite() {
            row.fill(0.0);
            place(t, 0, &mut row, 1.0);
            b.add_row(&row, bd.s_lo, bd.s_hi);
        }
        row.fill(0.0);
        place(t, 1, &mut row, 1.0);
        b.add_row(&row, bd.v_lo, bd.v_hi);
        if is_extra(t) {
            row.fill(0.0);
            place(t, 2, &mut row, 1.0);
            b.add_row(&row, limits.acc_min, limits.acc_max);
        }
    }
    b.build()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedSample {
    pub t: f64,
    pub s: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StBlock {
    pub index: usize,
    pub t_interval: [f64; 2],
    pub coeffs: [f64; NC],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedResult {
    pub blocks: Vec<StBlock>,
    pub samples: Vec<SpeedSample>,
    pub objective: f64,
    /// Constraint times at which an obstacle bound had to be relaxed.
    pub relaxed_times: Vec<f64>,
}

impl SpeedResult {
    /// `(s, s_dot, s_ddot)` at `t`, clamped to the horizon.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let start = self.blocks[0].t_interval[0];
        let end = self.blocks.last().expect("non-empty").t_interval[1];
        let x = t.clamp(start, end);
        let i = self
            .blocks
            .partition_point(|b| b.t_interval[0] <= x)
            .saturating_sub(1);
        let b = &self.blocks[i];
        let tau = x - b.t_interval[0];
        (
            poly::eval(&b.coeffs, 0, tau),
            poly::eval(&b.coeffs, 1, tau),
            poly::eval(&b.coeffs, 2, tau),
        )
    }

    /// Profile at the speed limit from the initial state, used before any
    /// speed optimization has run.
    pub fn speed_limit(init: InitSt, limits: &PlannerLimits) -> Self {
        let v = limits.v_max;
        let mut coeffs = [0.0; NC];
        coeffs[0] = init.s;
        coeffs[1] = v;
        let blocks = vec![StBlock {
            index: 0,
            t_interval: [0.0, limits.horizon],
            coeffs,
        }];
        let samples = (0..=limits.time_steps())
            .map(|k| {
                let t = grid_time(k);
                SpeedSample {
                    t,
                    s: init.s + v * t,
                    v,
                    a: 0.0,
                }
            })
            .collect();
        Self {
            blocks,
            samples,
            objective: 0.0,
            relaxed_times: Vec::new(),
        }
    }
}

pub fn extract_speed_profile(
    x: &[f64],
    bounds: &[(f64, f64)],
    objective: f64,
    steps: usize,
) -> Result<SpeedResult> {
    let p = PiecewiseQuintic::from_solution(bounds, x);
    let (joint, residual) = p.continuity_residual();
    if residual > 1e-6 {
        return Err(Error::ContinuityViolation { joint, residual });
    }
    let samples = (0..=steps)
        .map(|k| {
            let t = grid_time(k);
            SpeedSample {
                t,
                s: p.eval(t, 0),
                v: p.eval(t, 1),
                a: p.eval(t, 2),
            }
        })
        .collect();
    let blocks = bounds
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| StBlock {
            index: i,
            t_interval: [a, b],
            coeffs: p.coeffs[i],
        })
        .collect();
    Ok(SpeedResult {
        blocks,
        samples,
        objective,
        relaxed_times: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedBound {
    Position,
    Velocity,
    Acceleration,
    Dynamics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedViolation {
    pub t: f64,
    pub bound: SpeedBound,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedReport {
    pub violations: Vec<SpeedViolation>,
    pub max_violation: f64,
    /// Largest miss of the interval dynamics over `step`-long intervals.
    pub max_dynamics: f64,
    pub min_velocity: f64,
}

/// Re-checks position, velocity and acceleration bounds and the interval
/// dynamics on a grid of `step`.
pub fn validate_speed(
    result: &SpeedResult,
    cons: &SpeedConstraints,
    step: f64,
    tol: f64,
) -> SpeedReport {
    let mut report = SpeedReport {
        violations: Vec::new(),
        max_violation: 0.0,
        max_dynamics: 0.0,
        min_velocity: f64::INFINITY,
    };
    let n = ((cons.horizon / step) + 1e-9).round() as usize;
    let mut prev = result.eval(0.0);
    for j in 1..=n {
        let t = (j as f64 * step).min(cons.horizon);
        let (s, v, a) = result.eval(t);
        let b = cons.bounds_at(t);
        let inc = s - prev.0 - prev.1 * step;
        let dyn_excess = (inc - 0.5 * cons.acc_max * step * step)
            .max(0.5 * cons.acc_min * step * step - inc)
            .max(v - prev.1 - cons.acc_max * step)
            .max(cons.acc_min * step - (v - prev.1));
        report.max_dynamics = report.max_dynamics.max(dyn_excess);
        report.min_velocity = report.min_velocity.min(v);
        let checks = [
            (SpeedBound::Position, (b.s_lo - s).max(s - b.s_hi)),
            (SpeedBound::Velocity, (b.v_lo - v).max(v - b.v_hi)),
            (
                SpeedBound::Acceleration,
                (cons.acc_min - a).max(a - cons.acc_max),
            ),
        ];
        for (bound, excess) in checks {
            report.max_violation = report.max_violation.max(excess);
            if excess > tol {
                report.violations.push(SpeedViolation {
                    t,
                    bound,
                    magnitude: excess,
                });
            }
        }
        prev = (s, v, a);
    }
    for t in critical_times(result) {
        let (s, v, a) = result.eval(t);
        let b = cons.bounds_at(t);
        report.min_velocity = report.min_velocity.min(v);
        let checks = [
            (SpeedBound::Position, (b.s_lo - s).max(s - b.s_hi)),
            (SpeedBound::Velocity, (b.v_lo - v).max(v - b.v_hi)),
            (
                SpeedBound::Acceleration,
                (cons.acc_min - a).max(a - cons.acc_max),
            ),
        ];
        for (bound, excess) in checks {
            report.max_violation = report.max_violation.max(excess);
            if excess > tol {
                report.violations.push(SpeedViolation {
                    t,
                    bound,
                    magnitude: excess,
                });
            }
        }
    }
    report
}

/// Interior extrema of `s_dot` and `s_ddot` in every block.
pub fn critical_times(result: &SpeedResult) -> Vec<f64> {
    let mut out = Vec::new();
    for b in &result.blocks {
        let [t0, t1] = b.t_interval;
        let h = t1 - t0;
        let c = &b.coeffs;
        // jerk = 6 a3 + 24 a4 x + 60 a5 x^2
        let (qa, qb, qc) = (60.0 * c[5], 24.0 * c[4], 6.0 * c[3]);
        let mut roots = Vec::new();
        if qa.abs() > 1e-12 {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let r = disc.sqrt();
                roots.push((-qb - r) / (2.0 * qa));
                roots.push((-qb + r) / (2.0 * qa));
            }
        } else if qb.abs() > 1e-12 {
            roots.push(-qc / qb);
        }
        // acceleration sign changes, bisected
        let n = 40;
        let acc = |x: f64| poly::eval(c, 2, x);
        for k in 0..n {
            let (mut lo, mut hi) = (h * k as f64 / n as f64, h * (k + 1) as f64 / n as f64);
            let (flo, fhi) = (acc(lo), acc(hi));
            if flo == 0.0 || flo.signum() == fhi.signum() {
                continue;
            }
            for _ in 0..50 {
                let m = 0.5 * (lo + hi);
                if acc(m).signum() == flo.signum() {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        out.extend(
            roots
                .into_iter()
                .filter(|&x| x > 0.0 && x < h)
                .map(|x| t0 + x),
        );
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Blocks, QP and extraction of the speed profile. Points of the
/// [`CHECK_DT`] grid that violate a bound become extra constraint times
/// and the QP is solved again. Infeasibility surfaces as
/// [`Error::InfeasibleDecisionSet`].
pub fn optimize_speed(
    cons: &SpeedConstraints,
    limits: &PlannerLimits,
    config: &Config,
    log: &mut QpLog,
    label: &str,
) -> Result<SpeedResult> {
    let bounds = build_st_blocks(limits.horizon, config.speed_block_len);
    let mut extra: Vec<f64> = Vec::new();
    let mut round = 0;
    loop {
        let qp = assemble_speed_qp(&bounds, cons, limits, config, &extra);
        let sol = log.solve(label, &qp)?;
        if sol.status != QpStatus::Optimal {
            return Err(Error::InfeasibleDecisionSet);
        }
        let x: Vec<f64> = sol.x.iter().copied().collect();
        let mut result = extract_speed_profile(&x, &bounds, sol.objective, limits.time_steps())?;
        let report = validate_speed(&result, cons, CHECK_DT, config.tol_feas);
        round += 1;
        if report.violations.is_empty() || round > REFINE_ROUNDS {
            let dt = config.speed_con_dt;
            let kmax = ((limits.horizon / dt) + 1e-9).floor() as usize;
            result.relaxed_times = (1..=kmax)
                .map(|k| k as f64 * dt)
                .chain(extra.iter().copied())
                .filter(|&t| cons.bounds_at(t).relaxed)
                .collect();
            result.relaxed_times.sort_by(f64::total_cmp);
            return Ok(result);
        }
        for v in &report.violations {
            if !extra.iter().any(|&e| (e - v.t).abs() < 1e-9) {
                extra.push(v.t);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_one_second_blocks() {
        let b = build_st_blocks(7.0, 1.0);
        assert_eq!(b.len(), 7);
        assert_eq!(b[6], (6.0, 7.0));
        let b = build_st_blocks(7.3, 1.0);
        assert_eq!(b.len(), 7);
        assert!((b[6].1 - 7.3).abs() < 1e-12);
        assert_eq!(build_st_blocks(7.5, 1.0).len(), 8);
    }

    #[test]
    fn constant_velocity_and_zero_coefficients() {
        let r =
            extract_speed_profile(&[0.0, 8.0, 0.0, 0.0, 0.0, 0.0], &[(0.0, 1.0)], 0.0, 10).unwrap();
        assert!(r.samples.iter().all(|p| p.v == 8.0 && p.a == 0.0));
        let r = extract_speed_profile(&[0.0; 6], &[(0.0, 1.0)], 0.0, 10).unwrap();
        assert!(r.samples.iter().all(|p| p.s == 0.0));
    }

    #[test]
    fn envelopes_saturate() {
        let e = Envelope {
            s0: 0.0,
            v0: 10.0,
            a0: 0.0,
            delay: 0.0,
            acc: -5.0,
            cap: 20.0,
        };
        assert_eq!(e.velocity(3.0), 0.0);
        assert!((e.position(3.0) - 10.0).abs() < 1e-12);
        let e = Envelope {
            s0: 0.0,
            v0: 10.0,
            a0: 0.0,
            delay: 0.0,
            acc: 2.0,
            cap: 12.0,
        };
        assert!((e.position(2.0) - 23.0).abs() < 1e-12);
        assert!((e.position(3.0) - 35.0).abs() < 1e-12);
    }

    fn poly_at(s_min: f64, s_max: f64, t1: f64, t2: f64, s_dot: f64) -> StPolygon {
        let n = ((t2 - t1) / 0.1).round() as usize;
        StPolygon {
            obstacle_id: "x".into(),
            obstacle_index: 0,
            samples: (0..=n)
                .map(|k| StSample {
                    t: t1 + k as f64 * 0.1,
                    s_min,
                    s_max,
                    s_dot,
                })
                .collect(),
            t1,
            t2,
        }
    }

    fn limits(v_max: f64) -> PlannerLimits {
        PlannerLimits {
            v_max,
            acc_min: -4.0,
            acc_max: 2.0,
            path_length: 100.0,
            horizon: 7.0,
            v_expect: v_max,
        }
    }

    #[test]
    fn fast_ego_overtakes() {
        let init = InitSt {
            s: 0.0,
            v: 25.0,
            a: 0.0,
        };
        let d = classify_decisions(
            &[poly_at(40.0, 45.0, 2.0, 2.5, 0.0)],
            init,
            &limits(30.0),
            &Config::default(),
        );
        assert_eq!(d[0].verdict, Verdict::Overtake);
    }

    #[test]
    fn persistent_lead_is_followed() {
        let init = InitSt {
            s: 0.0,
            v: 10.0,
            a: 0.0,
        };
        let d = classify_decisions(
            &[poly_at(20.0, 30.0, 0.0, 7.0, 5.0)],
            init,
            &limits(10.0),
            &Config::default(),
        );
        assert_eq!(d[0].verdict, Verdict::Follow);
        assert_eq!(d[0].margin, 15.0);
    }

    #[test]
    fn close_pedestrian_is_yielded() {
        let init = InitSt {
            s: 0.0,
            v: 10.0,
            a: 0.0,
        };
        let d = classify_decisions(
            &[poly_at(7.0, 13.0, 0.5, 2.0, 0.0)],
            init,
            &limits(10.0),
            &Config::default(),
        );
        assert_eq!(d[0].verdict, Verdict::Yield);
    }

    #[test]
    fn unreachable_bounds_are_relaxed() {
        let init = InitSt {
            s: 0.0,
            v: 10.0,
            a: 0.0,
        };
        let p = poly_at(5.0, 10.0, 0.0, 7.0, 0.0);
        let cfg = Config::default();
        let dec = classify_decisions(std::slice::from_ref(&p), init, &limits(10.0), &cfg);
        let cons = SpeedConstraints::new(&[p], &dec, &[true], init, &limits(10.0), &cfg);
        let b = cons.bounds_at(0.5);
        assert!(b.relaxed);
        let brake = 10.0 * 0.5 - 0.5 * 3.2 * 0.04;
        assert!((b.s_hi - brake).abs() < 1e-12);
    }
}
