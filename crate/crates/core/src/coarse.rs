//! Coarse evaluation of a decision: a small QP over sampled lateral offsets
//! and arrival times, whose solution is scored by curvature and
//! acceleration statistics.

use serde::Serialize;

use crate::config::Config;
use crate::decomposition::{DecisionPath, Decomposition};
use crate::error::{Error, Result};
use crate::qp::{QpBuilder, QpLog, QpProblem, QpStatus};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoarseSample {
    pub s_start: f64,
    /// Station offsets from `s_start`, first one 0.
    pub stations: Vec<f64>,
    pub ds: f64,
    pub l_lb: Vec<f64>,
    pub l_ub: Vec<f64>,
    pub t_lb: Vec<f64>,
    pub l_ref: Vec<f64>,
    pub l_init: f64,
    pub t_init: f64,
}

impl CoarseSample {
    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }
}

/// Lateral interval shared by the decision zones that contain `s`.
pub fn decision_bounds_at(
    decision: &DecisionPath,
    decomp: &Decomposition,
    s: f64,
) -> Option<(f64, f64)> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut any = false;
    for &id in &decision.zones {
        let z = decomp.zone(id);
        if s >= z.s_interval[0] - 1e-9 && s <= z.s_interval[1] + 1e-9 {
            lo = lo.max(z.l_interval[0]);
            hi = hi.min(z.l_interval[1]);
            any = true;
        }
    }
    any.then_some((lo, hi))
}

/// Uniform stations over the decision at spacing at most `coarse_ds`.
/// `t_floor` optionally raises the earliest-arrival bound.
pub fn coarse_sample(
    decision: &DecisionPath,
    decomp: &Decomposition,
    scenario: &Scenario,
    config: &Config,
    t_floor: Option<&dyn Fn(f64) -> f64>,
) -> Result<CoarseSample> {
    let ego = &scenario.ego;
    let s0 = scenario.s_start();
    let len = decision.end(decomp) - s0;
    let n = (len / config.coarse_ds - 1e-9).ceil().max(0.0) as usize;
    if n < 2 {
        return Err(Error::DegenerateDecision(format!(
            "{} spans {len:.2} m, fewer than 3 stations",
            decision.label()
        )));
    }
    let ds = len / n as f64;
    let half = 0.5 * ego.width;
    let mut sample = CoarseSample {
        s_start: s0,
        stations: Vec::with_capacity(n + 1),
        ds,
        l_lb: Vec::with_capacity(n + 1),
        l_ub: Vec::with_capacity(n + 1),
        t_lb: Vec::with_capacity(n + 1),
        l_ref: Vec::with_capacity(n + 1),
        l_init: ego.l,
        t_init: 0.0,
    };
    let mut t_prev = 0.0_f64;
    for i in 0..=n {
        let rel = i as f64 * ds;
        let s = s0 + rel;
        let (zlo, zhi) = decision_bounds_at(decision, decomp, s)
            .ok_or_else(|| Error::DegenerateDecision(format!("station {s:.2} outside decision")))?;
        let (mut lo, mut hi) = (zlo + half, zhi - half);
        if i == 0 {
            lo = lo.min(ego.l);
            hi = hi.max(ego.l);
        }
        if hi < lo {
            return Err(Error::DegenerateDecision(format!(
                "{} narrower than the ego at s = {s:.2}",
                decision.label()
            )));
        }
        if hi - lo < 1e-6 {
            let mid = 0.5 * (lo + hi);
            (lo, hi) = (mid - 5e-7, mid + 5e-7);
        }
        let mut t = rel / scenario.limits.v_max;
        if let Some(f) = t_floor {
            t = t.max(f(s));
        }
        t = t.max(t_prev);
        t_prev = t;
        sample.stations.push(rel);
        sample.l_lb.push(lo);
        sample.l_ub.push(hi);
        sample.t_lb.push(t);
        sample.l_ref.push(scenario.corridor.lane_center.at(s));
    }
    Ok(sample)
}

/// Variables `[l_0..l_n, t_0..t_n]`.
pub fn assemble_coarse_qp(sample: &CoarseSample, config: &Config) -> QpProblem {
    let m = sample.len();
    let mut b = QpBuilder::new(2 * m);
    for (off, w, target) in [
        (0, config.w_ref, &sample.l_ref),
        (m, config.w_pass, &sample.t_lb),
    ] {
        for i in 1..m - 1 {
            let idx = [off + i - 1, off + i, off + i + 1];
            let c = [1.0, -2.0, 1.0];
            for a in 0..3 {
                for bb in 0..3 {
                    b.h[(idx[a], idx[bb])] += 2.0 * c[a] * c[bb];
                }
            }
        }
        for i in 0..m {
            b.h[(off + i, off + i)] += 2.0 * w;
            b.g[off + i] -= 2.0 * w * target[i];
        }
    }
    for i in 0..m {
        b.lb[i] = sample.l_lb[i];
        b.ub[i] = sample.l_ub[i];
        b.lb[m + i] = sample.t_lb[i];
    }
    let mut row = vec![0.0; 2 * m];
    row[0] = 1.0;
    b.add_eq(&row, sample.l_init);
    row[0] = 0.0;
    row[m] = 1.0;
    b.add_eq(&row, sample.t_init);
    b.build()
}

/// Mean of absolute values and population variance.
pub fn stats(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean_abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean_abs, var)
}

#[derive(Debug, Clone, Serialize)]
pub struct DecisionScore {
    pub decision: DecisionPath,
    pub decision_cost: f64,
    pub move_cost: f64,
    pub path_cost: f64,
    pub dynamic_cost: f64,
    pub sum_area_cost: f64,
    pub sum_lane_cost: f64,
    pub sum_link_cost: f64,
    pub l: Vec<f64>,
    pub t: Vec<f64>,
    pub kappa: Vec<f64>,
    pub lateral_acceleration: Vec<f64>,
    pub longitudinal_acceleration: Vec<f64>,
}

/// Per-station curvature, lateral and longitudinal acceleration of a
/// coarse solution.
pub fn coarse_kinematics(
    l: &[f64],
    t: &[f64],
    ds: f64,
    v_max: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = l.len();
    let mut kappa = vec![0.0; m];
    for i in 1..m - 1 {
        kappa[i] = (l[i - 1] + l[i + 1] - 2.0 * l[i]) / (ds * ds);
    }
    kappa[0] = kappa[1];
    kappa[m - 1] = kappa[m - 2];
    let mut v = vec![0.0; m];
    for i in 0..m - 1 {
        let dt = t[i + 1] - t[i];
        v[i] = if dt > 1e-9 { ds / dt } else { v_max };
    }
    v[m - 1] = v[m - 2];
    let mut lon = vec![0.0; m];
    for i in 0..m - 1 {
        let dt = t[i + 1] - t[i];
        lon[i] = if dt > 1e-9 {
            (v[i + 1] - v[i]) / dt
        } else {
            0.0
        };
    }
    lon[m - 1] = lon[m - 2];
    let lat = v.iter().zip(&kappa).map(|(v, k)| v * v * k).collect();
    (kappa, lat, lon)
}

pub fn decision_cost(
    decision: &DecisionPath,
    decomp: &Decomposition,
    sample: &CoarseSample,
    x: &[f64],
    v_max: f64,
    config: &Config,
) -> DecisionScore {
    let m = sample.len();
    let (l, t) = (x[..m].to_vec(), x[m..2 * m].to_vec());
    let (kappa, lat, lon) = coarse_kinematics(&l, &t, sample.ds, v_max);
    let (k_mu, k_var) = stats(&kappa);
    let (lat_mu, lat_var) = stats(&lat);
    let (lon_mu, lon_var) = stats(&lon);
    let path_cost = config.w_11 * k_mu + config.w_12 * k_var;
    let dynamic_cost =
        config.w_21 * lat_mu + config.w_22 * lat_var + config.w_23 * lon_mu + config.w_24 * lon_var;
    let zones = || decision.zones.iter().map(|&id| decomp.zone(id));
    let sum_area_cost: f64 = zones().map(|z| z.area_cost).sum();
    let sum_lane_cost: f64 = zones().map(|z| z.lane_cost).sum();
    let sum_link_cost: f64 = zones().map(|z| z.link_cost).sum();
    let decision_cost = config.w_area * sum_area_cost
        + config.w_lane * sum_lane_cost
        + config.w_link * sum_link_cost
        + decision.move_cost
        + dynamic_cost
        + path_cost;
    let mut decision = decision.clone();
    decision.decision_cost = Some(decision_cost);
    DecisionScore {
        move_cost: decision.move_cost,
        decision,
        decision_cost,
        path_cost,
        dynamic_cost,
        sum_area_cost,
        sum_lane_cost,
        sum_link_cost,
        l,
        t,
        kappa,
        lateral_acceleration: lat,
        longitudinal_acceleration: lon,
    }
}

/// A decision that could not be scored, with the reason.
#[derive(Debug, Clone, Serialize)]
pub struct Rejected {
    pub decision: DecisionPath,
    pub reason: String,
}

/// Scores every decision and returns them sorted by ascending cost, ties
/// in input order. Decisions that are degenerate or infeasible are listed
/// separately.
pub fn evaluate_decisions(
    decomp: &Decomposition,
    decisions: &[DecisionPath],
    scenario: &Scenario,
    config: &Config,
    log: &mut QpLog,
) -> Result<(Vec<DecisionScore>, Vec<Rejected>)> {
    let mut scores = Vec::new();
    let mut rejected = Vec::new();
    for d in decisions {
        let sample = match coarse_sample(d, decomp, scenario, config, None) {
            Ok(s) => s,
            Err(Error::DegenerateDecision(reason)) => {
                rejected.push(Rejected {
                    decision: d.clone(),
                    reason,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let qp = assemble_coarse_qp(&sample, config);
        let sol = log.solve(format!("coarse-{}", d.index), &qp)?;
        if sol.status != QpStatus::Optimal {
            rejected.push(Rejected {
                decision: d.clone(),
                reason: format!("coarse qp {:?}", sol.status),
            });
            continue;
        }
        let x: Vec<f64> = sol.x.iter().copied().collect();
        scores.push(decision_cost(
            d,
            decomp,
            &sample,
            &x,
            scenario.limits.v_max,
            config,
        ));
    }
    scores.sort_by(|a, b| a.decision_cost.total_cmp(&b.decision_cost));
    Ok((scores, rejected))
}

/// Minimum cost, earliest-enumerated on ties.
pub fn select_best_decision(scores: &[DecisionScore]) -> Result<&DecisionScore> {
    scores
        .iter()
        .reduce(|best, s| {
            if s.decision_cost < best.decision_cost
                || (s.decision_cost == best.decision_cost && s.decision.index < best.decision.index)
            {
                s
            } else {
                best
            }
        })
        .ok_or(Error::EmptyDecisionSet)
}
