//! Lateral path `l(s)` as a C2 piecewise quintic inside the chosen decision.

use serde::Serialize;

use crate::config::Config;
use crate::decomposition::{DecisionPath, Decomposition};
use crate::error::{Error, Result};
use crate::poly::{self, PiecewiseQuintic, NC};
use crate::qp::{QpBuilder, QpLog, QpProblem, QpStatus};
use crate::scenario::{Corridor, Scenario};

/// Blocks shorter than this are merged into a neighbour.
pub const MIN_BLOCK_LEN: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlBlock {
    pub index: usize,
    pub s_interval: [f64; 2],
    /// `l = sum a_k (s - s_interval[0])^k`
    pub coeffs: [f64; NC],
}

/// Block intervals over `[s_start, decision end]`: a uniform grid of
/// `block_len`, forced cuts at zone transitions, slivers under
/// [`MIN_BLOCK_LEN`] merged away.
pub fn build_sl_blocks(
    decision: &DecisionPath,
    decomp: &Decomposition,
    s_start: f64,
    block_len: f64,
) -> Result<Vec<(f64, f64)>> {
    let end = decision.end(decomp);
    let len = end - s_start;
    if len < MIN_BLOCK_LEN {
        return Err(Error::DegenerateDecision(format!(
            "{} is {len:.2} m long",
            decision.label()
        )));
    }
    let mut forced: Vec<f64> = Vec::new();
    for &id in &decision.zones[1..] {
        let s = decomp.zone(id).s_interval[0];
        let last = forced.last().copied().unwrap_or(s_start);
        if s - last >= MIN_BLOCK_LEN && end - s >= MIN_BLOCK_LEN {
            forced.push(s);
        }
    }
    let mut cuts = forced.clone();
    let mut k = 1;
    loop {
        let s = s_start + k as f64 * block_len;
        if s > end - MIN_BLOCK_LEN {
            break;
        }
        if forced.iter().all(|&f| (f - s).abs() >= MIN_BLOCK_LEN) {
            cuts.push(s);
        }
        k += 1;
    }
    cuts.sort_by(f64::total_cmp);
    let mut bounds = Vec::with_capacity(cuts.len() + 1);
    let mut a = s_start;
    for c in cuts {
        bounds.push((a, c));
        a = c;
    }
    bounds.push((a, end));
    Ok(bounds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundSegment {
    pub s: [f64; 2],
    pub l: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathConstraintProfile {
    pub stations: Vec<f64>,
    pub l_min: Vec<f64>,
    pub l_max: Vec<f64>,
    pub dl_bound: f64,
    pub ddl_bound: f64,
    pub beta: f64,
    pub half_width: f64,
    /// Zone rectangles of the decision, in order.
    pub segments: Vec<BoundSegment>,
}

impl PathConstraintProfile {
    pub fn start(&self) -> f64 {
        self.stations[0]
    }

    pub fn end(&self) -> f64 {
        *self.stations.last().expect("non-empty")
    }

    /// Adds a constraint station at `s` unless one is already there.
    pub fn insert_station(&mut self, s: f64) {
        let i = self.stations.partition_point(|&x| x < s);
        if self.stations.get(i).is_some_and(|&x| (x - s).abs() < 1e-9)
            || (i > 0 && (self.stations[i - 1] - s).abs() < 1e-9)
        {
            return;
        }
        let (lo, hi) = self.bounds_at(s);
        self.stations.insert(i, s);
        self.l_min.insert(i, lo);
        self.l_max.insert(i, hi);
    }

    /// Intersection of every zone rectangle that contains `s`.
    pub fn bounds_at(&self, s: f64) -> (f64, f64) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for seg in &self.segments {
            if s >= seg.s[0] - 1e-9 && s <= seg.s[1] + 1e-9 {
                lo = lo.max(seg.l[0]);
                hi = hi.min(seg.l[1]);
            }
        }
        (lo, hi)
    }

    /// Zone midline at `s`, taken from the zone whose interior holds `s`.
    pub fn midline_at(&self, s: f64) -> f64 {
        let seg = self
            .segments
            .iter()
            .find(|seg| s >= seg.s[0] && s < seg.s[1])
            .unwrap_or_else(|| self.segments.last().expect("non-empty"));
        0.5 * (seg.l[0] + seg.l[1])
    }
}

pub fn build_path_profile(
    decision: &DecisionPath,
    decomp: &Decomposition,
    scenario: &Scenario,
    config: &Config,
) -> Result<PathConstraintProfile> {
    let s0 = scenario.s_start();
    let end = decision.end(decomp);
    let segments: Vec<BoundSegment> = decision
        .zones
        .iter()
        .map(|&id| {
            let z = decomp.zone(id);
            BoundSegment {
                s: z.s_interval,
                l: z.l_interval,
            }
        })
        .collect();
    let mut profile = PathConstraintProfile {
        stations: Vec::new(),
        l_min: Vec::new(),
        l_max: Vec::new(),
        dl_bound: config.dl_bound,
        ddl_bound: config.ddl_bound,
        beta: config.beta,
        half_width: 0.5 * scenario.ego.width,
        segments,
    };
    let n = ((end - s0) / config.path_con_ds - 1e-9).ceil().max(1.0) as usize;
    let ds = (end - s0) / n as f64;
    let mut stations: Vec<f64> = (0..=n)
        .map(|k| if k == n { end } else { s0 + k as f64 * ds })
        .collect();
    // zone transitions are stations too, so bound steps are not skipped
    stations.extend(
        profile
            .segments
            .iter()
            .map(|seg| seg.s[0])
            .filter(|&s| s > s0 && s < end),
    );
    stations.sort_by(f64::total_cmp);
    stations.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    for s in stations {
        let (lo, hi) = profile.bounds_at(s);
        if lo + profile.half_width >= hi - profile.half_width {
            return Err(Error::InfeasibleCorridor);
        }
        profile.stations.push(s);
        profile.l_min.push(lo);
        profile.l_max.push(hi);
    }
    Ok(profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitSl {
    pub l: f64,
    pub dl: f64,
    pub ddl: f64,
}

fn block_index(bounds: &[(f64, f64)], s: f64) -> usize {
    bounds
        .iter()
        .position(|&(_, b)| s < b)
        .unwrap_or(bounds.len() - 1)
}

/// Block-major layout, six local coefficients per block.
pub fn assemble_path_qp(
    bounds: &[(f64, f64)],
    profile: &PathConstraintProfile,
    init: InitSl,
    config: &Config,
    corridor: &Corridor,
) -> QpProblem {
    let n = bounds.len();
    let nv = NC * n;
    let mut b = QpBuilder::new(nv);
    let w = [
        config.path_w0,
        config.path_w1,
        config.path_w2,
        config.path_w3,
    ];
    let zone_cuts: Vec<f64> = profile.segments.iter().map(|seg| seg.s[1]).collect();
    for (i, &(s0, s1)) in bounds.iter().enumerate() {
        let off = NC * i;
        let h = s1 - s0;
        for (d, &wd) in w.iter().enumerate().skip(1) {
            let g = poly::gram(d, 0.0, h);
            for j in 0..NC {
                for k in 0..NC {
                    b.h[(off + j, off + k)] += 2.0 * wd * g[j][k];
                }
            }
        }
        // value terms split where the lane centre or the zone midline changes
        let mut pts: Vec<f64> = corridor.lane_center.breaks_within(s0, s1).collect();
        pts.extend(zone_cuts.iter().copied().filter(|&c| c > s0 && c < s1));
        pts.push(s0);
        pts.push(s1);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        for win in pts.windows(2) {
            let (a, c) = (win[0], win[1]);
            if c - a <= 0.0 {
                continue;
            }
            let mid = 0.5 * (a + c);
            let target = corridor.lane_center.at(mid);
            let midline = profile.midline_at(mid);
            let g0 = poly::gram(0, a - s0, c - s0);
            let m0 = poly::moment(0, 0, a - s0, c - s0);
            let wv = w[0] + config.w_obs;
            let rhs = w[0] * target + config.w_obs * midline;
            for j in 0..NC {
                for k in 0..NC {
                    b.h[(off + j, off + k)] += 2.0 * wv * g0[j][k];
                }
                b.g[off + j] -= 2.0 * rhs * m0[j];
            }
        }
    }

    let mut row = vec![0.0; nv];
    for (d, v) in [init.l, init.dl, init.ddl].into_iter().enumerate() {
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

    for (k, &s) in profile.stations.iter().enumerate().skip(1) {
        let i = block_index(bounds, s);
        let sigma = s - bounds[i].0;
        let off = NC * i;
        let b0 = poly::basis(0, sigma);
        let b1 = poly::basis(1, sigma);
        let b2 = poly::basis(2, sigma);
        row.fill(0.0);
        for j in 0..NC {
            row[off + j] = b0[j] + profile.beta * b1[j];
        }
        b.add_row(
            &row,
            profile.l_min[k] + profile.half_width,
            profile.l_max[k] - profile.half_width,
        );
        row.fill(0.0);
        row[off..off + NC].copy_from_slice(&b1);
        b.add_row(&row, -profile.dl_bound, profile.dl_bound);
        row.fill(0.0);
        row[off..off + NC].copy_from_slice(&b2);
        b.add_row(&row, -profile.ddl_bound, profile.ddl_bound);
    }
    b.build()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathSample {
    pub s: f64,
    pub l: f64,
    pub dl: f64,
    pub ddl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathResult {
    pub blocks: Vec<SlBlock>,
    pub samples: Vec<PathSample>,
    pub objective: f64,
}

impl PathResult {
    pub fn start(&self) -> f64 {
        self.blocks[0].s_interval[0]
    }

    pub fn end(&self) -> f64 {
        self.blocks.last().expect("non-empty").s_interval[1]
    }

    /// `(l, dl, ddl)` at `s`. Past either end the offset is held constant.
    pub fn eval(&self, s: f64) -> (f64, f64, f64) {
        let x = s.clamp(self.start(), self.end());
        let i = self
            .blocks
            .partition_point(|b| b.s_interval[0] <= x)
            .saturating_sub(1);
        let b = &self.blocks[i];
        let sigma = x - b.s_interval[0];
        let l = poly::eval(&b.coeffs, 0, sigma);
        if s != x {
            return (l, 0.0, 0.0);
        }
        (
            l,
            poly::eval(&b.coeffs, 1, sigma),
            poly::eval(&b.coeffs, 2, sigma),
        )
    }

    /// Constant-offset path, used before any path has been optimized.
    pub fn constant(s0: f64, s1: f64, l: f64) -> Self {
        let mut coeffs = [0.0; NC];
        coeffs[0] = l;
        let blocks = vec![SlBlock {
            index: 0,
            s_interval: [s0, s1],
            coeffs,
        }];
        let samples = vec![
            PathSample {
                s: s0,
                l,
                dl: 0.0,
                ddl: 0.0,
            },
            PathSample {
                s: s1,
                l,
                dl: 0.0,
                ddl: 0.0,
            },
        ];
        Self {
            blocks,
            samples,
            objective: 0.0,
        }
    }
}

pub fn extract_path(
    x: &[f64],
    bounds: &[(f64, f64)],
    objective: f64,
    sample_ds: f64,
) -> Result<PathResult> {
    let p = PiecewiseQuintic::from_solution(bounds, x);
    let (joint, residual) = p.continuity_residual();
    if residual > 1e-6 {
        return Err(Error::ContinuityViolation { joint, residual });
    }
    let blocks = bounds
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| SlBlock {
            index: i,
            s_interval: [a, b],
            coeffs: p.coeffs[i],
        })
        .collect();
    let (s0, s1) = (p.start(), p.end());
    let mut samples = Vec::new();
    let mut k = 0;
    loop {
        let s = (s0 + k as f64 * sample_ds).min(s1);
        samples.push(PathSample {
            s,
            l: p.eval(s, 0),
            dl: p.eval(s, 1),
            ddl: p.eval(s, 2),
        });
        if s >= s1 {
            break;
        }
        k += 1;
    }
    Ok(PathResult {
        blocks,
        samples,
        objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PathBound {
    Position,
    Slope,
    Curvature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathViolation {
    pub s: f64,
    pub bound: PathBound,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathReport {
    pub violations: Vec<PathViolation>,
    pub max_violation: f64,
    pub max_kappa: f64,
}

/// Re-checks the position, slope and curvature bounds on a grid of
/// `step` over the path (start station excluded) and reports anything
/// beyond `tol`.
pub fn validate_path(
    result: &PathResult,
    profile: &PathConstraintProfile,
    tol: f64,
    step: f64,
) -> PathReport {
    let mut report = PathReport {
        violations: Vec::new(),
        max_violation: 0.0,
        max_kappa: 0.0,
    };
    let (s0, s1) = (result.start(), result.end());
    let n = ((s1 - s0) / step).ceil() as usize;
    for k in 1..=n {
        let s = (s0 + k as f64 * step).min(s1);
        let (l, dl, ddl) = result.eval(s);
        let (lo, hi) = profile.bounds_at(s);
        let pos = l + profile.beta * dl;
        let checks = [
            (
                PathBound::Position,
                (lo + profile.half_width - pos).max(pos - hi + profile.half_width),
            ),
            (PathBound::Slope, dl.abs() - profile.dl_bound),
            (PathBound::Curvature, ddl.abs() - profile.ddl_bound),
        ];
        for (bound, excess) in checks {
            report.max_violation = report.max_violation.max(excess);
            if excess > tol {
                report.violations.push(PathViolation {
                    s,
                    bound,
                    magnitude: excess,
                });
            }
        }
        report.max_kappa = report.max_kappa.max(ddl.abs() / (1.0 + dl * dl).powf(1.5));
    }
    report
}

/// Grid on which solved paths are re-checked between constraint stations.
pub const CHECK_STEP: f64 = 0.1;
const REFINE_ROUNDS: usize = 6;

/// Profile, blocks, QP and extraction for one decision. Points of the
/// [`CHECK_STEP`] grid that violate a bound become extra stations and the
/// QP is solved again. An infeasible path QP surfaces as
/// [`Error::InfeasibleCorridor`].
pub fn optimize_path(
    decision: &DecisionPath,
    decomp: &Decomposition,
    scenario: &Scenario,
    config: &Config,
    log: &mut QpLog,
    label: &str,
) -> Result<(PathResult, PathConstraintProfile)> {
    let mut profile = build_path_profile(decision, decomp, scenario, config)?;
    let bounds = build_sl_blocks(decision, decomp, scenario.s_start(), config.path_block_len)?;
    let ego = &scenario.ego;
    let init = InitSl {
        l: ego.l,
        dl: ego.dl,
        ddl: ego.ddl,
    };
    let mut round = 0;
    loop {
        let qp = assemble_path_qp(&bounds, &profile, init, config, &scenario.corridor);
        let sol = log.solve(label, &qp)?;
        if sol.status != QpStatus::Optimal {
            return Err(Error::InfeasibleCorridor);
        }
        let x: Vec<f64> = sol.x.iter().copied().collect();
        let result = extract_path(&x, &bounds, sol.objective, config.path_sample_ds)?;
        let report = validate_path(&result, &profile, config.tol_feas, CHECK_STEP);
        round += 1;
        if report.violations.is_empty() || round > REFINE_ROUNDS {
            return Ok((result, profile));
        }
        for v in &report.violations {
            profile.insert_station(v.s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_constant_coefficients() {
        let r = extract_path(&[0.0; 12], &[(0.0, 5.0), (5.0, 10.0)], 0.0, 0.5).unwrap();
        assert_eq!(r.samples.len(), 21);
        assert!(r.samples.iter().all(|p| p.l == 0.0));
        let r = extract_path(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[(0.0, 4.0)], 0.0, 0.5).unwrap();
        assert!(r.samples.iter().all(|p| p.l == 1.0 && p.dl == 0.0));
    }

    #[test]
    fn broken_joint_is_reported() {
        let mut x = [0.0; 12];
        x[6] = 1.0;
        assert!(matches!(
            extract_path(&x, &[(0.0, 5.0), (5.0, 10.0)], 0.0, 0.5),
            Err(Error::ContinuityViolation { joint: 1, .. })
        ));
    }

    #[test]
    fn held_beyond_end() {
        let r = PathResult::constant(0.0, 10.0, 0.7);
        assert_eq!(r.eval(25.0), (0.7, 0.0, 0.0));
    }
}
