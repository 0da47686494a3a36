//! Planning-world types, scenario file ingestion and Frenet conversion.
//!
//! Everything here is immutable after [`load_scenario`] returns.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling period of resampled obstacle predictions and of the output
/// trajectory.
pub const PREDICTION_DT: f64 = 0.1;
const STEPS_PER_SECOND: f64 = 10.0;

/// Time of grid sample `k` on the 0.1 s grid. Dividing keeps multiples of
/// a second exact.
pub fn grid_time(k: usize) -> f64 {
    k as f64 / STEPS_PER_SECOND
}

/// Reference-line spacing never exceeds this after loading.
pub const MAX_REF_SPACING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefPoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLine {
    points: Vec<RefPoint>,
}

impl ReferenceLine {
    /// Builds the line from a polyline, inserting points so that no two
    /// neighbours are more than [`MAX_REF_SPACING`] apart. Headings at the
    /// points are central-difference directions, unwrapped.
    pub fn from_xy(xy: &[[f64; 2]]) -> Result<Self> {
        if xy.len() < 2 {
            return Err(Error::Validation(
                "reference_line needs at least 2 points".into(),
            ));
        }
        let mut dense: Vec<[f64; 2]> = vec![xy[0]];
        for w in xy.windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            if !(len > 1e-9) {
                return Err(Error::Validation(
                    "reference_line: s must be strictly increasing (repeated point)".into(),
                ));
            }
            let pieces = (len / MAX_REF_SPACING).ceil().max(1.0) as usize;
            for k in 1..=pieces {
                let f = k as f64 / pieces as f64;
                dense.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
            }
        }
        let n = dense.len();
        let mut points = Vec::with_capacity(n);
        let mut s = 0.0;
        let mut prev_heading: Option<f64> = None;
        for i in 0..n {
            if i > 0 {
                s += (dense[i][0] - dense[i - 1][0]).hypot(dense[i][1] - dense[i - 1][1]);
            }
            let (i0, i1) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let mut heading = (dense[i1][1] - dense[i0][1]).atan2(dense[i1][0] - dense[i0][0]);
            if let Some(p) = prev_heading {
                while heading - p > std::f64::consts::PI {
                    heading -= 2.0 * std::f64::consts::PI;
                }
                while heading - p < -std::f64::consts::PI {
                    heading += 2.0 * std::f64::consts::PI;
                }
            }
            prev_heading = Some(heading);
            points.push(RefPoint {
                x: dense[i][0],
                y: dense[i][1],
                heading,
                s,
            });
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[RefPoint] {
        &self.points
    }

    pub fn total_length(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.s)
    }

    /// Segment index `i` with `s_i <= s <= s_{i+1}`, clamped to the ends.
    fn segment(&self, s: f64) -> usize {
        let idx = self.points.partition_point(|p| p.s <= s);
        idx.clamp(1, self.points.len() - 1) - 1
    }

    /// Position and heading at station `s`. Stations outside the line are
    /// extrapolated along the end tangents.
    pub fn pose_extrapolated(&self, s: f64) -> (f64, f64, f64) {
        let last = self.points.len() - 1;
        if s <= 0.0 {
            let p = self.points[0];
            return (
                p.x + s * p.heading.cos(),
                p.y + s * p.heading.sin(),
                p.heading,
            );
        }
        if s >= self.points[last].s {
            let p = self.points[last];
            let ds = s - p.s;
            return (
                p.x + ds * p.heading.cos(),
                p.y + ds * p.heading.sin(),
                p.heading,
            );
        }
        let i = self.segment(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let f = (s - a.s) / (b.s - a.s);
        (
            a.x + f * (b.x - a.x),
            a.y + f * (b.y - a.y),
            a.heading + f * (b.heading - a.heading),
        )
    }

    /// Reference curvature (rate of heading change) at `s`; zero beyond the ends.
    pub fn curvature(&self, s: f64) -> f64 {
        if s < 0.0 || s > self.total_length() {
            return 0.0;
        }
        let i = self.segment(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        (b.heading - a.heading) / (b.s - a.s)
    }

    /// Cartesian point at lateral offset `l` from station `s`. The heading
    /// is the reference heading; see [`Self::frenet_to_cartesian_with_slope`].
    pub fn frenet_to_cartesian(&self, s: f64, l: f64) -> Result<(f64, f64, f64)> {
        self.frenet_to_cartesian_with_slope(s, l, 0.0)
    }

    /// As [`Self::frenet_to_cartesian`], with the heading corrected by
    /// `atan(dl/ds)`.
    pub fn frenet_to_cartesian_with_slope(
        &self,
        s: f64,
        l: f64,
        dl: f64,
    ) -> Result<(f64, f64, f64)> {
        let len = self.total_length();
        if !(0.0..=len).contains(&s) {
            return Err(Error::OutOfRange { s, len });
        }
        Ok(self.frenet_to_cartesian_unchecked(s, l, dl))
    }

    pub(crate) fn frenet_to_cartesian_unchecked(&self, s: f64, l: f64, dl: f64) -> (f64, f64, f64) {
        let (x, y, h) = self.pose_extrapolated(s);
        (x - l * h.sin(), y + l * h.cos(), h + dl.atan())
    }

    /// Inverse of [`Self::frenet_to_cartesian`]: the station whose normal
    /// passes through `(x, y)`, preferring the smallest offset when several do.
    pub fn cartesian_to_frenet(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let along = |s: f64| {
            let (px, py, h) = self.pose_extrapolated(s);
            (x - px) * h.cos() + (y - py) * h.sin()
        };
        let lateral = |s: f64| {
            let (px, py, h) = self.pose_extrapolated(s);
            -(x - px) * h.sin() + (y - py) * h.cos()
        };
        let mut best: Option<(f64, f64)> = None;
        for w in self.points.windows(2) {
            let (mut lo, mut hi) = (w[0].s, w[1].s);
            let (mut flo, fhi) = (along(lo), along(hi));
            if flo == 0.0 || fhi == 0.0 || (flo < 0.0) != (fhi < 0.0) {
                if fhi == 0.0 {
                    lo = hi;
                }
                if flo != 0.0 && fhi != 0.0 {
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if mid <= lo || mid >= hi {
                            break;
                        }
                        let fm = along(mid);
                        if (fm < 0.0) == (flo < 0.0) {
                            lo = mid;
                            flo = fm;
                        } else {
                            hi = mid;
                        }
                    }
                }
                let s = if flo.abs() <= along(hi).abs() { lo } else { hi };
                let l = lateral(s);
                if best.is_none_or(|(_, bl)| l.abs() < bl.abs()) {
                    best = Some((s, l));
                }
            }
        }
        best
    }

    fn mirrored(&self) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| RefPoint {
                x: p.x,
                y: -p.y,
                heading: -p.heading,
                s: p.s,
            })
            .collect();
        Self { points }
    }
}

/// Piecewise-constant function of station: `values[k]` holds on
/// `[starts[k], starts[k+1])`; the first piece extends to `-inf` and the
/// last to `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Piecewise {
    starts: Vec<f64>,
    values: Vec<f64>,
}

impl Piecewise {
    pub fn constant(v: f64) -> Self {
        Self {
            starts: vec![0.0],
            values: vec![v],
        }
    }

    pub fn from_pieces(pieces: &[(f64, f64)]) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::Validation("empty piecewise profile".into()));
        }
        if pieces.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Validation(
                "piecewise profile breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            starts: pieces.iter().map(|p| p.0).collect(),
            values: pieces.iter().map(|p| p.1).collect(),
        })
    }

    pub fn at(&self, s: f64) -> f64 {
        let idx = self.starts.partition_point(|&b| b <= s);
        self.values[idx.saturating_sub(1)]
    }

    /// Breakpoints strictly inside `(lo, hi)`.
    pub fn breaks_within(&self, lo: f64, hi: f64) -> impl Iterator<Item = f64> + '_ {
        self.starts
            .iter()
            .skip(1)
            .copied()
            .filter(move |&b| b > lo && b < hi)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            starts: self.starts.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    pub s_max: f64,
    pub l_low: Piecewise,
    pub l_high: Piecewise,
    /// Target-lane median line.
    pub lane_center: Piecewise,
    pub target_low: Piecewise,
    pub target_high: Piecewise,
    pub target_lane: String,
}

impl Corridor {
    /// Every station in `(lo, hi)` where one of the profiles changes.
    pub fn breaks_within(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .l_low
            .breaks_within(lo, hi)
            .chain(self.l_high.breaks_within(lo, hi))
            .chain(self.lane_center.breaks_within(lo, hi))
            .chain(self.target_low.breaks_within(lo, hi))
            .chain(self.target_high.breaks_within(lo, hi))
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    pub fn bounds_at(&self, s: f64) -> (f64, f64) {
        (self.l_low.at(s), self.l_high.at(s))
    }

    pub fn target_at(&self, s: f64) -> (f64, f64) {
        (self.target_low.at(s), self.target_high.at(s))
    }
}

/// Axis-aligned box in the SL plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlBox {
    pub s_min: f64,
    pub s_max: f64,
    pub l_min: f64,
    pub l_max: f64,
}

impl SlBox {
    pub fn centered(s: f64, l: f64, length: f64, width: f64) -> Self {
        Self {
            s_min: s - 0.5 * length,
            s_max: s + 0.5 * length,
            l_min: l - 0.5 * width,
            l_max: l + 0.5 * width,
        }
    }

    pub fn inflated(&self, ds: f64, dl: f64) -> Self {
        Self {
            s_min: self.s_min - ds,
            s_max: self.s_max + ds,
            l_min: self.l_min - dl,
            l_max: self.l_max + dl,
        }
    }

    pub fn length(&self) -> f64 {
        self.s_max - self.s_min
    }

    pub fn width(&self) -> f64 {
        self.l_max - self.l_min
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.s_min + self.s_max),
            0.5 * (self.l_min + self.l_max),
        )
    }

    /// Open-interior containment.
    pub fn contains_strict(&self, s: f64, l: f64) -> bool {
        s > self.s_min && s < self.s_max && l > self.l_min && l < self.l_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionSample {
    pub t: f64,
    pub s: f64,
    pub l: f64,
    /// Speed along the reference line.
    pub s_dot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObstacleMotion {
    Static(SlBox),
    /// Center trajectory resampled on the 0.1 s grid over `[0, T]`.
    Dynamic {
        length: f64,
        width: f64,
        prediction: Vec<PredictionSample>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub id: String,
    pub motion: ObstacleMotion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    Static,
    Dynamic,
}

impl Obstacle {
    pub fn kind(&self) -> ObstacleKind {
        match self.motion {
            ObstacleMotion::Static(_) => ObstacleKind::Static,
            ObstacleMotion::Dynamic { .. } => ObstacleKind::Dynamic,
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self.motion, ObstacleMotion::Static(_))
    }

    /// Footprint at grid sample `k`.
    pub fn box_at_sample(&self, k: usize) -> SlBox {
        match &self.motion {
            ObstacleMotion::Static(b) => *b,
            ObstacleMotion::Dynamic {
                length,
                width,
                prediction,
            } => {
                let p = prediction[k.min(prediction.len() - 1)];
                SlBox::centered(p.s, p.l, *length, *width)
            }
        }
    }

    /// Footprint at arbitrary time, linearly interpolated between samples
    /// and held constant outside the prediction.
    pub fn box_at(&self, t: f64) -> SlBox {
        match &self.motion {
            ObstacleMotion::Static(b) => *b,
            ObstacleMotion::Dynamic {
                length,
                width,
                prediction,
            } => {
                let (s, l) = interpolate_prediction(prediction, t);
                SlBox::centered(s, l, *length, *width)
            }
        }
    }

    /// Along-path speed at grid sample `k` (zero for static obstacles).
    pub fn s_dot_at_sample(&self, k: usize) -> f64 {
        match &self.motion {
            ObstacleMotion::Static(_) => 0.0,
            ObstacleMotion::Dynamic { prediction, .. } => {
                prediction[k.min(prediction.len() - 1)].s_dot
            }
        }
    }

    pub fn length(&self) -> f64 {
        match &self.motion {
            ObstacleMotion::Static(b) => b.length(),
            ObstacleMotion::Dynamic { length, .. } => *length,
        }
    }
}

fn interpolate_prediction(pred: &[PredictionSample], t: f64) -> (f64, f64) {
    let first = pred[0];
    let last = pred[pred.len() - 1];
    if t <= first.t {
        return (first.s, first.l);
    }
    if t >= last.t {
        return (last.s, last.l);
    }
    let i = pred.partition_point(|p| p.t <= t).clamp(1, pred.len() - 1) - 1;
    let (a, b) = (pred[i], pred[i + 1]);
    let f = (t - a.t) / (b.t - a.t);
    (a.s + f * (b.s - a.s), a.l + f * (b.l - a.l))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EgoState {
    /// Lateral start state `(l, dl/ds, d2l/ds2)`.
    pub l: f64,
    pub dl: f64,
    pub ddl: f64,
    /// Longitudinal start state `(s, v, a)`.
    pub s: f64,
    pub v: f64,
    pub a: f64,
    pub width: f64,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlannerLimits {
    pub v_max: f64,
    pub acc_min: f64,
    pub acc_max: f64,
    /// Path horizon.
    pub path_length: f64,
    /// Speed horizon.
    pub horizon: f64,
    /// Lane speed the speed profile tracks; defaults to `v_max`.
    pub v_expect: f64,
}

impl PlannerLimits {
    /// Number of 0.1 s intervals in the speed horizon.
    pub fn time_steps(&self) -> usize {
        (self.horizon * STEPS_PER_SECOND).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub reference_line: ReferenceLine,
    pub corridor: Corridor,
    pub ego: EgoState,
    pub limits: PlannerLimits,
    pub obstacles: Vec<Obstacle>,
}

impl Scenario {
    /// Station where planning starts.
    pub fn s_start(&self) -> f64 {
        self.ego.s
    }

    /// Station where the path horizon ends (clipped to the corridor).
    pub fn s_end(&self) -> f64 {
        (self.ego.s + self.limits.path_length).min(self.corridor.s_max)
    }

    pub fn static_count(&self) -> usize {
        self.obstacles.iter().filter(|o| o.is_static()).count()
    }

    pub fn dynamic_count(&self) -> usize {
        self.obstacles.len() - self.static_count()
    }

    /// The same world reflected across the reference line (`l -> -l`).
    pub fn mirrored(&self) -> Self {
        let c = &self.corridor;
        let corridor = Corridor {
            s_max: c.s_max,
            l_low: c.l_high.map(|v| -v),
            l_high: c.l_low.map(|v| -v),
            lane_center: c.lane_center.map(|v| -v),
            target_low: c.target_high.map(|v| -v),
            target_high: c.target_low.map(|v| -v),
            target_lane: c.target_lane.clone(),
        };
        let obstacles = self
            .obstacles
            .iter()
            .map(|o| Obstacle {
                id: o.id.clone(),
                motion: match &o.motion {
                    ObstacleMotion::Static(b) => ObstacleMotion::Static(SlBox {
                        s_min: b.s_min,
                        s_max: b.s_max,
                        l_min: -b.l_max,
                        l_max: -b.l_min,
                    }),
                    ObstacleMotion::Dynamic {
                        length,
                        width,
                        prediction,
                    } => ObstacleMotion::Dynamic {
                        length: *length,
                        width: *width,
                        prediction: prediction
                            .iter()
                            .map(|p| PredictionSample { l: -p.l, ..*p })
                            .collect(),
                    },
                },
            })
            .collect();
        Self {
            reference_line: self.reference_line.mirrored(),
            corridor,
            ego: EgoState {
                l: -self.ego.l,
                dl: -self.ego.dl,
                ddl: -self.ego.ddl,
                ..self.ego
            },
            limits: self.limits,
            obstacles,
        }
    }
}

// ---- file schema -------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawProfile {
    Constant(f64),
    Pieces(Vec<[f64; 2]>),
}

impl RawProfile {
    fn build(&self, name: &str) -> Result<Piecewise> {
        match self {
            RawProfile::Constant(v) => Ok(Piecewise::constant(*v)),
            RawProfile::Pieces(p) => {
                let pieces: Vec<(f64, f64)> = p.iter().map(|x| (x[0], x[1])).collect();
                Piecewise::from_pieces(&pieces)
                    .map_err(|e| Error::Validation(format!("corridor.{name}: {e}")))
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawInterval {
    Constant([f64; 2]),
    Pieces(Vec<[f64; 3]>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCorridor {
    s_max: f64,
    l_low: RawProfile,
    l_high: RawProfile,
    lane_center: RawProfile,
    target_lane_interval: RawInterval,
    #[serde(default)]
    target_lane: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEgo {
    l: f64,
    #[serde(default)]
    dl: f64,
    #[serde(default)]
    ddl: f64,
    #[serde(default)]
    s: f64,
    v: f64,
    #[serde(default)]
    a: f64,
    width: f64,
    length: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLimits {
    v_max: f64,
    acc_min: f64,
    acc_max: f64,
    #[serde(rename = "S", default = "default_path_length")]
    path_length: f64,
    #[serde(rename = "T", default = "default_horizon")]
    horizon: f64,
    #[serde(default)]
    v_expect: Option<f64>,
}

fn default_path_length() -> f64 {
    100.0
}

fn default_horizon() -> f64 {
    7.0
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawId {
    Num(i64),
    Str(String),
}

impl RawId {
    fn into_string(self) -> String {
        match self {
            RawId::Num(n) => n.to_string(),
            RawId::Str(s) => s,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawObstacle {
    Static {
        id: RawId,
        #[serde(rename = "box")]
        sl_box: [f64; 4],
    },
    Dynamic {
        id: RawId,
        size: [f64; 2],
        prediction: Vec<[f64; 3]>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    reference_line: Vec<[f64; 2]>,
    corridor: RawCorridor,
    ego: RawEgo,
    limits: RawLimits,
    #[serde(default)]
    obstacles: Vec<RawObstacle>,
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_scenario(&text)
}

/// Parses and validates scenario JSON.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let raw: RawScenario = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    build_scenario(raw)
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Validation(format!("{name} must be finite")))
    }
}

fn build_scenario(raw: RawScenario) -> Result<Scenario> {
    let reference_line = ReferenceLine::from_xy(&raw.reference_line)?;

    let rc = raw.corridor;
    if !(rc.s_max > 0.0) {
        return Err(Error::Validation("corridor.s_max must be positive".into()));
    }
    let (target_low, target_high) = match &rc.target_lane_interval {
        RawInterval::Constant([a, b]) => (Piecewise::constant(*a), Piecewise::constant(*b)),
        RawInterval::Pieces(p) => {
            let lo: Vec<(f64, f64)> = p.iter().map(|x| (x[0], x[1])).collect();
            let hi: Vec<(f64, f64)> = p.iter().map(|x| (x[0], x[2])).collect();
            (Piecewise::from_pieces(&lo)?, Piecewise::from_pieces(&hi)?)
        }
    };
    let corridor = Corridor {
        s_max: rc.s_max,
        l_low: rc.l_low.build("l_low")?,
        l_high: rc.l_high.build("l_high")?,
        lane_center: rc.lane_center.build("lane_center")?,
        target_low,
        target_high,
        target_lane: rc.target_lane.unwrap_or_else(|| "target".into()),
    };
    let mut probes = vec![0.0];
    probes.extend(corridor.breaks_within(0.0, corridor.s_max));
    for &s in &probes {
        let (lo, hi) = corridor.bounds_at(s);
        if !(lo < hi) {
            return Err(Error::Validation(format!(
                "corridor: l_low < l_high violated at s={s}"
            )));
        }
        let c = corridor.lane_center.at(s);
        if !(lo <= c && c <= hi) {
            return Err(Error::Validation(format!(
                "corridor: lane_center within [l_low, l_high] violated at s={s}"
            )));
        }
        let (tl, th) = corridor.target_at(s);
        if !(tl < th) {
            return Err(Error::Validation(format!(
                "corridor: target_lane_interval must have positive width at s={s}"
            )));
        }
    }

    let re = raw.ego;
    let ego = EgoState {
        l: finite("ego.l", re.l)?,
        dl: finite("ego.dl", re.dl)?,
        ddl: finite("ego.ddl", re.ddl)?,
        s: finite("ego.s", re.s)?,
        v: finite("ego.v", re.v)?,
        a: finite("ego.a", re.a)?,
        width: re.width,
        length: re.length,
    };
    if !(ego.width > 0.0 && ego.length > 0.0) {
        return Err(Error::Validation("ego: width, length > 0 violated".into()));
    }
    if ego.v < 0.0 {
        return Err(Error::Validation("ego: velocity >= 0 violated".into()));
    }
    if !(ego.s >= 0.0 && ego.s < corridor.s_max) {
        return Err(Error::Validation("ego: s must lie in [0, s_max)".into()));
    }

    let rl = raw.limits;
    let limits = PlannerLimits {
        v_max: rl.v_max,
        acc_min: rl.acc_min,
        acc_max: rl.acc_max,
        path_length: rl.path_length,
        horizon: rl.horizon,
        v_expect: rl.v_expect.unwrap_or(rl.v_max),
    };
    if !(limits.acc_min < 0.0 && 0.0 < limits.acc_max) {
        return Err(Error::Validation(
            "limits: acc_min < 0 < acc_max violated".into(),
        ));
    }
    if !(limits.v_max > 0.0 && limits.path_length > 0.0 && limits.horizon > 0.0) {
        return Err(Error::Validation("limits: v_max, S, T > 0 violated".into()));
    }
    if !(limits.v_expect >= 0.0) {
        return Err(Error::Validation(
            "limits: v_expect must be non-negative".into(),
        ));
    }
    let steps = limits.time_steps();
    if (grid_time(steps) - limits.horizon).abs() > 1e-9 {
        return Err(Error::Validation(
            "limits: T must be a multiple of 0.1 s".into(),
        ));
    }

    let mut obstacles = Vec::with_capacity(raw.obstacles.len());
    for ro in raw.obstacles {
        let ob = match ro {
            RawObstacle::Static { id, sl_box } => {
                let id = id.into_string();
                let [s0, s1, l0, l1] = sl_box;
                if !(s0 < s1 && l0 < l1) {
                    return Err(Error::Validation(format!(
                        "obstacle {id}: box must have positive extent (s_min < s_max, l_min < l_max)"
                    )));
                }
                Obstacle {
                    id,
                    motion: ObstacleMotion::Static(SlBox {
                        s_min: s0,
                        s_max: s1,
                        l_min: l0,
                        l_max: l1,
                    }),
                }
            }
            RawObstacle::Dynamic {
                id,
                size,
                prediction,
            } => {
                let id = id.into_string();
                let [length, width] = size;
                if !(length > 0.0 && width > 0.0) {
                    return Err(Error::Validation(format!(
                        "obstacle {id}: size must be positive"
                    )));
                }
                let prediction = resample_prediction(&id, &prediction, steps)?;
                Obstacle {
                    id,
                    motion: ObstacleMotion::Dynamic {
                        length,
                        width,
                        prediction,
                    },
                }
            }
        };
        if obstacles.iter().any(|o: &Obstacle| o.id == ob.id) {
            return Err(Error::Validation(format!(
                "duplicate obstacle id {}",
                ob.id
            )));
        }
        obstacles.push(ob);
    }

    Ok(Scenario {
        reference_line,
        corridor,
        ego,
        limits,
        obstacles,
    })
}

/// Linear interpolation of `[t, s, l]` knots onto the 0.1 s grid, with the
/// along-path speed from the slope of the interpolant.
fn resample_prediction(
    id: &str,
    knots: &[[f64; 3]],
    steps: usize,
) -> Result<Vec<PredictionSample>> {
    if knots.len() < 2 {
        return Err(Error::Validation(format!(
            "obstacle {id}: prediction needs at least 2 samples"
        )));
    }
    if knots.windows(2).any(|w| !(w[1][0] > w[0][0])) {
        return Err(Error::Validation(format!(
            "obstacle {id}: prediction times must be strictly increasing"
        )));
    }
    let horizon = grid_time(steps);
    if knots[0][0] > 1e-9 || knots[knots.len() - 1][0] < horizon - 1e-9 {
        return Err(Error::Validation(format!(
            "obstacle {id}: prediction must cover [0, {horizon}]"
        )));
    }
    let raw: Vec<PredictionSample> = knots
        .iter()
        .map(|k| PredictionSample {
            t: k[0],
            s: k[1],
            l: k[2],
            s_dot: 0.0,
        })
        .collect();
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = grid_time(k);
        let (s, l) = interpolate_prediction(&raw, t);
        // slope of the knot segment containing t (the one starting at t at a knot)
        let i = raw.partition_point(|p| p.t <= t).clamp(1, raw.len() - 1) - 1;
        let s_dot = (raw[i + 1].s - raw[i].s) / (raw[i + 1].t - raw[i].t);
        out.push(PredictionSample { t, s, l, s_dot });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    pub(crate) const EMPTY_ROAD: &str = r#"{
        "reference_line": [[0, 0], [200, 0]],
        "corridor": {"s_max": 150, "l_low": -1.75, "l_high": 5.25, "lane_center": 0.0,
                     "target_lane_interval": [-1.75, 1.75]},
        "ego": {"l": 0, "dl": 0, "ddl": 0, "s": 0, "v": 10, "a": 0, "width": 2.0, "length": 4.8},
        "limits": {"v_max": 10, "acc_min": -4, "acc_max": 2, "S": 100, "T": 7},
        "obstacles": []
    }"#;

    fn straight() -> ReferenceLine {
        ReferenceLine::from_xy(&[[0.0, 0.0], [100.0, 0.0]]).unwrap()
    }

    #[test]
    fn empty_road_loads() {
        let sc = parse_scenario(EMPTY_ROAD).unwrap();
        assert_eq!(sc.obstacles.len(), 0);
        assert_eq!(sc.corridor.bounds_at(50.0), (-1.75, 5.25));
        assert!(sc.reference_line.points().windows(2).all(|w| {
            let d = w[1].s - w[0].s;
            d > 0.0 && d <= MAX_REF_SPACING + 1e-12
        }));
        assert_eq!(sc.reference_line.points()[0].s, 0.0);
    }

    #[test]
    fn inverted_box_is_rejected() {
        let text = EMPTY_ROAD.replace(
            r#""obstacles": []"#,
            r#""obstacles": [{"id": 1, "box": [30, 20, 0, 1]}]"#,
        );
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(m) if m.contains("positive extent")));
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(parse_scenario("{not json"), Err(Error::Parse(_))));
        assert!(matches!(
            parse_scenario(r#"{"reference_line": []}"#),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn bad_limits_are_rejected() {
        let text = EMPTY_ROAD.replace(r#""acc_min": -4"#, r#""acc_min": 1"#);
        assert!(matches!(parse_scenario(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn prediction_must_cover_horizon() {
        let text = EMPTY_ROAD.replace(
            r#""obstacles": []"#,
            r#""obstacles": [{"id": "a", "size": [4, 2], "prediction": [[0, 10, 0], [5, 20, 0]]}]"#,
        );
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(m) if m.contains("cover")));
    }

    #[test]
    fn prediction_is_resampled_on_grid() {
        let text = EMPTY_ROAD.replace(
            r#""obstacles": []"#,
            r#""obstacles": [{"id": "a", "size": [4, 2], "prediction": [[0, 10, 0.5], [3, 25, 0.5], [7, 25, 1.5]]}]"#,
        );
        let sc = parse_scenario(&text).unwrap();
        let ObstacleMotion::Dynamic { prediction, .. } = &sc.obstacles[0].motion else {
            panic!("expected dynamic obstacle");
        };
        assert_eq!(prediction.len(), 71);
        assert!((prediction[0].s - 10.0).abs() < 1e-9);
        assert!((prediction[70].s - 25.0).abs() < 1e-9);
        assert!((prediction[70].l - 1.5).abs() < 1e-9);
        assert!((prediction[30].s - 25.0).abs() < 1e-9);
        assert!((prediction[10].s_dot - 5.0).abs() < 1e-12);
        assert_eq!(prediction[40].s_dot, 0.0);
    }

    #[test]
    fn straight_line_identity_and_offset() {
        let r = straight();
        let (x, y, h) = r.frenet_to_cartesian(10.0, 0.0).unwrap();
        assert!((x - 10.0).abs() < 1e-12 && y.abs() < 1e-12 && h.abs() < 1e-12);
        let (x, y, h) = r.frenet_to_cartesian(10.0, 2.0).unwrap();
        assert!((x - 10.0).abs() < 1e-12 && (y - 2.0).abs() < 1e-12 && h.abs() < 1e-12);
        let (_, _, h) = r.frenet_to_cartesian_with_slope(10.0, 2.0, 0.1).unwrap();
        assert!((h - 0.1f64.atan()).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_station() {
        let r = straight();
        assert!(matches!(
            r.frenet_to_cartesian(100.5, 0.0),
            Err(Error::OutOfRange { .. })
        ));
        assert!(r.frenet_to_cartesian(-0.1, 0.0).is_err());
    }

    #[test]
    fn quarter_circle_matches_closed_form() {
        // counter-clockwise arc of radius 50 centred on (0, 50), starting at the origin
        // sampled past 90 degrees so the test point is interior to the line
        let radius = 50.0;
        let n = 500;
        let xy: Vec<[f64; 2]> = (0..=n)
            .map(|k| {
                let th = 0.6 * PI * k as f64 / n as f64;
                [radius * th.sin(), radius * (1.0 - th.cos())]
            })
            .collect();
        let r = ReferenceLine::from_xy(&xy).unwrap();
        let s = PI * 25.0;
        let (x, y, h) = r.frenet_to_cartesian(s, 0.0).unwrap();
        // closed form at 90 degrees: (R, R), heading pi/2
        // chord spacing ~0.19 m bounds the arc-length error by ~1e-5 m
        assert!((x - radius).abs() < 1e-3, "x = {x}");
        assert!((y - radius).abs() < 1e-3, "y = {y}");
        assert!((h - 0.5 * PI).abs() < 1e-3, "heading = {h}");
        // a left offset of 2 m points towards the centre
        let (x, y, _) = r.frenet_to_cartesian(s, 2.0).unwrap();
        assert!((x - (radius - 2.0)).abs() < 1e-3 && (y - radius).abs() < 1e-3);
    }

    #[test]
    fn mirrored_scenario_negates_lateral_quantities() {
        let text = EMPTY_ROAD.replace(
            r#""obstacles": []"#,
            r#""obstacles": [{"id": 1, "box": [30, 35, 0.5, 2.5]}]"#,
        );
        let sc = parse_scenario(&text).unwrap();
        let m = sc.mirrored();
        assert_eq!(m.corridor.bounds_at(10.0), (-5.25, 1.75));
        let ObstacleMotion::Static(b) = m.obstacles[0].motion else {
            panic!()
        };
        assert_eq!((b.l_min, b.l_max), (-2.5, -0.5));
        assert_eq!(m.mirrored(), sc);
    }

    mod roundtrip {
        use super::*;
        use proptest::prelude::*;

        fn arc() -> ReferenceLine {
            let xy: Vec<[f64; 2]> = (0..=120)
                .map(|k| {
                    let th = k as f64 / 80.0;
                    [80.0 * th.sin(), 80.0 * (1.0 - th.cos())]
                })
                .collect();
            ReferenceLine::from_xy(&xy).unwrap()
        }

        proptest! {
            #[test]
            fn frenet_cartesian_round_trip(s in 1.0f64..115.0, l in -3.5f64..3.5) {
                let r = arc();
                let (x, y, _) = r.frenet_to_cartesian(s, l).unwrap();
                let (s2, l2) = r.cartesian_to_frenet(x, y).unwrap();
                prop_assert!((s2 - s).abs() < 1e-6, "s {} -> {}", s, s2);
                prop_assert!((l2 - l).abs() < 1e-6, "l {} -> {}", l, l2);
            }
        }
    }
}
