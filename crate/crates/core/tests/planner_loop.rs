mod common;

use common::{evasive, fixture, fixture_names};
use triplan_core::config::Config;
use triplan_core::path::PathResult;
use triplan_core::planner::{
    check_convergence, compute_meeting_windows, first_collision, fuse_trajectory, iterate_plan,
    IterationState,
};
use triplan_core::report::Report;
use triplan_core::scenario::parse_scenario;
use triplan_core::speed::{project_st, InitSt, SpeedResult, Verdict};

#[test]
fn crossing_seed_window_matches_closed_form() {
    let sc = fixture("crossing");
    let cfg = Config::default();
    let path = PathResult::constant(0.0, 100.0, 0.0);
    let polygons = project_st(&path, &sc, &cfg);
    assert_eq!(polygons.len(), 1);

    // l(t) = l0 + r t crosses |l| < 0.5 (2 + 1) + buffer
    let (l0, l1) = (-7.272727272727273, 13.090909090909092);
    let r = (l1 - l0) / 7.0;
    let reach = 1.5 + cfg.lateral_buffer;
    let (ta, tb) = ((-reach - l0) / r, (reach - l0) / r);
    // first and last 0.1 s samples strictly inside
    let t1 = (ta * 10.0).ceil() / 10.0;
    let t2 = (tb * 10.0).floor() / 10.0;
    assert!((t1 - 2.0).abs() < 1e-9 && (t2 - 3.0).abs() < 1e-9);

    let seed = SpeedResult::speed_limit(InitSt::from_scenario(&sc), &sc.limits);
    assert!((seed.eval(2.0).0 - 40.0).abs() < 1e-12);
    let w = compute_meeting_windows(&seed, &polygons, &cfg);
    assert_eq!(w.len(), 1);
    assert!((w[0].t1 - t1).abs() < 1e-6, "{:?}", w[0]);
    assert!((w[0].t2 - t2).abs() < 1e-6, "{:?}", w[0]);
}

#[test]
fn yielding_to_the_crossing_clears_the_window() {
    let sc = fixture("crossing");
    let o = iterate_plan(&sc, &Config::default()).unwrap();
    assert!(o.converged);
    assert!(o.iters() <= 5);
    assert_eq!(o.verdicts.len(), 1);
    assert_eq!(o.verdicts[0].verdict, Verdict::Yield);
    let last = &o.iterations[o.selected];
    assert!(last.collision_free);
    assert!(last.windows.is_empty(), "{:?}", last.windows);
    // ego reaches the crossing station only after the ped has left
    let reach = o
        .trajectory
        .points
        .iter()
        .find(|p| p.s >= 40.0)
        .map(|p| p.t)
        .unwrap();
    assert!(reach > 3.0, "reached s = 40 at {reach}");
}

#[test]
fn empty_road_converges_in_one_iteration() {
    let o = iterate_plan(&fixture("empty-road"), &Config::default()).unwrap();
    assert_eq!(o.iters(), 1);
    assert!(o.converged);
    let it = &o.iterations[0];
    assert!(it.windows.is_empty());
    assert!(it.delta_path < 1e-12);
}

#[test]
fn blocked_corridor_stops_short() {
    let sc = fixture("blocked");
    let cfg = Config::default();
    let o = iterate_plan(&sc, &cfg).unwrap();
    let end = o.trajectory.points.last().unwrap();
    assert!(end.v.abs() < 1e-3, "terminal v {}", end.v);
    let front = end.s + 0.5 * sc.ego.length;
    assert!(front <= 20.0 - cfg.yield_margin + 1e-6, "front at {front}");
    assert!(o
        .trajectory
        .points
        .iter()
        .all(|p| p.s + 0.5 * sc.ego.length < 20.0));
}

fn state(path: PathResult, speed: SpeedResult, collision_free: bool) -> IterationState {
    IterationState {
        index: 1,
        decision: String::new(),
        windows: Vec::new(),
        active: Vec::new(),
        delta_path: 0.0,
        delta_speed: 0.0,
        collision_free,
        collision: None,
        path_objective: 0.0,
        speed_objective: 0.0,
        relaxed_times: 0,
        qp_solves: 0,
        micros: 0,
        path,
        speed,
    }
}

#[test]
fn collision_gates_convergence() {
    // parked box the constant-speed ego reaches at t = 2.5
    let sc = parse_scenario(
        r#"{
        "reference_line": [[0, 0], [200, 0]],
        "corridor": {"s_max": 150, "l_low": -5.25, "l_high": 5.25, "lane_center": 0.0, "target_lane_interval": [-1.75, 1.75]},
        "ego": {"l": 0, "s": 0, "v": 10, "width": 2.0, "length": 4.8},
        "limits": {"v_max": 10, "acc_min": -4, "acc_max": 2, "S": 100, "T": 7},
        "obstacles": [{"id": "box", "box": [27, 30, -1, 1]}]
    }"#,
    )
    .unwrap();
    let path = PathResult::constant(0.0, 100.0, 0.0);
    let speed = SpeedResult::speed_limit(InitSt::from_scenario(&sc), &sc.limits);
    let traj = fuse_trajectory(&path, &speed, &sc.reference_line, sc.limits.time_steps());
    let hit = first_collision(&traj, &sc).expect("clips the box");
    assert!((hit.t - 2.5).abs() < 1e-9, "{hit:?}");

    let s = state(path, speed, false);
    assert!(!check_convergence(&s, &s, 0.05, 0.1));
    let free = IterationState {
        collision_free: true,
        ..s.clone()
    };
    assert!(check_convergence(&free, &s, 0.05, 0.1));
}

#[test]
fn output_composes_path_and_speed() {
    for cfg in [Config::default(), evasive()] {
        for name in fixture_names() {
            let o = iterate_plan(&fixture(&name), &cfg).unwrap();
            for p in &o.trajectory.points {
                let (s, v, _) = o.speed.eval(p.t);
                assert!((p.s - s).abs() < 1e-9, "{name} t={}", p.t);
                assert!((p.l - o.path.eval(s).0).abs() < 1e-6, "{name} t={}", p.t);
                assert!((p.v - v.max(0.0)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn trajectory_grid_and_log_shape() {
    for name in fixture_names() {
        let sc = fixture(&name);
        let o = iterate_plan(&sc, &Config::default()).unwrap();
        let pts = &o.trajectory.points;
        assert_eq!(pts.len(), 71, "{name}");
        for (k, p) in pts.iter().enumerate() {
            assert!((p.t - 0.1 * k as f64).abs() < 1e-9);
            assert!(p.v >= 0.0);
        }
        for w in o.iterations.windows(2) {
            assert_eq!(w[1].index, w[0].index + 1, "{name}");
        }
        for it in &o.iterations {
            assert!(it.delta_path >= 0.0 && it.delta_speed >= 0.0);
        }
        // weak stability over the tail of a converged run
        if o.converged && o.iterations.len() >= 3 {
            let n = o.iterations.len();
            let (a, b) = (&o.iterations[n - 2], &o.iterations[n - 1]);
            assert!(b.delta_speed <= a.delta_speed + 1e-9, "{name}");
            assert!(b.delta_path <= a.delta_path + 1e-9, "{name}");
        }
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    for name in ["five-dynamic", "staggered", "crossing"] {
        let sc = fixture(name);
        let cfg = Config::default();
        let run = || {
            let o = iterate_plan(&sc, &cfg).unwrap();
            let mut r = Report::from_outcome(&o, &cfg, 0.0);
            r.strip_timing();
            r.to_json()
        };
        assert_eq!(run(), run(), "{name}");
    }
}

#[test]
fn mirrored_scenes_mirror_the_path() {
    for cfg in [Config::default(), evasive()] {
        for name in ["staggered", "random-04", "random-11", "five-dynamic"] {
            let sc = fixture(name);
            let a = iterate_plan(&sc, &cfg).unwrap();
            let b = iterate_plan(&sc.mirrored(), &cfg).unwrap();
            for (p, q) in a.trajectory.points.iter().zip(&b.trajectory.points) {
                assert!((p.l + q.l).abs() < 1e-9, "{name} t={} {} {}", p.t, p.l, q.l);
                assert_eq!(p.s, q.s, "{name}");
                assert_eq!(p.v, q.v, "{name}");
            }
        }
    }
}

#[test]
fn evasive_preset_passes_the_staggered_boxes() {
    let o = iterate_plan(&fixture("staggered"), &evasive()).unwrap();
    let end = o.trajectory.points.last().unwrap();
    assert!(end.s > 64.0, "stopped at {}", end.s);
    assert!(o.decision.decision.zones.len() == 5);
}
