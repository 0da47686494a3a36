mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triplan_core::config::Config;
use triplan_core::decomposition::{
    build_decision_tree, decompose_free_space, geometric_costs, DecisionPath, Decomposition,
};
use triplan_core::path::{
    assemble_path_qp, build_path_profile, build_sl_blocks, optimize_path, validate_path, InitSl,
};
use triplan_core::qp::{solve_qp, QpLog, QpSettings, QpStatus};
use triplan_core::scenario::{parse_scenario, Scenario};

fn scene(corridor: &str, obstacles: &str) -> Scenario {
    parse_scenario(&format!(
        r#"{{
        "reference_line": [[0, 0], [200, 0]],
        "corridor": {corridor},
        "ego": {{"l": 0, "s": 0, "v": 10, "width": 2.0, "length": 4.8}},
        "limits": {{"v_max": 20, "acc_min": -4, "acc_max": 2, "S": 100, "T": 7}},
        "obstacles": [{obstacles}]
    }}"#
    ))
    .unwrap()
}

const THREE_LANES: &str = r#"{"s_max": 150, "l_low": -5.25, "l_high": 5.25, "lane_center": 0.0,
    "target_lane_interval": [-1.75, 1.75]}"#;
const LANE_CHANGE: &str = r#"{"s_max": 150, "l_low": -1.75, "l_high": 5.25, "lane_center": [[0, 0], [30, 3.5]],
    "target_lane_interval": [1.75, 5.25]}"#;

fn staggered() -> Scenario {
    scene(
        THREE_LANES,
        r#"{"id": "a", "box": [30, 34, -1, 1]}, {"id": "b", "box": [60, 64, 0, 1.5]}"#,
    )
}

fn decisions(sc: &Scenario) -> (Decomposition, Vec<DecisionPath>) {
    let cfg = Config::default();
    let mut d = decompose_free_space(sc, &cfg).unwrap();
    let (_, mut p) = build_decision_tree(&d, cfg.max_decisions);
    geometric_costs(&mut d, &mut p, sc, &cfg);
    (d, p)
}

fn horner(c: &[f64], x: f64, deriv: usize) -> f64 {
    // differentiate the coefficient list, then Horner
    let mut c = c.to_vec();
    for _ in 0..deriv {
        c = c
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, a)| k as f64 * a)
            .collect();
    }
    c.iter().rev().fold(0.0, |acc, a| acc * x + a)
}

#[test]
fn block_grid_and_forced_cuts() {
    let sc = scene(THREE_LANES, "");
    let (d, p) = decisions(&sc);
    let b = build_sl_blocks(&p[0], &d, 0.0, 15.0).unwrap();
    assert_eq!(b.len(), 7);
    assert_eq!(b[6], (90.0, 100.0));

    // zone transition at 37.4 is a cut
    let sc = scene(THREE_LANES, r#"{"id": 1, "box": [40, 44, -1, 1]}"#);
    let (d, p) = decisions(&sc);
    let long = p.iter().find(|p| p.zones.len() == 3).unwrap();
    let b = build_sl_blocks(long, &d, 0.0, 15.0).unwrap();
    assert!(b.iter().any(|&(a, _)| (a - 37.4).abs() < 1e-12));
    assert!(b.iter().all(|&(a, c)| c - a >= 2.0));
    for w in b.windows(2) {
        assert_eq!(w[0].1, w[1].0);
    }
}

#[test]
fn staggered_blocks_have_constant_bounds() {
    let sc = staggered();
    let (d, paths) = decisions(&sc);
    let cfg = Config::default();
    for p in paths.iter().filter(|p| p.zones.len() == 5) {
        let b = build_sl_blocks(p, &d, 0.0, cfg.path_block_len).unwrap();
        for &(a, c) in &b {
            // recompute from zone rectangles: exactly one zone holds the interior
            let holding: Vec<_> = p
                .zones
                .iter()
                .map(|&z| d.zone(z))
                .filter(|z| z.s_interval[0] <= a + 1e-9 && z.s_interval[1] >= c - 1e-9)
                .collect();
            assert_eq!(holding.len(), 1, "block [{a}, {c}] of {}", p.label());
        }
    }
}

#[test]
fn empty_road_path_is_zero() {
    let sc = scene(THREE_LANES, "");
    let (d, p) = decisions(&sc);
    let cfg = Config {
        w_obs: 0.0,
        ..Config::default()
    };
    let mut log = QpLog::new(cfg.qp_settings(), false);
    let (r, _) = optimize_path(&p[0], &d, &sc, &cfg, &mut log, "path").unwrap();
    assert!(r
        .blocks
        .iter()
        .all(|b| b.coeffs.iter().all(|c| c.abs() < 1e-9)));
    assert!(r.objective.abs() < 1e-9);
}

#[test]
fn two_blocks_have_six_equalities() {
    let sc = scene(THREE_LANES, "");
    let (d, p) = decisions(&sc);
    let cfg = Config::default();
    let profile = build_path_profile(&p[0], &d, &sc, &cfg).unwrap();
    let qp = assemble_path_qp(
        &[(0.0, 50.0), (50.0, 100.0)],
        &profile,
        InitSl {
            l: 0.0,
            dl: 0.0,
            ddl: 0.0,
        },
        &cfg,
        &sc.corridor,
    );
    assert_eq!(qp.n_vars(), 12);
    let eq = (0..qp.n_constraints())
        .filter(|&i| qp.lba[i] == qp.uba[i])
        .count();
    assert_eq!(eq, 6);
}

#[test]
fn single_block_with_binding_bound_matches_enumeration() {
    // the lane centre sits far left, so the curvature bound binds
    let sc = scene(
        r#"{"s_max": 150, "l_low": -1.75, "l_high": 1.75, "lane_center": 1.5,
            "target_lane_interval": [-1.75, 1.75]}"#,
        "",
    );
    let (d, p) = decisions(&sc);
    let cfg = Config::default();
    let mut profile = build_path_profile(&p[0], &d, &sc, &cfg).unwrap();
    profile.stations = vec![0.0, 1.0, 2.0];
    profile.l_min.truncate(3);
    profile.l_max = vec![1.75, 1.5, 1.5];
    let init = InitSl {
        l: 0.0,
        dl: 0.25,
        ddl: 0.0,
    };
    let qp = assemble_path_qp(&[(0.0, 2.0)], &profile, init, &cfg, &sc.corridor);
    let sol = solve_qp(&qp, &QpSettings::default()).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    let (xo, fo) = common::active_set_oracle(&qp).unwrap();
    assert!((sol.x.clone() - xo).amax() < 1e-6);
    assert!((sol.objective - fo).abs() < 1e-6 * fo.abs().max(1.0));
    assert!(
        sol.lambda.iter().skip(3).any(|v| v.abs() > 1e-9),
        "a bound binds"
    );
}

#[test]
fn gram_assembly_matches_quadrature() {
    let sc = scene(LANE_CHANGE, "");
    let (d, p) = decisions(&sc);
    let cfg = Config::default();
    let profile = build_path_profile(&p[0], &d, &sc, &cfg).unwrap();
    let bounds = build_sl_blocks(&p[0], &d, 0.0, cfg.path_block_len).unwrap();
    let qp = assemble_path_qp(
        &bounds,
        &profile,
        InitSl {
            l: 0.0,
            dl: 0.0,
            ddl: 0.0,
        },
        &cfg,
        &sc.corridor,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let x: Vec<f64> = (0..qp.n_vars())
            .map(|k| rng.gen_range(-1.0..1.0) * 0.3f64.powi((k % 6) as i32))
            .collect();
        let xv = nalgebra::DVector::from_vec(x.clone());
        let mut quad = 0.0;
        let mut constant = 0.0;
        for (i, &(a, b)) in bounds.iter().enumerate() {
            let c = &x[6 * i..6 * i + 6];
            // split at the lane-centre step so Simpson sees smooth integrands
            let mut pts = vec![a, b];
            if a < 30.0 && b > 30.0 {
                pts.insert(1, 30.0);
            }
            for w in pts.windows(2) {
                let target = if w[0] < 30.0 { 0.0 } else { 3.5 };
                let mid = 0.5 * (-1.75 + 5.25);
                quad += common::simpson(
                    |s| {
                        let t = s - a;
                        let l = horner(c, t, 0);
                        cfg.path_w0 * (l - target).powi(2)
                            + cfg.path_w1 * horner(c, t, 1).powi(2)
                            + cfg.path_w2 * horner(c, t, 2).powi(2)
                            + cfg.path_w3 * horner(c, t, 3).powi(2)
                            + cfg.w_obs * (l - mid).powi(2)
                    },
                    w[0],
                    w[1],
                    1000,
                );
                constant += (w[1] - w[0]) * (cfg.path_w0 * target * target + cfg.w_obs * mid * mid);
            }
        }
        let assembled = qp.objective(&xv) + constant;
        assert!(
            (assembled - quad).abs() < 1e-8 * quad.max(1.0),
            "{assembled} vs {quad}"
        );
    }
}

#[test]
fn lane_change_path_samples_match_polynomials() {
    let sc = scene(LANE_CHANGE, "");
    let (d, p) = decisions(&sc);
    let cfg = Config::default();
    let mut log = QpLog::new(cfg.qp_settings(), false);
    let longest = p
        .iter()
        .max_by(|a, b| a.longitudinal.total_cmp(&b.longitudinal))
        .unwrap();
    let (r, profile) = optimize_path(longest, &d, &sc, &cfg, &mut log, "path").unwrap();
    assert!(r.samples.last().unwrap().l > 3.0, "reaches the left lane");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let s: f64 = rng.gen_range(0.0..100.0);
        let b = r
            .blocks
            .iter()
            .find(|b| s >= b.s_interval[0] && s <= b.s_interval[1])
            .unwrap();
        let (l, dl, ddl) = r.eval(s);
        let t = s - b.s_interval[0];
        assert!((l - horner(&b.coeffs, t, 0)).abs() < 1e-9);
        assert!((dl - horner(&b.coeffs, t, 1)).abs() < 1e-9);
        assert!((ddl - horner(&b.coeffs, t, 2)).abs() < 1e-9);
    }
    let report = validate_path(&r, &profile, 1e-6, 0.1);
    assert!(
        report.max_violation <= 1e-4,
        "{:?}",
        report.violations.first()
    );
}

#[test]
fn binding_path_grazes_within_tolerance() {
    let sc = staggered();
    let (d, paths) = decisions(&sc);
    let cfg = Config::default();
    let mut log = QpLog::new(cfg.qp_settings(), false);
    let mut checked = 0;
    for p in paths.iter().filter(|p| p.zones.len() == 5) {
        let Ok((r, profile)) = optimize_path(p, &d, &sc, &cfg, &mut log, "path") else {
            continue;
        };
        let fine = validate_path(&r, &profile, 1e-6, 0.1);
        let worst = fine
            .violations
            .iter()
            .max_by(|a, b| a.magnitude.total_cmp(&b.magnitude));
        assert!(
            fine.max_violation <= 1e-6,
            "{} between stations: {:?}",
            p.label(),
            worst
        );
        checked += 1;
    }
    assert!(checked >= 1);
}

#[test]
fn mirrored_scene_negates_path() {
    let sc = staggered();
    let m = sc.mirrored();
    let (d1, p1) = decisions(&sc);
    let (d2, p2) = decisions(&m);
    let cfg = Config::default();
    let mut log = QpLog::new(cfg.qp_settings(), false);
    let a = p1
        .iter()
        .find(|p| p.label() == "Zone_0_0>Zone_1_0>Zone_2_0>Zone_3_0")
        .unwrap();
    // cells are numbered from low l, so the mirror image swaps them
    let b = p2
        .iter()
        .find(|p| p.label() == "Zone_0_0>Zone_1_1>Zone_2_0>Zone_3_1")
        .unwrap();
    let (ra, _) = optimize_path(a, &d1, &sc, &cfg, &mut log, "a").unwrap();
    let (rb, _) = optimize_path(b, &d2, &m, &cfg, &mut log, "b").unwrap();
    for (x, y) in ra.samples.iter().zip(&rb.samples) {
        assert!((x.l + y.l).abs() < 1e-9, "{} vs {}", x.l, y.l);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn widening_bounds_never_costs_more(widen in 0.0..1.0f64, lc in -0.5..3.0f64) {
        let corridor = format!(r#"{{"s_max": 150, "l_low": -1.75, "l_high": 5.25, "lane_center": [[0, 0], [40, {lc}]],
            "target_lane_interval": [-1.75, 1.75]}}"#);
        let sc = scene(&corridor, r#"{"id": 1, "box": [50, 54, 1.5, 3]}"#);
        let (d, p) = decisions(&sc);
        let cfg = Config::default();
        let decision = &p[0];
        let profile = build_path_profile(decision, &d, &sc, &cfg).unwrap();
        let bounds = build_sl_blocks(decision, &d, 0.0, cfg.path_block_len).unwrap();
        let init = InitSl { l: 0.0, dl: 0.0, ddl: 0.0 };
        let tight = assemble_path_qp(&bounds, &profile, init, &cfg, &sc.corridor);
        let mut wide = tight.clone();
        for i in 0..wide.n_constraints() {
            if wide.lba[i] != wide.uba[i] {
                wide.lba[i] -= widen;
                wide.uba[i] += widen;
            }
        }
        let s1 = solve_qp(&tight, &QpSettings::default()).unwrap();
        let s2 = solve_qp(&wide, &QpSettings::default()).unwrap();
        prop_assert_eq!(s1.status, QpStatus::Optimal);
        prop_assert!(s2.objective <= s1.objective + 1e-7 * s1.objective.abs().max(1.0));
    }
}
