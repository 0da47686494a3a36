//! Test-only oracles kept independent of the library's solver paths.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use triplan_core::qp::QpProblem;

/// One-sided or two-sided linear constraint `lo <= a.x <= hi` used by the oracle.
struct Row {
    a: DVector<f64>,
    lo: f64,
    hi: f64,
}

fn rows_of(p: &QpProblem) -> Vec<Row> {
    let n = p.n_vars();
    let mut rows = Vec::new();
    for i in 0..p.n_constraints() {
        rows.push(Row {
            a: p.a.row(i).transpose(),
            lo: p.lba[i],
            hi: p.uba[i],
        });
    }
    for j in 0..n {
        if p.lb[j].is_finite() || p.ub[j].is_finite() {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            rows.push(Row {
                a: e,
                lo: p.lb[j],
                hi: p.ub[j],
            });
        }
    }
    rows
}

/// Exhaustive active-set enumeration: every choice of active rows (and the
/// side each is active at) up to the number of free degrees of freedom is
/// solved as an equality-constrained QP through its KKT system; candidates
/// that are primal feasible with correctly signed multipliers are KKT
/// points, and the cheapest one is returned. `None` means no KKT point
/// exists (infeasible or unbounded).
pub fn active_set_oracle(p: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let n = p.n_vars();
    let rows = rows_of(p);
    let eq: Vec<usize> = (0..rows.len())
        .filter(|&i| rows[i].lo == rows[i].hi)
        .collect();
    let ineq: Vec<usize> = (0..rows.len())
        .filter(|&i| rows[i].lo != rows[i].hi)
        .collect();
    if eq.len() > n {
        return None;
    }
    let max_extra = n - eq.len();
    let mut best: Option<(DVector<f64>, f64)> = None;

    // (row index, is_upper)
    let mut chosen: Vec<(usize, bool)> = Vec::new();
    fn recurse(
        start: usize,
        ineq: &[usize],
        rows: &[Row],
        max_extra: usize,
        chosen: &mut Vec<(usize, bool)>,
        visit: &mut dyn FnMut(&[(usize, bool)]),
    ) {
        visit(chosen);
        if chosen.len() == max_extra {
            return;
        }
        for k in start..ineq.len() {
            let r = &rows[ineq[k]];
            if r.lo.is_finite() {
                chosen.push((ineq[k], false));
                recurse(k + 1, ineq, rows, max_extra, chosen, visit);
                chosen.pop();
            }
            if r.hi.is_finite() {
                chosen.push((ineq[k], true));
                recurse(k + 1, ineq, rows, max_extra, chosen, visit);
                chosen.pop();
            }
        }
    }

    let mut visit = |set: &[(usize, bool)]| {
        let active: Vec<(usize, f64, i8)> = eq
            .iter()
            .map(|&i| (i, rows[i].lo, 0i8))
            .chain(set.iter().map(|&(i, up)| {
                if up {
                    (i, rows[i].hi, 1)
                } else {
                    (i, rows[i].lo, -1)
                }
            }))
            .collect();
        let q = active.len();
        let dim = n + q;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        for j in 0..n {
            rhs[j] = -p.g[j];
        }
        for (pos, &(i, b, _)) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + pos, j)] = rows[i].a[j];
                kkt[(j, n + pos)] = rows[i].a[j];
            }
            rhs[n + pos] = b;
        }
        let svd = kkt.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 1e-12 * smax.max(1.0) {
            return;
        }
        let Ok(sol) = svd.solve(&rhs, 0.0) else {
            return;
        };
        let x = sol.rows(0, n).into_owned();
        for (pos, &(_, _, side)) in active.iter().enumerate() {
            let nu = sol[n + pos];
            // H x + g + C' nu = 0: upper-active needs nu >= 0, lower nu <= 0.
            if (side == 1 && nu < -1e-9) || (side == -1 && nu > 1e-9) {
                return;
            }
        }
        for r in &rows {
            let v = r.a.dot(&x);
            let tol = 1e-9 * (1.0 + v.abs());
            if v < r.lo - tol || v > r.hi + tol {
                return;
            }
        }
        let obj = 0.5 * x.dot(&(&p.h * &x)) + p.g.dot(&x);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((x, obj));
        }
    };
    recurse(0, &ineq, &rows, max_extra, &mut chosen, &mut visit);
    best
}

/// A strictly convex random QP with a known feasible point.
pub fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QpProblem {
    let mm = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = mm.transpose() * &mm + DMatrix::identity(n, n) * 0.1;
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut lba = DVector::zeros(m);
    let mut uba = DVector::zeros(m);
    for i in 0..m {
        let v = a.row(i).transpose().dot(&x0);
        let kind: f64 = rng.gen();
        if kind < 0.1 {
            lba[i] = v;
            uba[i] = v;
        } else {
            lba[i] = v - rng.gen_range(0.0..1.0);
            uba[i] = v + rng.gen_range(0.0..1.0);
            if kind < 0.4 {
                lba[i] = f64::NEG_INFINITY;
            } else if kind < 0.7 {
                uba[i] = f64::INFINITY;
            }
        }
    }
    QpProblem {
        h,
        g,
        a,
        lba,
        uba,
        lb: DVector::from_element(n, f64::NEG_INFINITY),
        ub: DVector::from_element(n, f64::INFINITY),
    }
}

/// Composite Simpson rule with `panels` (even) sub-intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    assert!(panels.is_multiple_of(2));
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Scenario fixture names, sorted.
pub fn fixture_names() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(fixture_dir())
        .expect("fixture dir")
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(str::to_owned))?
        })
        .collect();
    names.sort();
    names
}

pub fn fixture(name: &str) -> triplan_core::Scenario {
    triplan_core::load_scenario(fixture_dir().join(format!("{name}.json")))
        .unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Longer decisions ranked first; see configs/evasive.toml.
pub fn evasive() -> triplan_core::Config {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/evasive.toml");
    triplan_core::Config::load(path).expect("evasive preset")
}
