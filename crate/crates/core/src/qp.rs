//! Dense convex quadratic programs in the standard form
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  lbA <= A x <= ubA
//!                 lb  <=   x <= ub
//! ```
//!
//! shared by the coarse decision, path and speed optimizations. Equality
//! constraints are rows with `lbA == ubA`; infinite bounds are allowed.
//!
//! The solver is the Goldfarb-Idnani dual active-set method run on a
//! diagonally scaled copy of the problem, followed by a polishing solve of
//! the KKT system for the final active set. It is deterministic: the same
//! problem always produces bitwise-identical output.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative regularization added to `H` when checking semidefiniteness and
/// when factorizing inside the solver.
pub const PSD_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub lba: DVector<f64>,
    pub uba: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// An unconstrained problem with zero objective over `n` variables.
    pub fn new(n: usize) -> Self {
        Self {
            h: DMatrix::zeros(n, n),
            g: DVector::zeros(n),
            a: DMatrix::zeros(0, n),
            lba: DVector::zeros(0),
            uba: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.g.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Largest violation of any row or bound at `x` (0 when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.a * x;
        let mut worst = 0.0_f64;
        for i in 0..ax.len() {
            worst = worst.max(self.lba[i] - ax[i]).max(ax[i] - self.uba[i]);
        }
        for j in 0..x.len() {
            worst = worst.max(self.lb[j] - x[j]).max(x[j] - self.ub[j]);
        }
        worst
    }

    /// Checks dimensions, symmetry and semidefiniteness of `H`.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        let m = self.n_constraints();
        if self.h.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "H is {:?}, expected ({n}, {n})",
                self.h.shape()
            )));
        }
        if self.a.ncols() != n || self.lba.len() != m || self.uba.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "A is {:?} with {} / {} row bounds for {n} variables",
                self.a.shape(),
                self.lba.len(),
                self.uba.len()
            )));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(Error::DimensionMismatch("variable bounds".into()));
        }
        let scale = self.h.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.h[(i, j)] - self.h[(j, i)]).abs() > 1e-9 * scale {
                    return Err(Error::NotConvex(format!(
                        "H is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let diag_scale = (0..n).map(|i| self.h[(i, i)].abs()).fold(1.0, f64::max);
        let shifted = &self.h + DMatrix::identity(n, n) * (PSD_EPS * diag_scale);
        if shifted.cholesky().is_none() {
            return Err(Error::NotConvex("H is not positive semidefinite".into()));
        }
        Ok(())
    }

    /// Writes the problem in a coordinate text format modelled on Matrix
    /// Market: a header line, then `H`, `g`, `A`, row bounds and variable
    /// bounds as 1-based `(i, j, value)` triplets or `(i, value)` pairs.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.n_vars();
        let m = self.n_constraints();
        writeln!(w, "%%QpProblem coordinate real n={n} m={m}")?;
        writeln!(
            w,
            "% minimize 1/2 x'Hx + g'x s.t. lbA <= Ax <= ubA, lb <= x <= ub"
        )?;
        let h_nnz = self.h.iter().filter(|v| **v != 0.0).count();
        writeln!(w, "H {n} {n} {h_nnz}")?;
        for j in 0..n {
            for i in 0..n {
                let v = self.h[(i, j)];
                if v != 0.0 {
                    writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
                }
            }
        }
        writeln!(w, "g {n}")?;
        for (i, v) in self.g.iter().enumerate() {
            writeln!(w, "{} {:e}", i + 1, v)?;
        }
        let a_nnz = self.a.iter().filter(|v| **v != 0.0).count();
        writeln!(w, "A {m} {n} {a_nnz}")?;
        for i in 0..m {
            for j in 0..n {
                let v = self.a[(i, j)];
                if v != 0.0 {
                    writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
                }
            }
        }
        writeln!(w, "bA {m}")?;
        for i in 0..m {
            writeln!(w, "{} {:e} {:e}", i + 1, self.lba[i], self.uba[i])?;
        }
        writeln!(w, "bx {n}")?;
        for j in 0..n {
            writeln!(w, "{} {:e} {:e}", j + 1, self.lb[j], self.ub[j])?;
        }
        Ok(())
    }
}

/// Row-at-a-time assembly of a [`QpProblem`].
#[derive(Debug, Clone)]
pub struct QpBuilder {
    n: usize,
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    rows: Vec<f64>,
    lba: Vec<f64>,
    uba: Vec<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpBuilder {
    pub fn new(n: usize) -> Self {
        let p = QpProblem::new(n);
        Self {
            n,
            h: p.h,
            g: p.g,
            rows: Vec::new(),
            lba: Vec::new(),
            uba: Vec::new(),
            lb: p.lb,
            ub: p.ub,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.lba.len()
    }

    /// Adds `lo <= row . x <= hi`. `row` must have one entry per variable.
    pub fn add_row(&mut self, row: &[f64], lo: f64, hi: f64) {
        assert_eq!(row.len(), self.n, "constraint row length");
        self.rows.extend_from_slice(row);
        self.lba.push(lo);
        self.uba.push(hi);
    }

    pub fn add_eq(&mut self, row: &[f64], value: f64) {
        self.add_row(row, value, value);
    }

    pub fn build(self) -> QpProblem {
        let m = self.lba.len();
        QpProblem {
            h: self.h,
            g: self.g,
            a: DMatrix::from_row_slice(m, self.n, &self.rows),
            lba: DVector::from_vec(self.lba),
            uba: DVector::from_vec(self.uba),
            lb: self.lb,
            ub: self.ub,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Row multipliers: positive when the upper row bound is active,
    /// negative when the lower one is.
    pub lambda: DVector<f64>,
    /// Bound multipliers with the same sign convention.
    pub mu: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub tol_kkt: f64,
    pub tol_feas: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-6,
            tol_feas: 1e-6,
            max_iter: 10_000,
        }
    }
}

/// Max-norm of the stationarity residual `Hx + g + A'λ + μ`, the primal
/// infeasibility, and the complementarity products at `(x, λ, μ)`.
/// Multipliers pointing at an infinite bound count in full as dual
/// infeasibility.
pub fn kkt_residual(
    p: &QpProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<f64> {
    let n = p.n_vars();
    let m = p.n_constraints();
    if x.len() != n || mu.len() != n || lambda.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "x: {}, lambda: {}, mu: {} for n={n}, m={m}",
            x.len(),
            lambda.len(),
            mu.len()
        )));
    }
    let stat = &p.h * x + &p.g + p.a.transpose() * lambda + mu;
    let mut res = stat.amax();
    res = res.max(p.max_violation(x));
    let ax = &p.a * x;
    let comp = |mult: f64, val: f64, lo: f64, hi: f64| -> f64 {
        if mult > 0.0 {
            if hi.is_finite() {
                (mult * (hi - val)).abs()
            } else {
                mult
            }
        } else if mult < 0.0 {
            if lo.is_finite() {
                (mult * (val - lo)).abs()
            } else {
                -mult
            }
        } else {
            0.0
        }
    };
    for i in 0..m {
        res = res.max(comp(lambda[i], ax[i], p.lba[i], p.uba[i]));
    }
    for j in 0..n {
        res = res.max(comp(mu[j], x[j], p.lb[j], p.ub[j]));
    }
    Ok(res)
}

/// Where a one-sided working constraint came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Row(usize),
    Bound(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Lower,
    Upper,
    Equal,
}

/// `normal . x >= rhs` in scaled variables (or `==` for `Side::Equal`).
#[derive(Debug, Clone)]
struct Working {
    normal: DVector<f64>,
    rhs: f64,
    /// Factor mapping the scaled multiplier back to the original row.
    unscale: f64,
    origin: Origin,
    side: Side,
}

impl Working {
    fn is_equality(&self) -> bool {
        self.side == Side::Equal
    }
}

struct Scaled {
    d: DVector<f64>,
    h: DMatrix<f64>,
    g: DVector<f64>,
    cons: Vec<Working>,
}

fn scale_problem(p: &QpProblem) -> Scaled {
    let n = p.n_vars();
    let d = DVector::from_iterator(
        n,
        (0..n).map(|j| {
            let hjj = p.h[(j, j)];
            if hjj > 0.0 {
                1.0 / hjj.sqrt()
            } else {
                1.0
            }
        }),
    );
    let mut h = p.h.clone();
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] *= d[i] * d[j];
        }
    }
    let g = p.g.component_mul(&d);

    let mut cons = Vec::new();
    for i in 0..p.n_constraints() {
        let mut row = p.a.row(i).transpose();
        row.component_mul_assign(&d);
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let r = 1.0 / norm;
        let row = row * r;
        let (lo, hi) = (p.lba[i], p.uba[i]);
        if lo == hi {
            cons.push(Working {
                normal: row,
                rhs: lo * r,
                unscale: r,
                origin: Origin::Row(i),
                side: Side::Equal,
            });
            continue;
        }
        if lo.is_finite() {
            cons.push(Working {
                normal: row.clone(),
                rhs: lo * r,
                unscale: r,
                origin: Origin::Row(i),
                side: Side::Lower,
            });
        }
        if hi.is_finite() {
            cons.push(Working {
                normal: -row,
                rhs: -hi * r,
                unscale: r,
                origin: Origin::Row(i),
                side: Side::Upper,
            });
        }
    }
    for j in 0..n {
        let (lo, hi) = (p.lb[j], p.ub[j]);
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        let r = 1.0 / d[j];
        if lo == hi {
            cons.push(Working {
                normal: e,
                rhs: lo * r,
                unscale: r,
                origin: Origin::Bound(j),
                side: Side::Equal,
            });
            continue;
        }
        if lo.is_finite() {
            cons.push(Working {
                normal: e.clone(),
                rhs: lo * r,
                unscale: r,
                origin: Origin::Bound(j),
                side: Side::Lower,
            });
        }
        if hi.is_finite() {
            cons.push(Working {
                normal: -e,
                rhs: -hi * r,
                unscale: r,
                origin: Origin::Bound(j),
                side: Side::Upper,
            });
        }
    }
    Scaled { d, h, g, cons }
}

/// Rotation `(c, s)` with `c*a + s*b = hypot(a, b)` and `-s*a + c*b = 0`.
fn givens(a: f64, b: f64) -> (f64, f64) {
    let r = a.hypot(b);
    if r == 0.0 {
        (1.0, 0.0)
    } else {
        (a / r, b / r)
    }
}

fn rotate_columns(m: &mut DMatrix<f64>, j: usize, k: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (a, b) = (m[(i, j)], m[(i, k)]);
        m[(i, j)] = c * a + s * b;
        m[(i, k)] = -s * a + c * b;
    }
}

struct DualActiveSet<'a> {
    n: usize,
    cons: &'a [Working],
    x: DVector<f64>,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    active: Vec<usize>,
    u: Vec<f64>,
    is_active: Vec<bool>,
    /// Equalities found to be linearly dependent on the active set and
    /// already satisfied.
    redundant: Vec<bool>,
}

enum Outcome {
    Optimal,
    Infeasible,
    MaxIter,
}

impl<'a> DualActiveSet<'a> {
    fn new(h: &DMatrix<f64>, g: &DVector<f64>, cons: &'a [Working]) -> Option<Self> {
        let n = g.len();
        let diag_scale = (0..n).map(|i| h[(i, i)].abs()).fold(1.0, f64::max);
        let reg = h + DMatrix::identity(n, n) * (PSD_EPS * diag_scale);
        let chol = reg.cholesky()?;
        let l = chol.l();
        let x = -chol.solve(g);
        // J = L^{-T}
        let l_inv = l.clone().try_inverse()?;
        let j = l_inv.transpose();
        Some(Self {
            n,
            cons,
            x,
            j,
            r: DMatrix::zeros(n, n),
            active: Vec::new(),
            u: Vec::new(),
            is_active: vec![false; cons.len()],
            redundant: vec![false; cons.len()],
        })
    }

    fn slack(&self, k: usize, sign: f64) -> f64 {
        let c = &self.cons[k];
        sign * (c.normal.dot(&self.x) - c.rhs)
    }

    /// Picks the next constraint to add: an unprocessed equality first,
    /// otherwise the most violated inequality. Returns the index and the
    /// orientation sign (equalities may be entered as `<=`).
    fn pick(&self, tol: f64) -> Option<(usize, f64)> {
        for (k, c) in self.cons.iter().enumerate() {
            if c.is_equality() && !self.is_active[k] && !self.redundant[k] {
                let s = self.slack(k, 1.0);
                return Some((k, if s > 0.0 { -1.0 } else { 1.0 }));
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in self.cons.iter().enumerate() {
            if c.is_equality() || self.is_active[k] {
                continue;
            }
            let s = self.slack(k, 1.0);
            let thresh = tol * (1.0 + c.rhs.abs());
            if s < -thresh && best.is_none_or(|(_, bs)| s < bs) {
                best = Some((k, s));
            }
        }
        best.map(|(k, _)| (k, 1.0))
    }

    fn add(&mut self, k: usize, mut d: DVector<f64>, up: f64) {
        let q = self.active.len();
        for jj in (q + 1..self.n).rev() {
            let (c, s) = givens(d[jj - 1], d[jj]);
            d[jj - 1] = c * d[jj - 1] + s * d[jj];
            d[jj] = 0.0;
            rotate_columns(&mut self.j, jj - 1, jj, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.active.push(k);
        self.u.push(up);
        self.is_active[k] = true;
    }

    fn drop_at(&mut self, pos: usize) {
        let q = self.active.len();
        let k = self.active.remove(pos);
        self.u.remove(pos);
        self.is_active[k] = false;
        for col in pos..q - 1 {
            for row in 0..q {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for col in pos..q - 1 {
            let (c, s) = givens(self.r[(col, col)], self.r[(col + 1, col)]);
            for cc in col..q - 1 {
                let (a, b) = (self.r[(col, cc)], self.r[(col + 1, cc)]);
                self.r[(col, cc)] = c * a + s * b;
                self.r[(col + 1, cc)] = -s * a + c * b;
            }
            self.r[(col + 1, col)] = 0.0;
            rotate_columns(&mut self.j, col, col + 1, c, s);
        }
    }

    fn run(&mut self, tol: f64, max_iter: usize, iterations: &mut usize) -> Outcome {
        // Orientation of each active constraint (+1 for the stored normal,
        // -1 for equalities entered reversed).
        let mut orient: Vec<f64> = vec![1.0; self.cons.len()];
        loop {
            let Some((p, sign)) = self.pick(tol) else {
                // Undo the orientation flip so multipliers refer to the stored normals.
                for (pos, &k) in self.active.iter().enumerate() {
                    self.u[pos] *= orient[k];
                }
                return Outcome::Optimal;
            };
            orient[p] = sign;
            let np = &self.cons[p].normal * sign;
            let bp = self.cons[p].rhs * sign;
            let mut up = 0.0;
            loop {
                *iterations += 1;
                if *iterations > max_iter {
                    for (pos, &k) in self.active.iter().enumerate() {
                        self.u[pos] *= orient[k];
                    }
                    return Outcome::MaxIter;
                }
                let q = self.active.len();
                let d = self.j.transpose() * &np;
                let mut z = DVector::zeros(self.n);
                for jj in q..self.n {
                    z.axpy(d[jj], &self.j.column(jj), 1.0);
                }
                // r = R^{-1} d[0..q]
                let mut r = vec![0.0; q];
                for i in (0..q).rev() {
                    let mut acc = d[i];
                    for kk in i + 1..q {
                        acc -= self.r[(i, kk)] * r[kk];
                    }
                    r[i] = acc / self.r[(i, i)];
                }
                let mut t1 = f64::INFINITY;
                let mut drop_pos = None;
                for (pos, &k) in self.active.iter().enumerate() {
                    if self.cons[k].is_equality() {
                        continue;
                    }
                    if r[pos] > 0.0 {
                        let ratio = self.u[pos] / r[pos];
                        if ratio < t1 {
                            t1 = ratio;
                            drop_pos = Some(pos);
                        }
                    }
                }
                let s_p = np.dot(&self.x) - bp;
                let ztn = z.dot(&np);
                let t2 = if ztn > 1e-14 * np.norm_squared() {
                    -s_p / ztn
                } else {
                    f64::INFINITY
                };
                if t2.is_infinite()
                    && self.cons[p].is_equality()
                    && s_p.abs() <= tol * (1.0 + bp.abs())
                {
                    // Dependent and already satisfied.
                    self.redundant[p] = true;
                    break;
                }
                let t = t1.min(t2);
                if t.is_infinite() {
                    return Outcome::Infeasible;
                }
                if t2.is_infinite() {
                    for pos in 0..q {
                        self.u[pos] -= t * r[pos];
                    }
                    up += t;
                    self.drop_at(drop_pos.expect("finite t1 has a drop index"));
                    continue;
                }
                self.x.axpy(t, &z, 1.0);
                for pos in 0..q {
                    self.u[pos] -= t * r[pos];
                }
                up += t;
                if t2 <= t1 {
                    self.add(p, d, up);
                    break;
                }
                self.drop_at(drop_pos.expect("t1 < t2 implies a drop index"));
            }
        }
    }
}

fn multipliers_from_active(
    p: &QpProblem,
    cons: &[Working],
    active: &[usize],
    u: &[f64],
) -> (DVector<f64>, DVector<f64>) {
    let mut lambda = DVector::zeros(p.n_constraints());
    let mut mu = DVector::zeros(p.n_vars());
    for (&k, &uk) in active.iter().zip(u) {
        let c = &cons[k];
        // Stationarity in scaled space: H~x + g~ - sum u c = 0. A lower
        // side maps to a negative original multiplier.
        let v = match c.side {
            Side::Lower | Side::Equal => -uk * c.unscale,
            Side::Upper => uk * c.unscale,
        };
        match c.origin {
            Origin::Row(i) => lambda[i] += v,
            Origin::Bound(j) => mu[j] += v,
        }
    }
    (lambda, mu)
}

/// Re-solves the equality-constrained problem on the final active set and
/// refines it. Returns `None` if the KKT system is singular.
fn polish(sc: &Scaled, active: &[usize]) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = sc.g.len();
    let q = active.len();
    let dim = n + q;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&sc.h);
    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        rhs[i] = -sc.g[i];
    }
    for (pos, &k) in active.iter().enumerate() {
        let c = &sc.cons[k];
        for j in 0..n {
            kkt[(n + pos, j)] = c.normal[j];
            kkt[(j, n + pos)] = -c.normal[j];
        }
        rhs[n + pos] = c.rhs;
    }
    let lu = kkt.clone().lu();
    let mut sol = lu.solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    for _ in 0..2 {
        let resid = &rhs - &kkt * &sol;
        let corr = lu.solve(&resid)?;
        sol += corr;
    }
    let x = sol.rows(0, n).into_owned();
    let u = sol.rows(n, q).iter().copied().collect();
    Some((x, u))
}

/// Solves `p`. Malformed problems return an error; infeasibility and the
/// iteration cap are reported through [`QpSolution::status`].
pub fn solve_qp(p: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    p.validate()?;
    let n = p.n_vars();
    let infeasible = |iterations| QpSolution {
        x: DVector::zeros(n),
        objective: f64::INFINITY,
        status: QpStatus::Infeasible,
        kkt_residual: f64::INFINITY,
        iterations,
        lambda: DVector::zeros(p.n_constraints()),
        mu: DVector::zeros(n),
    };
    let crossed =
        (0..n).any(|j| p.lb[j] > p.ub[j]) || (0..p.n_constraints()).any(|i| p.lba[i] > p.uba[i]);
    if crossed {
        return Ok(infeasible(0));
    }

    let sc = scale_problem(p);
    let Some(mut das) = DualActiveSet::new(&sc.h, &sc.g, &sc.cons) else {
        return Err(Error::NotConvex("scaled H failed to factorize".into()));
    };
    let mut iterations = 0;
    let outcome = das.run(1e-13, settings.max_iter, &mut iterations);
    if matches!(outcome, Outcome::Infeasible) {
        return Ok(infeasible(iterations));
    }
    let status = match outcome {
        Outcome::Optimal => QpStatus::Optimal,
        _ => QpStatus::MaxIter,
    };

    let x_das = das.x.component_mul(&sc.d);
    let (lam_das, mu_das) = multipliers_from_active(p, &sc.cons, &das.active, &das.u);
    let kkt_das = kkt_residual(p, &x_das, &lam_das, &mu_das)?;
    let (mut x, mut lambda, mut mu, mut kkt) = (x_das, lam_das, mu_das, kkt_das);

    if status == QpStatus::Optimal {
        if let Some((xs, u)) = polish(&sc, &das.active) {
            let dual_ok = das
                .active
                .iter()
                .zip(&u)
                .all(|(&k, &uk)| sc.cons[k].is_equality() || uk >= -settings.tol_kkt);
            let xp = xs.component_mul(&sc.d);
            if dual_ok && p.max_violation(&xp) <= settings.tol_feas {
                let (lp, mp) = multipliers_from_active(p, &sc.cons, &das.active, &u);
                let kp = kkt_residual(p, &xp, &lp, &mp)?;
                if kp <= kkt {
                    (x, lambda, mu, kkt) = (xp, lp, mp, kp);
                }
            }
        }
    }
    Ok(QpSolution {
        objective: p.objective(&x),
        x,
        status,
        kkt_residual: kkt,
        iterations,
        lambda,
        mu,
    })
}

/// Summary of one solve, kept for reporting.
#[derive(Debug, Clone, Serialize)]
pub struct QpRecord {
    pub label: String,
    pub n_vars: usize,
    pub n_rows: usize,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub iterations: usize,
    pub micros: u64,
}

/// Runs solves and records their statistics, and optionally the problems.
#[derive(Debug, Clone, Default)]
pub struct QpLog {
    pub settings: QpSettings,
    pub keep_problems: bool,
    pub records: Vec<QpRecord>,
    pub problems: Vec<(String, QpProblem)>,
}

impl QpLog {
    pub fn new(settings: QpSettings, keep_problems: bool) -> Self {
        Self {
            settings,
            keep_problems,
            ..Self::default()
        }
    }

    pub fn solve(&mut self, label: impl Into<String>, p: &QpProblem) -> Result<QpSolution> {
        let label = label.into();
        let start = std::time::Instant::now();
        let sol = solve_qp(p, &self.settings)?;
        let micros = start.elapsed().as_micros() as u64;
        let max_violation = if sol.status == QpStatus::Infeasible {
            f64::INFINITY
        } else {
            p.max_violation(&sol.x)
        };
        self.records.push(QpRecord {
            label: label.clone(),
            n_vars: p.n_vars(),
            n_rows: p.n_constraints(),
            status: sol.status,
            kkt_residual: sol.kkt_residual,
            max_violation,
            iterations: sol.iterations,
            micros,
        });
        if self.keep_problems {
            self.problems.push((label, p.clone()));
        }
        Ok(sol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> QpSettings {
        QpSettings::default()
    }

    #[test]
    fn unconstrained_identity() {
        let mut p = QpProblem::new(2);
        p.h = DMatrix::identity(2, 2);
        p.g = DVector::from_vec(vec![-1.0, -1.0]);
        let sol = solve_qp(&p, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
        assert!((sol.objective + 1.0).abs() < 1e-12);
        let res = kkt_residual(&p, &sol.x, &sol.lambda, &sol.mu).unwrap();
        assert!(res < 1e-12);
    }

    #[test]
    fn single_active_bound() {
        let mut p = QpProblem::new(2);
        p.h = DMatrix::identity(2, 2);
        p.lb[0] = 2.0;
        p.ub[0] = 3.0;
        let sol = solve_qp(&p, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 2.0).abs() < 1e-12);
        assert!(sol.x[1].abs() < 1e-12);
        assert!((sol.objective - 2.0).abs() < 1e-12);
        assert!(sol.mu[0] < 0.0);
        assert!(sol.kkt_residual < 1e-12);
    }

    #[test]
    fn perturbed_point_residual_is_gradient() {
        let mut p = QpProblem::new(2);
        p.h = DMatrix::identity(2, 2);
        p.g = DVector::from_vec(vec![-1.0, -1.0]);
        let x = DVector::from_vec(vec![1.1, 1.0]);
        let res = kkt_residual(&p, &x, &DVector::zeros(0), &DVector::zeros(2)).unwrap();
        assert!((res - 0.1).abs() < 1e-12);
    }

    #[test]
    fn residual_rejects_bad_dimensions() {
        let p = QpProblem::new(2);
        let err = kkt_residual(
            &p,
            &DVector::zeros(3),
            &DVector::zeros(0),
            &DVector::zeros(2),
        );
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let mut p = QpProblem::new(1);
        p.h[(0, 0)] = 1.0;
        p.lb[0] = 1.0;
        p.ub[0] = 0.0;
        let sol = solve_qp(&p, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn conflicting_rows_are_infeasible() {
        let mut b = QpBuilder::new(2);
        b.h = DMatrix::identity(2, 2);
        b.add_row(&[1.0, 1.0], 2.0, f64::INFINITY);
        b.add_row(&[1.0, 1.0], f64::NEG_INFINITY, 1.0);
        let sol = solve_qp(&b.build(), &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn equality_rows_hold() {
        let mut b = QpBuilder::new(3);
        b.h = DMatrix::identity(3, 3);
        b.g = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        b.add_eq(&[1.0, 1.0, 1.0], 1.0);
        b.add_eq(&[1.0, -1.0, 0.0], 0.25);
        // duplicate of the first equality
        b.add_eq(&[2.0, 2.0, 2.0], 2.0);
        let p = b.build();
        let sol = solve_qp(&p, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let ax = &p.a * &sol.x;
        assert!((ax[0] - 1.0).abs() < 1e-12);
        assert!((ax[1] - 0.25).abs() < 1e-12);
        assert!(sol.kkt_residual < 1e-10);
    }

    #[test]
    fn rejects_indefinite_h() {
        let mut p = QpProblem::new(2);
        p.h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            solve_qp(&p, &settings()),
            Err(Error::NotConvex(_))
        ));
    }

    #[test]
    fn psd_with_bounded_flat_direction() {
        // x1 has no curvature; the bound pins it.
        let mut p = QpProblem::new(2);
        p.h[(0, 0)] = 2.0;
        p.g = DVector::from_vec(vec![-2.0, 1.0]);
        p.lb[1] = -1.0;
        p.ub[1] = 1.0;
        let sol = solve_qp(&p, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
        assert!((sol.x[1] + 1.0).abs() < 1e-9);
        assert!(sol.kkt_residual < 1e-6);
    }

    #[test]
    fn text_dump_has_sections() {
        let mut b = QpBuilder::new(2);
        b.h = DMatrix::identity(2, 2);
        b.add_row(&[1.0, 0.0], 0.0, f64::INFINITY);
        let mut out = Vec::new();
        b.build().write_text(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("%%QpProblem coordinate real n=2 m=1"));
        for section in ["H 2 2 2", "g 2", "A 1 2 1", "bA 1", "bx 2", "1 0e0 inf"] {
            assert!(text.contains(section), "missing {section}");
        }
    }
}
