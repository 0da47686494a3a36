//! Quintic monomial basis on a local coordinate `x in [0, h]`.

pub const NC: usize = 6;

fn falling(k: usize, d: usize) -> f64 {
    (0..d).map(|i| (k - i) as f64).product()
}

/// Values of the `d`-th derivatives of `1, x, .., x^5` at `x`.
pub fn basis(d: usize, x: f64) -> [f64; NC] {
    let mut row = [0.0; NC];
    for (k, r) in row.iter_mut().enumerate().skip(d) {
        *r = falling(k, d) * x.powi((k - d) as i32);
    }
    row
}

pub fn eval(c: &[f64; NC], d: usize, x: f64) -> f64 {
    basis(d, x).iter().zip(c).map(|(b, c)| b * c).sum()
}

/// `G[j][k] = int_a^b phi_j^(d) phi_k^(d) dx` for the monomials `phi_k = x^k`.
pub fn gram(d: usize, a: f64, b: f64) -> [[f64; NC]; NC] {
    let mut g = [[0.0; NC]; NC];
    for j in d..NC {
        for k in d..NC {
            let p = (j + k - 2 * d) as i32;
            g[j][k] =
                falling(j, d) * falling(k, d) * (b.powi(p + 1) - a.powi(p + 1)) / f64::from(p + 1);
        }
    }
    g
}

/// `m[k] = int_a^b phi_k^(d) x^e dx`.
pub fn moment(d: usize, e: usize, a: f64, b: f64) -> [f64; NC] {
    let mut m = [0.0; NC];
    for (k, v) in m.iter_mut().enumerate().skip(d) {
        let p = (k - d + e) as i32;
        *v = falling(k, d) * (b.powi(p + 1) - a.powi(p + 1)) / f64::from(p + 1);
    }
    m
}

/// Piecewise quintic with blocks `[starts[i], ends[i]]` in local coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseQuintic {
    pub starts: Vec<f64>,
    pub ends: Vec<f64>,
    pub coeffs: Vec<[f64; NC]>,
}

impl PiecewiseQuintic {
    pub fn from_solution(bounds: &[(f64, f64)], x: &[f64]) -> Self {
        let coeffs = (0..bounds.len())
            .map(|i| {
                let mut c = [0.0; NC];
                c.copy_from_slice(&x[NC * i..NC * (i + 1)]);
                c
            })
            .collect();
        Self {
            starts: bounds.iter().map(|b| b.0).collect(),
            ends: bounds.iter().map(|b| b.1).collect(),
            coeffs,
        }
    }

    pub fn start(&self) -> f64 {
        self.starts[0]
    }

    pub fn end(&self) -> f64 {
        *self.ends.last().expect("non-empty")
    }

    /// Block holding `x`; joints belong to the later block.
    pub fn block_of(&self, x: f64) -> usize {
        self.starts.partition_point(|&s| s <= x).saturating_sub(1)
    }

    /// `d`-th derivative at `x`, clamped to the covered range.
    pub fn eval(&self, x: f64, d: usize) -> f64 {
        let x = x.clamp(self.start(), self.end());
        let i = self.block_of(x);
        eval(&self.coeffs[i], d, x - self.starts[i])
    }

    /// Largest jump in value, slope or curvature across any joint.
    pub fn continuity_residual(&self) -> (usize, f64) {
        let mut worst = (0, 0.0);
        for i in 1..self.coeffs.len() {
            let h = self.ends[i - 1] - self.starts[i - 1];
            for d in 0..3 {
                let r = (eval(&self.coeffs[i - 1], d, h) - eval(&self.coeffs[i], d, 0.0)).abs();
                if r > worst.1 {
                    worst = (i, r);
                }
            }
        }
        worst
    }
}
