//! Exact solver for the separable trajectory QP
//!
//! ```text
//! minimize   Σ ½·quad[t]·p[t]² + lin[t]·p[t]
//! subject to lower[t] <= p[t] <= upper[t]
//!            cum_lower[t] <= p[0] + … + p[t] <= cum_upper[t]
//! ```
//!
//! which is the shape of every EVB subproblem. The solver is a dual active-set
//! method (Goldfarb–Idnani) specialised to box and prefix-sum rows: inner
//! products in the inverse-Hessian metric cost O(1) through prefix sums, so an
//! iteration costs O(n + |active|²) and no dense matrix is ever formed.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum QpError {
    /// The constraints admit no solution; `step` is where the first conflict
    /// between the power box and the cumulative bounds shows up.
    #[error("trajectory constraints are infeasible at step {step}")]
    Infeasible { step: usize },
    #[error("quadratic coefficient at step {step} is not positive")]
    NotStrictlyConvex { step: usize },
    #[error("input series have inconsistent lengths")]
    DimensionMismatch,
    #[error("active-set iteration limit reached")]
    IterationLimit,
}

/// A trajectory QP. Infinite bounds are allowed. Steps with `lower == upper`
/// are fixed and may carry any `quad`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryQp {
    pub quad: Vec<f64>,
    pub lin: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cum_lower: Vec<f64>,
    pub cum_upper: Vec<f64>,
}

impl TrajectoryQp {
    /// Unconstrained-by-prefix problem with the given box.
    pub fn with_box(quad: Vec<f64>, lin: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let n = quad.len();
        TrajectoryQp {
            quad,
            lin,
            lower,
            upper,
            cum_lower: vec![f64::NEG_INFINITY; n],
            cum_upper: vec![f64::INFINITY; n],
        }
    }

    pub fn len(&self) -> usize {
        self.quad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quad.is_empty()
    }

    pub fn objective(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(self.quad.iter().zip(&self.lin))
            .map(|(x, (q, g))| 0.5 * q * x * x + g * x)
            .sum()
    }

    /// Largest constraint violation of `p`.
    pub fn max_violation(&self, p: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        let mut s = 0.0;
        for t in 0..p.len() {
            worst = worst.max(self.lower[t] - p[t]).max(p[t] - self.upper[t]);
            s += p[t];
            worst = worst.max(self.cum_lower[t] - s).max(s - self.cum_upper[t]);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Row {
    /// `x[k]`
    Single(usize),
    /// `x[0] + … + x[len-1]`
    Prefix(usize),
}

/// `sign · row(x) >= rhs`, or equality when `equality` is set.
#[derive(Debug, Clone, Copy)]
struct Constraint {
    row: Row,
    sign: f64,
    rhs: f64,
    equality: bool,
}

struct Reduced {
    free: Vec<usize>,
    quad_inv: Vec<f64>,
    /// `quad_inv_cum[l] = Σ_{k<l} quad_inv[k]`
    quad_inv_cum: Vec<f64>,
    lin: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Bounds on prefix sums of length `l`, index `l - 1`.
    pre_lower: Vec<f64>,
    pre_upper: Vec<f64>,
}

impl Reduced {
    fn metric(&self, a: Row, b: Row) -> f64 {
        match (a, b) {
            (Row::Single(i), Row::Single(k)) => {
                if i == k {
                    self.quad_inv[i]
                } else {
                    0.0
                }
            }
            (Row::Single(i), Row::Prefix(l)) | (Row::Prefix(l), Row::Single(i)) => {
                if i < l {
                    self.quad_inv[i]
                } else {
                    0.0
                }
            }
            (Row::Prefix(l), Row::Prefix(m)) => self.quad_inv_cum[l.min(m)],
        }
    }

    fn inner(&self, a: &Constraint, b: &Constraint) -> f64 {
        a.sign * b.sign * self.metric(a.row, b.row)
    }
}

fn row_value(row: Row, x: &[f64], prefix: &[f64]) -> f64 {
    match row {
        Row::Single(k) => x[k],
        Row::Prefix(l) => prefix[l],
    }
}

fn fill_prefix(x: &[f64], prefix: &mut [f64]) {
    prefix[0] = 0.0;
    for (k, v) in x.iter().enumerate() {
        prefix[k + 1] = prefix[k] + v;
    }
}

/// Lower-triangular Cholesky factor of the active-set Gram matrix, stored by rows.
struct Factor {
    rows: Vec<Vec<f64>>,
}

impl Factor {
    fn forward(&self, rhs: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (i, row) in self.rows.iter().enumerate() {
            let mut v = rhs[i];
            for k in 0..i {
                v -= row[k] * out[k];
            }
            out.push(v / row[i]);
        }
    }

    fn backward(&self, y: &[f64], out: &mut Vec<f64>) {
        let n = self.rows.len();
        out.clear();
        out.resize(n, 0.0);
        for i in (0..n).rev() {
            let mut v = y[i];
            for k in i + 1..n {
                v -= self.rows[k][i] * out[k];
            }
            out[i] = v / self.rows[i][i];
        }
    }

    /// Append a row given `y = L⁻¹ c` and the diagonal entry of the Gram matrix.
    fn push(&mut self, y: &[f64], diag: f64) -> bool {
        let rest = diag - y.iter().map(|v| v * v).sum::<f64>();
        if !(rest > 0.0) {
            return false;
        }
        let mut row = y.to_vec();
        row.push(libm::sqrt(rest));
        self.rows.push(row);
        true
    }

    /// Refactor rows `from..` after the active set lost an element at `from`.
    fn rebuild_from(&mut self, from: usize, active: &[Constraint], red: &Reduced) -> bool {
        self.rows.truncate(from);
        for r in from..active.len() {
            let mut row = Vec::with_capacity(r + 1);
            for c in 0..r {
                let mut v = red.inner(&active[r], &active[c]);
                for k in 0..c {
                    v -= row[k] * self.rows[c][k];
                }
                row.push(v / self.rows[c][c]);
            }
            let d = red.inner(&active[r], &active[r]) - row.iter().map(|v| v * v).sum::<f64>();
            if !(d > 0.0) {
                return false;
            }
            row.push(libm::sqrt(d));
            self.rows.push(row);
        }
        true
    }
}

fn bound_scale(values: &[&[f64]]) -> f64 {
    let mut m: f64 = 1.0;
    for s in values {
        for v in s.iter() {
            if v.is_finite() {
                m = m.max(v.abs());
            }
        }
    }
    m
}

/// Solve a [`TrajectoryQp`] exactly (up to round-off).
pub fn solve_trajectory_qp(qp: &TrajectoryQp) -> Result<Vec<f64>, QpError> {
    let n = qp.quad.len();
    if [
        qp.lin.len(),
        qp.lower.len(),
        qp.upper.len(),
        qp.cum_lower.len(),
        qp.cum_upper.len(),
    ]
    .iter()
    .any(|&l| l != n)
    {
        return Err(QpError::DimensionMismatch);
    }
    let scale = bound_scale(&[&qp.lower, &qp.upper, &qp.cum_lower, &qp.cum_upper]);
    let tol = 1e-10 * scale;

    let mut out = vec![0.0; n];
    let mut free = Vec::new();
    for t in 0..n {
        if qp.lower[t] > qp.upper[t] + tol {
            return Err(QpError::Infeasible { step: t });
        }
        if qp.upper[t] - qp.lower[t] <= 0.0 {
            out[t] = qp.lower[t];
        } else {
            if !(qp.quad[t] > 0.0) {
                return Err(QpError::NotStrictlyConvex { step: t });
            }
            free.push(t);
        }
    }

    // Merge the cumulative bounds onto prefixes of the free variables.
    let m = free.len();
    let mut pre_lower = vec![f64::NEG_INFINITY; m];
    let mut pre_upper = vec![f64::INFINITY; m];
    let mut fixed_sum = 0.0;
    let mut seen = 0;
    for t in 0..n {
        if seen < m && free[seen] == t {
            seen += 1;
        } else {
            fixed_sum += out[t];
        }
        let lo = qp.cum_lower[t] - fixed_sum;
        let hi = qp.cum_upper[t] - fixed_sum;
        if seen == 0 {
            if lo > tol || hi < -tol {
                return Err(QpError::Infeasible { step: t });
            }
        } else {
            pre_lower[seen - 1] = pre_lower[seen - 1].max(lo);
            pre_upper[seen - 1] = pre_upper[seen - 1].min(hi);
        }
    }
    if m == 0 {
        return Ok(out);
    }

    // Forward reachability of the prefix sums.
    let (mut reach_lo, mut reach_hi) = (0.0, 0.0);
    for l in 0..m {
        let t = free[l];
        reach_lo = f64::max(reach_lo + qp.lower[t], pre_lower[l]);
        reach_hi = f64::min(reach_hi + qp.upper[t], pre_upper[l]);
        if reach_lo > reach_hi + tol {
            return Err(QpError::Infeasible { step: t });
        }
        if reach_lo > reach_hi {
            let mid = 0.5 * (reach_lo + reach_hi);
            reach_lo = mid;
            reach_hi = mid;
        }
    }

    let quad_inv: Vec<f64> = free.iter().map(|&t| 1.0 / qp.quad[t]).collect();
    let mut quad_inv_cum = vec![0.0; m + 1];
    for k in 0..m {
        quad_inv_cum[k + 1] = quad_inv_cum[k] + quad_inv[k];
    }
    let red = Reduced {
        lin: free.iter().map(|&t| qp.lin[t]).collect(),
        lower: free.iter().map(|&t| qp.lower[t]).collect(),
        upper: free.iter().map(|&t| qp.upper[t]).collect(),
        free,
        quad_inv,
        quad_inv_cum,
        pre_lower,
        pre_upper,
    };

    let x = dual_active_set(&red, tol)?;
    for (k, &t) in red.free.iter().enumerate() {
        out[t] = x[k].clamp(red.lower[k], red.upper[k]);
    }
    Ok(out)
}

struct Workspace {
    gram_col: Vec<f64>,
    y: Vec<f64>,
    r: Vec<f64>,
    point: Vec<f64>,
    tail: Vec<f64>,
    z: Vec<f64>,
}

impl Workspace {
    /// Primal step `z = H⁻¹ n − H⁻¹ N r` and dual step `r` for adding `cand`.
    fn directions(
        &mut self,
        red: &Reduced,
        factor: &Factor,
        active: &[Constraint],
        cand: &Constraint,
    ) {
        let m = red.quad_inv.len();
        self.gram_col.clear();
        self.gram_col
            .extend(active.iter().map(|a| red.inner(a, cand)));
        factor.forward(&self.gram_col, &mut self.y);
        factor.backward(&self.y, &mut self.r);

        self.point.clear();
        self.point.resize(m, 0.0);
        self.tail.clear();
        self.tail.resize(m + 1, 0.0);
        let deposit = |row: Row, coef: f64, point: &mut [f64], tail: &mut [f64]| match row {
            Row::Single(k) => point[k] += coef,
            Row::Prefix(l) => tail[l - 1] += coef,
        };
        deposit(cand.row, cand.sign, &mut self.point, &mut self.tail);
        for (a, r) in active.iter().zip(&self.r) {
            deposit(a.row, -a.sign * r, &mut self.point, &mut self.tail);
        }
        self.z.clear();
        self.z.resize(m, 0.0);
        let mut run = 0.0;
        for k in (0..m).rev() {
            run += self.tail[k];
            self.z[k] = red.quad_inv[k] * (self.point[k] + run);
        }
    }

    fn directional(&self, cand: &Constraint) -> f64 {
        cand.sign
            * match cand.row {
                Row::Single(k) => self.z[k],
                Row::Prefix(l) => self.z[..l].iter().sum(),
            }
    }
}

fn dual_active_set(red: &Reduced, tol: f64) -> Result<Vec<f64>, QpError> {
    let m = red.quad_inv.len();
    let mut x: Vec<f64> = (0..m).map(|k| -red.lin[k] * red.quad_inv[k]).collect();
    let mut prefix = vec![0.0; m + 1];
    fill_prefix(&x, &mut prefix);

    let mut active: Vec<Constraint> = Vec::new();
    let mut duals: Vec<f64> = Vec::new();
    let mut factor = Factor { rows: Vec::new() };
    let mut ws = Workspace {
        gram_col: Vec::new(),
        y: Vec::new(),
        r: Vec::new(),
        point: Vec::new(),
        tail: Vec::new(),
        z: Vec::new(),
    };
    let step_of = |c: &Constraint| match c.row {
        Row::Single(k) => red.free[k],
        Row::Prefix(l) => red.free[l - 1],
    };

    // Equalities first; they are never dropped.
    for l in 0..m {
        let (lo, hi) = (red.pre_lower[l], red.pre_upper[l]);
        if !(hi - lo <= tol) {
            continue;
        }
        let target = 0.5 * (lo + hi);
        let value = prefix[l + 1];
        let mut c = Constraint {
            row: Row::Prefix(l + 1),
            sign: 1.0,
            rhs: target,
            equality: true,
        };
        if value > target {
            c.sign = -1.0;
            c.rhs = -target;
        }
        let slack = c.sign * value - c.rhs;
        ws.directions(red, &factor, &active, &c);
        let dz = ws.directional(&c);
        if dz <= 1e-14 * red.inner(&c, &c) {
            if slack.abs() > tol {
                return Err(QpError::Infeasible { step: step_of(&c) });
            }
            continue;
        }
        let t = -slack / dz;
        for (xk, zk) in x.iter_mut().zip(&ws.z) {
            *xk += t * zk;
        }
        fill_prefix(&x, &mut prefix);
        for (u, r) in duals.iter_mut().zip(&ws.r) {
            *u -= t * r;
        }
        if !factor.push(&ws.y, red.inner(&c, &c)) {
            return Err(QpError::Infeasible { step: step_of(&c) });
        }
        active.push(c);
        duals.push(t);
    }

    let max_iter = 20 * (m + 1) + 200;
    let mut iter = 0;
    loop {
        // Pick the most violated inequality.
        let mut worst: Option<(Constraint, f64)> = None;
        let mut consider = |c: Constraint, slack: f64| {
            if slack < -tol && worst.map_or(true, |(_, s)| slack < s) {
                worst = Some((c, slack));
            }
        };
        for k in 0..m {
            if red.lower[k].is_finite() {
                consider(
                    Constraint {
                        row: Row::Single(k),
                        sign: 1.0,
                        rhs: red.lower[k],
                        equality: false,
                    },
                    x[k] - red.lower[k],
                );
            }
            if red.upper[k].is_finite() {
                consider(
                    Constraint {
                        row: Row::Single(k),
                        sign: -1.0,
                        rhs: -red.upper[k],
                        equality: false,
                    },
                    red.upper[k] - x[k],
                );
            }
            if red.pre_upper[k] - red.pre_lower[k] <= tol {
                continue;
            }
            if red.pre_lower[k].is_finite() {
                consider(
                    Constraint {
                        row: Row::Prefix(k + 1),
                        sign: 1.0,
                        rhs: red.pre_lower[k],
                        equality: false,
                    },
                    prefix[k + 1] - red.pre_lower[k],
                );
            }
            if red.pre_upper[k].is_finite() {
                consider(
                    Constraint {
                        row: Row::Prefix(k + 1),
                        sign: -1.0,
                        rhs: -red.pre_upper[k],
                        equality: false,
                    },
                    red.pre_upper[k] - prefix[k + 1],
                );
            }
        }
        let Some((cand, _)) = worst else {
            return Ok(x);
        };

        let mut cand_dual = 0.0;
        loop {
            iter += 1;
            if iter > max_iter {
                return Err(QpError::IterationLimit);
            }
            let slack = cand.sign * row_value(cand.row, &x, &prefix) - cand.rhs;
            ws.directions(red, &factor, &active, &cand);
            let dz = ws.directional(&cand);

            let mut partial = f64::INFINITY;
            let mut blocking = None;
            for (i, (a, r)) in active.iter().zip(&ws.r).enumerate() {
                if !a.equality && *r > 0.0 {
                    let ratio = duals[i] / r;
                    if ratio < partial {
                        partial = ratio;
                        blocking = Some(i);
                    }
                }
            }
            let full = if dz > 1e-14 * red.inner(&cand, &cand) {
                (-slack / dz).max(0.0)
            } else {
                f64::INFINITY
            };
            if partial.is_infinite() && full.is_infinite() {
                return Err(QpError::Infeasible {
                    step: step_of(&cand),
                });
            }
            let t = partial.min(full);
            if full.is_finite() {
                for (xk, zk) in x.iter_mut().zip(&ws.z) {
                    *xk += t * zk;
                }
                fill_prefix(&x, &mut prefix);
            }
            for (u, r) in duals.iter_mut().zip(&ws.r) {
                *u -= t * r;
            }
            cand_dual += t;
            if full <= partial {
                if !factor.push(&ws.y, red.inner(&cand, &cand)) {
                    return Err(QpError::Infeasible {
                        step: step_of(&cand),
                    });
                }
                active.push(cand);
                duals.push(cand_dual);
                break;
            }
            let drop = blocking.expect("finite partial step has a blocking constraint");
            active.remove(drop);
            duals.remove(drop);
            if !factor.rebuild_from(drop, &active, red) {
                return Err(QpError::IterationLimit);
            }
        }
    }
}
