//! Self-contained subproblem solver: a dense bounded-variable primal simplex
//! with dual extraction, plus branch-and-bound for 0-1 variables.
//!
//! Variables sitting at a finite lower or upper bound are treated as nonbasic
//! (no slack expansion of the box constraints). Feasibility is reached with a
//! two-phase method: one artificial column per initially-violated row, so
//! model penalty magnitudes never interact with solver internals. Pricing is
//! Dantzig with a switch to Bland's rule after a stall, which protects against
//! cycling without giving up speed in the common case.

use thiserror::Error;

/// Bound/feasibility tolerance.
const FEAS_TOL: f64 = 1e-9;
/// Reduced-cost optimality tolerance.
const OPT_TOL: f64 = 1e-9;
/// Smallest pivot element accepted during a basis change.
const PIVOT_TOL: f64 = 1e-8;
/// Residual artificial infeasibility above which phase 1 declares infeasible.
const PHASE1_TOL: f64 = 1e-7;
/// Consecutive nonimproving pivots before Bland's rule engages.
const STALL_LIMIT: usize = 1000;
/// Pivots between refactorizations of the basis inverse.
const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone)]
pub struct LpRow {
    /// Sparse coefficients as (variable index, value) pairs.
    pub coeffs: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    /// Minimization objective, one coefficient per variable.
    pub objective: Vec<f64>,
    /// Lower bounds; `f64::NEG_INFINITY` for unbounded below.
    pub lower: Vec<f64>,
    /// Upper bounds; `f64::INFINITY` for unbounded above.
    pub upper: Vec<f64>,
    pub rows: Vec<LpRow>,
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: RowSense, rhs: f64) -> usize {
        self.rows.push(LpRow { coeffs, sense, rhs });
        self.rows.len() - 1
    }

    /// Checks the structural invariants: finite rhs, no NaN coefficients,
    /// lower <= upper, indices in range.
    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Dimension("bound arrays do not match variable count".into()));
        }
        for j in 0..n {
            if self.objective[j].is_nan() || !self.objective[j].is_finite() {
                return Err(LpError::BadNumber(format!("objective[{j}]")));
            }
            if self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(LpError::BadNumber(format!("bounds of variable {j}")));
            }
            if self.lower[j] > self.upper[j] + FEAS_TOL {
                return Err(LpError::Dimension(format!(
                    "variable {j} has lower bound {} above upper bound {}",
                    self.lower[j], self.upper[j]
                )));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::BadNumber(format!("rhs of row {i}")));
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(LpError::Dimension(format!(
                        "row {i} references variable {j} out of {n}"
                    )));
                }
                if !a.is_finite() {
                    return Err(LpError::BadNumber(format!("coefficient ({i},{j})")));
                }
            }
        }
        Ok(())
    }

    /// Human-readable dump in an LP-file style layout, for external cross-checking.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        out.push_str("minimize\n  ");
        for (j, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                let _ = write!(out, "{c:+} x{j} ");
            }
        }
        out.push_str("\nsubject to\n");
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "  r{i}: ");
            for &(j, a) in &row.coeffs {
                let _ = write!(out, "{a:+} x{j} ");
            }
            let op = match row.sense {
                RowSense::Eq => "=",
                RowSense::Le => "<=",
                RowSense::Ge => ">=",
            };
            let _ = writeln!(out, "{op} {}", row.rhs);
        }
        out.push_str("bounds\n");
        for j in 0..self.num_vars() {
            let _ = writeln!(out, "  {} <= x{j} <= {}", self.lower[j], self.upper[j]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal values for the structural variables (empty unless optimal).
    pub primal: Vec<f64>,
    /// Shadow prices: dual of row i is d(objective)/d(rhs_i).
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    /// |primal obj - dual obj| / (1 + |primal obj|), recorded on optimal solves.
    pub duality_gap: f64,
}

impl LpSolution {
    fn non_optimal(status: LpStatus) -> Self {
        LpSolution {
            status,
            primal: Vec::new(),
            duals: Vec::new(),
            reduced_costs: Vec::new(),
            objective: match status {
                LpStatus::Infeasible => f64::INFINITY,
                _ => f64::NEG_INFINITY,
            },
            duality_gap: 0.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite input: {0}")]
    BadNumber(String),
    #[error("simplex did not converge after {0} pivots")]
    IterationLimit(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NonbasicAt {
    Lower,
    Upper,
    /// Free variable parked at zero.
    Zero,
}

/// Dense simplex working state. One instance per solve; not shareable mid-solve.
struct Simplex {
    m: usize,
    ncols: usize,
    n_struct: usize,
    cols: Vec<Vec<(usize, f64)>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    at: Vec<NonbasicAt>,
    x: Vec<f64>,
    /// Row-major m x m basis inverse.
    binv: Vec<f64>,
    pivots_since_factor: usize,
}

impl Simplex {
    fn new(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let m = lp.rows.len();
        let ncols = n + m;
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ncols];
        let mut rhs = Vec::with_capacity(m);
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        lower.resize(ncols, 0.0);
        upper.resize(ncols, 0.0);
        for (i, row) in lp.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                if a != 0.0 {
                    cols[j].push((i, a));
                }
            }
            // Slack for row i is column n + i with coefficient +1.
            cols[n + i].push((i, 1.0));
            let (lo, hi) = match row.sense {
                RowSense::Le => (0.0, f64::INFINITY),
                RowSense::Ge => (f64::NEG_INFINITY, 0.0),
                RowSense::Eq => (0.0, 0.0),
            };
            lower[n + i] = lo;
            upper[n + i] = hi;
            rhs.push(row.rhs);
        }
        let mut cost = lp.objective.clone();
        cost.resize(ncols, 0.0);
        Simplex {
            m,
            ncols,
            n_struct: n,
            cols,
            lower,
            upper,
            cost,
            rhs,
            basis: Vec::new(),
            in_basis: vec![false; ncols],
            at: vec![NonbasicAt::Lower; ncols],
            x: vec![0.0; ncols],
            binv: Vec::new(),
            pivots_since_factor: 0,
        }
    }

    fn initial_nonbasic_value(&self, j: usize) -> (f64, NonbasicAt) {
        if self.lower[j].is_finite() {
            (self.lower[j], NonbasicAt::Lower)
        } else if self.upper[j].is_finite() {
            (self.upper[j], NonbasicAt::Upper)
        } else {
            (0.0, NonbasicAt::Zero)
        }
    }

    /// Builds the starting basis: slacks clamped into their bounds, one
    /// artificial column per row whose residual the slack cannot absorb.
    /// Returns the artificial column indices.
    fn install_start_basis(&mut self) -> Vec<usize> {
        let n = self.n_struct;
        for j in 0..self.ncols {
            let (v, at) = self.initial_nonbasic_value(j);
            self.x[j] = v;
            self.at[j] = at;
        }
        // Row residuals with every structural at its bound.
        let mut resid = self.rhs.clone();
        for j in 0..n {
            if self.x[j] != 0.0 {
                for &(i, a) in &self.cols[j] {
                    resid[i] -= a * self.x[j];
                }
            }
        }
        let mut artificials = Vec::new();
        self.basis = Vec::with_capacity(self.m);
        for i in 0..self.m {
            let s = n + i;
            let clamped = resid[i].clamp(self.lower[s], self.upper[s]);
            if (clamped - resid[i]).abs() <= FEAS_TOL {
                // Slack absorbs the residual; it is the basic variable.
                self.x[s] = resid[i];
                self.basis.push(s);
                self.in_basis[s] = true;
            } else {
                // Park the slack at the nearest bound and add an artificial.
                self.x[s] = clamped;
                self.at[s] = if clamped == self.lower[s] {
                    NonbasicAt::Lower
                } else {
                    NonbasicAt::Upper
                };
                let d = resid[i] - clamped;
                let aj = self.ncols;
                self.cols.push(vec![(i, if d >= 0.0 { 1.0 } else { -1.0 })]);
                self.lower.push(0.0);
                self.upper.push(f64::INFINITY);
                self.cost.push(0.0);
                self.at.push(NonbasicAt::Lower);
                self.x.push(d.abs());
                self.in_basis.push(true);
                self.ncols += 1;
                self.basis.push(aj);
                artificials.push(aj);
            }
        }
        self.factorize();
        artificials
    }

    /// Recomputes the dense basis inverse by Gauss-Jordan elimination.
    fn factorize(&mut self) {
        let m = self.m;
        let mut b = vec![0.0; m * m];
        for (pos, &j) in self.basis.iter().enumerate() {
            for &(i, a) in &self.cols[j] {
                b[i * m + pos] = a;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            // Partial pivoting.
            let mut best = col;
            let mut best_abs = b[col * m + col].abs();
            for r in col + 1..m {
                let v = b[r * m + col].abs();
                if v > best_abs {
                    best = r;
                    best_abs = v;
                }
            }
            if best_abs < 1e-12 {
                // Singular basis should not happen; keep going with a tiny
                // pivot so the caller's feasibility check catches the damage.
                b[col * m + col] = if b[col * m + col] >= 0.0 { 1e-12 } else { -1e-12 };
            } else if best != col {
                for k in 0..m {
                    b.swap(col * m + k, best * m + k);
                    inv.swap(col * m + k, best * m + k);
                }
            }
            let p = b[col * m + col];
            for k in 0..m {
                b[col * m + k] /= p;
                inv[col * m + k] /= p;
            }
            for r in 0..m {
                if r != col {
                    let f = b[r * m + col];
                    if f != 0.0 {
                        for k in 0..m {
                            b[r * m + k] -= f * b[col * m + k];
                            inv[r * m + k] -= f * inv[col * m + k];
                        }
                    }
                }
            }
        }
        self.binv = inv;
        self.pivots_since_factor = 0;
    }

    /// Recomputes basic variable values from nonbasic bounds.
    fn recompute_basics(&mut self) {
        let m = self.m;
        let mut resid = self.rhs.clone();
        for j in 0..self.ncols {
            if !self.in_basis[j] && self.x[j] != 0.0 {
                for &(i, a) in &self.cols[j] {
                    resid[i] -= a * self.x[j];
                }
            }
        }
        for pos in 0..m {
            let mut v = 0.0;
            for i in 0..m {
                v += self.binv[pos * m + i] * resid[i];
            }
            self.x[self.basis[pos]] = v;
        }
    }

    /// y = c_B' B^-1 for the given cost vector.
    fn prices(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for pos in 0..m {
            let cb = cost[self.basis[pos]];
            if cb != 0.0 {
                for i in 0..m {
                    y[i] += cb * self.binv[pos * m + i];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, cost: &[f64], y: &[f64]) -> f64 {
        let mut d = cost[j];
        for &(i, a) in &self.cols[j] {
            d -= y[i] * a;
        }
        d
    }

    /// B^-1 A_j.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m];
        for &(i, a) in &self.cols[j] {
            for pos in 0..m {
                let v = self.binv[pos * m + i];
                if v != 0.0 {
                    out[pos] += v * a;
                }
            }
        }
        out
    }

    fn objective_value(&self, cost: &[f64]) -> f64 {
        (0..self.ncols).map(|j| cost[j] * self.x[j]).sum()
    }

    /// Runs primal simplex to optimality for `cost`. Returns Ok(true) when
    /// optimal, Ok(false) when unbounded.
    fn optimize(&mut self, cost: &[f64]) -> Result<bool, LpError> {
        let max_pivots = 10_000 + 200 * (self.m + self.ncols);
        let mut stall = 0usize;
        let mut bland = false;
        let mut last_obj = self.objective_value(cost);
        for _pivot in 0..max_pivots {
            let y = self.prices(cost);
            // Entering variable selection.
            let mut enter: Option<(usize, f64, f64)> = None; // (col, score, dir)
            for j in 0..self.ncols {
                if self.in_basis[j] || self.lower[j] == self.upper[j] {
                    continue;
                }
                let d = self.reduced_cost(j, cost, &y);
                let dir = match self.at[j] {
                    NonbasicAt::Lower => {
                        if d < -OPT_TOL {
                            1.0
                        } else {
                            continue;
                        }
                    }
                    NonbasicAt::Upper => {
                        if d > OPT_TOL {
                            -1.0
                        } else {
                            continue;
                        }
                    }
                    NonbasicAt::Zero => {
                        if d < -OPT_TOL {
                            1.0
                        } else if d > OPT_TOL {
                            -1.0
                        } else {
                            continue;
                        }
                    }
                };
                if bland {
                    enter = Some((j, d.abs(), dir));
                    break;
                }
                match enter {
                    Some((_, best, _)) if d.abs() <= best => {}
                    _ => enter = Some((j, d.abs(), dir)),
                }
            }
            let Some((j_enter, _, dir)) = enter else {
                return Ok(true);
            };

            // Ratio test: x_B changes by -dir * t * (B^-1 A_j).
            let alpha = self.ftran(j_enter);
            let mut t_best = f64::INFINITY;
            let mut leave: Option<(usize, f64)> = None; // (basis position, delta)
            for pos in 0..self.m {
                let delta = -dir * alpha[pos];
                if delta.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[pos];
                let xb = self.x[b];
                let t = if delta > 0.0 {
                    if self.upper[b].is_finite() {
                        (self.upper[b] - xb) / delta
                    } else {
                        continue;
                    }
                } else if self.lower[b].is_finite() {
                    (self.lower[b] - xb) / delta
                } else {
                    continue;
                };
                let t = t.max(0.0);
                let better = if bland {
                    t < t_best - FEAS_TOL
                        || (t < t_best + FEAS_TOL
                            && leave.map_or(true, |(p, _)| self.basis[pos] < self.basis[p]))
                } else {
                    t < t_best - FEAS_TOL
                        || (t < t_best + FEAS_TOL
                            && leave.map_or(true, |(_, d0)| delta.abs() > d0.abs()))
                };
                if better {
                    t_best = t.min(t_best);
                    leave = Some((pos, delta));
                }
            }
            let range = self.upper[j_enter] - self.lower[j_enter];
            let t_flip = if range.is_finite() { range } else { f64::INFINITY };

            if t_best.is_infinite() && t_flip.is_infinite() {
                return Ok(false); // unbounded direction
            }

            if t_flip < t_best - FEAS_TOL {
                // Bound flip: no basis change.
                self.x[j_enter] += dir * t_flip;
                self.at[j_enter] = match self.at[j_enter] {
                    NonbasicAt::Lower => NonbasicAt::Upper,
                    NonbasicAt::Upper => NonbasicAt::Lower,
                    NonbasicAt::Zero => unreachable!("free variable cannot bound-flip"),
                };
                self.recompute_basics();
            } else {
                let (pos, delta) = leave.expect("bounded step requires a leaving variable");
                let b_leave = self.basis[pos];
                // Leaving variable exits at the bound it ran into.
                self.at[b_leave] = if delta > 0.0 {
                    NonbasicAt::Upper
                } else {
                    NonbasicAt::Lower
                };
                self.x[b_leave] = if delta > 0.0 {
                    self.upper[b_leave]
                } else {
                    self.lower[b_leave]
                };
                self.in_basis[b_leave] = false;
                self.in_basis[j_enter] = true;
                self.basis[pos] = j_enter;
                self.x[j_enter] += dir * t_best;
                self.pivot_update(pos, &alpha);
                self.pivots_since_factor += 1;
                if self.pivots_since_factor >= REFACTOR_EVERY {
                    self.factorize();
                }
                self.recompute_basics();
            }

            let obj = self.objective_value(cost);
            if obj < last_obj - 1e-12 {
                stall = 0;
            } else {
                stall += 1;
                if stall >= STALL_LIMIT {
                    bland = true;
                }
            }
            last_obj = obj;
        }
        Err(LpError::IterationLimit(max_pivots))
    }

    /// Eta update of the basis inverse after replacing basis position `pos`,
    /// where `alpha` = B^-1 A_enter.
    fn pivot_update(&mut self, pos: usize, alpha: &[f64]) {
        let m = self.m;
        let p = alpha[pos];
        if p.abs() < 1e-13 {
            self.factorize();
            return;
        }
        for k in 0..m {
            self.binv[pos * m + k] /= p;
        }
        for r in 0..m {
            if r != pos {
                let f = alpha[r];
                if f != 0.0 {
                    for k in 0..m {
                        self.binv[r * m + k] -= f * self.binv[pos * m + k];
                    }
                }
            }
        }
    }

    fn max_primal_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for pos in 0..self.m {
            let j = self.basis[pos];
            if self.lower[j].is_finite() {
                worst = worst.max(self.lower[j] - self.x[j]);
            }
            if self.upper[j].is_finite() {
                worst = worst.max(self.x[j] - self.upper[j]);
            }
        }
        worst
    }
}

/// Solves a linear program to optimality. Deterministic for identical input.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.validate()?;
    if lp.rows.is_empty() {
        return solve_boxed(lp);
    }
    let mut s = Simplex::new(lp);
    let artificials = s.install_start_basis();

    if !artificials.is_empty() {
        let mut c1 = vec![0.0; s.ncols];
        for &aj in &artificials {
            c1[aj] = 1.0;
        }
        let optimal = s.optimize(&c1)?;
        debug_assert!(optimal, "phase 1 is bounded below by zero");
        let infeas = s.objective_value(&c1);
        if infeas > PHASE1_TOL {
            return Ok(LpSolution::non_optimal(LpStatus::Infeasible));
        }
        // Fix artificials at zero so phase 2 cannot reuse them, then try to
        // pivot any still-basic artificial out of the basis.
        for &aj in &artificials {
            s.upper[aj] = 0.0;
        }
        for pos in 0..s.m {
            let b = s.basis[pos];
            if b >= lp.num_vars() + s.m && s.x[b].abs() <= PHASE1_TOL {
                let mut best: Option<(usize, f64)> = None;
                for j in 0..lp.num_vars() + s.m {
                    if s.in_basis[j] || s.lower[j] == s.upper[j] {
                        continue;
                    }
                    let alpha = s.ftran(j);
                    if alpha[pos].abs() > PIVOT_TOL
                        && best.map_or(true, |(_, a0)| alpha[pos].abs() > a0)
                    {
                        best = Some((j, alpha[pos].abs()));
                    }
                }
                if let Some((j, _)) = best {
                    let alpha = s.ftran(j);
                    s.in_basis[b] = false;
                    s.at[b] = NonbasicAt::Lower;
                    s.x[b] = 0.0;
                    s.in_basis[j] = true;
                    s.basis[pos] = j;
                    s.pivot_update(pos, &alpha);
                    s.recompute_basics();
                }
                // If no pivot column exists the row is redundant; the
                // artificial stays basic, frozen at zero by its bounds.
            }
        }
        s.factorize();
        s.recompute_basics();
    }

    let cost = s.cost.clone();
    let optimal = s.optimize(&cost)?;
    if !optimal {
        return Ok(LpSolution::non_optimal(LpStatus::Unbounded));
    }
    if s.max_primal_violation() > 1e-6 {
        // Numerical drift: refactorize and re-optimize once.
        s.factorize();
        s.recompute_basics();
        let optimal = s.optimize(&cost)?;
        if !optimal {
            return Ok(LpSolution::non_optimal(LpStatus::Unbounded));
        }
        if s.max_primal_violation() > 1e-6 {
            return Err(LpError::Numerical("primal feasibility lost".into()));
        }
    }

    let n = lp.num_vars();
    let y = s.prices(&cost);
    let mut reduced = vec![0.0; n];
    for (j, r) in reduced.iter_mut().enumerate() {
        *r = if s.in_basis[j] {
            0.0
        } else {
            s.reduced_cost(j, &cost, &y)
        };
    }
    let primal: Vec<f64> = s.x[..n].to_vec();
    let objective: f64 = (0..n).map(|j| lp.objective[j] * primal[j]).sum();

    // Dual objective: y'b plus reduced-cost contributions of nonbasic
    // variables held at their bounds.
    let mut dual_obj: f64 = y.iter().zip(&s.rhs).map(|(yi, bi)| yi * bi).sum();
    for j in 0..s.ncols {
        if !s.in_basis[j] && s.x[j] != 0.0 {
            dual_obj += s.reduced_cost(j, &cost, &y) * s.x[j];
        }
    }
    let duality_gap = (objective - dual_obj).abs() / (1.0 + objective.abs());

    Ok(LpSolution {
        status: LpStatus::Optimal,
        primal,
        duals: y,
        reduced_costs: reduced,
        objective,
        duality_gap,
    })
}

/// Degenerate case of a box-only program (no rows).
fn solve_boxed(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    let n = lp.num_vars();
    let mut primal = vec![0.0; n];
    let mut reduced = vec![0.0; n];
    for j in 0..n {
        let c = lp.objective[j];
        let v = if c > 0.0 {
            lp.lower[j]
        } else if c < 0.0 {
            lp.upper[j]
        } else if lp.lower[j].is_finite() {
            lp.lower[j]
        } else if lp.upper[j].is_finite() {
            lp.upper[j]
        } else {
            0.0
        };
        if !v.is_finite() {
            return Ok(LpSolution::non_optimal(LpStatus::Unbounded));
        }
        primal[j] = v;
        reduced[j] = c;
    }
    let objective = (0..n).map(|j| lp.objective[j] * primal[j]).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        primal,
        duals: Vec::new(),
        reduced_costs: reduced,
        objective,
        duality_gap: 0.0,
    })
}

#[derive(Debug, Clone)]
pub struct MilpOptions {
    pub integrality_tol: f64,
    pub rel_gap: f64,
    pub node_limit: usize,
}

impl Default for MilpOptions {
    fn default() -> Self {
        MilpOptions {
            integrality_tol: 1e-6,
            rel_gap: 1e-6,
            node_limit: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    /// Node limit hit; the solution carries the incumbent and `bound` the
    /// best still-open relaxation value.
    NodeLimit,
}

#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: MilpStatus,
    pub primal: Vec<f64>,
    /// Duals of the LP with the 0-1 variables fixed at the incumbent.
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub bound: f64,
    pub nodes: usize,
    pub duality_gap: f64,
}

/// Replaces integrality by the box [0,1]: all else identical.
pub fn relax(lp: &LinearProgram, markings: &[usize]) -> LinearProgram {
    let mut out = lp.clone();
    for &j in markings {
        out.lower[j] = out.lower[j].max(0.0);
        out.upper[j] = out.upper[j].min(1.0);
    }
    out
}

struct Node {
    bound: f64,
    fixings: Vec<(usize, f64)>,
}

/// Branch-and-bound over the marked 0-1 variables: best-bound exploration,
/// most-fractional branching. Row duals come from an LP re-solve with the
/// binaries fixed at the incumbent, which is what relaxed-cut extraction on
/// integer stages expects.
pub fn solve_milp(
    lp: &LinearProgram,
    markings: &[usize],
    opts: &MilpOptions,
) -> Result<MilpSolution, LpError> {
    for &j in markings {
        if j >= lp.num_vars() {
            return Err(LpError::Dimension(format!("marking {j} out of range")));
        }
        if lp.lower[j] < -1e-9 || lp.upper[j] > 1.0 + 1e-9 {
            return Err(LpError::Dimension(format!(
                "marked variable {j} must have bounds within [0,1]"
            )));
        }
    }
    let root = relax(lp, markings);

    let mut best_obj = f64::INFINITY;
    let mut best_x: Option<Vec<f64>> = None;
    let mut nodes_explored = 0usize;
    let mut next_id = 0usize;

    // Max-heap keyed on -bound so the smallest relaxation value pops first;
    // ties broken by node id for determinism.
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;
    struct Entry(f64, usize, Node);
    impl PartialEq for Entry {
        fn eq(&self, other: &Self) -> bool {
            self.0 == other.0 && self.1 == other.1
        }
    }
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> Ordering {
            // Reverse on bound, then reverse on id (older first).
            other
                .0
                .partial_cmp(&self.0)
                .unwrap_or(Ordering::Equal)
                .then(other.1.cmp(&self.1))
        }
    }

    let mut heap: BinaryHeap<Entry> = BinaryHeap::new();
    heap.push(Entry(
        f64::NEG_INFINITY,
        next_id,
        Node {

            bound: f64::NEG_INFINITY,
            fixings: Vec::new(),
        },
    ));
    next_id += 1;

    let mut hit_node_limit = false;
    let mut global_bound = f64::NEG_INFINITY;

    while let Some(Entry(_, _, node)) = heap.pop() {
        if nodes_explored >= opts.node_limit {
            hit_node_limit = true;
            global_bound = global_bound.max(node.bound);
            break;
        }
        // Prune against the incumbent.
        if node.bound > best_obj - opts.rel_gap * (1.0 + best_obj.abs()) && best_x.is_some() {
            continue;
        }
        nodes_explored += 1;

        let mut sub = root.clone();
        for &(j, v) in &node.fixings {
            sub.lower[j] = v;
            sub.upper[j] = v;
        }
        let sol = solve_lp(&sub)?;
        match sol.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                return Err(LpError::Numerical(
                    "unbounded relaxation in branch-and-bound".into(),
                ))
            }
            LpStatus::Optimal => {}
        }
        if sol.objective > best_obj - opts.rel_gap * (1.0 + best_obj.abs()) && best_x.is_some() {
            continue;
        }
        // Most-fractional branching variable.
        let mut frac_var: Option<(usize, f64)> = None;
        for &j in markings {
            let v = sol.primal[j];
            let f = (v - v.round()).abs();
            if f > opts.integrality_tol {
                let score = (v - v.floor() - 0.5).abs();
                match frac_var {
                    Some((_, s0)) if score >= s0 => {}
                    _ => frac_var = Some((j, score)),
                }
            }
        }
        match frac_var {
            None => {
                if sol.objective < best_obj {
                    best_obj = sol.objective;
                    best_x = Some(sol.primal.clone());
                }
            }
            Some((j, _)) => {
                for v in [0.0, 1.0] {
                    let mut fixings = node.fixings.clone();
                    fixings.push((j, v));
                    heap.push(Entry(
                        sol.objective,
                        next_id,
                        Node {

                            bound: sol.objective,
                            fixings,
                        },
                    ));
                    next_id += 1;
                }
            }
        }
    }

    let Some(best) = best_x else {
        return Ok(MilpSolution {
            status: if hit_node_limit {
                MilpStatus::NodeLimit
            } else {
                MilpStatus::Infeasible
            },
            primal: Vec::new(),
            duals: Vec::new(),
            reduced_costs: Vec::new(),
            objective: f64::INFINITY,
            bound: global_bound,
            nodes: nodes_explored,
            duality_gap: 0.0,
        });
    };

    // Re-solve with binaries pinned at the incumbent for dual extraction.
    let mut fixed = root.clone();
    for &j in markings {
        let v = best[j].round();
        fixed.lower[j] = v;
        fixed.upper[j] = v;
    }
    let fsol = solve_lp(&fixed)?;
    if fsol.status != LpStatus::Optimal {
        return Err(LpError::Numerical(
            "incumbent-fixed LP failed to re-solve".into(),
        ));
    }
    Ok(MilpSolution {
        status: if hit_node_limit {
            MilpStatus::NodeLimit
        } else {
            MilpStatus::Optimal
        },
        primal: fsol.primal,
        duals: fsol.duals,
        reduced_costs: fsol.reduced_costs,
        objective: fsol.objective,
        bound: if hit_node_limit { global_bound } else { fsol.objective },
        nodes: nodes_explored,
        duality_gap: fsol.duality_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp1() -> LinearProgram {
        // min x s.t. x >= 3, 0 <= x <= 10
        let mut lp = LinearProgram::default();
        let x = lp.add_var(1.0, 0.0, 10.0);
        lp.add_row(vec![(x, 1.0)], RowSense::Ge, 3.0);
        lp
    }

    #[test]
    fn single_variable_bound() {
        let sol = solve_lp(&lp1()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.primal[0] - 3.0).abs() < 1e-9);
        assert!((sol.objective - 3.0).abs() < 1e-9);
        assert!((sol.duals[0] - 1.0).abs() < 1e-9);
        assert!(sol.duality_gap < 1e-6);
    }

    #[test]
    fn infeasible_pair() {
        // x >= 2 and x <= 1
        let mut lp = LinearProgram::default();
        let x = lp.add_var(0.0, 0.0, 10.0);
        lp.add_row(vec![(x, 1.0)], RowSense::Ge, 2.0);
        lp.add_row(vec![(x, 1.0)], RowSense::Le, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var(-1.0, 0.0, f64::INFINITY);
        lp.add_row(vec![(x, 1.0)], RowSense::Ge, 0.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_and_negative_rhs() {
        // min x + y s.t. x - y = -2, x,y in [0, 5] -> y = 2, x = 0.
        let mut lp = LinearProgram::default();
        let x = lp.add_var(1.0, 0.0, 5.0);
        let y = lp.add_var(1.0, 0.0, 5.0);
        lp.add_row(vec![(x, 1.0), (y, -1.0)], RowSense::Eq, -2.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-9);
        assert!((sol.primal[y] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn second_stage_dry_empty_reservoir() {
        // The illustrative second stage at V_i = 0, dry scenario: four
        // thermals of 100 MW at costs 100..400 all run flat out, cost 100000.
        let mut lp = LinearProgram::default();
        let costs = [100.0, 200.0, 300.0, 400.0];
        let pts: Vec<usize> = costs.iter().map(|&c| lp.add_var(c, 0.0, 100.0)).collect();
        let ph = lp.add_var(0.0, 0.0, 400.0);
        let v_end = lp.add_var(0.0, 0.0, 400.0);
        let mut demand: Vec<(usize, f64)> = pts.iter().map(|&j| (j, 1.0)).collect();
        demand.push((ph, 1.0));
        lp.add_row(demand, RowSense::Eq, 400.0);
        lp.add_row(vec![(v_end, 1.0), (ph, 1.0)], RowSense::Eq, 0.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 100_000.0).abs() < 1e-6);
        for &j in &pts {
            assert!((sol.primal[j] - 100.0).abs() < 1e-7);
        }
        assert!(sol.duality_gap < 1e-6);
    }

    #[test]
    fn duals_match_rhs_perturbation() {
        // min 2x + 3y s.t. x + y >= 4, x + 3y >= 6, x,y >= 0
        let build = |b1: f64, b2: f64| {
            let mut lp = LinearProgram::default();
            let x = lp.add_var(2.0, 0.0, f64::INFINITY);
            let y = lp.add_var(3.0, 0.0, f64::INFINITY);
            lp.add_row(vec![(x, 1.0), (y, 1.0)], RowSense::Ge, b1);
            lp.add_row(vec![(x, 1.0), (y, 3.0)], RowSense::Ge, b2);
            lp
        };
        let base = solve_lp(&build(4.0, 6.0)).unwrap();
        let eps = 1e-4;
        for (i, (b1, b2)) in [(4.0 + eps, 6.0), (4.0, 6.0 + eps)].iter().enumerate() {
            let pert = solve_lp(&build(*b1, *b2)).unwrap();
            let predicted = base.objective + base.duals[i] * eps;
            assert!(
                (pert.objective - predicted).abs() <= 1e-6 * (1.0 + pert.objective.abs()),
                "row {i}: predicted {predicted}, got {}",
                pert.objective
            );
        }
    }

    #[test]
    fn knapsack_toy_milp() {
        // min -u1 - u2 s.t. u1 + u2 <= 1, binaries -> objective -1.
        let mut lp = LinearProgram::default();
        let u1 = lp.add_var(-1.0, 0.0, 1.0);
        let u2 = lp.add_var(-1.0, 0.0, 1.0);
        lp.add_row(vec![(u1, 1.0), (u2, 1.0)], RowSense::Le, 1.0);
        let sol = solve_milp(&lp, &[u1, u2], &MilpOptions::default()).unwrap();
        assert_eq!(sol.status, MilpStatus::Optimal);
        assert!((sol.objective + 1.0).abs() < 1e-9);
    }

    #[test]
    fn integral_relaxation_matches_lp() {
        // Relaxation lands on integer values, so the MILP equals the LP.
        let mut lp = LinearProgram::default();
        let u = lp.add_var(-5.0, 0.0, 1.0);
        let x = lp.add_var(1.0, 0.0, 10.0);
        lp.add_row(vec![(u, 1.0), (x, 1.0)], RowSense::Ge, 2.0);
        let lsol = solve_lp(&lp).unwrap();
        let msol = solve_milp(&lp, &[u], &MilpOptions::default()).unwrap();
        assert!((lsol.objective - msol.objective).abs() < 1e-9);
        assert!((lsol.primal[u] - msol.primal[u]).abs() < 1e-9);
    }

    #[test]
    fn relax_is_identity_without_markings() {
        let lp = lp1();
        let r = relax(&lp, &[]);
        assert_eq!(r.num_vars(), lp.num_vars());
        assert_eq!(r.lower, lp.lower);
        assert_eq!(r.upper, lp.upper);
    }

    #[test]
    fn milp_infeasible() {
        // u1 + u2 >= 3 with two binaries.
        let mut lp = LinearProgram::default();
        let u1 = lp.add_var(0.0, 0.0, 1.0);
        let u2 = lp.add_var(0.0, 0.0, 1.0);
        lp.add_row(vec![(u1, 1.0), (u2, 1.0)], RowSense::Ge, 3.0);
        let sol = solve_milp(&lp, &[u1, u2], &MilpOptions::default()).unwrap();
        assert_eq!(sol.status, MilpStatus::Infeasible);
    }

    #[test]
    fn determinism_bitwise() {
        let lp = lp1();
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp(&lp).unwrap();
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.primal, b.primal);
    }

    #[test]
    fn dump_contains_rows() {
        let text = lp1().dump();
        assert!(text.contains("minimize"));
        assert!(text.contains(">= 3"));
    }

    #[test]
    fn free_variable_handled() {
        // min y s.t. y >= x - 3, y >= -x + 1, x free.
        let mut lp = LinearProgram::default();
        let x = lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
        let y = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY);
        lp.add_row(vec![(y, 1.0), (x, -1.0)], RowSense::Ge, -3.0);
        lp.add_row(vec![(y, 1.0), (x, 1.0)], RowSense::Ge, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 1.0).abs() < 1e-8, "obj {}", sol.objective);
        assert!((sol.primal[x] - 2.0).abs() < 1e-8);
    }
}
