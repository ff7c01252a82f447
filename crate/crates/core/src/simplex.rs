//! Dense bounded-variable simplex for `min cᵀx  s.t.  Ax = b,  l ≤ x ≤ u`.
//!
//! Full-tableau implementation with a two-phase primal method, a dual simplex
//! used to re-optimize after bound changes, and periodic refactorization from
//! the original columns. Pricing is Dantzig's rule; after a run of degenerate
//! pivots it switches to Bland's rule, which cannot cycle.
//!
//! Every variable needs at least one finite bound.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{Lu, Matrix};

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-10;
const REFACTOR_EVERY: usize = 150;
const DEGENERATE_RUN: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpError {
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
}

/// Simplex state that can be re-optimized after bound or cost edits.
#[derive(Clone, Debug)]
pub struct Simplex {
    m: usize,
    /// structural variables; artificials occupy columns `n..n+m`
    n: usize,
    /// original constraint columns, rows sign-adjusted, with the artificial identity appended
    a_full: Matrix,
    b: Vec<f64>,
    /// current B⁻¹ A_full
    tab: Matrix,
    basis: Vec<usize>,
    status: Vec<Status>,
    x: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    d: Vec<f64>,
    pivots_since_refactor: usize,
    phase_one_done: bool,
    pub max_iterations: usize,
    pub total_pivots: usize,
}

impl Simplex {
    pub fn new(problem: &LpProblem) -> Self {
        let (m, n) = (problem.a.rows(), problem.a.cols());
        assert_eq!(problem.b.len(), m);
        assert_eq!(problem.cost.len(), n);
        assert_eq!(problem.lower.len(), n);
        assert_eq!(problem.upper.len(), n);
        let mut x = vec![0.0; n + m];
        let mut status = vec![Status::AtLower; n + m];
        for j in 0..n {
            let (l, u) = (problem.lower[j], problem.upper[j]);
            assert!(l.is_finite() || u.is_finite(), "free variables are not supported");
            assert!(l <= u, "empty bound interval");
            if l.is_finite() {
                x[j] = l;
            } else {
                x[j] = u;
                status[j] = Status::AtUpper;
            }
        }
        let mut a_full = Matrix::zeros(m, n + m);
        let mut b = problem.b.clone();
        let mut basis = Vec::with_capacity(m);
        for r in 0..m {
            let row = problem.a.row(r);
            let resid = b[r] - row.iter().zip(&x[..n]).map(|(a, v)| a * v).sum::<f64>();
            let sign = if resid < 0.0 { -1.0 } else { 1.0 };
            let out = a_full.row_mut(r);
            for (o, v) in out[..n].iter_mut().zip(row) {
                *o = sign * v;
            }
            out[n + r] = 1.0;
            b[r] *= sign;
            x[n + r] = sign * resid;
            status[n + r] = Status::Basic;
            basis.push(n + r);
        }
        let mut lower = problem.lower.clone();
        let mut upper = problem.upper.clone();
        lower.extend(core::iter::repeat_n(0.0, m));
        upper.extend(core::iter::repeat_n(f64::INFINITY, m));
        let mut cost = problem.cost.clone();
        cost.extend(core::iter::repeat_n(0.0, m));
        let tab = a_full.clone();
        Simplex {
            m,
            n,
            a_full,
            b,
            tab,
            basis,
            status,
            x,
            lower,
            upper,
            cost,
            d: vec![0.0; n + m],
            pivots_since_refactor: 0,
            phase_one_done: false,
            max_iterations: 50_000,
            total_pivots: 0,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// Current structural values.
    pub fn values(&self) -> &[f64] {
        &self.x[..self.n]
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    pub fn set_cost(&mut self, j: usize, c: f64) {
        assert!(j < self.n);
        self.cost[j] = c;
    }

    /// Changes the bounds of structural variable `j`, keeping the basis.
    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        assert!(j < self.n);
        assert!(lo <= hi && (lo.is_finite() || hi.is_finite()));
        if !self.phase_one_done {
            let mut problem = self.original_problem();
            problem.lower[j] = lo;
            problem.upper[j] = hi;
            let (iters, pivots) = (self.max_iterations, self.total_pivots);
            *self = Simplex::new(&problem);
            self.max_iterations = iters;
            self.total_pivots = pivots;
            return;
        }
        self.lower[j] = lo;
        self.upper[j] = hi;
        if self.status[j] == Status::Basic {
            return;
        }
        let target = match self.status[j] {
            Status::AtLower if lo.is_finite() => lo,
            Status::AtUpper if hi.is_finite() => hi,
            _ if lo.is_finite() => lo,
            _ => hi,
        };
        self.status[j] = if target == lo { Status::AtLower } else { Status::AtUpper };
        let delta = target - self.x[j];
        if delta != 0.0 {
            self.x[j] = target;
            for r in 0..self.m {
                let a = self.tab[(r, j)];
                if a != 0.0 {
                    let bv = self.basis[r];
                    self.x[bv] -= a * delta;
                }
            }
        }
    }

    /// Optimizes from the current basis.
    pub fn solve(&mut self) -> Result<LpSolution, LpError> {
        if !self.phase_one_done {
            self.phase_one()?;
        } else if !self.primal_feasible() {
            if self.dual_feasible() {
                self.compute_reduced_costs();
                self.dual_simplex()?;
            } else {
                self.compute_reduced_costs();
                self.restore_feasibility()?;
            }
        }
        self.compute_reduced_costs();
        self.primal_simplex()?;
        let x = self.x[..self.n].to_vec();
        let objective = x.iter().zip(&self.cost).map(|(a, c)| a * c).sum();
        Ok(LpSolution { x, objective })
    }

    fn phase_one(&mut self) -> Result<(), LpError> {
        let saved = core::mem::take(&mut self.cost);
        let mut c1 = vec![0.0; self.n + self.m];
        c1[self.n..].iter_mut().for_each(|v| *v = 1.0);
        self.cost = c1;
        self.compute_reduced_costs();
        let res = self.primal_simplex();
        self.cost = saved;
        match res {
            Ok(()) => {}
            Err(LpError::Unbounded) => unreachable!("phase one is bounded below"),
            Err(e) => return Err(e),
        }
        let infeas: f64 = self.x[self.n..].iter().sum();
        let scale = 1.0 + self.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if infeas > 1e-7 * scale {
            return Err(LpError::Infeasible);
        }
        // artificials are pinned to zero from here on
        for k in self.n..self.n + self.m {
            self.lower[k] = 0.0;
            self.upper[k] = 0.0;
            if self.status[k] != Status::Basic {
                self.status[k] = Status::AtLower;
                self.x[k] = 0.0;
            }
        }
        // drive remaining basic artificials out where a structural pivot exists
        for r in 0..self.m {
            if self.basis[r] >= self.n {
                let q = (0..self.n)
                    .filter(|&j| self.status[j] != Status::Basic)
                    .max_by(|&i, &j| self.tab[(r, i)].abs().total_cmp(&self.tab[(r, j)].abs()));
                if let Some(q) = q {
                    if self.tab[(r, q)].abs() > 1e-7 {
                        let leaving = self.basis[r];
                        self.pivot(r, q);
                        self.status[leaving] = Status::AtLower;
                        self.x[leaving] = 0.0;
                    }
                }
            }
        }
        self.phase_one_done = true;
        self.refactor();
        Ok(())
    }

    /// Phase-one style repair when neither primal nor dual feasibility holds.
    fn restore_feasibility(&mut self) -> Result<(), LpError> {
        // Piecewise-linear infeasibility minimization is more than this needs:
        // rebuild from the original data and rerun phase one.
        let problem = self.original_problem();
        let iters = self.max_iterations;
        let pivots = self.total_pivots;
        *self = Simplex::new(&problem);
        self.max_iterations = iters;
        self.total_pivots = pivots;
        self.phase_one()
    }

    fn original_problem(&self) -> LpProblem {
        let mut a = Matrix::zeros(self.m, self.n);
        for r in 0..self.m {
            a.row_mut(r).copy_from_slice(&self.a_full.row(r)[..self.n]);
        }
        LpProblem {
            a,
            b: self.b.clone(),
            cost: self.cost[..self.n].to_vec(),
            lower: self.lower[..self.n].to_vec(),
            upper: self.upper[..self.n].to_vec(),
        }
    }

    fn primal_feasible(&self) -> bool {
        self.basis
            .iter()
            .all(|&v| self.x[v] >= self.lower[v] - FEAS_TOL && self.x[v] <= self.upper[v] + FEAS_TOL)
    }

    fn dual_feasible(&mut self) -> bool {
        self.compute_reduced_costs();
        (0..self.n + self.m).all(|j| match self.status[j] {
            Status::Basic => true,
            _ if self.lower[j] == self.upper[j] => true,
            Status::AtLower => self.d[j] >= -OPT_TOL,
            Status::AtUpper => self.d[j] <= OPT_TOL,
        })
    }

    fn compute_reduced_costs(&mut self) {
        let mut d = self.cost.clone();
        for r in 0..self.m {
            let cb = self.cost[self.basis[r]];
            if cb != 0.0 {
                for (dj, t) in d.iter_mut().zip(self.tab.row(r)) {
                    *dj -= cb * t;
                }
            }
        }
        for &bv in &self.basis {
            d[bv] = 0.0;
        }
        self.d = d;
    }

    fn primal_simplex(&mut self) -> Result<(), LpError> {
        let mut degenerate = 0usize;
        let mut iters = 0usize;
        loop {
            iters += 1;
            if iters > self.max_iterations {
                return Err(LpError::IterationLimit);
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let Some((q, dir)) = self.price(bland) else {
                return Ok(());
            };
            // ratio test
            let mut step = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, bool)> = None; // (row, leaves at upper)
            for r in 0..self.m {
                let alpha = dir * self.tab[(r, q)];
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let bv = self.basis[r];
                let (limit, at_upper) = if alpha > 0.0 {
                    ((self.x[bv] - self.lower[bv]) / alpha, false)
                } else if self.upper[bv].is_finite() {
                    ((self.upper[bv] - self.x[bv]) / -alpha, true)
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                let better = match leave {
                    None => limit < step,
                    Some((lr, _)) => {
                        if limit < step - 1e-12 {
                            true
                        } else if limit <= step + 1e-12 {
                            if bland {
                                bv < self.basis[lr]
                            } else {
                                alpha.abs() > self.tab[(lr, q)].abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    step = limit;
                    leave = Some((r, at_upper));
                }
            }
            if step.is_infinite() {
                return Err(LpError::Unbounded);
            }
            if step <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            // move entering variable
            for r in 0..self.m {
                let a = self.tab[(r, q)];
                if a != 0.0 {
                    let bv = self.basis[r];
                    self.x[bv] -= dir * step * a;
                }
            }
            self.x[q] += dir * step;
            match leave {
                None => {
                    // bound flip
                    self.status[q] = if dir > 0.0 { Status::AtUpper } else { Status::AtLower };
                    self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                }
                Some((r, at_upper)) => {
                    let leaving = self.basis[r];
                    self.pivot(r, q);
                    if at_upper {
                        self.status[leaving] = Status::AtUpper;
                        self.x[leaving] = self.upper[leaving];
                    } else {
                        self.status[leaving] = Status::AtLower;
                        self.x[leaving] = self.lower[leaving];
                    }
                    self.maybe_refactor();
                }
            }
        }
    }

    /// Entering variable and direction (+1 increase, -1 decrease).
    fn price(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.n + self.m {
            if self.lower[j] == self.upper[j] {
                continue;
            }
            let dir = match self.status[j] {
                Status::Basic => continue,
                Status::AtLower if self.d[j] < -OPT_TOL => 1.0,
                Status::AtUpper if self.d[j] > OPT_TOL => -1.0,
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            let score = self.d[j].abs();
            if score > best_score {
                best_score = score;
                best = Some((j, dir));
            }
        }
        best
    }

    fn dual_simplex(&mut self) -> Result<(), LpError> {
        let mut iters = 0usize;
        loop {
            iters += 1;
            if iters > self.max_iterations {
                return Err(LpError::IterationLimit);
            }
            // leaving row: largest bound violation
            let mut pick: Option<(usize, f64)> = None;
            let mut worst = FEAS_TOL;
            for r in 0..self.m {
                let bv = self.basis[r];
                let below = self.lower[bv] - self.x[bv];
                let above = self.x[bv] - self.upper[bv];
                if below > worst {
                    worst = below;
                    pick = Some((r, self.lower[bv]));
                } else if above > worst {
                    worst = above;
                    pick = Some((r, self.upper[bv]));
                }
            }
            let Some((r, bound)) = pick else {
                return Ok(());
            };
            let bv = self.basis[r];
            let increase = self.x[bv] < bound;
            // x_B = β - Σ α_j x_j, so raising x_B needs Δx_j·α_j < 0
            let mut q_best: Option<usize> = None;
            let mut ratio_best = f64::INFINITY;
            for j in 0..self.n + self.m {
                if self.status[j] == Status::Basic || self.lower[j] == self.upper[j] {
                    continue;
                }
                let alpha = self.tab[(r, j)];
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let can_increase = self.status[j] == Status::AtLower;
                let eligible = if increase {
                    (alpha < 0.0) == can_increase
                } else {
                    (alpha > 0.0) == can_increase
                };
                if !eligible {
                    continue;
                }
                let ratio = (self.d[j] / alpha).abs();
                if ratio < ratio_best - 1e-12
                    || (ratio <= ratio_best + 1e-12 && q_best.is_none_or(|qb| alpha.abs() > self.tab[(r, qb)].abs()))
                {
                    ratio_best = ratio;
                    q_best = Some(j);
                }
            }
            let Some(q) = q_best else {
                return Err(LpError::Infeasible);
            };
            let alpha = self.tab[(r, q)];
            let delta_q = (self.x[bv] - bound) / alpha;
            for rr in 0..self.m {
                let a = self.tab[(rr, q)];
                if a != 0.0 {
                    let v = self.basis[rr];
                    self.x[v] -= a * delta_q;
                }
            }
            self.x[q] += delta_q;
            self.x[bv] = bound;
            self.pivot(r, q);
            self.status[bv] = if bound == self.lower[bv] {
                Status::AtLower
            } else {
                Status::AtUpper
            };
            self.maybe_refactor();
        }
    }

    /// Gauss-Jordan pivot on `(r, q)`; updates tableau, basis and reduced costs.
    fn pivot(&mut self, r: usize, q: usize) {
        let width = self.n + self.m;
        let piv = self.tab[(r, q)];
        {
            let row = self.tab.row_mut(r);
            for v in row.iter_mut() {
                *v /= piv;
            }
        }
        let prow: Vec<f64> = self.tab.row(r).to_vec();
        for rr in 0..self.m {
            if rr == r {
                continue;
            }
            let f = self.tab[(rr, q)];
            if f != 0.0 {
                let row = self.tab.row_mut(rr);
                for (v, p) in row.iter_mut().zip(&prow) {
                    *v -= f * p;
                }
                row[q] = 0.0;
            }
        }
        let dq = self.d[q];
        if dq != 0.0 {
            for j in 0..width {
                self.d[j] -= dq * prow[j];
            }
        }
        self.d[q] = 0.0;
        let leaving = self.basis[r];
        self.basis[r] = q;
        self.status[q] = Status::Basic;
        self.d[leaving] = -dq * prow[leaving];
        self.total_pivots += 1;
        self.pivots_since_refactor += 1;
    }

    fn maybe_refactor(&mut self) {
        if self.pivots_since_refactor >= REFACTOR_EVERY {
            self.refactor();
            self.compute_reduced_costs();
        }
    }

    /// Recomputes B⁻¹A and the basic values from the original columns.
    fn refactor(&mut self) {
        let m = self.m;
        let mut bmat = Matrix::zeros(m, m);
        for (k, &v) in self.basis.iter().enumerate() {
            for r in 0..m {
                bmat[(r, k)] = self.a_full[(r, v)];
            }
        }
        let Some(lu) = Lu::factor(&bmat, 1e-14) else {
            // keep the updated tableau if the basis matrix looks singular numerically
            return;
        };
        let width = self.n + m;
        let mut tab = Matrix::zeros(m, width);
        let mut col = vec![0.0; m];
        for j in 0..width {
            let mut nz = false;
            for r in 0..m {
                col[r] = self.a_full[(r, j)];
                nz |= col[r] != 0.0;
            }
            if !nz {
                continue;
            }
            let s = lu.solve(&col);
            for r in 0..m {
                tab[(r, j)] = s[r];
            }
        }
        // B x_B = b - N x_N
        let mut rhs = self.b.clone();
        for j in 0..width {
            if self.status[j] != Status::Basic && self.x[j] != 0.0 {
                for r in 0..m {
                    rhs[r] -= self.a_full[(r, j)] * self.x[j];
                }
            }
        }
        let xb = lu.solve(&rhs);
        for (k, &v) in self.basis.iter().enumerate() {
            self.x[v] = xb[k];
        }
        self.tab = tab;
        self.pivots_since_refactor = 0;
    }
}

/// One-shot solve.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    Simplex::new(problem).solve()
}
