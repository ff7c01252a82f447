//! Minimum-cardinality stealthy attack as a big-M MILP.
//!
//! ```text
//! min  Σ_j y_j
//! s.t. (Hc)_i = μ,  (Hc)_p = 0  (p ∈ P)
//!      -M y_j ≤ (Hc)_j ≤ M y_j,  y_j ∈ {0,1},  ‖c‖∞ ≤ c_max
//! ```
//!
//! Presolve groups mutually parallel rows of `H` into weighted classes: such
//! rows are always zero or nonzero together, so one indicator per class with
//! cost equal to the class size is exact.
//!
//! The relaxation is solved in its projected form: each undecided class gets
//! `(Hc)_j = s⁺_j - s⁻_j` with `0 ≤ s± ≤ M`, and at the LP optimum
//! `y_j = (s⁺_j + s⁻_j) / M`, so the relaxation value is
//! `|fixed to one| + Σ_undecided w_j |(Hc)_j| / M`. Fixing `y_j = 0` pins both
//! slacks to zero, fixing `y_j = 1` drops their cost. Every node shares one
//! constraint matrix, so the simplex is warm-started from node to node.
//!
//! Each node also carries the rows projected onto the orthogonal complement
//! of the zero-fixed rows. A row whose projection vanishes is implied zero; a
//! row whose projection is parallel to the target's cannot be zeroed without
//! losing `a_i = μ` and is fixed to one. Both are valid fixings, so the bound
//! stays a true lower bound while the tree shrinks considerably.
//!
//! Search is depth-first, branching on the most fractional `y_j` (lowest index
//! on ties) and exploring the `y_j = 0` child first. Incumbents come from the
//! LP point and from greedily shrinking its support to a minimal one.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::{support_of, AttackPlan, AttackSpec, SolverOptions};
use crate::error::{Error, Result};
use crate::grid_model::GridModel;
use crate::linalg::{self, Matrix, Qr};
use crate::simplex::{LpError, LpProblem, Simplex};

/// Elapsed-time source for the solver's time limit.
pub trait Clock {
    fn elapsed_secs(&self) -> f64;
}

#[allow(dead_code)]
struct NoClock;

impl Clock for NoClock {
    fn elapsed_secs(&self) -> f64 {
        0.0
    }
}

#[cfg(feature = "std")]
struct StdClock(std::time::Instant);

#[cfg(feature = "std")]
impl Clock for StdClock {
    fn elapsed_secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchStats {
    pub nodes: usize,
    pub lp_pivots: usize,
    /// Relaxation value at the root node.
    pub root_bound: f64,
    /// Smallest relaxation value among nodes left open when a limit stopped the search.
    pub open_bound: Option<f64>,
    pub limit_hit: bool,
    /// Each incumbent improvement as (cardinality, relaxation value at the node that produced it).
    pub incumbent_history: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MilpOutcome {
    pub plan: AttackPlan,
    pub stats: SearchStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Fix {
    Free,
    Zero,
    One,
}

#[derive(Clone, Debug)]
struct Incumbent {
    c: Vec<f64>,
    support: Vec<usize>,
}

/// Rows of `H` grouped into classes of mutually parallel rows.
struct Classes {
    /// Representative row; the target row for the target's class, otherwise
    /// the member with the largest ℓ1 norm so `|a_rep| ≤ M` bounds every member.
    rep: Vec<usize>,
    weight: Vec<usize>,
    norm: Vec<f64>,
    target: usize,
}

impl Classes {
    fn build(h: &Matrix, target: usize) -> (Self, Vec<Option<usize>>) {
        let n_z = h.rows();
        let norms: Vec<f64> = h.row_iter().map(linalg::norm2).collect();
        let l1: Vec<f64> = h.row_iter().map(|r| r.iter().map(|v| v.abs()).sum()).collect();
        let mut class_of: Vec<Option<usize>> = vec![None; n_z];
        let mut rep = Vec::new();
        let mut weight = Vec::new();
        for j in 0..n_z {
            if norms[j] == 0.0 || class_of[j].is_some() {
                continue;
            }
            let k = rep.len();
            class_of[j] = Some(k);
            let mut best = j;
            let mut w = 1;
            for g in j + 1..n_z {
                if class_of[g].is_none() && norms[g] > 0.0 && within_line(h.row(j), h.row(g), 1e-10 * norms[g]) {
                    class_of[g] = Some(k);
                    w += 1;
                    if l1[g] > l1[best] {
                        best = g;
                    }
                }
            }
            rep.push(best);
            weight.push(w);
        }
        let target_row = target;
        let target = class_of[target_row].unwrap_or(usize::MAX);
        if target != usize::MAX {
            rep[target] = target_row;
        }
        let norm = rep.iter().map(|&r| norms[r]).collect();
        (Classes { rep, weight, norm, target }, class_of)
    }

    fn len(&self) -> usize {
        self.rep.len()
    }
}

/// Absolute tolerance, relative to the original row norms, for deciding that a
/// projected row vanishes or that the target lies in its span.
const SPAN_TOL: f64 = 1e-8;

/// True when `v` has no component outside the line spanned by `u` beyond `tol`.
fn within_line(u: &[f64], v: &[f64], tol: f64) -> bool {
    let nu = linalg::norm2(u);
    if nu == 0.0 {
        return linalg::norm2(v) <= tol;
    }
    let s = linalg::dot(u, v) / (nu * nu);
    let rest: f64 = u.iter().zip(v).map(|(a, b)| (b - s * a) * (b - s * a)).sum();
    libm::sqrt(rest) <= tol
}

/// Removes the component along unit vector `q` from every listed row of `m`.
fn project_out(m: &mut Matrix, rows: impl Iterator<Item = usize>, q: &[f64]) {
    for r in rows {
        let row = m.row_mut(r);
        let s = linalg::dot(row, q);
        if s != 0.0 {
            linalg::axpy(-s, q, row);
        }
    }
}

/// A node of the search tree. `resid` holds the class representatives projected
/// onto the orthogonal complement of the span of the zero-fixed classes; it is
/// shared with the parent until a zero fix is applied.
struct Node {
    fixes: Vec<Fix>,
    resid: Rc<Matrix>,
    pending_zero: Option<usize>,
    bound: usize,
}

struct Search<'a> {
    h: &'a Matrix,
    spec: &'a AttackSpec,
    classes: Classes,
    n_x: usize,
    big_m: f64,
    c_max: f64,
    tol: f64,
    /// LP slack slot of each class that carries an indicator
    slot: Vec<Option<usize>>,
    problem: LpProblem,
    lp: Simplex,
    applied: Vec<Fix>,
    node_limit: usize,
    time_limit: Option<f64>,
    clock: &'a dyn Clock,
    best: Option<Incumbent>,
}

enum Propagated {
    Pruned,
    Open,
}

impl<'a> Search<'a> {
    fn new(model: &'a GridModel, spec: &'a AttackSpec, opts: &SolverOptions, clock: &'a dyn Clock) -> Result<(Self, Node)> {
        let h = model.h();
        let n_x = h.cols();
        let big_m = opts.resolved_big_m(h);
        let (classes, class_of) = Classes::build(h, spec.target);
        if classes.target == usize::MAX {
            return Err(Error::Infeasible);
        }
        let nc = classes.len();
        let mut fixes = vec![Fix::Free; nc];
        fixes[classes.target] = Fix::One;
        for &p in &spec.protected {
            if let Some(k) = class_of[p] {
                if k == classes.target {
                    return Err(Error::Infeasible);
                }
                fixes[k] = Fix::Zero;
            }
        }
        let mut slot = vec![None; nc];
        let mut n_slots = 0;
        for k in 0..nc {
            if fixes[k] == Fix::Free {
                slot[k] = Some(n_slots);
                n_slots += 1;
            }
        }
        let n = n_x + 2 * n_slots;
        let mut a = Matrix::zeros(nc, n);
        let mut b = vec![0.0; nc];
        for k in 0..nc {
            a.row_mut(k)[..n_x].copy_from_slice(h.row(classes.rep[k]));
            if let Some(s) = slot[k] {
                a[(k, n_x + 2 * s)] = -1.0;
                a[(k, n_x + 2 * s + 1)] = 1.0;
            }
        }
        b[classes.target] = spec.magnitude;
        let mut cost = vec![0.0; n];
        let mut lower = vec![-opts.c_max; n];
        let mut upper = vec![opts.c_max; n];
        for k in 0..nc {
            if let Some(s) = slot[k] {
                for v in [n_x + 2 * s, n_x + 2 * s + 1] {
                    cost[v] = classes.weight[k] as f64;
                    lower[v] = 0.0;
                    upper[v] = big_m;
                }
            }
        }
        let problem = LpProblem { a, b, cost, lower, upper };
        let lp = Simplex::new(&problem);

        let mut resid = h.select_rows(&classes.rep);
        for k in 0..nc {
            if fixes[k] == Fix::Zero {
                Self::zero_project(&classes, &mut resid, &fixes, k);
            }
        }
        let root = Node {
            fixes: fixes.clone(),
            resid: Rc::new(resid),
            pending_zero: None,
            bound: 0,
        };
        let search = Search {
            h,
            spec,
            classes,
            n_x,
            big_m,
            c_max: opts.c_max,
            tol: opts.support_tol,
            slot,
            problem,
            lp,
            applied: vec![Fix::Free; nc],
            node_limit: opts.node_limit,
            time_limit: opts.time_limit,
            clock,
            best: None,
        };
        Ok((search, root))
    }

    fn is_loop(classes: &Classes, resid: &Matrix, k: usize) -> bool {
        linalg::norm2(resid.row(k)) <= SPAN_TOL * classes.norm[k]
    }

    /// Projects class `k`'s residual out of every row that is not already zero-fixed.
    fn zero_project(classes: &Classes, resid: &mut Matrix, fixes: &[Fix], k: usize) {
        if Self::is_loop(classes, resid, k) {
            return;
        }
        let r = resid.row(k);
        let nr = linalg::norm2(r);
        let q: Vec<f64> = r.iter().map(|v| v / nr).collect();
        project_out(resid, (0..classes.len()).filter(|&j| fixes[j] != Fix::Zero || j == k), &q);
    }

    /// Fixes implied zeros (loops) and forced ones (rows parallel to the target
    /// in the residual space); prunes infeasible and dominated nodes.
    fn propagate(&self, node: &mut Node) -> Propagated {
        let cl = &self.classes;
        let t = cl.target;
        let r = &node.resid;
        if Self::is_loop(cl, r, t) {
            return Propagated::Pruned;
        }
        let rt = r.row(t);
        let tol_t = SPAN_TOL * cl.norm[t];
        for k in 0..cl.len() {
            match node.fixes[k] {
                Fix::Zero => {}
                Fix::One if k == t => {}
                Fix::One => {
                    if Self::is_loop(cl, r, k) {
                        // a row fixed to one that can only be zero costs without effect
                        return Propagated::Pruned;
                    }
                }
                Fix::Free => {
                    if Self::is_loop(cl, r, k) {
                        node.fixes[k] = Fix::Zero;
                    } else if within_line(r.row(k), rt, tol_t) {
                        node.fixes[k] = Fix::One;
                    }
                }
            }
        }
        Propagated::Open
    }

    fn weight(&self, fixes: &[Fix]) -> usize {
        fixes
            .iter()
            .zip(&self.classes.weight)
            .filter(|(f, _)| **f == Fix::One)
            .map(|(_, w)| w)
            .sum()
    }

    fn apply(&mut self, fixes: &[Fix]) {
        for (k, &f) in fixes.iter().enumerate() {
            let Some(s) = self.slot[k] else { continue };
            if self.applied[k] == f {
                continue;
            }
            let w = self.classes.weight[k] as f64;
            let (hi, cost) = match f {
                Fix::Free => (self.big_m, w),
                Fix::Zero => (0.0, w),
                Fix::One => (self.big_m, 0.0),
            };
            for v in [self.n_x + 2 * s, self.n_x + 2 * s + 1] {
                self.lp.set_bounds(v, 0.0, hi);
                self.lp.set_cost(v, cost);
            }
            self.applied[k] = f;
        }
    }

    /// LP relaxation at the node: `None` when infeasible, else `(c, objective)`.
    fn relax(&mut self, fixes: &[Fix]) -> Result<Option<(Vec<f64>, f64)>> {
        self.apply(fixes);
        let mut sol = self.lp.solve();
        if matches!(sol, Err(LpError::IterationLimit) | Err(LpError::Unbounded)) {
            let pivots = self.lp.total_pivots;
            self.lp = Simplex::new(&self.problem);
            self.lp.total_pivots = pivots;
            self.applied = vec![Fix::Free; self.classes.len()];
            self.apply(fixes);
            sol = self.lp.solve();
        }
        match sol {
            Ok(s) => Ok(Some((s.x[..self.n_x].to_vec(), s.objective))),
            Err(LpError::Infeasible) => Ok(None),
            Err(LpError::Unbounded) => Err(Error::Lp("relaxation reported unbounded")),
            Err(LpError::IterationLimit) => Err(Error::Lp("iteration limit in relaxation")),
        }
    }

    /// Solves for `c` with every class in `zero` at zero and `a_i = μ`, then
    /// checks the result; `None` if the least-squares point misses the box or a constraint.
    fn finish(&self, zero: &[usize]) -> Option<Incumbent> {
        let mut rows: Vec<usize> = zero.iter().map(|&k| self.classes.rep[k]).collect();
        rows.push(self.spec.target);
        let sys = self.h.select_rows(&rows);
        let mut rhs = vec![0.0; rows.len()];
        *rhs.last_mut().unwrap() = self.spec.magnitude;
        let c = Qr::factor(&sys, 1e-11).solve_least_squares(&rhs);
        self.accept(c)
    }

    fn accept(&self, c: Vec<f64>) -> Option<Incumbent> {
        let a = self.h.mul_vec(&c);
        let mu = self.spec.magnitude;
        let ok = linalg::norm_inf(&c) <= self.c_max * (1.0 + 1e-12)
            && (a[self.spec.target] - mu).abs() <= 1e-9 * (1.0 + mu.abs())
            && self.spec.protected.iter().all(|&p| a[p].abs() <= self.tol);
        ok.then(|| Incumbent {
            support: support_of(&a, self.tol),
            c,
        })
    }

    /// Offers a candidate; smaller support wins, ties go to the lexicographically smaller set.
    fn offer(&mut self, cand: Incumbent, bound: f64, stats: &mut SearchStats) {
        let better = match &self.best {
            None => true,
            Some(b) => cand.support.len() < b.support.len() || (cand.support.len() == b.support.len() && cand.support < b.support),
        };
        if better {
            if self.best.as_ref().is_none_or(|b| cand.support.len() < b.support.len()) {
                stats.incumbent_history.push((cand.support.len(), bound));
            }
            self.best = Some(cand);
        }
    }

    fn best_len(&self) -> usize {
        self.best.as_ref().map_or(usize::MAX, |b| b.support.len())
    }

    /// Completes the node to a minimal support: free classes are zeroed one by
    /// one in the given order unless zeroing would make the target
    /// unreachable, so every survivor is forced and none can be dropped.
    fn greedy(&self, node: &Node, order: &[usize]) -> Option<Incumbent> {
        let cl = &self.classes;
        let t = cl.target;
        let mut local = (*node.resid).clone();
        let mut zeroed: Vec<bool> = node.fixes.iter().map(|f| *f == Fix::Zero).collect();
        let mut weight = self.weight(&node.fixes);
        for &k in order {
            if node.fixes[k] != Fix::Free {
                continue;
            }
            if Self::is_loop(cl, &local, k) {
                zeroed[k] = true;
                continue;
            }
            if within_line(local.row(k), local.row(t), SPAN_TOL * cl.norm[t]) {
                weight += cl.weight[k];
                if weight > self.best_len() {
                    return None;
                }
                continue;
            }
            let r = local.row(k);
            let nr = linalg::norm2(r);
            let q: Vec<f64> = r.iter().map(|v| v / nr).collect();
            zeroed[k] = true;
            project_out(&mut local, (0..cl.len()).filter(|&j| !zeroed[j] || j == k), &q);
        }
        let zero: Vec<usize> = (0..cl.len()).filter(|&k| zeroed[k]).collect();
        self.finish(&zero)
    }

    /// Free classes by increasing alignment of their residual with the target's.
    fn alignment_order(&self, node: &Node) -> Vec<usize> {
        let r = &node.resid;
        let t = self.classes.target;
        let nt = linalg::norm2(r.row(t));
        let mut keyed: Vec<(f64, usize)> = (0..self.classes.len())
            .filter(|&k| node.fixes[k] == Fix::Free)
            .map(|k| {
                let nk = linalg::norm2(r.row(k));
                (linalg::dot(r.row(k), r.row(t)).abs() / (nk * nt), k)
            })
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, k)| k).collect()
    }

    fn out_of_budget(&self, stats: &SearchStats) -> bool {
        stats.nodes >= self.node_limit || self.time_limit.is_some_and(|t| self.clock.elapsed_secs() >= t)
    }

    /// Depth-first search. Nodes whose bound exceeds the incumbent are pruned;
    /// nodes that can only tie it are still explored so the lexicographically
    /// smallest optimal support is found.
    fn run(&mut self, root: Node, stats: &mut SearchStats) -> Result<()> {
        let mut stack = vec![root];
        let mut first = true;
        while let Some(mut node) = stack.pop() {
            if node.bound > self.best_len() {
                continue;
            }
            if self.out_of_budget(stats) {
                stats.limit_hit = true;
                stack.push(node);
                break;
            }
            stats.nodes += 1;
            if let Some(k) = node.pending_zero.take() {
                let mut r = (*node.resid).clone();
                Self::zero_project(&self.classes, &mut r, &node.fixes, k);
                node.fixes[k] = Fix::Zero;
                node.resid = Rc::new(r);
            }
            if let Propagated::Pruned = self.propagate(&mut node) {
                continue;
            }
            let fixed = self.weight(&node.fixes);
            if fixed > self.best_len() {
                continue;
            }
            let Some((c, obj)) = self.relax(&node.fixes)? else {
                continue;
            };
            let relaxation = fixed as f64 + obj / self.big_m;
            if first {
                stats.root_bound = relaxation;
                first = false;
            }
            let a = self.h.mul_vec(&c);
            let open: Vec<usize> = (0..self.classes.len())
                .filter(|&k| node.fixes[k] == Fix::Free && a[self.classes.rep[k]].abs() > self.tol)
                .collect();
            if open.is_empty() {
                // the LP point already has every free class at zero
                let zero: Vec<usize> = (0..self.classes.len()).filter(|&k| node.fixes[k] != Fix::One).collect();
                let cand = self.finish(&zero).or_else(|| self.accept(c.clone()));
                if let Some(cand) = cand {
                    self.offer(cand, relaxation, stats);
                }
                continue;
            }
            // some free class must be nonzero, so the integral objective exceeds `fixed`
            let bound = fixed + 1;
            // two completions: least aligned first, and LP zeros first
            let aligned = self.alignment_order(&node);
            let (lp_zero, lp_support): (Vec<usize>, Vec<usize>) = aligned.iter().partition(|&&k| a[self.classes.rep[k]].abs() <= self.tol);
            for order in [aligned, [lp_zero, lp_support].concat()] {
                if let Some(cand) = self.greedy(&node, &order) {
                    self.offer(cand, relaxation, stats);
                }
            }
            if let Some(cand) = self.accept(c) {
                self.offer(cand, relaxation, stats);
            }
            if bound > self.best_len() {
                continue;
            }
            // most fractional indicator, lowest class on ties
            let mut branch: Option<(usize, f64)> = None;
            for &k in &open {
                let y = (a[self.classes.rep[k]].abs() / self.big_m).min(1.0);
                let dist = (y - 0.5).abs();
                if branch.is_none_or(|(_, d)| dist < d - 1e-15) {
                    branch = Some((k, dist));
                }
            }
            let (k, _) = branch.expect("open is nonempty");
            let mut one = node.fixes.clone();
            one[k] = Fix::One;
            stack.push(Node {
                fixes: one,
                resid: node.resid.clone(),
                pending_zero: None,
                bound,
            });
            stack.push(Node {
                fixes: node.fixes,
                resid: node.resid,
                pending_zero: Some(k),
                bound,
            });
        }
        stats.lp_pivots = self.lp.total_pivots;
        if stats.limit_hit {
            stats.open_bound = stack.iter().map(|n| n.bound as f64).reduce(f64::min);
        }
        Ok(())
    }
}

/// Solves the minimum-resource attack problem; see the module docs.
///
/// With the `std` feature the time limit is measured on the wall clock;
/// without it only the node limit applies.
pub fn min_resource_attack(model: &GridModel, spec: &AttackSpec, opts: &SolverOptions) -> Result<AttackPlan> {
    #[cfg(feature = "std")]
    let clock = StdClock(std::time::Instant::now());
    #[cfg(not(feature = "std"))]
    let clock = NoClock;
    min_resource_attack_with_clock(model, spec, opts, &clock).map(|o| o.plan)
}

pub fn min_resource_attack_with_clock(
    model: &GridModel,
    spec: &AttackSpec,
    opts: &SolverOptions,
    clock: &dyn Clock,
) -> Result<MilpOutcome> {
    opts.validate()?;
    spec.validate(model.n_z())?;
    let (mut search, root) = Search::new(model, spec, opts, clock)?;
    let mut stats = SearchStats::default();
    search.run(root, &mut stats)?;
    let Some(best) = search.best.take() else {
        return Err(if stats.limit_hit { Error::LimitReached } else { Error::Infeasible });
    };
    // proven when no open node could still beat the incumbent
    let optimal = stats.open_bound.is_none_or(|b| b >= best.support.len() as f64);
    let a = model.h().mul_vec(&best.c);
    let plan = AttackPlan {
        cardinality: best.support.len(),
        support: best.support,
        c: best.c,
        a,
        optimal,
        target_index: Some(spec.target),
        magnitude: Some(spec.magnitude),
        c_bound: Some(opts.c_max),
        big_m: Some(search.big_m),
    };
    Ok(MilpOutcome { plan, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::brute_force_min_attack;
    use crate::grid_model::tests::triangle_model;

    #[test]
    fn triangle_injection_target_matches_hand_result() {
        let m = triangle_model();
        let spec = AttackSpec::new(4, 0.5, vec![]).unwrap();
        let p = min_resource_attack(&m, &spec, &SolverOptions::default()).unwrap();
        assert!(p.optimal);
        assert_eq!(p.support, vec![0, 1, 2, 4]);
        assert!((p.a[4] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn agrees_with_oracle_on_every_triangle_target() {
        let m = triangle_model();
        for t in 0..m.n_z() {
            for prot in [vec![], vec![(t + 1) % 5], vec![(t + 1) % 5, (t + 2) % 5]] {
                let spec = AttackSpec::new(t, -0.3, prot).unwrap();
                let bf = brute_force_min_attack(&m, &spec, 5);
                let bb = min_resource_attack(&m, &spec, &SolverOptions::default());
                match (bf, bb) {
                    (Ok(x), Ok(y)) => {
                        assert_eq!(x.support, y.support, "target {t}");
                        assert!(y.optimal);
                    }
                    (Err(Error::NotFound(_)), Err(Error::Infeasible)) => {}
                    (x, y) => panic!("disagreement on target {t}: {x:?} vs {y:?}"),
                }
            }
        }
    }

    #[test]
    fn fully_protected_is_infeasible() {
        let m = triangle_model();
        let spec = AttackSpec::new(0, 1.0, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(min_resource_attack(&m, &spec, &SolverOptions::default()), Err(Error::Infeasible));
    }

    #[test]
    fn node_limit_reports_non_optimal() {
        let m = triangle_model();
        let spec = AttackSpec::new(4, 0.5, vec![]).unwrap();
        let opts = SolverOptions {
            node_limit: 1,
            ..SolverOptions::default()
        };
        let p = min_resource_attack(&m, &spec, &opts).unwrap();
        assert!(!p.optimal);
        assert!((p.a[4] - 0.5).abs() < 1e-9);
    }
}
