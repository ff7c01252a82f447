use alloc::vec::Vec;

use super::{support_of, AttackPlan, AttackSpec};
use crate::error::{Error, Result};
use crate::grid_model::GridModel;
use crate::linalg::{Matrix, Qr};

/// Exhaustive search over supports of increasing size, lexicographic within a size.
///
/// For each candidate support `S` (containing the target, avoiding the
/// protected set) it solves `[H_{S^c}; h_i] c = [0; μ]` in the least-squares
/// sense and accepts `S` when the system is consistent. The first hit is a
/// minimum-cardinality attack and the lexicographically smallest one.
/// The box bound on `c` used by the MILP is not imposed here.
pub fn brute_force_min_attack(model: &GridModel, spec: &AttackSpec, max_support: usize) -> Result<AttackPlan> {
    let n_z = model.n_z();
    spec.validate(n_z)?;
    let h = model.h();
    let allowed: Vec<usize> = (0..n_z).filter(|j| !spec.protected.contains(j)).collect();
    let tol = 1e-9 * (1.0 + spec.magnitude.abs()) * (1.0 + h.max_abs());
    let limit = max_support.min(allowed.len());
    for k in 1..=limit {
        let mut comb: Vec<usize> = (0..k).collect();
        loop {
            let support: Vec<usize> = comb.iter().map(|&p| allowed[p]).collect();
            if support.contains(&spec.target) {
                if let Some(c) = consistent_bias(h, spec, &support, tol) {
                    let a = h.mul_vec(&c);
                    let found = support_of(&a, super::DEFAULT_SUPPORT_TOL);
                    return Ok(AttackPlan {
                        c,
                        cardinality: found.len(),
                        support: found,
                        a,
                        optimal: true,
                        target_index: Some(spec.target),
                        magnitude: Some(spec.magnitude),
                        c_bound: None,
                        big_m: None,
                    });
                }
            }
            if !next_combination(&mut comb, allowed.len()) {
                break;
            }
        }
    }
    Err(Error::NotFound(limit))
}

fn consistent_bias(h: &Matrix, spec: &AttackSpec, support: &[usize], tol: f64) -> Option<Vec<f64>> {
    let mut rows: Vec<usize> = (0..h.rows()).filter(|j| !support.contains(j)).collect();
    rows.push(spec.target);
    let sys = h.select_rows(&rows);
    let mut rhs = alloc::vec![0.0; rows.len()];
    *rhs.last_mut().unwrap() = spec.magnitude;
    let c = Qr::factor(&sys, 1e-11).solve_least_squares(&rhs);
    let fit = sys.mul_vec(&c);
    let ok = fit.iter().zip(&rhs).all(|(f, r)| (f - r).abs() <= tol);
    ok.then_some(c)
}

/// Advances `comb` to the next k-combination of `0..n` in lexicographic order.
fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let k = comb.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if comb[i] < n - k + i {
            comb[i] += 1;
            for j in i + 1..k {
                comb[j] = comb[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
