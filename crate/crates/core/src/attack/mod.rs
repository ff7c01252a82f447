//! Stealthy false-data-injection attacks.
//!
//! An attack `a = Hc` shifts the apparent state by `c` and leaves the WLS
//! residual untouched. [`min_resource_attack`] finds the sparsest such `a`
//! that moves a chosen measurement by `μ` while keeping a protected set of
//! measurements clean; [`brute_force_min_attack`] answers the same question by
//! enumeration and serves as the oracle for small systems.

mod milp;
mod oracle;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::grid_model::{GridModel, MeasurementVector};
use crate::linalg::Matrix;

pub use milp::{min_resource_attack, min_resource_attack_with_clock, Clock, MilpOutcome, SearchStats};
pub use oracle::brute_force_min_attack;

/// Default bound on `‖c‖∞` in p.u.
pub const DEFAULT_C_MAX: f64 = 10.0;
/// Magnitude below which an entry of `a` counts as zero.
pub const DEFAULT_SUPPORT_TOL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    /// Measurement `i` the attacker wants to move.
    #[serde(rename = "target_index")]
    pub target: usize,
    /// Required change `μ` of the target measurement, p.u.
    pub magnitude: f64,
    /// Measurements that must stay untouched.
    #[serde(rename = "protected_set")]
    pub protected: Vec<usize>,
}

impl AttackSpec {
    pub fn new(target: usize, magnitude: f64, protected: Vec<usize>) -> Result<Self> {
        let spec = Self {
            target,
            magnitude,
            protected,
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        if self.magnitude == 0.0 || !self.magnitude.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "attack magnitude must be finite and nonzero, got {}",
                self.magnitude
            )));
        }
        if self.protected.contains(&self.target) {
            return Err(Error::InvalidArgument(format!("target {} is in the protected set", self.target)));
        }
        Ok(())
    }

    pub fn validate(&self, n_z: usize) -> Result<()> {
        self.check()?;
        if self.target >= n_z {
            return Err(Error::InvalidArgument(format!(
                "target {} out of range for {n_z} measurements",
                self.target
            )));
        }
        if let Some(p) = self.protected.iter().find(|&&p| p >= n_z) {
            return Err(Error::InvalidArgument(format!("protected measurement {p} out of range")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    /// Injected state bias.
    pub c: Vec<f64>,
    /// Attack vector, `Hc`.
    pub a: Vec<f64>,
    /// Indices with `|a_j| > support_tol`, ascending.
    pub support: Vec<usize>,
    pub cardinality: usize,
    /// Proven minimum cardinality.
    pub optimal: bool,
    pub target_index: Option<usize>,
    pub magnitude: Option<f64>,
    /// Box bound on `c` used by the MILP, if any.
    pub c_bound: Option<f64>,
    pub big_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Indicator bound; `None` derives `c_max · max_j ‖h_j‖₁`.
    pub big_m: Option<f64>,
    pub c_max: f64,
    pub support_tol: f64,
    pub node_limit: usize,
    /// Seconds; only honoured when a clock is available.
    pub time_limit: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            big_m: None,
            c_max: DEFAULT_C_MAX,
            support_tol: DEFAULT_SUPPORT_TOL,
            node_limit: 1_000_000,
            time_limit: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = self.big_m {
            if !(m > 0.0) {
                return Err(Error::InvalidArgument(format!("big_M must be positive, got {m}")));
            }
        }
        if !(self.c_max > 0.0) {
            return Err(Error::InvalidArgument(format!("c_max must be positive, got {}", self.c_max)));
        }
        if !(self.support_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "support_tol must be positive, got {}",
                self.support_tol
            )));
        }
        Ok(())
    }

    pub fn resolved_big_m(&self, h: &Matrix) -> f64 {
        self.big_m.unwrap_or_else(|| {
            let max_row = h.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
            self.c_max * max_row
        })
    }
}

pub(crate) fn support_of(a: &[f64], tol: f64) -> Vec<usize> {
    a.iter().enumerate().filter(|(_, v)| v.abs() > tol).map(|(j, _)| j).collect()
}

/// `a = Hc` for an arbitrary bias `c`; no optimality claim.
pub fn craft_attack(model: &GridModel, c: &[f64]) -> Result<AttackPlan> {
    let a = model.apply(c)?;
    let support = support_of(&a, DEFAULT_SUPPORT_TOL);
    Ok(AttackPlan {
        c: c.to_vec(),
        cardinality: support.len(),
        support,
        a,
        optimal: false,
        target_index: None,
        magnitude: None,
        c_bound: None,
        big_m: None,
    })
}

/// `z + a`.
pub fn apply_attack(z: &MeasurementVector, plan: &AttackPlan) -> Result<MeasurementVector> {
    check_dim(z.values.len(), plan.a.len())?;
    Ok(MeasurementVector {
        values: z.values.iter().zip(&plan.a).map(|(v, a)| v + a).collect(),
        timestamp: z.timestamp,
    })
}

/// Scales `c`, `a` and `μ` by `factor`; the support is unchanged by linearity.
pub fn scale_plan(plan: &AttackPlan, factor: f64) -> Result<AttackPlan> {
    if factor == 0.0 || !factor.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "scale factor must be finite and nonzero, got {factor}"
        )));
    }
    Ok(AttackPlan {
        c: plan.c.iter().map(|v| v * factor).collect(),
        a: plan.a.iter().map(|v| v * factor).collect(),
        magnitude: plan.magnitude.map(|m| m * factor),
        ..plan.clone()
    })
}
