//! Linear DC measurement model `z = Hx + e`.
//!
//! The state is the vector of net active-power injections at every non-slack
//! bus (p.u., 100 MVA base). The slack bus has zero angle and absorbs the
//! power balance, so its injection is `-Σx`. Bus and branch indices are
//! zero-based throughout the crate.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Lu, Matrix};

/// Per-unit power base in MVA.
pub const BASE_MVA: f64 = 100.0;

/// Standard deviation used when a measurement file omits one.
pub const DEFAULT_SIGMA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Series reactance in p.u.
    pub reactance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridTopology {
    pub bus_count: usize,
    pub slack_bus: usize,
    pub branches: Vec<Branch>,
    pub load_buses: Vec<usize>,
    pub gen_buses: Vec<usize>,
}

impl GridTopology {
    /// Checks bus indices, reactances and connectivity.
    pub fn validate(&self) -> Result<()> {
        if self.bus_count < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 buses, got {}", self.bus_count)));
        }
        if self.slack_bus >= self.bus_count {
            return Err(Error::InvalidGrid(format!("slack bus {} out of range", self.slack_bus)));
        }
        for (k, br) in self.branches.iter().enumerate() {
            if br.from >= self.bus_count || br.to >= self.bus_count {
                return Err(Error::InvalidGrid(format!("branch {k} references a bus out of range")));
            }
            if br.from == br.to {
                return Err(Error::InvalidGrid(format!("branch {k} is a self-loop at bus {}", br.from)));
            }
            if !(br.reactance > 0.0) || !br.reactance.is_finite() {
                return Err(Error::NonpositiveReactance {
                    branch: k,
                    reactance: br.reactance,
                });
            }
        }
        for &b in self.load_buses.iter().chain(&self.gen_buses) {
            if b >= self.bus_count {
                return Err(Error::InvalidGrid(format!("load/gen bus {b} out of range")));
            }
        }
        let isolated = self.unreachable_buses();
        if !isolated.is_empty() {
            return Err(Error::Disconnected(isolated));
        }
        Ok(())
    }

    /// Buses not reachable from the slack bus.
    pub fn unreachable_buses(&self) -> Vec<usize> {
        let mut adj = vec![Vec::new(); self.bus_count];
        for br in &self.branches {
            if br.from < self.bus_count && br.to < self.bus_count {
                adj[br.from].push(br.to);
                adj[br.to].push(br.from);
            }
        }
        let mut seen = vec![false; self.bus_count];
        let mut queue = VecDeque::new();
        seen[self.slack_bus] = true;
        queue.push_back(self.slack_bus);
        while let Some(b) = queue.pop_front() {
            for &n in &adj[b] {
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        (0..self.bus_count).filter(|&b| !seen[b]).collect()
    }

    /// Number of state variables (non-slack buses).
    pub fn n_x(&self) -> usize {
        self.bus_count - 1
    }

    /// Position of `bus` in the state vector, `None` for the slack bus.
    pub fn state_index(&self, bus: usize) -> Option<usize> {
        match bus.cmp(&self.slack_bus) {
            core::cmp::Ordering::Less => Some(bus),
            core::cmp::Ordering::Equal => None,
            core::cmp::Ordering::Greater => Some(bus - 1),
        }
    }

    /// Bus held at position `k` of the state vector.
    pub fn state_bus(&self, k: usize) -> usize {
        if k < self.slack_bus {
            k
        } else {
            k + 1
        }
    }

    /// Reduced susceptance matrix B̃ (slack row and column removed).
    pub fn reduced_susceptance(&self) -> Matrix {
        let n = self.n_x();
        let mut b = Matrix::zeros(n, n);
        for br in &self.branches {
            let y = 1.0 / br.reactance;
            let f = self.state_index(br.from);
            let t = self.state_index(br.to);
            if let Some(f) = f {
                b[(f, f)] += y;
            }
            if let Some(t) = t {
                b[(t, t)] += y;
            }
            if let (Some(f), Some(t)) = (f, t) {
                b[(f, t)] -= y;
                b[(t, f)] -= y;
            }
        }
        b
    }

    /// First branch joining `a` and `b` in either orientation.
    pub fn find_branch(&self, a: usize, b: usize) -> Option<usize> {
        self.branches
            .iter()
            .position(|br| (br.from == a && br.to == b) || (br.from == b && br.to == a))
    }
}

/// Placement of sensors. Rows of H are ordered: all flows, then all injections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementConfig {
    /// Branch indices; flow measured in the branch's from → to direction.
    pub flow_measurements: Vec<usize>,
    /// Bus indices. A bus may appear more than once (separate load and generator meters).
    pub injection_measurements: Vec<usize>,
    /// One σ per measurement, flows first.
    pub noise_sigmas: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasurementKind {
    Flow { branch: usize },
    Injection { bus: usize },
}

impl MeasurementConfig {
    /// Every branch flow plus the injection at every non-slack bus.
    pub fn full(topology: &GridTopology, sigma: f64) -> Self {
        let flows: Vec<usize> = (0..topology.branches.len()).collect();
        let inj: Vec<usize> = (0..topology.bus_count).filter(|&b| b != topology.slack_bus).collect();
        Self::with_sigma(flows, inj, sigma)
    }

    /// Every branch flow plus one injection meter per load and one per generator.
    pub fn load_and_gen_meters(topology: &GridTopology, sigma: f64) -> Self {
        let flows: Vec<usize> = (0..topology.branches.len()).collect();
        let inj: Vec<usize> = topology.load_buses.iter().chain(&topology.gen_buses).copied().collect();
        Self::with_sigma(flows, inj, sigma)
    }

    pub fn with_sigma(flows: Vec<usize>, injections: Vec<usize>, sigma: f64) -> Self {
        let n = flows.len() + injections.len();
        Self {
            flow_measurements: flows,
            injection_measurements: injections,
            noise_sigmas: vec![sigma; n],
        }
    }

    pub fn n_z(&self) -> usize {
        self.flow_measurements.len() + self.injection_measurements.len()
    }

    pub fn kind(&self, j: usize) -> MeasurementKind {
        let nf = self.flow_measurements.len();
        if j < nf {
            MeasurementKind::Flow {
                branch: self.flow_measurements[j],
            }
        } else {
            MeasurementKind::Injection {
                bus: self.injection_measurements[j - nf],
            }
        }
    }

    /// Index of the first flow measurement on `branch`.
    pub fn flow_row(&self, branch: usize) -> Option<usize> {
        self.flow_measurements.iter().position(|&b| b == branch)
    }

    /// Indices of every injection measurement at `bus`.
    pub fn injection_rows(&self, bus: usize) -> Vec<usize> {
        let nf = self.flow_measurements.len();
        self.injection_measurements
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == bus)
            .map(|(k, _)| nf + k)
            .collect()
    }

    pub fn validate(&self, topology: &GridTopology) -> Result<()> {
        if self.noise_sigmas.len() != self.n_z() {
            return Err(Error::InvalidMeasurement(format!(
                "{} sigmas for {} measurements",
                self.noise_sigmas.len(),
                self.n_z()
            )));
        }
        if let Some(&b) = self.flow_measurements.iter().find(|&&b| b >= topology.branches.len()) {
            return Err(Error::InvalidMeasurement(format!("flow on unknown branch {b}")));
        }
        if let Some(&b) = self.injection_measurements.iter().find(|&&b| b >= topology.bus_count) {
            return Err(Error::InvalidMeasurement(format!("injection at unknown bus {b}")));
        }
        if let Some(s) = self.noise_sigmas.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidMeasurement(format!("nonpositive sigma {s}")));
        }
        if self.n_z() < topology.n_x() {
            return Err(Error::InvalidMeasurement(format!(
                "{} measurements cannot observe {} states",
                self.n_z(),
                topology.n_x()
            )));
        }
        Ok(())
    }
}

/// State vector: injections at non-slack buses, p.u.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f64>);

/// One observation z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector {
    pub values: Vec<f64>,
    pub timestamp: Option<u64>,
}

impl MeasurementVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, timestamp: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    pub topology: GridTopology,
    pub config: MeasurementConfig,
    h: Matrix,
}

impl GridModel {
    /// Measurement Jacobian H (n_z × n_x).
    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn n_x(&self) -> usize {
        self.h.cols()
    }

    pub fn n_z(&self) -> usize {
        self.h.rows()
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.config.noise_sigmas
    }

    /// Diagonal of R.
    pub fn variances(&self) -> Vec<f64> {
        self.sigmas().iter().map(|s| s * s).collect()
    }

    /// Builds a model directly from a matrix and sigmas; the topology is a placeholder.
    ///
    /// Used for abstract linear models such as H = identity in tests and examples.
    pub fn from_matrix(h: Matrix, sigmas: Vec<f64>) -> Result<Self> {
        check_dim(h.rows(), sigmas.len())?;
        let n_x = h.cols();
        let r = linalg::rank(&h);
        if r < n_x {
            return Err(Error::Unobservable { rank: r, needed: n_x });
        }
        if sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidMeasurement("nonpositive sigma".into()));
        }
        let topology = GridTopology {
            bus_count: n_x + 1,
            slack_bus: n_x,
            branches: Vec::new(),
            load_buses: Vec::new(),
            gen_buses: Vec::new(),
        };
        let config = MeasurementConfig {
            flow_measurements: Vec::new(),
            injection_measurements: (0..h.rows()).collect(),
            noise_sigmas: sigmas,
        };
        Ok(Self { topology, config, h })
    }

    /// `Hx`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n_x(), x.len())?;
        Ok(self.h.mul_vec(x))
    }

    /// Injection at every bus, slack included.
    pub fn bus_injections(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n_x(), x.len())?;
        let topo = &self.topology;
        let mut p = vec![0.0; topo.bus_count];
        for (k, &v) in x.iter().enumerate() {
            p[topo.state_bus(k)] = v;
        }
        p[topo.slack_bus] = -x.iter().sum::<f64>();
        Ok(p)
    }
}

/// Assembles H from the topology and sensor placement, verifying observability.
pub fn build_h_matrix(topology: &GridTopology, config: &MeasurementConfig) -> Result<GridModel> {
    topology.validate()?;
    config.validate(topology)?;
    let n_x = topology.n_x();
    let b = topology.reduced_susceptance();
    let lu = Lu::factor(&b, 1e-13).ok_or(Error::SingularSusceptance)?;
    // θ = B̃⁻¹ x; slack angle is zero
    let theta_of_x = lu.inverse();
    let theta_row = |bus: usize| -> Option<&[f64]> { topology.state_index(bus).map(|k| theta_of_x.row(k)) };

    let mut h = Matrix::zeros(config.n_z(), n_x);
    for (row, &br_idx) in config.flow_measurements.iter().enumerate() {
        let br = topology.branches[br_idx];
        let out = h.row_mut(row);
        if let Some(tf) = theta_row(br.from) {
            linalg::axpy(1.0 / br.reactance, tf, out);
        }
        if let Some(tt) = theta_row(br.to) {
            linalg::axpy(-1.0 / br.reactance, tt, out);
        }
    }
    let nf = config.flow_measurements.len();
    for (k, &bus) in config.injection_measurements.iter().enumerate() {
        let out = h.row_mut(nf + k);
        match topology.state_index(bus) {
            Some(s) => out[s] = 1.0,
            None => out.iter_mut().for_each(|v| *v = -1.0),
        }
    }
    let r = linalg::rank(&h);
    if r < n_x {
        return Err(Error::Unobservable { rank: r, needed: n_x });
    }
    Ok(GridModel {
        topology: topology.clone(),
        config: config.clone(),
        h,
    })
}

/// `z = Hx + e` with `e ~ N(0, R)` drawn from a ChaCha8 stream seeded by `seed`.
/// `seed = None` gives `e = 0`.
pub fn measure(model: &GridModel, x: &StateVector, seed: Option<u64>) -> Result<MeasurementVector> {
    let mut z = model.apply(&x.0)?;
    if let Some(seed) = seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (zi, s) in z.iter_mut().zip(model.sigmas()) {
            let e: f64 = StandardNormal.sample(&mut rng);
            *zi += s * e;
        }
    }
    Ok(MeasurementVector::new(z))
}
