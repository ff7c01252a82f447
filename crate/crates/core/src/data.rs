//! Load time series, scenario generation, chronological splitting and attack campaigns.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attack::{scale_plan, AttackPlan};
use crate::error::{check_dim, Error, Result};
use crate::grid_model::{measure, GridModel, StateVector, BASE_MVA};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LoadSource {
    Ingested,
    Synthetic { seed: u64 },
}

/// Hourly active-power demand in MW, one column per load point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadSeries {
    pub names: Vec<String>,
    pub mw: Matrix,
    pub source: LoadSource,
}

impl LoadSeries {
    pub fn n_hours(&self) -> usize {
        self.mw.rows()
    }

    pub fn n_points(&self) -> usize {
        self.mw.cols()
    }
}

/// Keeps rows with every cell present and nonnegative. Returns the series and
/// the number of dropped rows.
pub fn clean_load_rows(names: Vec<String>, rows: &[Vec<Option<f64>>]) -> Result<(LoadSeries, usize)> {
    let width = names.len();
    if width == 0 {
        return Err(Error::Empty("load point list"));
    }
    let mut data = Vec::new();
    let mut kept = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::InvalidArgument(format!(
                "row {} has {} cells, expected {width}",
                i + 1,
                row.len()
            )));
        }
        if row.iter().all(|v| matches!(v, Some(x) if x.is_finite() && *x >= 0.0)) {
            data.extend(row.iter().map(|v| v.unwrap()));
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::Empty("load series after dropping incomplete rows"));
    }
    let series = LoadSeries {
        names,
        mw: Matrix::from_vec(kept, width, data),
        source: LoadSource::Ingested,
    };
    Ok((series, rows.len() - kept))
}

/// Daily shape with a morning ramp and an evening peak, zero mean over a day.
fn diurnal(hour: f64) -> f64 {
    let w = 2.0 * PI * hour / 24.0;
    0.8 * libm::sin(w - 2.0 * PI * 9.0 / 24.0) + 0.2 * libm::sin(2.0 * w)
}

/// Yearly shape peaking in winter, zero mean over a year.
fn seasonal(hour: f64) -> f64 {
    libm::cos(2.0 * PI * hour / 8760.0)
}

/// `base_k (1 + 0.15 diurnal + 0.1 seasonal + 0.05 N(0,1))`, clamped at zero.
///
/// Bases are log-uniform in [10, 200] MW and each load point gets its daily
/// shape shifted by up to ±2 h, all drawn from one seeded stream.
pub fn synthesize_loads(n_hours: usize, n_points: usize, seed: u64) -> Result<LoadSeries> {
    if n_hours == 0 || n_points == 0 {
        return Err(Error::InvalidArgument(format!(
            "need positive sizes, got {n_hours} hours x {n_points} points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (libm::log(10.0), libm::log(200.0));
    let bases: Vec<f64> = (0..n_points).map(|_| libm::exp(rng.gen_range(lo..hi))).collect();
    let shifts: Vec<f64> = (0..n_points).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut data = Vec::with_capacity(n_hours * n_points);
    for h in 0..n_hours {
        let hf = h as f64;
        let season = seasonal(hf);
        for k in 0..n_points {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let v = bases[k] * (1.0 + 0.15 * diurnal(hf + shifts[k]) + 0.1 * season + 0.05 * noise);
            data.push(v.max(0.0));
        }
    }
    let names = (0..n_points).map(|k| format!("load_{}", k + 1)).collect();
    Ok(LoadSeries {
        names,
        mw: Matrix::from_vec(n_hours, n_points, data),
        source: LoadSource::Synthetic { seed },
    })
}

/// Hourly measurements with the states that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    /// `n × n_z`, p.u.
    pub measurements: Matrix,
    /// `n × n_x`, p.u. net injections at non-slack buses.
    pub states: Matrix,
    /// Hour index of each row in the originating load series.
    pub hours: Vec<usize>,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.measurements.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `range` as a new set.
    pub fn slice(&self, range: core::ops::Range<usize>) -> ScenarioSet {
        let idx: Vec<usize> = range.collect();
        ScenarioSet {
            measurements: self.measurements.select_rows(&idx),
            states: self.states.select_rows(&idx),
            hours: idx.iter().map(|&i| self.hours[i]).collect(),
        }
    }
}

/// Generator participation factors: uniform in [0.5, 1.5], normalised to sum 1.
pub fn participation_factors(n_gens: usize, dispatch_seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(dispatch_seed);
    rng.set_stream(1);
    let raw: Vec<f64> = (0..n_gens).map(|_| rng.gen_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Maps each hour of `loads` onto the grid and measures it.
///
/// Load point `k` draws from `load_buses[k]`; generators cover the total load
/// in proportion to [`participation_factors`]; the slack absorbs any residual
/// (none when at least one generator exists). Hour `h` uses noise seed
/// `dispatch_seed + h`, so rows are independent of evaluation order.
pub fn generate_scenarios(loads: &LoadSeries, grid: &GridModel, dispatch_seed: u64) -> Result<ScenarioSet> {
    let topo = &grid.topology;
    check_dim(topo.load_buses.len(), loads.n_points())?;
    let factors = participation_factors(topo.gen_buses.len(), dispatch_seed);
    let (n_x, n_z) = (grid.n_x(), grid.n_z());
    let n = loads.n_hours();
    let mut meas = Vec::with_capacity(n * n_z);
    let mut states = Vec::with_capacity(n * n_x);
    let mut p = vec![0.0; topo.bus_count];
    for h in 0..n {
        p.iter_mut().for_each(|v| *v = 0.0);
        let row = loads.mw.row(h);
        let mut total = 0.0;
        for (&bus, &mw) in topo.load_buses.iter().zip(row) {
            p[bus] -= mw / BASE_MVA;
            total += mw / BASE_MVA;
        }
        for (&bus, f) in topo.gen_buses.iter().zip(&factors) {
            p[bus] += total * f;
        }
        let x: Vec<f64> = (0..n_x).map(|k| p[topo.state_bus(k)]).collect();
        let z = measure(grid, &StateVector(x.clone()), Some(dispatch_seed.wrapping_add(h as u64)))?;
        meas.extend(z.values);
        states.extend(x);
    }
    Ok(ScenarioSet {
        measurements: Matrix::from_vec(n, n_z, meas),
        states: Matrix::from_vec(n, n_x, states),
        hours: (0..n).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub train: ScenarioSet,
    pub validation: ScenarioSet,
    pub test: ScenarioSet,
}

/// Block sizes `(train, validation, test)` for `n` rows.
///
/// Validation gets `⌊n·r_v/R⌋` rows. Test gets `n·r_t/R` rounded up to whole
/// days once the input spans at least five days, otherwise rounded up to a
/// whole row. Training keeps the rest. With ratios 3:1:1 this maps 43717 rows
/// to 26214/8743/8760 and 8760 rows to 5256/1752/1752.
pub fn split_sizes(n: usize, ratios: (u32, u32, u32)) -> Result<(usize, usize, usize)> {
    let (rt, rv, rs) = ratios;
    if rt == 0 || rv == 0 || rs == 0 {
        return Err(Error::InvalidArgument(format!("split ratios must be positive, got {ratios:?}")));
    }
    let total = f64::from(rt + rv + rs);
    let nf = n as f64;
    let val = (nf * f64::from(rv) / total) as usize;
    let test_exact = nf * f64::from(rs) / total;
    let test = if n >= 120 {
        libm::ceil(test_exact / 24.0 - 1e-9) as usize * 24
    } else {
        libm::ceil(test_exact - 1e-9) as usize
    };
    if val == 0 || test == 0 || val + test >= n {
        return Err(Error::InvalidArgument(format!("{n} rows are too few to split {rt}:{rv}:{rs}")));
    }
    Ok((n - val - test, val, test))
}

/// Contiguous chronological blocks: training first, then validation, then test.
pub fn split(scenarios: &ScenarioSet, ratios: (u32, u32, u32)) -> Result<SplitSet> {
    let n = scenarios.len();
    let (tr, va, _) = split_sizes(n, ratios)?;
    Ok(SplitSet {
        train: scenarios.slice(0..tr),
        validation: scenarios.slice(tr..tr + va),
        test: scenarios.slice(tr + va..n),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CampaignMode {
    /// Add the plan's `a` unchanged to every hour.
    FixedMu,
    /// Rescale the plan each hour so the target moves by `-p %` of its measured value.
    RelativePercent(f64),
}

/// Smallest target magnitude, p.u., that relative mode will rescale against.
pub const MIN_TARGET_MAGNITUDE: f64 = 1e-6;

/// Attacked copy of `test_set` and the hours left out because their target
/// measurement was too close to zero to rescale against.
pub fn attack_campaign(test_set: &ScenarioSet, plan: &AttackPlan, mode: CampaignMode) -> Result<(ScenarioSet, Vec<usize>)> {
    check_dim(test_set.measurements.cols(), plan.a.len())?;
    let pct = match mode {
        CampaignMode::FixedMu => None,
        CampaignMode::RelativePercent(p) => {
            if !p.is_finite() {
                return Err(Error::InvalidArgument(format!("attack percentage must be finite, got {p}")));
            }
            if p == 0.0 {
                return Ok((test_set.clone(), Vec::new()));
            }
            Some(p)
        }
    };
    let target = match (pct, plan.target_index) {
        (Some(_), None) => return Err(Error::InvalidArgument("relative mode needs a plan with a target index".into())),
        (_, t) => t,
    };
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    let mut rows = Vec::new();
    for i in 0..test_set.len() {
        let z = test_set.measurements.row(i);
        let a = match (pct, target) {
            (Some(p), Some(t)) => {
                let zt = z[t];
                if zt.abs() < MIN_TARGET_MAGNITUDE || plan.a[t] == 0.0 {
                    skipped.push(test_set.hours[i]);
                    continue;
                }
                scale_plan(plan, -p / 100.0 * zt / plan.a[t])?.a
            }
            _ => plan.a.clone(),
        };
        rows.extend(z.iter().zip(&a).map(|(u, v)| u + v));
        kept.push(i);
    }
    let out = ScenarioSet {
        measurements: Matrix::from_vec(kept.len(), test_set.measurements.cols(), rows),
        states: test_set.states.select_rows(&kept),
        hours: kept.iter().map(|&i| test_set.hours[i]).collect(),
    };
    Ok((out, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::craft_attack;
    use crate::grid_model::tests::triangle_model;
    use crate::grid_model::{build_h_matrix, MeasurementConfig};

    fn rows(n: usize) -> ScenarioSet {
        ScenarioSet {
            measurements: Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()),
            states: Matrix::from_vec(n, 1, vec![0.0; n]),
            hours: (0..n).collect(),
        }
    }

    #[test]
    fn split_counts() {
        assert_eq!(split_sizes(43717, (3, 1, 1)).unwrap(), (26214, 8743, 8760));
        assert_eq!(split_sizes(8760, (3, 1, 1)).unwrap(), (5256, 1752, 1752));
        assert_eq!(split_sizes(5, (3, 1, 1)).unwrap(), (3, 1, 1));
        assert!(split_sizes(4, (3, 1, 1)).is_err());
        let s = split(&rows(100), (3, 1, 1)).unwrap();
        let joined: Vec<usize> = [&s.train, &s.validation, &s.test].iter().flat_map(|p| p.hours.clone()).collect();
        assert_eq!(joined, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn ingest_cleaning_drops_bad_rows() {
        let names = vec!["a".into(), "b".into()];
        let r = vec![
            vec![Some(1.0), Some(2.0)],
            vec![None, Some(1.0)],
            vec![Some(-1.0), Some(0.0)],
            vec![Some(0.0), Some(3.0)],
        ];
        let (s, dropped) = clean_load_rows(names.clone(), &r).unwrap();
        assert_eq!(dropped, 2);
        assert_eq!(s.mw.as_slice(), &[1.0, 2.0, 0.0, 3.0]);
        assert!(clean_load_rows(names.clone(), &r[1..3]).is_err());
        assert!(clean_load_rows(names, &[vec![Some(1.0)]]).is_err());
    }

    #[test]
    fn synthetic_loads_are_seeded_and_centred() {
        let a = synthesize_loads(8760, 3, 5).unwrap();
        assert_eq!(a, synthesize_loads(8760, 3, 5).unwrap());
        assert_ne!(a, synthesize_loads(8760, 3, 6).unwrap());
        assert!(a.mw.as_slice().iter().all(|&v| v >= 0.0));
        // recover each base from the generator stream and compare with the sample mean
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (lo, hi) = (libm::log(10.0), libm::log(200.0));
        for k in 0..3 {
            let base = libm::exp(rng.gen_range(lo..hi));
            assert!((10.0..=200.0).contains(&base));
            let mean = (0..8760).map(|h| a.mw[(h, k)]).sum::<f64>() / 8760.0;
            assert!((mean / base - 1.0).abs() <= 0.1, "point {k}: mean {mean}, base {base}");
        }
        assert!(synthesize_loads(0, 3, 1).is_err());
    }

    #[test]
    fn triangle_dispatch_by_hand() {
        let m = triangle_model();
        let loads = LoadSeries {
            names: vec!["l".into()],
            mw: Matrix::from_rows(&[[100.0]]),
            source: LoadSource::Ingested,
        };
        let s = generate_scenarios(&loads, &m, 3).unwrap();
        assert_eq!(s.states.row(0), &[1.0, -1.0]);
        let clean = measure(&m, &StateVector(vec![1.0, -1.0]), None).unwrap().values;
        let noisy = measure(&m, &StateVector(vec![1.0, -1.0]), Some(3)).unwrap().values;
        assert_eq!(s.measurements.row(0), noisy.as_slice());
        for (z, c) in noisy.iter().zip(&clean) {
            assert!((z - c).abs() < 0.06);
        }
    }

    #[test]
    fn scenarios_balance_and_determinism() {
        let m = triangle_model();
        let loads = synthesize_loads(48, 1, 2).unwrap();
        let s = generate_scenarios(&loads, &m, 9).unwrap();
        assert_eq!(s, generate_scenarios(&loads, &m, 9).unwrap());
        for h in 0..48 {
            let p = m.bus_injections(s.states.row(h)).unwrap();
            assert!(p.iter().sum::<f64>().abs() < 1e-12);
            // generator at bus 1 covers the load at bus 2, so the slack is idle
            assert!(p[2].abs() < 1e-12);
        }
        assert!(generate_scenarios(&synthesize_loads(2, 2, 1).unwrap(), &m, 0).is_err());
    }

    #[test]
    fn campaign_modes() {
        let t = crate::grid_model::tests::triangle();
        let m = build_h_matrix(&t, &MeasurementConfig::full(&t, 0.01)).unwrap();
        let s = generate_scenarios(&synthesize_loads(24, 1, 1).unwrap(), &m, 4).unwrap();
        let mut plan = craft_attack(&m, &[0.3, -0.2]).unwrap();
        plan.target_index = Some(0);
        let (same, skipped) = attack_campaign(&s, &plan, CampaignMode::RelativePercent(0.0)).unwrap();
        assert_eq!((same, skipped.len()), (s.clone(), 0));
        let (att, skipped) = attack_campaign(&s, &plan, CampaignMode::RelativePercent(10.0)).unwrap();
        assert!(skipped.is_empty());
        for i in 0..s.len() {
            let (z0, z1) = (s.measurements[(i, 0)], att.measurements[(i, 0)]);
            assert!((z1 - 0.9 * z0).abs() <= 1e-12 * (1.0 + z0.abs()));
        }
        let (fixed, _) = attack_campaign(&s, &plan, CampaignMode::FixedMu).unwrap();
        for i in 0..s.len() {
            for j in 0..m.n_z() {
                assert_eq!(fixed.measurements[(i, j)], s.measurements[(i, j)] + plan.a[j]);
            }
        }
        let mut zeroed = s.clone();
        zeroed.measurements.row_mut(2)[0] = 0.0;
        let (att, skipped) = attack_campaign(&zeroed, &plan, CampaignMode::RelativePercent(10.0)).unwrap();
        assert_eq!((att.len(), skipped), (s.len() - 1, vec![2]));
    }
}
