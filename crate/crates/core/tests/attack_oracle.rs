use fdia_core::attack::{
    brute_force_min_attack, min_resource_attack, min_resource_attack_with_clock, scale_plan, AttackSpec, Clock, SolverOptions,
};
use fdia_core::estimation::WlsEstimator;
use fdia_core::grid_model::{build_h_matrix, Branch, GridModel, GridTopology, MeasurementConfig};
use fdia_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Frozen;
impl Clock for Frozen {
    fn elapsed_secs(&self) -> f64 {
        0.0
    }
}

/// Random connected grid with an observable placement of at most `max_nz` meters.
fn random_model(rng: &mut ChaCha8Rng, max_nz: usize) -> GridModel {
    loop {
        let n = rng.gen_range(3..=6);
        let mut branches = Vec::new();
        for b in 1..n {
            let from = rng.gen_range(0..b);
            branches.push(Branch {
                from,
                to: b,
                reactance: rng.gen_range(0.05..0.5),
            });
        }
        for _ in 0..rng.gen_range(0..=3) {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a != b {
                branches.push(Branch {
                    from: a.min(b),
                    to: a.max(b),
                    reactance: rng.gen_range(0.05..0.5),
                });
            }
        }
        let topo = GridTopology {
            bus_count: n,
            slack_bus: rng.gen_range(0..n),
            branches,
            load_buses: vec![],
            gen_buses: vec![],
        };
        let flows: Vec<usize> = (0..topo.branches.len()).filter(|_| rng.gen_bool(0.7)).collect();
        // duplicates allowed: a bus may carry both a load and a generator meter
        let injs: Vec<usize> = (0..n).flat_map(|b| (0..rng.gen_range(0..=2)).map(move |_| b)).collect();
        if flows.len() + injs.len() > max_nz {
            continue;
        }
        let cfg = MeasurementConfig::with_sigma(flows, injs, 0.01);
        if let Ok(m) = build_h_matrix(&topo, &cfg) {
            return m;
        }
    }
}

fn random_spec(rng: &mut ChaCha8Rng, n_z: usize) -> AttackSpec {
    let target = rng.gen_range(0..n_z);
    let protected: Vec<usize> = (0..n_z).filter(|&j| j != target && rng.gen_bool(0.15)).collect();
    let mu = rng.gen_range(0.05..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    AttackSpec::new(target, mu, protected).unwrap()
}

#[test]
fn branch_and_bound_matches_oracle_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = SolverOptions::default();
    for case in 0..200 {
        let m = random_model(&mut rng, 20);
        let spec = random_spec(&mut rng, m.n_z());
        let bf = brute_force_min_attack(&m, &spec, m.n_z());
        let bb = min_resource_attack(&m, &spec, &opts);
        match (bf, bb) {
            (Ok(x), Ok(y)) => {
                assert!(y.optimal, "case {case}");
                assert_eq!(x.cardinality, y.cardinality, "case {case}: {spec:?}");
                assert_eq!(x.support, y.support, "case {case}: lexicographic tie-break");
            }
            (Err(Error::NotFound(_)), Err(Error::Infeasible)) => {}
            (x, y) => panic!("case {case}: oracle {x:?} vs solver {y:?}"),
        }
    }
}

#[test]
fn solver_plans_satisfy_constraints_and_stealth() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let m = random_model(&mut rng, 20);
        let spec = random_spec(&mut rng, m.n_z());
        let Ok(p) = min_resource_attack(&m, &spec, &SolverOptions::default()) else {
            continue;
        };
        let hc = m.h().mul_vec(&p.c);
        for (x, y) in hc.iter().zip(&p.a) {
            assert!((x - y).abs() <= 1e-9);
        }
        assert!((p.a[spec.target] - spec.magnitude).abs() <= 1e-9);
        assert!(spec.protected.iter().all(|&q| p.a[q].abs() <= 1e-7));
        assert!(p.support.contains(&spec.target));
        let est = WlsEstimator::new(&m).unwrap();
        let z: Vec<f64> = (0..m.n_z()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let za: Vec<f64> = z.iter().zip(&p.a).map(|(u, v)| u + v).collect();
        let (j0, j1) = (est.estimate(&z).unwrap().cost, est.estimate(&za).unwrap().cost);
        assert!((j0 - j1).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relaxation_bound_never_exceeds_optimum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(&mut rng, 16);
        let spec = random_spec(&mut rng, m.n_z());
        if let Ok(out) = min_resource_attack_with_clock(&m, &spec, &SolverOptions::default(), &Frozen) {
            prop_assert!((out.stats.root_bound - 1e-9).ceil() <= out.plan.cardinality as f64);
            for &(card, bound) in &out.stats.incumbent_history {
                prop_assert!(card as f64 >= (bound - 1e-9).ceil());
            }
        }
    }

    #[test]
    fn enlarging_protected_set_never_helps(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(&mut rng, 16);
        let spec = random_spec(&mut rng, m.n_z());
        let extra: Vec<usize> = (0..m.n_z()).filter(|&j| j != spec.target && rng.gen_bool(0.2)).collect();
        let mut bigger = spec.clone();
        bigger.protected.extend(extra);
        bigger.protected.sort_unstable();
        bigger.protected.dedup();
        let opts = SolverOptions::default();
        match (min_resource_attack(&m, &spec, &opts), min_resource_attack(&m, &bigger, &opts)) {
            (Ok(a), Ok(b)) => prop_assert!(b.cardinality >= a.cardinality),
            (Err(_), Ok(_)) => prop_assert!(false, "larger protected set became feasible"),
            _ => {}
        }
    }

    #[test]
    fn scaling_keeps_support(seed in any::<u64>(), factor in prop_oneof![-10.0f64..-0.01, 0.01f64..10.0]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(&mut rng, 20);
        let c: Vec<f64> = (0..m.n_x()).map(|_| if rng.gen_bool(0.5) { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
        let p = fdia_core::attack::craft_attack(&m, &c).unwrap();
        let s = scale_plan(&p, factor).unwrap();
        prop_assert_eq!(s.support, p.support);
    }
}
