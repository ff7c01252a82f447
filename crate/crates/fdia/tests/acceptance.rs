//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the terminal:
//! `cargo test -p fdia --test acceptance`.

#![allow(clippy::needless_range_loop)]

use std::collections::VecDeque;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fdia::case_format::measurement_label;
use fdia::cases::{builtin_case, builtin_model};
use fdia::cli::resolve_measurement;
use fdia_core::attack::{brute_force_min_attack, min_resource_attack, AttackSpec, SolverOptions};
use fdia_core::autoencoder::{
    backward, fit_scaler, forward, init_model, reconstruction_error, train, AutoencoderModel, LayerSpec, Scaler, TrainConfig,
};
use fdia_core::chi2::chi2_inv;
use fdia_core::data::{attack_campaign, generate_scenarios, split, synthesize_loads, CampaignMode};
use fdia_core::detection::{compute_threshold, roc_curve, threshold_sweep, DEFAULT_ALPHAS};
use fdia_core::estimation::{bdd_test, WlsEstimator};
use fdia_core::grid_model::{build_h_matrix, measure, Branch, GridModel, GridTopology, MeasurementConfig, StateVector};
use fdia_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Runs `f`, adds the runtime bound to its verdict and prints one line.
fn criterion(results: &mut Vec<bool>, id: u32, name: &str, limit_secs: Option<f64>, f: impl FnOnce() -> Outcome) {
    let t = Instant::now();
    let o = f();
    let secs = t.elapsed().as_secs_f64();
    let in_time = limit_secs.is_none_or(|l| secs < l);
    let pass = o.pass && in_time;
    let bound = limit_secs.map_or(String::new(), |l| format!(" (limit {l:.0} s)"));
    println!(
        "criterion {id} {name}: {} | {} | {secs:.1} s{bound}",
        if pass { "PASS" } else { "FAIL" },
        o.detail
    );
    results.push(pass);
}

fn random_x(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn stealth(models: &[(&str, GridModel)]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_j: f64 = 0.0;
    let mut worst_r: f64 = 0.0;
    for (_, m) in models {
        let est = WlsEstimator::new(m).unwrap();
        for k in 0..1000u64 {
            let z = measure(m, &StateVector(random_x(&mut rng, m.n_x())), Some(k)).unwrap().values;
            let c = random_x(&mut rng, m.n_x());
            let za: Vec<f64> = z.iter().zip(m.apply(&c).unwrap()).map(|(u, a)| u + a).collect();
            let (e0, e1) = (est.estimate(&z).unwrap(), est.estimate(&za).unwrap());
            worst_j = worst_j.max((e1.cost - e0.cost).abs());
            let (r0, r1) = (est.residual(&z).unwrap(), est.residual(&za).unwrap());
            worst_r = worst_r.max(r0.iter().zip(&r1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
    }
    let names: Vec<String> = models.iter().map(|(n, m)| format!("{n} n_z={}", m.n_z())).collect();
    outcome(
        worst_j <= 1e-9 && worst_r <= 1e-9,
        format!(
            "{} x 1000 pairs on [{}]; max |dJ| {worst_j:.2e}, max |dr| {worst_r:.2e} (tol 1e-9)",
            models.len(),
            names.join(", ")
        ),
    )
}

/// Random connected grid with an observable placement of at most `max_nz` meters.
fn random_model(rng: &mut ChaCha8Rng, max_nz: usize) -> GridModel {
    loop {
        let n = rng.gen_range(3..=7);
        let mut branches = Vec::new();
        for b in 1..n {
            branches.push(Branch {
                from: rng.gen_range(0..b),
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
        let injs: Vec<usize> = (0..n).flat_map(|b| (0..rng.gen_range(0..=2)).map(move |_| b)).collect();
        if flows.len() + injs.len() > max_nz {
            continue;
        }
        if let Ok(m) = build_h_matrix(&topo, &MeasurementConfig::with_sigma(flows, injs, 0.01)) {
            return m;
        }
    }
}

fn milp_vs_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut agree, mut infeasible, mut unproven) = (0, 0, 0);
    let mut first_bad = None;
    for case in 0..200 {
        let m = random_model(&mut rng, 20);
        let n_z = m.n_z();
        let target = rng.gen_range(0..n_z);
        let protected: Vec<usize> = (0..n_z).filter(|&j| j != target && rng.gen_bool(0.15)).collect();
        let mu = rng.gen_range(0.05..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let spec = AttackSpec::new(target, mu, protected).unwrap();
        let ok = match (
            brute_force_min_attack(&m, &spec, n_z),
            min_resource_attack(&m, &spec, &SolverOptions::default()),
        ) {
            (Ok(x), Ok(y)) => {
                unproven += usize::from(!y.optimal);
                y.optimal && x.cardinality == y.cardinality
            }
            (Err(Error::NotFound(_)), Err(Error::Infeasible)) => {
                infeasible += 1;
                true
            }
            _ => false,
        };
        if ok {
            agree += 1;
        } else if first_bad.is_none() {
            first_bad = Some(case);
        }
    }
    outcome(
        agree == 200,
        format!("{agree}/200 agree ({infeasible} jointly infeasible), {unproven} without optimality proof, first mismatch {first_bad:?}"),
    )
}

/// Buses within `depth` hops of `center`.
fn neighbourhood(topo: &GridTopology, center: usize, depth: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; topo.bus_count];
    dist[center] = 0;
    let mut q = VecDeque::from([center]);
    while let Some(b) = q.pop_front() {
        for br in &topo.branches {
            let other = if br.from == b {
                br.to
            } else if br.to == b {
                br.from
            } else {
                continue;
            };
            if dist[other] == usize::MAX && dist[b] < depth {
                dist[other] = dist[b] + 1;
                q.push_back(other);
            }
        }
    }
    (0..topo.bus_count).filter(|&b| dist[b] != usize::MAX).collect()
}

/// Induced subgrid on `buses` with the bundled meters that fall inside it.
fn subgrid(topo: &GridTopology, meas: &MeasurementConfig, buses: &[usize], slack: usize) -> (GridTopology, MeasurementConfig) {
    let local = |b: usize| buses.iter().position(|&x| x == b);
    let mut branches = Vec::new();
    let mut branch_map = vec![None; topo.branches.len()];
    for (k, br) in topo.branches.iter().enumerate() {
        if let (Some(f), Some(t)) = (local(br.from), local(br.to)) {
            branch_map[k] = Some(branches.len());
            branches.push(Branch {
                from: f,
                to: t,
                reactance: br.reactance,
            });
        }
    }
    let sub = GridTopology {
        bus_count: buses.len(),
        slack_bus: local(slack).unwrap(),
        branches,
        load_buses: vec![],
        gen_buses: vec![],
    };
    let flows: Vec<usize> = meas.flow_measurements.iter().filter_map(|&k| branch_map[k]).collect();
    let injs: Vec<usize> = meas.injection_measurements.iter().filter_map(|&b| local(b)).collect();
    let cfg = MeasurementConfig::with_sigma(flows, injs, 0.01);
    (sub, cfg)
}

fn anchor_118() -> Outcome {
    let (topo, meas) = builtin_case("ieee118").unwrap();
    let m = build_h_matrix(&topo, &meas).unwrap();
    let target = resolve_measurement(&topo, &meas, "flow 109-110").unwrap()[0];
    let spec = AttackSpec::new(target, 0.1, vec![]).unwrap();
    let opts = SolverOptions {
        time_limit: Some(590.0),
        ..SolverOptions::default()
    };
    let plan = match min_resource_attack(&m, &spec, &opts) {
        Ok(p) => p,
        Err(e) => return outcome(false, format!("solver failed: {e}")),
    };
    let labels: Vec<String> = plan.support.iter().map(|&j| measurement_label(&topo, &meas, j)).collect();
    let reference = ["flow 109-110", "flow 103-110", "inj 103", "inj 109", "inj 110"];
    let mut want: Vec<usize> = reference
        .iter()
        .flat_map(|r| resolve_measurement(&topo, &meas, r).unwrap())
        .collect();
    want.sort_unstable();
    let strict = plan.support == want;

    // stealth of the returned plan
    let est = WlsEstimator::new(&m).unwrap();
    let z = measure(&m, &StateVector(vec![0.2; m.n_x()]), Some(1)).unwrap().values;
    let za: Vec<f64> = z.iter().zip(&plan.a).map(|(u, a)| u + a).collect();
    let dj = (est.estimate(&za).unwrap().cost - est.estimate(&z).unwrap().cost).abs();
    let hc = m.apply(&plan.c).unwrap();
    let da = hc.iter().zip(&plan.a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let stealthy = dj <= 1e-9 && da <= 1e-12;
    let has_target = plan.support.contains(&target) && (plan.a[target] - 0.1).abs() <= 1e-9;

    // exhaustive check on the neighbourhood of bus 110, slack at its far edge
    let region = neighbourhood(&topo, 109, 2);
    let (sub_topo, sub_meas) = subgrid(&topo, &meas, &region, *region.iter().max().unwrap());
    let sub = build_h_matrix(&sub_topo, &sub_meas).unwrap();
    let sub_target = resolve_measurement(
        &sub_topo,
        &sub_meas,
        &format!(
            "flow {}-{}",
            region.iter().position(|&b| b == 108).unwrap() + 1,
            region.iter().position(|&b| b == 109).unwrap() + 1
        ),
    )
    .unwrap()[0];
    let sub_spec = AttackSpec::new(sub_target, 0.1, vec![]).unwrap();
    let bb = min_resource_attack(&sub, &sub_spec, &SolverOptions::default()).unwrap();
    let bf = brute_force_min_attack(&sub, &sub_spec, sub.n_z()).unwrap();
    let local_ok = bb.optimal && bb.cardinality == bf.cardinality;

    let pass = if strict {
        stealthy && has_target
    } else {
        stealthy && has_target && local_ok
    };
    let mode = if strict {
        "reference support reproduced".to_owned()
    } else {
        format!(
            "degraded form: the bundled 339-meter placement differs from the reference one, support differs from [{}]",
            reference.join(", ")
        )
    };
    outcome(
        pass,
        format!(
            "{mode}; cardinality {} optimal={} support [{}]; stealthy={stealthy} (|dJ| {dj:.1e}); target={has_target}; subgrid of {} buses n_z={}: solver {} vs exhaustive {}",
            plan.cardinality,
            plan.optimal,
            labels.join(", "),
            region.len(),
            sub.n_z(),
            bb.cardinality,
            bf.cardinality
        ),
    )
}

fn batch_loss(m: &AutoencoderModel, batch: &[Vec<f64>]) -> f64 {
    batch
        .iter()
        .map(|z| reconstruction_error(z, &forward(m, z).unwrap().1).unwrap())
        .sum::<f64>()
        / batch.len() as f64
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut archs: Vec<Vec<usize>> = vec![vec![6, 4, 2, 4, 6]];
    while archs.len() < 10 {
        let depth = rng.gen_range(1..=3);
        let mut enc = vec![rng.gen_range(2..=9)];
        for _ in 0..depth {
            let prev = *enc.last().unwrap();
            enc.push(rng.gen_range(1..=prev));
        }
        let mut dims = enc.clone();
        dims.extend(enc.iter().rev().skip(1));
        archs.push(dims);
    }
    let mut worst: f64 = 0.0;
    for (s, dims) in archs.iter().enumerate() {
        let d = dims[0];
        let mut m = init_model(&LayerSpec::new(dims.clone()).unwrap(), s as u64).unwrap();
        for l in &mut m.layers {
            l.b.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        }
        m.scaler = Some(Scaler {
            min: vec![0.0; d],
            max: vec![1.0; d],
        });
        let batch: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.gen_range(-0.2..1.2)).collect()).collect();
        let g = backward(&m, &batch).unwrap();
        let h = 1e-5;
        for l in 0..m.layers.len() {
            let n_w = m.layers[l].w.as_slice().len();
            for k in 0..n_w + m.layers[l].b.len() {
                let at = |delta: f64| {
                    let mut p = m.clone();
                    if k < n_w {
                        p.layers[l].w.as_mut_slice()[k] += delta;
                    } else {
                        p.layers[l].b[k - n_w] += delta;
                    }
                    batch_loss(&p, &batch)
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                let an = if k < n_w { g[l].w.as_slice()[k] } else { g[l].b[k - n_w] };
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
            }
        }
    }
    let shapes: Vec<String> = archs
        .iter()
        .map(|a| a.iter().map(usize::to_string).collect::<Vec<_>>().join("-"))
        .collect();
    outcome(
        worst <= 1e-5,
        format!("max relative error {worst:.2e} (tol 1e-5) over [{}]", shapes.join(", ")),
    )
}

struct ErrorSets {
    val: Vec<f64>,
    normal: Vec<f64>,
    attack: Vec<f64>,
}

const DETECTION_TARGET: &str = "flow 9-14";

fn detection(sets: &mut Option<ErrorSets>) -> Outcome {
    let (topo, meas) = builtin_case("ieee14").unwrap();
    let grid = build_h_matrix(&topo, &meas).unwrap();
    let loads = synthesize_loads(8760, topo.load_buses.len(), 1).unwrap();
    let parts = split(&generate_scenarios(&loads, &grid, 2).unwrap(), (3, 1, 1)).unwrap();
    let config = TrainConfig::default();
    let mut model = init_model(&LayerSpec::scaled_for(grid.n_z()), config.seed).unwrap();
    model.scaler = Some(fit_scaler(&parts.train.measurements).unwrap());
    let (model, history) = match train(&model, &parts.train.measurements, &parts.validation.measurements, &config) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let target = resolve_measurement(&topo, &meas, DETECTION_TARGET).unwrap()[0];
    let plan = min_resource_attack(&grid, &AttackSpec::new(target, 0.1, vec![]).unwrap(), &SolverOptions::default()).unwrap();
    let (attacked, skipped) = attack_campaign(&parts.test, &plan, CampaignMode::RelativePercent(10.0)).unwrap();
    let val = model.scores(&parts.validation.measurements).unwrap();
    let normal = model.scores(&parts.test.measurements).unwrap();
    let attack = model.scores(&attacked.measurements).unwrap();
    let auc = roc_curve(&normal, &attack).unwrap().auc;
    let tau = compute_threshold(&val, 99.0).unwrap().tau;
    let n = val.len() as f64;
    let above = val.iter().filter(|&&e| e > tau).count() as f64;
    let self_consistent = above / n <= 0.01 + 1.0 / n;
    let at99 = threshold_sweep(&val, &[99.0], &normal, &attack).unwrap()[0];
    let n_attacked = attack.len();
    *sets = Some(ErrorSets { val, normal, attack });
    outcome(
        auc >= 0.85 && self_consistent,
        format!(
            "ieee14, 8760 h, {} epochs lr {:e} batch {}, target {DETECTION_TARGET} (support {}), {} attacked hours ({} skipped): AUC {auc:.4} (need 0.85); alpha 99 val FP {:.4} <= {:.4}; test TP {:.2}% FP {:.2}%",
            history.len(),
            config.learning_rate,
            config.batch_size,
            plan.cardinality,
            n_attacked,
            skipped.len(),
            above / n,
            0.01 + 1.0 / n,
            100.0 * at99.tp,
            100.0 * at99.fp
        ),
    )
}

fn monotone(sets: &Option<ErrorSets>) -> Outcome {
    let mut cases: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    if let Some(s) = sets {
        cases.push((s.val.clone(), s.normal.clone(), s.attack.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let sizes = (rng.gen_range(1..300), rng.gen_range(1..300), rng.gen_range(1..300));
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| f64::from(rng.gen_range(0u8..30)) / 7.0).collect() };
        let (v, n) = (draw(sizes.0), draw(sizes.1));
        cases.push((v, n, draw(sizes.2)));
    }
    let bad = cases
        .iter()
        .filter(|(v, n, a)| {
            let rows = threshold_sweep(v, &DEFAULT_ALPHAS, n, a).unwrap();
            rows.windows(2).any(|w| w[1].tp > w[0].tp || w[1].fp > w[0].fp)
        })
        .count();
    outcome(
        bad == 0 && sets.is_some(),
        format!(
            "{} error-set triples ({} from criterion 5), {bad} with an increasing TP or FP column",
            cases.len(),
            usize::from(sets.is_some())
        ),
    )
}

fn chi2_calibration() -> Outcome {
    let m = builtin_model("ieee14").unwrap();
    let est = WlsEstimator::new(&m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 10_000;
    let alarms = (0..n)
        .filter(|&k| {
            let z = measure(&m, &StateVector(random_x(&mut rng, m.n_x())), Some(1_000_000 + k as u64))
                .unwrap()
                .values;
            bdd_test(est.estimate(&z).unwrap().cost, est.dof(), 0.05).unwrap().alarm
        })
        .count();
    let rate = alarms as f64 / n as f64;
    let q = chi2_inv(0.95, 1);
    outcome(
        (rate - 0.05).abs() <= 0.01 && (q - 3.841).abs() <= 1e-3,
        format!(
            "ieee14 dof {}: alarm rate {rate:.4} over {n} (need 0.05 +- 0.01); chi2_inv(0.95, 1) = {q:.5}",
            est.dof()
        ),
    )
}

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let steps: [&[&str]; 4] = [
        &["gen-data", "--case", "builtin:ieee14", "--hours", "500"],
        &[
            "train",
            "--epochs",
            "50",
            "--layers",
            "36,12,6,12,36",
            "--learning-rate",
            "1e-3",
            "--batch-size",
            "32",
        ],
        &["attack", "--case", "builtin:ieee14", "--target", DETECTION_TARGET],
        &["eval"],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_fdia"))
            .args(args)
            .arg("--out-dir")
            .arg(dir)
            .env_remove("FDIA_OUT_DIR")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        if let Err(e) = run_pipeline(d.path()) {
            return outcome(false, e);
        }
    }
    let files = [
        "measurements.csv",
        "states.csv",
        "history.csv",
        "model.json",
        "plan.json",
        "table.csv",
        "roc.csv",
        "metrics.csv",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(dirs[0].path().join(f)).ok() != std::fs::read(dirs[1].path().join(f)).ok())
        .collect();
    outcome(
        differing.is_empty(),
        format!(
            "two gen-data/train/attack/eval runs; {} files compared, differing: {differing:?}",
            files.len()
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters from other targets reach here too
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results = Vec::new();
    let models: Vec<(&str, GridModel)> = ["case3", "ieee14", "ieee118"]
        .iter()
        .map(|n| (*n, builtin_model(n).unwrap()))
        .collect();
    criterion(&mut results, 1, "stealth invariance", Some(10.0), || stealth(&models));
    criterion(&mut results, 2, "MILP matches exhaustive search", Some(60.0), milp_vs_oracle);
    criterion(&mut results, 3, "118-bus anchor", Some(600.0), anchor_118);
    criterion(&mut results, 4, "gradient check", Some(5.0), gradient_check);
    let mut sets = None;
    criterion(&mut results, 5, "detection AUC", Some(900.0), || detection(&mut sets));
    criterion(&mut results, 6, "threshold monotonicity", None, || monotone(&sets));
    criterion(&mut results, 7, "chi-squared calibration", Some(30.0), chi2_calibration);
    criterion(&mut results, 8, "determinism", None, determinism);
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
