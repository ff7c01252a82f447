//! Subcommands of the `fdia` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use fdia_core::attack::{brute_force_min_attack, min_resource_attack, AttackPlan, AttackSpec, SolverOptions};
use fdia_core::autoencoder::{fit_scaler, grid_search, init_model, train, LayerSpec};
use fdia_core::data::{attack_campaign, generate_scenarios, participation_factors, split, synthesize_loads, LoadSource, SplitSet};
use fdia_core::detection::{classify, compute_threshold, roc_curve, threshold_sweep, Label};
use fdia_core::grid_model::{build_h_matrix, GridModel, GridTopology, MeasurementConfig, MeasurementKind, DEFAULT_SIGMA};
use fdia_core::Error;

use crate::case_format::{load_case, load_measurements, measurement_label, parse_measurements};
use crate::cases::{builtin_case, builtin_text};
use crate::config::{LoadInput, Overrides, RunConfig};
use crate::error::{CliError, Result};
use crate::io;

pub const HISTORY_FILE: &str = "history.csv";
pub const GRID_FILE: &str = "grid_search.csv";
pub const GRID_HISTORY_FILE: &str = "grid_search_history.csv";
pub const TABLE_FILE: &str = "table.csv";
pub const ROC_FILE: &str = "roc.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DETECTIONS_FILE: &str = "detections.csv";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Parser, Debug)]
#[command(
    name = "fdia",
    version,
    about = "Stealthy false-data-injection attacks and autoencoder detection on DC grids"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug)]
pub struct Common {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long = "out-dir", env = "FDIA_OUT_DIR", value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the hourly scenario set: measurements, states and a metadata sidecar.
    GenData(Common),
    /// Train the autoencoder on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Sweep learning rate and batch size and write the ranked results instead.
        #[arg(long)]
        grid_search: bool,
    },
    /// Find a minimum-cardinality stealthy attack on the target measurement.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Cross-check the result against exhaustive enumeration.
        #[arg(long)]
        oracle: bool,
    },
    /// Score measurements and label each row normal or attack.
    Detect(Common),
    /// Threshold table and ROC curve for the attacked test split.
    Eval(Common),
    /// Collect the CSV outputs of earlier commands into one summary.
    Report(Common),
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let resolve = |c: &Common| RunConfig::resolve(c.config.as_deref(), &c.overrides, c.out_dir.clone());
    match &cli.command {
        Command::GenData(c) => cmd_gen_data(&resolve(c)?),
        Command::Train { common, grid_search } => cmd_train(&resolve(common)?, *grid_search),
        Command::Attack { common, oracle } => cmd_attack(&resolve(common)?, *oracle).map(|_| ()),
        Command::Detect(c) => cmd_detect(&resolve(c)?),
        Command::Eval(c) => cmd_eval(&resolve(c)?),
        Command::Report(c) => cmd_report(&resolve(c)?),
    }
}

/// Grid case and placement named by the configuration.
pub fn load_grid(cfg: &RunConfig) -> Result<(GridTopology, MeasurementConfig)> {
    let (topo, builtin_meas) = match cfg.case.strip_prefix("builtin:") {
        Some(name) => {
            let (t, m) = builtin_case(name)?;
            (t, Some(m))
        }
        None => (load_case(Path::new(&cfg.case))?, None),
    };
    let meas = match (&cfg.meas, builtin_meas) {
        (Some(p), _) => match p.to_str().and_then(|s| s.strip_prefix("builtin:")) {
            Some(name) => {
                let (_, text) = builtin_text(name).ok_or_else(|| CliError::Input(format!("unknown builtin placement '{name}'")))?;
                parse_measurements(text, &topo)?
            }
            None => load_measurements(p, &topo)?,
        },
        (None, Some(m)) => m,
        (None, None) => MeasurementConfig::full(&topo, DEFAULT_SIGMA),
    };
    Ok((topo, meas))
}

fn grid_model(topo: &GridTopology, meas: &MeasurementConfig) -> Result<GridModel> {
    Ok(build_h_matrix(topo, meas)?)
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    let (topo, meas) = load_grid(cfg)?;
    let model = grid_model(&topo, &meas)?;
    let (loads, dropped) = match &cfg.loads {
        LoadInput::Csv(p) => io::ingest_load_csv(p)?,
        LoadInput::Synthetic { hours, seed } => (synthesize_loads(*hours, topo.load_buses.len(), *seed)?, 0),
    };
    if loads.n_points() != topo.load_buses.len() {
        return Err(CliError::Input(format!(
            "load series has {} points but the case has {} load buses",
            loads.n_points(),
            topo.load_buses.len()
        )));
    }
    let set = generate_scenarios(&loads, &model, cfg.dispatch_seed)?;
    let meta = io::ScenarioMetadata {
        format_version: io::SCENARIO_FORMAT_VERSION,
        grid_sha256: io::grid_hash(&topo, &meas),
        case: cfg.case.clone(),
        n_hours: set.len(),
        n_z: model.n_z(),
        n_x: model.n_x(),
        load_source: loads.source.clone(),
        dropped_rows: dropped,
        dispatch_seed: cfg.dispatch_seed,
        gen_buses: topo.gen_buses.iter().map(|b| b + 1).collect(),
        dispatch_factors: participation_factors(topo.gen_buses.len(), cfg.dispatch_seed),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    io::save_scenarios(&cfg.out_dir, &set, &topo, &meas, &meta)?;
    let source = match loads.source {
        LoadSource::Ingested => "ingested".to_owned(),
        LoadSource::Synthetic { seed } => format!("synthetic, seed {seed}"),
    };
    println!(
        "wrote {} hours x {} measurements ({source}) to {}",
        set.len(),
        model.n_z(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn load_split(cfg: &RunConfig) -> Result<SplitSet> {
    let (set, _) = io::load_scenarios(&cfg.data_dir)?;
    Ok(split(&set, cfg.split)?)
}

pub fn cmd_train(cfg: &RunConfig, grid: bool) -> Result<()> {
    let parts = load_split(cfg)?;
    let (tr, va) = (&parts.train.measurements, &parts.validation.measurements);
    let spec = cfg.layers.clone().unwrap_or_else(|| LayerSpec::scaled_for(tr.cols()));
    if spec.input_dim() != tr.cols() {
        return Err(CliError::Input(format!(
            "layers start at {} but measurements have {} columns",
            spec.input_dim(),
            tr.cols()
        )));
    }
    if grid {
        let results = grid_search(tr, va, &cfg.lr_grid, &cfg.batch_grid, &spec, cfg.train.epochs, cfg.train.seed)?;
        io::write_grid_csv(&cfg.out_dir.join(GRID_FILE), &results)?;
        io::write_grid_histories_csv(&cfg.out_dir.join(GRID_HISTORY_FILE), &results)?;
        for r in &results {
            match r.final_val_j {
                Some(j) => println!("lr {:e} batch {}: val J {j:e}", r.learning_rate, r.batch_size),
                None => println!(
                    "lr {:e} batch {}: diverged after {} epochs",
                    r.learning_rate,
                    r.batch_size,
                    r.history.len()
                ),
            }
        }
        return Ok(());
    }
    let mut model = init_model(&spec, cfg.train.seed)?;
    model.scaler = Some(fit_scaler(tr)?);
    match train(&model, tr, va, &cfg.train) {
        Ok((trained, history)) => {
            io::save_model(&cfg.model, &trained)?;
            io::write_history_csv(&cfg.out_dir.join(HISTORY_FILE), &history)?;
            let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained {:?} for {} epochs: train J {:e}, val J {:e}",
                spec.dims,
                history.len(),
                last(&history.train_j),
                last(&history.val_j)
            );
            Ok(())
        }
        Err(Error::Diverged(history)) => {
            io::write_history_csv(&cfg.out_dir.join(HISTORY_FILE), &history)?;
            Err(CliError::Core(Error::Diverged(history)))
        }
        Err(e) => Err(e.into()),
    }
}

/// Resolves a measurement reference (`flow A-B`, `inj B`, `row N`) to 0-based rows.
pub fn resolve_measurement(topo: &GridTopology, meas: &MeasurementConfig, text: &str) -> Result<Vec<usize>> {
    let bad = || CliError::Input(format!("unknown measurement '{text}', expected 'flow A-B', 'inj B' or 'row N'"));
    let toks: Vec<&str> = text.split_whitespace().collect();
    let bus = |s: &str| -> Result<usize> {
        match s.parse::<usize>() {
            Ok(b) if b >= 1 && b <= topo.bus_count => Ok(b - 1),
            _ => Err(bad()),
        }
    };
    let rows = match toks[..] {
        ["row", n] => match n.parse::<usize>() {
            Ok(r) if r >= 1 && r <= meas.n_z() => vec![r - 1],
            _ => return Err(bad()),
        },
        ["inj", b] => meas.injection_rows(bus(b)?),
        ["flow", ends] => {
            let (a, b) = ends.split_once('-').ok_or_else(bad)?;
            let (a, b) = (bus(a)?, bus(b)?);
            (0..meas.flow_measurements.len())
                .filter(|&j| match meas.kind(j) {
                    MeasurementKind::Flow { branch } => {
                        let br = topo.branches[branch];
                        (br.from, br.to) == (a, b) || (br.from, br.to) == (b, a)
                    }
                    MeasurementKind::Injection { .. } => false,
                })
                .collect()
        }
        _ => return Err(bad()),
    };
    if rows.is_empty() {
        return Err(CliError::Input(format!("no meter measures '{text}'")));
    }
    Ok(rows)
}

/// Solves for the configured target and writes the plan.
pub fn cmd_attack(cfg: &RunConfig, oracle: bool) -> Result<AttackPlan> {
    let (topo, meas) = load_grid(cfg)?;
    let model = grid_model(&topo, &meas)?;
    let target_text = cfg
        .target
        .as_deref()
        .ok_or_else(|| CliError::Input("attack needs a target".into()))?;
    let target = resolve_measurement(&topo, &meas, target_text)?[0];
    let mut protected = Vec::new();
    for p in &cfg.protected {
        protected.extend(resolve_measurement(&topo, &meas, p)?);
    }
    protected.sort_unstable();
    protected.dedup();
    let spec = AttackSpec::new(target, cfg.magnitude, protected)?;
    let opts = SolverOptions {
        big_m: cfg.big_m,
        c_max: cfg.c_max,
        node_limit: cfg.node_limit,
        time_limit: Some(cfg.time_limit),
        ..SolverOptions::default()
    };
    let plan = min_resource_attack(&model, &spec, &opts)?;
    if oracle {
        let check = brute_force_min_attack(&model, &spec, cfg.oracle_max_support)?;
        if check.cardinality != plan.cardinality {
            return Err(CliError::Internal(format!(
                "oracle disagrees: exhaustive search found cardinality {}, solver {}",
                check.cardinality, plan.cardinality
            )));
        }
        println!("oracle agrees on cardinality {}", check.cardinality);
    }
    io::save_plan(&cfg.plan, &plan)?;
    let labels: Vec<String> = plan.support.iter().map(|&j| measurement_label(&topo, &meas, j)).collect();
    println!(
        "cardinality {}{}: {}",
        plan.cardinality,
        if plan.optimal { " (optimal)" } else { " (not proven optimal)" },
        labels.join(", ")
    );
    Ok(plan)
}

fn model_for(cfg: &RunConfig, n_z: usize) -> Result<fdia_core::autoencoder::AutoencoderModel> {
    let model = io::load_model(&cfg.model)?;
    if model.input_dim() != n_z {
        return Err(CliError::Input(format!(
            "model expects {} measurements, data has {n_z}",
            model.input_dim()
        )));
    }
    Ok(model)
}

pub fn cmd_detect(cfg: &RunConfig) -> Result<()> {
    let parts = load_split(cfg)?;
    let model = model_for(cfg, parts.validation.measurements.cols())?;
    let threshold = compute_threshold(&model.scores(&parts.validation.measurements)?, cfg.alpha)?;
    let input = cfg.input.clone().unwrap_or_else(|| cfg.data_dir.join(io::MEASUREMENTS_FILE));
    let (_, z) = io::read_matrix_csv(&input)?;
    if z.cols() != model.input_dim() {
        return Err(CliError::Input(format!(
            "{}: {} columns, model expects {}",
            input.display(),
            z.cols(),
            model.input_dim()
        )));
    }
    let scores = model.scores(&z)?;
    let mut text = String::from("row,error,label\n");
    let mut flagged = 0;
    for (i, e) in scores.iter().enumerate() {
        let label = match classify(*e, &threshold) {
            Label::Normal => "normal",
            Label::Attack => {
                flagged += 1;
                "attack"
            }
        };
        writeln!(text, "{},{},{label}", i + 1, io::num(*e)).unwrap();
    }
    io::write_text(&cfg.out_dir.join(DETECTIONS_FILE), &text)?;
    println!(
        "{flagged} of {} rows flagged at alpha {} (tau {:e})",
        scores.len(),
        threshold.alpha,
        threshold.tau
    );
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let parts = load_split(cfg)?;
    let model = model_for(cfg, parts.test.measurements.cols())?;
    let plan = io::load_plan(&cfg.plan)?;
    let (attacked, skipped) = attack_campaign(&parts.test, &plan, cfg.attack)?;
    if !skipped.is_empty() {
        log::warn!("skipped {} hours whose target measurement is near zero", skipped.len());
    }
    if attacked.is_empty() {
        return Err(CliError::Input("every test hour was skipped; nothing to evaluate".into()));
    }
    let val = model.scores(&parts.validation.measurements)?;
    let normal = model.scores(&parts.test.measurements)?;
    let attack = model.scores(&attacked.measurements)?;
    let rows = threshold_sweep(&val, &cfg.alphas, &normal, &attack)?;
    let roc = roc_curve(&normal, &attack)?;
    io::write_table_csv(&cfg.out_dir.join(TABLE_FILE), &rows)?;
    io::write_roc_csv(&cfg.out_dir.join(ROC_FILE), &roc)?;
    io::write_pairs_csv(
        &cfg.out_dir.join(METRICS_FILE),
        &[
            ("auc", io::num(roc.auc)),
            ("normal_hours", normal.len().to_string()),
            ("attacked_hours", attack.len().to_string()),
            ("skipped_hours", skipped.len().to_string()),
        ],
    )?;
    for r in &rows {
        println!("alpha {:>5}: TP {:.2}%  FP {:.2}%", r.alpha, 100.0 * r.tp, 100.0 * r.fp);
    }
    println!("AUC {:.4}", roc.auc);
    Ok(())
}

/// Files gathered by `report`, in order.
pub const REPORT_INPUTS: &[&str] = &[METRICS_FILE, TABLE_FILE, GRID_FILE, HISTORY_FILE, ROC_FILE];

pub fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let mut out = String::new();
    for name in REPORT_INPUTS {
        let path = cfg.out_dir.join(name);
        if !path.exists() {
            continue;
        }
        let text = crate::read_to_string(&path)?;
        if !out.is_empty() {
            out.push('\n');
        }
        writeln!(out, "== {name} ==").unwrap();
        out.push_str(&text);
    }
    if out.is_empty() {
        return Err(CliError::Input(format!("no results to report in {}", cfg.out_dir.display())));
    }
    io::write_text(&cfg.out_dir.join(REPORT_FILE), &out)?;
    println!("wrote {}", cfg.out_dir.join(REPORT_FILE).display());
    Ok(())
}
