//! CSV and JSON persistence for matrices, load series, scenario sets, models,
//! attack plans and evaluation tables.
//!
//! Numbers are written in Rust's shortest round-trip form, so every file reads
//! back bit-for-bit and reruns with equal inputs produce equal bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fdia_core::attack::AttackPlan;
use fdia_core::autoencoder::{AutoencoderModel, GridResult, TrainHistory};
use fdia_core::data::{clean_load_rows, LoadSeries, LoadSource, ScenarioSet};
use fdia_core::detection::{DetectionReport, RocCurve};
use fdia_core::grid_model::{GridTopology, MeasurementConfig};
use fdia_core::linalg::Matrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::case_format::{measurement_label, write_case, write_measurements};
use crate::error::{CliError, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const SCENARIO_FORMAT_VERSION: u32 = 1;

pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const STATES_FILE: &str = "states.csv";
pub const METADATA_FILE: &str = "scenarios.json";

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn parse_num(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| CliError::Parse {
        line,
        msg: format!("bad number '{s}'"),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(contents.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Row-major matrix with a header row naming the columns.
pub fn write_matrix_csv(path: &Path, header: &[String], m: &Matrix) -> Result<()> {
    if header.len() != m.cols() {
        return Err(CliError::Internal(format!(
            "{} column names for {} columns",
            header.len(),
            m.cols()
        )));
    }
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|&v| num(v)))?;
    }
    finish(w, path)
}

/// Reads a matrix written by [`write_matrix_csv`]; returns the header too.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let inner = || -> Result<(Vec<String>, Matrix)> {
        let mut r = csv_reader(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let mut data = Vec::new();
        let mut rows = 0;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            for cell in rec.iter() {
                data.push(parse_num(cell, i + 2)?);
            }
            rows += 1;
        }
        Ok((header.clone(), Matrix::from_vec(rows, header.len(), data)))
    };
    inner().map_err(|e| e.in_file(path))
}

/// Load CSV: a header of load-point names, then one row of MW values per hour.
/// Rows with an empty or negative cell are dropped; the count is returned.
pub fn ingest_load_csv(path: &Path) -> Result<(LoadSeries, usize)> {
    let inner = || -> Result<(LoadSeries, usize)> {
        let mut r = csv_reader(path)?;
        let names: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|c| if c.is_empty() { Ok(None) } else { parse_num(c, i + 2).map(Some) })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(clean_load_rows(names, &rows)?)
    };
    let (series, dropped) = inner().map_err(|e| e.in_file(path))?;
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} incomplete or negative rows", path.display());
    }
    Ok((series, dropped))
}

pub fn write_load_csv(path: &Path, loads: &LoadSeries) -> Result<()> {
    write_matrix_csv(path, &loads.names, &loads.mw)
}

/// SHA-256 of the canonical text form of a case and its measurement placement.
pub fn grid_hash(topology: &GridTopology, config: &MeasurementConfig) -> String {
    let mut h = Sha256::new();
    h.update(write_case(topology));
    h.update(b"--\n");
    h.update(write_measurements(config));
    hex::encode(h.finalize())
}

/// Sidecar describing how a scenario set was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub format_version: u32,
    pub grid_sha256: String,
    pub case: String,
    pub n_hours: usize,
    pub n_z: usize,
    pub n_x: usize,
    pub load_source: LoadSource,
    pub dropped_rows: usize,
    pub dispatch_seed: u64,
    /// 1-based generator buses with their participation factors.
    pub gen_buses: Vec<usize>,
    pub dispatch_factors: Vec<f64>,
    /// Seconds since the Unix epoch; the only field that changes between reruns.
    pub created_unix: u64,
}

pub fn measurement_header(topology: &GridTopology, config: &MeasurementConfig) -> Vec<String> {
    (0..config.n_z()).map(|j| measurement_label(topology, config, j)).collect()
}

pub fn state_header(topology: &GridTopology) -> Vec<String> {
    (0..topology.n_x()).map(|k| format!("p {}", topology.state_bus(k) + 1)).collect()
}

pub fn save_scenarios(
    dir: &Path,
    set: &ScenarioSet,
    topology: &GridTopology,
    config: &MeasurementConfig,
    meta: &ScenarioMetadata,
) -> Result<()> {
    write_matrix_csv(
        &dir.join(MEASUREMENTS_FILE),
        &measurement_header(topology, config),
        &set.measurements,
    )?;
    write_matrix_csv(&dir.join(STATES_FILE), &state_header(topology), &set.states)?;
    write_json(&dir.join(METADATA_FILE), meta)
}

pub fn load_scenarios(dir: &Path) -> Result<(ScenarioSet, ScenarioMetadata)> {
    let meta: ScenarioMetadata = read_json(&dir.join(METADATA_FILE))?;
    if meta.format_version != SCENARIO_FORMAT_VERSION {
        return Err(CliError::Input(format!(
            "unsupported scenario format version {}",
            meta.format_version
        )));
    }
    let (_, measurements) = read_matrix_csv(&dir.join(MEASUREMENTS_FILE))?;
    let (_, states) = read_matrix_csv(&dir.join(STATES_FILE))?;
    if measurements.rows() != states.rows() || measurements.cols() != meta.n_z || states.cols() != meta.n_x {
        return Err(CliError::Input(format!(
            "{}: scenario files disagree with the metadata ({}x{} measurements, {}x{} states)",
            dir.display(),
            measurements.rows(),
            measurements.cols(),
            states.rows(),
            states.cols()
        )));
    }
    let hours = (0..measurements.rows()).collect();
    Ok((
        ScenarioSet {
            measurements,
            states,
            hours,
        },
        meta,
    ))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = crate::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::from(e).in_file(path))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: AutoencoderModel,
}

pub fn save_model(path: &Path, model: &AutoencoderModel) -> Result<()> {
    write_json(
        path,
        &ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: model.clone(),
        },
    )
}

/// Loads a model and checks that its shapes chain and its scaler is set.
pub fn load_model(path: &Path) -> Result<AutoencoderModel> {
    let f: ModelFile = read_json(path)?;
    if f.format_version != MODEL_FORMAT_VERSION {
        return Err(CliError::Input(format!(
            "{}: unsupported model format version {}",
            path.display(),
            f.format_version
        )));
    }
    let m = f.model;
    m.spec.validate()?;
    let shapes_ok = m.layers.len() + 1 == m.spec.dims.len()
        && m.layers
            .iter()
            .zip(m.spec.dims.windows(2))
            .all(|(l, d)| l.w.cols() == d[0] && l.w.rows() == d[1] && l.b.len() == d[1]);
    if !shapes_ok {
        return Err(CliError::Input(format!(
            "{}: layer shapes do not match {:?}",
            path.display(),
            m.spec.dims
        )));
    }
    m.scaler()?;
    Ok(m)
}

pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "train_J", "val_J"])?;
    for (e, (t, v)) in history.train_j.iter().zip(&history.val_j).enumerate() {
        w.write_record([(e + 1).to_string(), num(*t), num(*v)])?;
    }
    finish(w, path)
}

/// Ranked grid-search summary; diverged runs show `diverged` instead of a value.
pub fn write_grid_csv(path: &Path, results: &[GridResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["rank", "learning_rate", "batch_size", "epochs_completed", "final_val_J"])?;
    for (i, r) in results.iter().enumerate() {
        let j = r.final_val_j.map_or_else(|| "diverged".to_owned(), num);
        w.write_record([
            (i + 1).to_string(),
            num(r.learning_rate),
            r.batch_size.to_string(),
            r.history.len().to_string(),
            j,
        ])?;
    }
    finish(w, path)
}

/// Per-run convergence curves in long form: `learning_rate, batch_size, epoch, train_J, val_J`.
pub fn write_grid_histories_csv(path: &Path, results: &[GridResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["learning_rate", "batch_size", "epoch", "train_J", "val_J"])?;
    for r in results {
        for (e, (t, v)) in r.history.train_j.iter().zip(&r.history.val_j).enumerate() {
            w.write_record([
                num(r.learning_rate),
                r.batch_size.to_string(),
                (e + 1).to_string(),
                num(*t),
                num(*v),
            ])?;
        }
    }
    finish(w, path)
}

pub fn save_plan(path: &Path, plan: &AttackPlan) -> Result<()> {
    write_json(path, plan)
}

pub fn load_plan(path: &Path) -> Result<AttackPlan> {
    read_json(path)
}

/// Threshold table: `alpha, tau, TP, FN, TN, FP`, rates as fractions.
pub fn write_table_csv(path: &Path, rows: &[DetectionReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["alpha", "tau", "TP", "FN", "TN", "FP"])?;
    for r in rows {
        w.write_record([num(r.alpha), num(r.tau), num(r.tp), num(r.fn_), num(r.tn), num(r.fp)])?;
    }
    finish(w, path)
}

pub fn write_roc_csv(path: &Path, roc: &RocCurve) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["fp_rate", "tp_rate"])?;
    for &(f, t) in &roc.points {
        w.write_record([num(f), num(t)])?;
    }
    finish(w, path)
}

/// Two-column `key, value` file.
pub fn write_pairs_csv(path: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["key", "value"])?;
    for (k, v) in pairs {
        w.write_record([*k, v.as_str()])?;
    }
    finish(w, path)
}
