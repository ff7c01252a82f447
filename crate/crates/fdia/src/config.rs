//! Run configuration: a flat `key = value` file, overridden by `--key value`
//! flags. The output directory may also come from `FDIA_OUT_DIR`; the order is
//! flag, then environment, then file, then default.
//!
//! ```text
//! # experiment.cfg
//! case = builtin:ieee14
//! hours = 8760
//! epochs = 300
//! target = flow 4-5
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fdia_core::autoencoder::{LayerSpec, TrainConfig};
use fdia_core::data::CampaignMode;
use fdia_core::detection::DEFAULT_ALPHAS;

use crate::error::{CliError, Result};

macro_rules! config_keys {
    ($($field:ident = $name:literal: $help:literal),* $(,)?) => {
        /// Command-line overrides, one per configuration key.
        #[derive(clap::Args, Clone, Debug, Default)]
        pub struct Overrides {
            $(#[arg(long = $name, value_name = "VALUE", help = $help)] pub $field: Option<String>,)*
        }

        impl Overrides {
            fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
                vec![$(($name, &self.$field)),*]
            }
        }

        /// Every key accepted in a configuration file.
        pub const KEYS: &[&str] = &["out-dir", $($name),*];
    };
}

config_keys! {
    case = "case": "grid case file, or builtin:NAME (case3, case6ww, ieee14, ieee118)",
    meas = "meas": "measurement placement file; defaults to the case's bundled placement or full metering",
    loads = "loads": "load CSV to ingest; when absent, loads are synthesised",
    hours = "hours": "hours to synthesise",
    load_seed = "load-seed": "seed of the synthetic load generator",
    dispatch_seed = "dispatch-seed": "seed of generator participation factors and measurement noise",
    data_dir = "data-dir": "directory holding the scenario set (default: output directory)",
    split = "split": "train:validation:test ratios",
    model = "model": "model file (default: OUT/model.json)",
    layers = "layers": "comma-separated layer widths (default: reference shape scaled to the input)",
    learning_rate = "learning-rate": "Adam step size",
    batch_size = "batch-size": "mini-batch size",
    epochs = "epochs": "training epochs",
    train_seed = "train-seed": "seed of initialisation and shuffling",
    lr_grid = "lr-grid": "comma-separated learning rates for --grid-search",
    batch_grid = "batch-grid": "comma-separated batch sizes for --grid-search",
    target = "target": "attacked measurement: 'flow A-B', 'inj B' or 'row N' (1-based)",
    magnitude = "magnitude": "required change of the target measurement, p.u.",
    protected = "protected": "comma-separated measurements the attacker cannot touch",
    c_max = "c-max": "bound on every entry of the state bias",
    big_m = "big-m": "indicator bound (default: derived from c-max)",
    node_limit = "node-limit": "branch-and-bound node limit",
    time_limit = "time-limit": "solver time limit in seconds",
    oracle_max_support = "oracle-max-support": "largest support the brute-force cross-check enumerates",
    plan = "plan": "attack plan file (default: OUT/plan.json)",
    alphas = "alphas": "comma-separated threshold percentiles for eval",
    alpha = "alpha": "threshold percentile for detect",
    attack_mode = "attack-mode": "'relative' (scale per hour) or 'fixed' (add the plan as is)",
    attack_percent = "attack-percent": "relative attack size, percent of the target measurement",
    input = "input": "measurement CSV scored by detect (default: the scenario measurements)",
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse = |msg: String| CliError::Parse { line: i + 1, msg };
        let (k, v) = line.split_once('=').ok_or_else(|| parse("expected 'key = value'".into()))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(parse(format!("unknown key '{k}'")));
        }
        if map.insert(k.to_owned(), v.to_owned()).is_some() {
            return Err(parse(format!("duplicate key '{k}'")));
        }
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq)]
pub enum LoadInput {
    Csv(PathBuf),
    Synthetic { hours: usize, seed: u64 },
}

/// Fully resolved settings for one command.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub case: String,
    pub meas: Option<PathBuf>,
    pub loads: LoadInput,
    pub dispatch_seed: u64,
    pub out_dir: PathBuf,
    pub data_dir: PathBuf,
    pub split: (u32, u32, u32),
    pub model: PathBuf,
    pub layers: Option<LayerSpec>,
    pub train: TrainConfig,
    pub lr_grid: Vec<f64>,
    pub batch_grid: Vec<usize>,
    pub target: Option<String>,
    pub magnitude: f64,
    pub protected: Vec<String>,
    pub c_max: f64,
    pub big_m: Option<f64>,
    pub node_limit: usize,
    pub time_limit: f64,
    pub oracle_max_support: usize,
    pub plan: PathBuf,
    pub alphas: Vec<f64>,
    pub alpha: f64,
    pub attack: CampaignMode,
    pub input: Option<PathBuf>,
}

struct Values(BTreeMap<String, String>);

impl Values {
    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| CliError::Input(format!("invalid value '{v}' for {key}"))),
        }
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| CliError::Input(format!("invalid value '{v}' for {key}"))))
            .transpose()
    }

    fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| CliError::Input(format!("invalid entry '{}' in {key}", s.trim())))
                })
                .collect(),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }
}

impl RunConfig {
    /// Merges an optional config file with command-line overrides and an
    /// output directory taken from the flag or environment.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides, out_dir: Option<PathBuf>) -> Result<Self> {
        let mut map = match file {
            Some(p) => parse_config_text(&crate::read_to_string(p)?).map_err(|e| e.in_file(p))?,
            None => BTreeMap::new(),
        };
        for (k, v) in overrides.pairs() {
            if let Some(v) = v {
                map.insert(k.to_owned(), v.clone());
            }
        }
        if let Some(d) = out_dir {
            map.insert("out-dir".into(), d.to_string_lossy().into_owned());
        }
        Self::from_values(Values(map))
    }

    fn from_values(v: Values) -> Result<Self> {
        let out_dir = v.path("out-dir").unwrap_or_else(|| PathBuf::from("out"));
        let data_dir = v.path("data-dir").unwrap_or_else(|| out_dir.clone());
        let loads = match v.path("loads") {
            Some(p) => LoadInput::Csv(p),
            None => LoadInput::Synthetic {
                hours: v.get("hours", 8760)?,
                seed: v.get("load-seed", 1)?,
            },
        };
        let split: Vec<u32> = match v.raw("split") {
            None => vec![3, 1, 1],
            Some(s) => s
                .split(':')
                .map(|p| p.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| CliError::Input(format!("invalid split '{s}', expected A:B:C")))?,
        };
        let [a, b, c] = split[..] else {
            return Err(CliError::Input("split needs three ratios".into()));
        };
        let layers = match v.opt::<String>("layers")? {
            None => None,
            Some(_) => Some(LayerSpec::new(v.list("layers", Vec::new())?)?),
        };
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            learning_rate: v.get("learning-rate", defaults.learning_rate)?,
            batch_size: v.get("batch-size", defaults.batch_size)?,
            epochs: v.get("epochs", defaults.epochs)?,
            seed: v.get("train-seed", defaults.seed)?,
            adam: defaults.adam,
        };
        train.validate()?;
        let mode: String = v.get("attack-mode", "relative".to_owned())?;
        let attack = match mode.as_str() {
            "relative" => CampaignMode::RelativePercent(v.get("attack-percent", 10.0)?),
            "fixed" => CampaignMode::FixedMu,
            m => return Err(CliError::Input(format!("attack-mode must be 'relative' or 'fixed', got '{m}'"))),
        };
        let protected = match v.raw("protected") {
            None => Vec::new(),
            Some(s) => s.split(',').map(|p| p.trim().to_owned()).filter(|p| !p.is_empty()).collect(),
        };
        Ok(RunConfig {
            case: v.get("case", "builtin:ieee14".to_owned())?,
            meas: v.path("meas"),
            loads,
            dispatch_seed: v.get("dispatch-seed", 2)?,
            model: v.path("model").unwrap_or_else(|| out_dir.join("model.json")),
            plan: v.path("plan").unwrap_or_else(|| out_dir.join("plan.json")),
            out_dir,
            data_dir,
            split: (a, b, c),
            layers,
            train,
            lr_grid: v.list("lr-grid", vec![1e-2, 1e-3, 1e-4, 1e-5])?,
            batch_grid: v.list("batch-grid", vec![64, 128, 256])?,
            target: v.opt("target")?,
            magnitude: v.get("magnitude", 0.1)?,
            protected,
            c_max: v.get("c-max", fdia_core::attack::DEFAULT_C_MAX)?,
            big_m: v.opt("big-m")?,
            node_limit: v.get("node-limit", 1_000_000)?,
            time_limit: v.get("time-limit", 600.0)?,
            oracle_max_support: v.get("oracle-max-support", 6)?,
            alphas: v.list("alphas", DEFAULT_ALPHAS.to_vec())?,
            alpha: v.get("alpha", 99.0)?,
            attack,
            input: v.path("input"),
        })
    }
}
