//! Grid cases bundled with the crate.

use fdia_core::grid_model::{build_h_matrix, GridModel, GridTopology, MeasurementConfig};

use crate::case_format::{parse_case, parse_measurements};
use crate::error::{CliError, Result};

/// `(name, case text, measurement text)` for every bundled case.
pub const BUILTIN: &[(&str, &str, &str)] = &[
    ("case3", include_str!("../cases/case3.case"), include_str!("../cases/case3.meas")),
    (
        "case6ww",
        include_str!("../cases/case6ww.case"),
        include_str!("../cases/case6ww.meas"),
    ),
    ("ieee14", include_str!("../cases/ieee14.case"), include_str!("../cases/ieee14.meas")),
    (
        "ieee118",
        include_str!("../cases/ieee118.case"),
        include_str!("../cases/ieee118.meas"),
    ),
];

pub fn builtin_text(name: &str) -> Option<(&'static str, &'static str)> {
    BUILTIN.iter().find(|(n, _, _)| *n == name).map(|(_, c, m)| (*c, *m))
}

/// Topology and measurement placement of a bundled case.
pub fn builtin_case(name: &str) -> Result<(GridTopology, MeasurementConfig)> {
    let (case, meas) = builtin_text(name).ok_or_else(|| {
        let names: Vec<_> = BUILTIN.iter().map(|b| b.0).collect();
        CliError::Input(format!("unknown builtin case '{name}', expected one of {names:?}"))
    })?;
    let topo = parse_case(case)?;
    let cfg = parse_measurements(meas, &topo)?;
    Ok((topo, cfg))
}

pub fn builtin_model(name: &str) -> Result<GridModel> {
    let (topo, cfg) = builtin_case(name)?;
    Ok(build_h_matrix(&topo, &cfg)?)
}
