//! File formats, the experiment pipeline and the `fdia` command-line driver
//! built on [`fdia_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod case_format;
pub mod cases;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;

use std::path::Path;

pub use error::{CliError, Result};

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}
