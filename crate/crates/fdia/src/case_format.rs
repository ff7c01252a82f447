//! Text formats for grid cases and measurement placements.
//!
//! Case file:
//!
//! ```text
//! buses N slack S
//! branch FROM TO REACTANCE
//! load B
//! gen B
//! ```
//!
//! Measurement file: `flow BRANCH_INDEX SIGMA` and `inj BUS SIGMA` lines.
//! Bus and branch numbers are 1-based in files and 0-based in memory.
//! Blank lines and `#` comments are ignored.

use std::fmt::Write as _;
use std::path::Path;

use fdia_core::grid_model::{Branch, GridTopology, MeasurementConfig, DEFAULT_SIGMA};

use crate::error::{CliError, Result};

fn parse_err(line: usize, msg: impl Into<String>) -> CliError {
    CliError::Parse { line, msg: msg.into() }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            None
        } else {
            Some((i + 1, l.split_whitespace().collect()))
        }
    })
}

fn one_based(tok: &str, line: usize, what: &str, count: usize) -> Result<usize> {
    let v: usize = tok.parse().map_err(|_| parse_err(line, format!("bad {what} number '{tok}'")))?;
    if v == 0 || v > count {
        return Err(parse_err(line, format!("{what} {v} out of range 1..={count}")));
    }
    Ok(v - 1)
}

fn number(tok: &str, line: usize, what: &str) -> Result<f64> {
    tok.parse().map_err(|_| parse_err(line, format!("bad {what} '{tok}'")))
}

/// Parses and validates a case description.
pub fn parse_case(text: &str) -> Result<GridTopology> {
    let mut header: Option<(usize, usize)> = None;
    let mut branches = Vec::new();
    let mut loads = Vec::new();
    let mut gens = Vec::new();
    for (ln, toks) in content_lines(text) {
        match (toks[0], header) {
            ("buses", None) => {
                if toks.len() != 4 || toks[2] != "slack" {
                    return Err(parse_err(ln, "expected 'buses N slack S'"));
                }
                let n: usize = toks[1].parse().map_err(|_| parse_err(ln, format!("bad bus count '{}'", toks[1])))?;
                let s = one_based(toks[3], ln, "slack bus", n)?;
                header = Some((n, s));
            }
            ("buses", Some(_)) => return Err(parse_err(ln, "duplicate header")),
            (_, None) => return Err(parse_err(ln, "the first line must be 'buses N slack S'")),
            ("branch", Some((n, _))) => {
                if toks.len() != 4 {
                    return Err(parse_err(ln, "expected 'branch FROM TO REACTANCE'"));
                }
                let from = one_based(toks[1], ln, "bus", n)?;
                let to = one_based(toks[2], ln, "bus", n)?;
                let reactance = number(toks[3], ln, "reactance")?;
                if from == to {
                    return Err(parse_err(ln, "branch endpoints must differ"));
                }
                if !(reactance > 0.0) {
                    return Err(parse_err(ln, format!("nonpositive reactance {reactance}")));
                }
                branches.push(Branch { from, to, reactance });
            }
            (kw @ ("load" | "gen"), Some((n, _))) => {
                if toks.len() != 2 {
                    return Err(parse_err(ln, format!("expected '{kw} BUS'")));
                }
                let b = one_based(toks[1], ln, "bus", n)?;
                if kw == "load" {
                    loads.push(b);
                } else {
                    gens.push(b);
                }
            }
            (kw, _) => return Err(parse_err(ln, format!("unknown keyword '{kw}'"))),
        }
    }
    let (bus_count, slack_bus) = header.ok_or_else(|| parse_err(1, "missing 'buses N slack S' header"))?;
    let topo = GridTopology {
        bus_count,
        slack_bus,
        branches,
        load_buses: loads,
        gen_buses: gens,
    };
    topo.validate()?;
    Ok(topo)
}

pub fn load_case(path: &Path) -> Result<GridTopology> {
    let text = crate::read_to_string(path)?;
    parse_case(&text).map_err(|e| e.in_file(path))
}

/// Parses a measurement placement against `topology`. A missing σ means 0.01 p.u.
pub fn parse_measurements(text: &str, topology: &GridTopology) -> Result<MeasurementConfig> {
    let mut flows = Vec::new();
    let mut flow_sigmas = Vec::new();
    let mut injs = Vec::new();
    let mut inj_sigmas = Vec::new();
    for (ln, toks) in content_lines(text) {
        if toks.len() < 2 || toks.len() > 3 {
            return Err(parse_err(ln, "expected 'flow BRANCH SIGMA' or 'inj BUS SIGMA'"));
        }
        let sigma = match toks.get(2) {
            Some(t) => number(t, ln, "sigma")?,
            None => DEFAULT_SIGMA,
        };
        if !(sigma > 0.0) {
            return Err(parse_err(ln, format!("nonpositive sigma {sigma}")));
        }
        match toks[0] {
            "flow" => {
                flows.push(one_based(toks[1], ln, "branch", topology.branches.len())?);
                flow_sigmas.push(sigma);
            }
            "inj" => {
                injs.push(one_based(toks[1], ln, "bus", topology.bus_count)?);
                inj_sigmas.push(sigma);
            }
            kw => return Err(parse_err(ln, format!("unknown keyword '{kw}'"))),
        }
    }
    flow_sigmas.extend(inj_sigmas);
    let cfg = MeasurementConfig {
        flow_measurements: flows,
        injection_measurements: injs,
        noise_sigmas: flow_sigmas,
    };
    cfg.validate(topology)?;
    Ok(cfg)
}

pub fn load_measurements(path: &Path, topology: &GridTopology) -> Result<MeasurementConfig> {
    let text = crate::read_to_string(path)?;
    parse_measurements(&text, topology).map_err(|e| e.in_file(path))
}

pub fn write_case(topology: &GridTopology) -> String {
    let mut s = String::new();
    writeln!(s, "buses {} slack {}", topology.bus_count, topology.slack_bus + 1).unwrap();
    for br in &topology.branches {
        writeln!(s, "branch {} {} {:?}", br.from + 1, br.to + 1, br.reactance).unwrap();
    }
    for b in &topology.load_buses {
        writeln!(s, "load {}", b + 1).unwrap();
    }
    for b in &topology.gen_buses {
        writeln!(s, "gen {}", b + 1).unwrap();
    }
    s
}

pub fn write_measurements(config: &MeasurementConfig) -> String {
    let mut s = String::new();
    let nf = config.flow_measurements.len();
    for (k, b) in config.flow_measurements.iter().enumerate() {
        writeln!(s, "flow {} {:?}", b + 1, config.noise_sigmas[k]).unwrap();
    }
    for (k, b) in config.injection_measurements.iter().enumerate() {
        writeln!(s, "inj {} {:?}", b + 1, config.noise_sigmas[nf + k]).unwrap();
    }
    s
}

/// Human-readable label for measurement row `j`, e.g. `flow 109-110` or `inj 103`.
pub fn measurement_label(topology: &GridTopology, config: &MeasurementConfig, j: usize) -> String {
    use fdia_core::grid_model::MeasurementKind;
    match config.kind(j) {
        MeasurementKind::Flow { branch } => {
            let br = topology.branches[branch];
            format!("flow {}-{}", br.from + 1, br.to + 1)
        }
        MeasurementKind::Injection { bus } => format!("inj {}", bus + 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = "buses 3 slack 3\nbranch 1 2 1.0\nbranch 1 3 1.0\nbranch 2 3 1.0\nload 2\ngen 1\n";

    #[test]
    fn triangle_round_trip() {
        let t = parse_case(TRIANGLE).unwrap();
        assert_eq!(t.bus_count, 3);
        assert_eq!(t.slack_bus, 2);
        assert_eq!(t.branches.len(), 3);
        assert_eq!(write_case(&t), TRIANGLE);
        assert_eq!(parse_case(&write_case(&t)).unwrap(), t);
    }

    #[test]
    fn zero_reactance_is_reported_with_line() {
        let err = parse_case("buses 2 slack 1\n\nbranch 1 2 0.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("nonpositive reactance"), "{msg}");
    }

    #[test]
    fn disconnected_case_lists_isolated_buses() {
        let err = parse_case("buses 4 slack 1\nbranch 1 2 0.1\n").unwrap_err();
        assert!(err.to_string().contains("[2, 3]"), "{err}");
    }

    #[test]
    fn measurement_file_parses_and_round_trips() {
        let t = parse_case(TRIANGLE).unwrap();
        let cfg = parse_measurements("flow 1 0.02\ninj 2 0.01 # meter\nflow 3\n", &t).unwrap();
        assert_eq!(cfg.flow_measurements, vec![0, 2]);
        assert_eq!(cfg.injection_measurements, vec![1]);
        assert_eq!(cfg.noise_sigmas, vec![0.02, 0.01, 0.01]);
        assert_eq!(parse_measurements(&write_measurements(&cfg), &t).unwrap(), cfg);
        assert!(parse_measurements("flow 9 0.1\n", &t).is_err());
        assert!(parse_measurements("inj 1 -0.1\n", &t).is_err());
    }
}
