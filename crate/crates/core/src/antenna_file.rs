//! Plain-text antenna data files.
//!
//! ```text
//! pixel-antenna v1 Q=<int> Ns=<int>
//! <Q+1 rows of the impedance matrix, Q+1 "re im" pairs each>
//! <2 Ns rows of the open-circuit pattern matrix, Q+1 "re im" pairs each>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Floats are written
//! in shortest round-trip form, so save/load is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::em_model::{ImpedanceNetwork, OpenCircuitPatterns};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

pub const ANTENNA_MAGIC: &str = "pixel-antenna";
pub const ANTENNA_VERSION: &str = "v1";

fn header_field(token: Option<&str>, name: &str, line: usize) -> Result<usize> {
    let token = token.ok_or_else(|| Error::parse(line, format!("header is missing `{name}=`")))?;
    let value = token
        .strip_prefix(name)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| Error::parse(line, format!("expected `{name}=<int>`, found `{token}`")))?;
    value
        .parse()
        .map_err(|_| Error::parse(line, format!("`{name}` must be a non-negative integer, found `{value}`")))
}

fn parse_row(text: &str, line: usize, expected: usize) -> Result<Vec<C64>> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(line, format!("`{t}` is not a finite number")))
        })
        .collect::<Result<_>>()?;
    if values.len() != 2 * expected {
        return Err(Error::parse(
            line,
            format!("expected {expected} complex entries ({} numbers), found {} numbers", 2 * expected, values.len()),
        ));
    }
    Ok(values.chunks(2).map(|c| C64::new(c[0], c[1])).collect())
}

/// Parses an antenna file into its impedance network and pattern matrix.
pub fn parse_antenna(text: &str) -> Result<(ImpedanceNetwork, OpenCircuitPatterns)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or_else(|| Error::parse(1, "empty antenna file"))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some(ANTENNA_MAGIC) || tokens.next() != Some(ANTENNA_VERSION) {
        return Err(Error::parse(
            hline,
            format!("header must start with `{ANTENNA_MAGIC} {ANTENNA_VERSION}`"),
        ));
    }
    let q = header_field(tokens.next(), "Q", hline)?;
    let ns = header_field(tokens.next(), "Ns", hline)?;
    if let Some(extra) = tokens.next() {
        return Err(Error::parse(hline, format!("unexpected header token `{extra}`")));
    }
    if q == 0 || ns == 0 {
        return Err(Error::parse(hline, "Q and Ns must be at least 1"));
    }
    let ports = q + 1;

    let mut z = CMatrix::zeros(ports, ports);
    let mut e = CMatrix::zeros(2 * ns, ports);
    let total = ports + 2 * ns;
    let mut seen = 0;
    for (line, text) in lines.by_ref() {
        let row = parse_row(text, line, ports)?;
        if seen < ports {
            z.row_mut(seen).iter_mut().zip(row).for_each(|(d, s)| *d = s);
        } else {
            e.row_mut(seen - ports).iter_mut().zip(row).for_each(|(d, s)| *d = s);
        }
        seen += 1;
        if seen == total {
            break;
        }
    }
    if seen != total {
        return Err(Error::dims("antenna file matrix rows", total, seen));
    }
    if let Some((line, _)) = lines.next() {
        return Err(Error::parse(line, format!("trailing data after {total} matrix rows")));
    }
    Ok((ImpedanceNetwork::from_full(&z)?, OpenCircuitPatterns::new(e)?))
}

fn push_row(out: &mut String, m: &CMatrix, i: usize) {
    let mut first = true;
    for z in m.row(i).iter() {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{} {}", z.re, z.im);
    }
    out.push('\n');
}

pub fn format_antenna(net: &ImpedanceNetwork, patterns: &OpenCircuitPatterns) -> Result<String> {
    if patterns.num_ports() != net.num_switches() + 1 {
        return Err(Error::dims("pattern matrix columns", net.num_switches() + 1, patterns.num_ports()));
    }
    let z = net.full_matrix();
    let e = patterns.matrix();
    let mut out = format!(
        "{ANTENNA_MAGIC} {ANTENNA_VERSION} Q={} Ns={}\n",
        net.num_switches(),
        patterns.num_spatial_samples()
    );
    for i in 0..z.nrows() {
        push_row(&mut out, &z, i);
    }
    for i in 0..e.nrows() {
        push_row(&mut out, e, i);
    }
    Ok(out)
}

pub fn read_antenna_file(path: &Path) -> Result<(ImpedanceNetwork, OpenCircuitPatterns)> {
    parse_antenna(&fs::read_to_string(path)?)
}

pub fn write_antenna_file(path: &Path, net: &ImpedanceNetwork, patterns: &OpenCircuitPatterns) -> Result<()> {
    fs::write(path, format_antenna(net, patterns)?)?;
    Ok(())
}
