//! CSV exchange with `#` comment headers.
//!
//! Trajectory files have the columns `t, y1..yn, u1..up`; the last row has
//! empty control cells because there are one fewer controls than states.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::ocp::Trajectory;

/// Twelve significant digits, with magnitudes below `1e-12` printed as `0`.
pub fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x.abs() < 1e-12 {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn format_row(values: &[f64]) -> String {
    values.iter().map(|v| format_number(*v)).collect::<Vec<_>>().join(",")
}

/// Comment lines `# key=value` opening every emitted file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    pub entries: Vec<(String, String)>,
}

impl Header {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        Header {
            entries: vec![
                ("subcommand".into(), subcommand.into()),
                ("seed".into(), seed.to_string()),
            ],
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "# {k}={v}");
        }
        out
    }

    /// Collects the `# key=value` lines of `text`.
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.strip_prefix('#'))
            .filter_map(|l| l.trim().split_once('='))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();
        Header { entries }
    }
}

/// Header, column names, then one row per grid point.
pub fn trajectory_to_csv(header: &Header, traj: &Trajectory) -> String {
    let n = traj.states.first().map_or(0, |s| s.len());
    let p = traj.controls.first().map_or(0, |u| u.len());
    let mut out = header.render();
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("y{i}")));
    cols.extend((1..=p).map(|i| format!("u{i}")));
    out.push_str(&cols.join(","));
    out.push('\n');
    for (k, (t, y)) in traj.grid.iter().zip(&traj.states).enumerate() {
        let mut row = vec![format_number(*t)];
        row.extend(y.iter().map(|v| format_number(*v)));
        match traj.controls.get(k) {
            Some(u) => row.extend(u.iter().map(|v| format_number(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), p)),
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn parse_cell(cell: &str, line: usize) -> Result<f64> {
    cell.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: '{cell}' is not a number")))
}

/// Parses a trajectory written by [`trajectory_to_csv`]. Cost totals are not
/// stored in the file and come back as NaN.
pub fn trajectory_from_csv(text: &str) -> Result<(Header, Trajectory)> {
    let header = Header::parse(text);
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, names) = lines
        .next()
        .ok_or_else(|| Error::Parse("trajectory file has no column header".into()))?;
    let names: Vec<&str> = names.split(',').map(str::trim).collect();
    if names.first() != Some(&"t") {
        return Err(Error::Parse("first column must be 't'".into()));
    }
    let n = names.iter().filter(|c| c.starts_with('y')).count();
    let p = names.iter().filter(|c| c.starts_with('u')).count();
    if n == 0 || names.len() != 1 + n + p {
        return Err(Error::Parse(format!("unexpected columns {names:?}")));
    }
    let mut grid = Vec::new();
    let mut states = Vec::new();
    let mut controls = Vec::new();
    let mut finished = false;
    for (i, line) in lines {
        let line_no = i + 1;
        if finished {
            return Err(Error::Parse(format!("line {line_no}: rows after the final state")));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(Error::Parse(format!(
                "line {line_no}: {} cells, expected {}",
                cells.len(),
                names.len()
            )));
        }
        grid.push(parse_cell(cells[0], line_no)?);
        let y = cells[1..=n]
            .iter()
            .map(|c| parse_cell(c, line_no))
            .collect::<Result<Vec<_>>>()?;
        states.push(DVector::from_vec(y));
        let u_cells = &cells[1 + n..];
        if p == 0 || u_cells.iter().all(|c| c.trim().is_empty()) {
            finished = true;
        } else {
            let u = u_cells
                .iter()
                .map(|c| parse_cell(c, line_no))
                .collect::<Result<Vec<_>>>()?;
            controls.push(DVector::from_vec(u));
        }
    }
    if states.is_empty() {
        return Err(Error::Parse("trajectory file has no rows".into()));
    }
    if controls.len() + 1 != states.len() {
        return Err(Error::Parse(format!(
            "{} controls for {} states; the last row must leave the controls empty",
            controls.len(),
            states.len()
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parse("time column must be increasing".into()));
    }
    Ok((
        header,
        Trajectory {
            grid,
            states,
            controls,
            shifted_cost_total: f64::NAN,
            raw_cost_total: f64::NAN,
            endpoint_violation: f64::NAN,
        },
    ))
}
