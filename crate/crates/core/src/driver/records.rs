//! Per-step records and CSV output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;

pub const RECORD_COLUMNS: [&str; 16] = [
    "step",
    "time",
    "J",
    "J_state_term",
    "J_xi_term",
    "J_u_term",
    "penalty_end",
    "comp_residual",
    "kkt_r1",
    "kkt_r2",
    "kkt_r3",
    "kkt_r4",
    "kkt_r5",
    "err_y_l2",
    "err_u_rel",
    "wall_ms",
];

fn header() -> String {
    RECORD_COLUMNS.join(",")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeStepRecord {
    pub step: usize,
    pub time: f64,
    /// Control coefficients; written to the control files, not the table.
    pub u: Vec<f64>,
    pub j: f64,
    pub j_state: f64,
    pub j_xi: f64,
    pub j_u: f64,
    /// `(xi, y + eps xi)` at the last penalty level.
    pub penalty_end: f64,
    /// `(y, xi)` of the stored state.
    pub comp_residual: f64,
    pub kkt: [f64; 5],
    /// Relative L2 error against the exact temperature.
    pub err_y_l2: Option<f64>,
    /// Relative boundary-norm error against the exact control.
    pub err_u_rel: Option<f64>,
    pub wall_ms: Option<f64>,
}

fn num(out: &mut String, v: f64) {
    let _ = write!(out, ",{v:.16e}");
}

fn opt(out: &mut String, v: Option<f64>) {
    match v {
        Some(v) => num(out, v),
        None => out.push(','),
    }
}

fn record_line(r: &TimeStepRecord) -> String {
    let mut s = r.step.to_string();
    for v in [r.time, r.j, r.j_state, r.j_xi, r.j_u, r.penalty_end, r.comp_residual] {
        num(&mut s, v);
    }
    for v in r.kkt {
        num(&mut s, v);
    }
    opt(&mut s, r.err_y_l2);
    opt(&mut s, r.err_u_rel);
    opt(&mut s, r.wall_ms);
    s
}

/// Renders the record table; floats carry 17 significant digits and
/// missing values are empty fields.
pub fn records_to_csv(records: &[TimeStepRecord]) -> String {
    let mut s = header();
    s.push('\n');
    for r in records {
        s.push_str(&record_line(r));
        s.push('\n');
    }
    s
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_records(records: &[TimeStepRecord], path: &Path) -> Result<()> {
    write_file(path, &records_to_csv(records))
}

/// Parses a record table written by [`write_records`]. Control vectors are
/// not part of the table and come back empty.
pub fn read_records(path: &Path) -> Result<Vec<TimeStepRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let bad = |msg: String| Error::invalid(format!("{}: {msg}", path.display()));
    if lines.next() != Some(header().as_str()) {
        return Err(bad("unexpected header".into()));
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != RECORD_COLUMNS.len() {
            return Err(bad(format!("row {} has {} fields", k + 1, f.len())));
        }
        let parse = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| bad(format!("row {}: bad number `{}`", k + 1, f[i])))
        };
        let parse_opt = |i: usize| -> Result<Option<f64>> {
            if f[i].is_empty() {
                Ok(None)
            } else {
                parse(i).map(Some)
            }
        };
        out.push(TimeStepRecord {
            step: f[0]
                .parse()
                .map_err(|_| bad(format!("row {}: bad step", k + 1)))?,
            time: parse(1)?,
            u: Vec::new(),
            j: parse(2)?,
            j_state: parse(3)?,
            j_xi: parse(4)?,
            j_u: parse(5)?,
            penalty_end: parse(6)?,
            comp_residual: parse(7)?,
            kkt: [parse(8)?, parse(9)?, parse(10)?, parse(11)?, parse(12)?],
            err_y_l2: parse_opt(13)?,
            err_u_rel: parse_opt(14)?,
            wall_ms: parse_opt(15)?,
        });
    }
    Ok(out)
}

fn coord_header(mesh: &StructuredMesh<f64>) -> &'static str {
    if mesh.dim() == 1 {
        "x"
    } else {
        "x,y"
    }
}

fn coords(out: &mut String, mesh: &StructuredMesh<f64>, i: usize) {
    let p = mesh.node(i);
    num(out, p[0]);
    if mesh.dim() == 2 {
        num(out, p[1]);
    }
}

/// `node_index, coordinates, temperature, solid_fraction`.
pub fn write_fields(path: &Path, mesh: &StructuredMesh<f64>, y: &[f64], xi: &[f64]) -> Result<()> {
    let mut s = format!("node_index,{},temperature,solid_fraction\n", coord_header(mesh));
    for i in 0..mesh.n_nodes() {
        s.push_str(&i.to_string());
        coords(&mut s, mesh, i);
        num(&mut s, y[i]);
        num(&mut s, xi[i]);
        s.push('\n');
    }
    write_file(path, &s)
}

/// `node_index, coordinates, u` for each control dof.
pub fn write_control(
    path: &Path,
    mesh: &StructuredMesh<f64>,
    control_nodes: &[usize],
    u: &[f64],
) -> Result<()> {
    let mut s = format!("node_index,{},u\n", coord_header(mesh));
    for (&i, &v) in control_nodes.iter().zip(u) {
        s.push_str(&i.to_string());
        coords(&mut s, mesh, i);
        num(&mut s, v);
        s.push('\n');
    }
    write_file(path, &s)
}
