//! Desired states of the test cases.
//!
//! Fields are sampled at the nodes. A node lying exactly on the melt front
//! counts as solid.

use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;

/// Source of the desired temperature and solid fraction.
#[derive(Clone, Debug, PartialEq)]
pub enum Benchmark {
    /// One-dimensional front `x = t` driven by the flux `e^t`.
    Example1,
    /// Stationary parabolic front `x1 = (4 - x2) x2 / 4` on `]0,2[ x ]0,4[`.
    Example2,
    /// `y_d = 0`, `xi_d = xi_0`.
    AtRest,
    /// Time-independent nodal fields.
    Fixed {
        name: String,
        y_d: Vec<f64>,
        xi_d: Vec<f64>,
    },
}

/// Desired fields at one time, plus the exact solution when known.
#[derive(Clone, Debug, PartialEq)]
pub struct Desired {
    pub y_d: Vec<f64>,
    pub xi_d: Vec<f64>,
    pub exact_u: Option<f64>,
}

fn on_or_beyond(x: f64, front: f64) -> bool {
    x >= front - 1e-12 * front.abs().max(1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example1Fields {
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
    pub u: f64,
}

/// `y = e^{t-x} - 1` behind the front `x = t`, 0 beyond; `u = e^t`.
pub fn example1_fields(t: f64, mesh: &StructuredMesh<f64>) -> Example1Fields {
    let (y, xi) = mesh
        .coords()
        .iter()
        .map(|p| {
            if on_or_beyond(p[0], t) {
                (0.0, 1.0)
            } else {
                ((t - p[0]).exp() - 1.0, 0.0)
            }
        })
        .unzip();
    Example1Fields { y, xi, u: t.exp() }
}

/// `y = e^{f(x2) - x1} - 1` behind `x1 = f(x2) = (4 - x2) x2 / 4`, 0 beyond.
pub fn example2_fields(mesh: &StructuredMesh<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    if mesh.dim() != 2 {
        return Err(Error::invalid("the parabolic front case needs a 2D mesh"));
    }
    Ok(mesh
        .coords()
        .iter()
        .map(|p| {
            let front = 0.25 * (4.0 - p[1]) * p[1];
            if on_or_beyond(p[0], front) {
                (0.0, 1.0)
            } else {
                ((front - p[0]).exp() - 1.0, 0.0)
            }
        })
        .unzip())
}

impl Benchmark {
    pub fn name(&self) -> &str {
        match self {
            Benchmark::Example1 => "example1",
            Benchmark::Example2 => "example2",
            Benchmark::AtRest => "at_rest",
            Benchmark::Fixed { name, .. } => name,
        }
    }

    pub fn desired(&self, mesh: &StructuredMesh<f64>, t: f64, xi0: &[f64]) -> Result<Desired> {
        Ok(match self {
            Benchmark::Example1 => {
                let f = example1_fields(t, mesh);
                Desired {
                    y_d: f.y,
                    xi_d: f.xi,
                    exact_u: Some(f.u),
                }
            }
            Benchmark::Example2 => {
                let (y_d, xi_d) = example2_fields(mesh)?;
                Desired {
                    y_d,
                    xi_d,
                    exact_u: None,
                }
            }
            Benchmark::AtRest => Desired {
                y_d: vec![0.0; mesh.n_nodes()],
                xi_d: xi0.to_vec(),
                exact_u: None,
            },
            Benchmark::Fixed { y_d, xi_d, .. } => Desired {
                y_d: y_d.clone(),
                xi_d: xi_d.clone(),
                exact_u: None,
            },
        })
    }

    /// Whether the desired temperature is the exact solution.
    pub fn has_exact_state(&self) -> bool {
        matches!(self, Benchmark::Example1)
    }
}

/// Reads `node_index,temperature,solid_fraction` rows.
pub fn read_desired_csv(path: &Path, n_nodes: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, what: &str| {
        Error::Config(format!("{}:{}: {what}", path.display(), line + 1))
    };
    let mut y = vec![f64::NAN; n_nodes];
    let mut xi = vec![f64::NAN; n_nodes];
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(bad(k, "expected 3 columns"));
        }
        let i: usize = cols[0].parse().map_err(|_| bad(k, "bad node index"))?;
        if i >= n_nodes {
            return Err(bad(k, "node index out of range"));
        }
        y[i] = cols[1].parse().map_err(|_| bad(k, "bad temperature"))?;
        xi[i] = cols[2].parse().map_err(|_| bad(k, "bad solid fraction"))?;
    }
    if let Some(i) = y.iter().chain(&xi).position(|v| v.is_nan()) {
        return Err(Error::Config(format!(
            "{}: node {} missing",
            path.display(),
            i % n_nodes
        )));
    }
    Ok((y, xi))
}
