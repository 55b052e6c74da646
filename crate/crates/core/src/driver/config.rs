//! TOML run configuration.
//!
//! ```toml
//! [mesh]
//! dimension = 1
//! extents = [4.0]        # upper corner; the domain starts at the origin
//! cells = [400]
//!
//! [time]
//! tau = 0.01
//! steps = 300
//!
//! [physics]
//! kappa = 1.0
//! velocity = "zero"      # or "rotation", or [vx, vy]
//!
//! [control]
//! nu = 1e-4
//! benchmark = "example1" # example2, at_rest, or "file:<csv>"
//!
//! [schedule]
//! gamma0 = 1e-3
//! growth = 1.5
//! count = 40
//! epsilon_rule = "quartic"  # or { offset = 1e3, power = 4.0 }
//!
//! [output]
//! dir = "output"
//! write_fields_every = 0
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::control::{EpsilonRule, PathOptions, PathSchedule};
use crate::error::{Error, Result};
use crate::fem::Conductivity;
use crate::mesh::{build_interval_mesh, build_rectangle_mesh, BoundaryTag, IntervalTags, RectangleTags};
use crate::semilag::VelocityField;

use super::benchmarks::{read_desired_csv, Benchmark};
use super::simulation::{OutputSpec, SimulationConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub mesh: MeshSection,
    pub time: TimeSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    pub control: ControlSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub dimension: usize,
    pub extents: Vec<f64>,
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub tau: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum VelocitySpec {
    Vector(Vec<f64>),
    Named(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default = "zero_velocity")]
    pub velocity: VelocitySpec,
}

fn one() -> f64 {
    1.0
}

fn zero_velocity() -> VelocitySpec {
    VelocitySpec::Named("zero".into())
}

impl Default for PhysicsSection {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            velocity: zero_velocity(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub nu: f64,
    pub benchmark: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EpsilonRuleSpec {
    Named(String),
    Custom { offset: f64, power: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub gamma0: f64,
    pub growth: f64,
    pub count: usize,
    pub epsilon_rule: EpsilonRuleSpec,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            gamma0: 1e-3,
            growth: 1.5,
            count: 40,
            epsilon_rule: EpsilonRuleSpec::Named("quartic".into()),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub write_fields_every: usize,
}

fn default_dir() -> PathBuf {
    PathBuf::from("output")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            write_fields_every: 0,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Options applied on top of a configuration file.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub output_dir: Option<PathBuf>,
    /// 100 steps for the one-dimensional benchmark, 25 x 50 cells for the
    /// two-dimensional one.
    pub fast: bool,
    pub timings: bool,
    /// Directory that relative paths in the file are resolved against.
    pub base_dir: Option<PathBuf>,
}

impl ConfigFile {
    pub fn into_simulation(self, ov: &RunOverrides) -> Result<SimulationConfig> {
        let base = ov.base_dir.clone().unwrap_or_default();
        let m = &self.mesh;
        if m.dimension != 1 && m.dimension != 2 {
            return Err(config_err(format!("mesh.dimension must be 1 or 2, got {}", m.dimension)));
        }
        if m.extents.len() != m.dimension || m.cells.len() != m.dimension {
            return Err(config_err("mesh.extents and mesh.cells need one entry per dimension"));
        }
        if !(self.time.tau > 0.0) || !self.time.tau.is_finite() {
            return Err(config_err("time.tau must be positive"));
        }
        if self.time.steps == 0 {
            return Err(config_err("time.steps must be at least 1"));
        }
        if !(self.control.nu > 0.0) {
            return Err(config_err("control.nu must be positive"));
        }
        if !(self.physics.kappa > 0.0) {
            return Err(config_err("physics.kappa must be positive"));
        }

        let bench_name = self.control.benchmark.trim();
        let mut steps = self.time.steps;
        let mut cells = m.cells.clone();
        if ov.fast {
            match bench_name {
                "example1" => steps = steps.min(100),
                "example2" => {
                    cells[0] = cells[0].min(25);
                    cells[1] = cells[1].min(50);
                }
                _ => {}
            }
        }

        let mesh = if m.dimension == 1 {
            let tags = IntervalTags {
                left: BoundaryTag::Control,
                right: BoundaryTag::Dirichlet,
            };
            build_interval_mesh(m.extents[0], cells[0], tags)
        } else {
            let tags = RectangleTags {
                left: BoundaryTag::Control,
                right: BoundaryTag::Neumann,
                bottom: BoundaryTag::Dirichlet,
                top: BoundaryTag::Dirichlet,
            };
            build_rectangle_mesh(m.extents[0], m.extents[1], cells[0], cells[1], tags)
        }
        .map_err(|e| config_err(format!("mesh: {e}")))?;

        let benchmark = match bench_name {
            "example1" => Benchmark::Example1,
            "example2" => Benchmark::Example2,
            "at_rest" => Benchmark::AtRest,
            other => match other.strip_prefix("file:") {
                Some(rel) => {
                    let path = base.join(rel.trim());
                    let (y_d, xi_d) = read_desired_csv(&path, mesh.n_nodes())?;
                    Benchmark::Fixed {
                        name: path.display().to_string(),
                        y_d,
                        xi_d,
                    }
                }
                None => return Err(config_err(format!("unknown benchmark `{other}`"))),
            },
        };
        if matches!(benchmark, Benchmark::Example1) && m.dimension != 1 {
            return Err(config_err("example1 is one-dimensional"));
        }
        if matches!(benchmark, Benchmark::Example2) && m.dimension != 2 {
            return Err(config_err("example2 is two-dimensional"));
        }

        let velocity = match &self.physics.velocity {
            VelocitySpec::Vector(v) if v.len() == 2 => VelocityField::constant([v[0], v[1]]),
            VelocitySpec::Vector(v) if v.len() == 1 && m.dimension == 1 => {
                VelocityField::constant([v[0], 0.0])
            }
            VelocitySpec::Vector(_) => {
                return Err(config_err("physics.velocity vector needs two components"))
            }
            VelocitySpec::Named(n) => match n.as_str() {
                "zero" => VelocityField::zero(),
                "rotation" => {
                    let c = [0.5 * m.extents[0], 0.5 * m.extents.get(1).copied().unwrap_or(0.0)];
                    VelocityField::new("rotation", move |x: [f64; 2], _| {
                        [-(x[1] - c[1]), x[0] - c[0]]
                    })
                }
                other => return Err(config_err(format!("unknown velocity `{other}`"))),
            },
        };

        let s = &self.schedule;
        let rule = match &s.epsilon_rule {
            EpsilonRuleSpec::Named(n) if n == "quartic" => EpsilonRule::quartic(),
            EpsilonRuleSpec::Named(n) => {
                return Err(config_err(format!("unknown epsilon_rule `{n}`")))
            }
            EpsilonRuleSpec::Custom { offset, power } => EpsilonRule {
                offset: *offset,
                power: *power,
            },
        };
        let schedule = PathSchedule::geometric(s.gamma0, s.growth, s.count, rule)
            .map_err(|e| config_err(format!("schedule: {e}")))?;

        let xi0 = vec![1.0; mesh.n_nodes()];
        let dir = match &ov.output_dir {
            Some(d) => d.clone(),
            None => base.join(&self.output.dir),
        };
        Ok(SimulationConfig {
            mesh,
            tau: self.time.tau,
            steps,
            kappa: Conductivity::Constant(self.physics.kappa),
            velocity,
            nu: self.control.nu,
            schedule,
            benchmark,
            xi0,
            path_options: PathOptions::default(),
            output: Some(OutputSpec {
                dir,
                fields_every: self.output.write_fields_every,
                timings: ov.timings,
            }),
        })
    }
}

/// Reads and converts a configuration file; relative paths are resolved
/// against the file's directory.
pub fn load_simulation(path: &Path, overrides: &RunOverrides) -> Result<SimulationConfig> {
    let file = ConfigFile::load(path)?;
    let mut ov = overrides.clone();
    if ov.base_dir.is_none() {
        ov.base_dir = path.parent().map(Path::to_path_buf);
    }
    file.into_simulation(&ov)
}
