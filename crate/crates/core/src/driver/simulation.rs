//! The instantaneous-control time loop.

use std::path::PathBuf;
use std::time::Instant;

use crate::control::{
    evaluate_j_terms, solve_penalized_step, ControlProblemData, KktState, PathOptions,
    PathSchedule, PathTraceEntry,
};
use crate::error::{Error, Result};
use crate::fem::{assemble_operators, Conductivity, StateOperators};
use crate::mesh::{build_interval_mesh, build_rectangle_mesh, BoundaryTag, IntervalTags, RectangleTags, StructuredMesh};
use crate::semilag::{advect, characteristic_feet, VelocityField};
use crate::state::{check_maximum_principle, solve_state, StateSolution, StateSolverOptions};

use super::benchmarks::Benchmark;
use super::records::{write_control, write_fields, write_records, TimeStepRecord};

/// Tolerance of the sign checks on stored states.
pub const MAXIMUM_PRINCIPLE_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Write field and control files every this many steps (0: never).
    pub fields_every: usize,
    /// Fill the `wall_ms` column. Off by default so that tables of
    /// identical runs are identical.
    pub timings: bool,
}

#[derive(Clone, Debug)]
pub struct SimulationConfig {
    pub mesh: StructuredMesh<f64>,
    pub tau: f64,
    pub steps: usize,
    pub kappa: Conductivity<f64>,
    pub velocity: VelocityField<f64>,
    pub nu: f64,
    pub schedule: PathSchedule<f64>,
    pub benchmark: Benchmark,
    /// Initial solid fraction; the initial temperature is 0.
    pub xi0: Vec<f64>,
    pub path_options: PathOptions<f64>,
    pub output: Option<OutputSpec>,
}

impl SimulationConfig {
    /// Front moving right under the flux `e^t` on `(0, 4)`, 400 cells,
    /// `tau = 0.01`.
    pub fn example1(steps: usize) -> Self {
        let tags = IntervalTags {
            left: BoundaryTag::Control,
            right: BoundaryTag::Dirichlet,
        };
        let mesh = build_interval_mesh(4.0, 400, tags).expect("valid mesh");
        let n = mesh.n_nodes();
        Self {
            mesh,
            tau: 0.01,
            steps,
            kappa: Conductivity::Constant(1.0),
            velocity: VelocityField::zero(),
            nu: 1e-4,
            schedule: PathSchedule::standard(),
            benchmark: Benchmark::Example1,
            xi0: vec![1.0; n],
            path_options: PathOptions::default(),
            output: None,
        }
    }

    /// Parabolic front on `]0,2[ x ]0,4[` under the drift `(-0.5, 0)`,
    /// `tau = 0.1`.
    pub fn example2(nx: usize, ny: usize, steps: usize) -> Self {
        let tags = RectangleTags {
            left: BoundaryTag::Control,
            right: BoundaryTag::Neumann,
            bottom: BoundaryTag::Dirichlet,
            top: BoundaryTag::Dirichlet,
        };
        let mesh = build_rectangle_mesh(2.0, 4.0, nx, ny, tags).expect("valid mesh");
        let n = mesh.n_nodes();
        Self {
            mesh,
            tau: 0.1,
            steps,
            kappa: Conductivity::Constant(1.0),
            velocity: VelocityField::constant([-0.5, 0.0]),
            nu: 1e-4,
            schedule: PathSchedule::standard(),
            benchmark: Benchmark::Example2,
            xi0: vec![1.0; n],
            path_options: PathOptions::default(),
            output: None,
        }
    }
}

/// Everything produced by one time step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub record: TimeStepRecord,
    pub trace: Vec<PathTraceEntry>,
    pub state: StateSolution<f64>,
}

/// Time loop state; `y`, `xi` and `u` hold the latest stored step.
pub struct Simulation {
    pub config: SimulationConfig,
    pub ops: StateOperators<f64>,
    pub step: usize,
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
    pub u: Vec<f64>,
    warm: Option<KktState<f64>>,
}

fn weighted_norm(ops: &StateOperators<f64>, v: &[f64]) -> Result<f64> {
    Ok(ops.l2_norm_sq(v)?.max(0.0).sqrt())
}

impl Simulation {
    pub fn new(config: SimulationConfig) -> Result<Self> {
        if !(config.tau > 0.0) || config.steps == 0 {
            return Err(Error::Config("need tau > 0 and at least one step".into()));
        }
        let n = config.mesh.n_nodes();
        if config.xi0.len() != n || config.xi0.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("initial solid fraction must lie in [0, 1] at every node".into()));
        }
        let ops = assemble_operators(&config.mesh, &config.kappa, config.tau)?;
        let u = vec![0.0; ops.n_controls()];
        Ok(Self {
            y: vec![0.0; n],
            xi: config.xi0.clone(),
            u,
            ops,
            config,
            step: 0,
            warm: None,
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.config.tau
    }

    /// Advances one step: trace characteristics, advect, solve the control
    /// problem along the penalty path, then store the state generated by
    /// the computed control.
    pub fn advance(&mut self) -> Result<StepOutput> {
        let started = Instant::now();
        let cfg = &self.config;
        let n = self.step + 1;
        let t = n as f64 * cfg.tau;
        let feet = characteristic_feet(&cfg.mesh, &cfg.velocity, t, cfg.tau);
        let advected = advect(&cfg.mesh, &feet, &self.y, &self.xi)?;
        let desired = cfg.benchmark.desired(&cfg.mesh, t, &cfg.xi0)?;
        let data = ControlProblemData::new(desired.y_d, desired.xi_d, cfg.nu, advected)?;

        let path = solve_penalized_step(
            &data,
            &self.ops,
            &cfg.schedule,
            self.warm.as_ref(),
            &cfg.path_options,
        )
        .map_err(|e| {
            log::error!("step {n}: {e}");
            Error::from(e)
        })?;
        let u = path.state.u.clone();
        let state = solve_state(&self.ops, &u, &data.advected, &StateSolverOptions::default())?;
        let mp = check_maximum_principle(&state, MAXIMUM_PRINCIPLE_TOL);
        if !mp.passed {
            return Err(Error::MaximumPrinciple {
                step: n,
                field: mp.field.unwrap_or("?"),
                node: mp.node.unwrap_or(0),
                violation: mp.worst_violation,
            });
        }

        let terms = evaluate_j_terms(&data, &self.ops, &state.y, &state.xi, &u)?;
        let last = path.trace.last().expect("non-empty schedule");
        let err_y_l2 = if cfg.benchmark.has_exact_state() {
            let diff: Vec<f64> = state.y.iter().zip(&data.y_d).map(|(a, b)| a - b).collect();
            let e = weighted_norm(&self.ops, &diff)?;
            let r = weighted_norm(&self.ops, &data.y_d)?;
            Some(if r > 0.0 { e / r } else { e })
        } else {
            None
        };
        let err_u_rel = match desired.exact_u {
            Some(ue) => {
                let diff: Vec<f64> = u.iter().map(|v| v - ue).collect();
                let exact = vec![ue; u.len()];
                let e = self.ops.control_norm_sq(&diff)?.sqrt();
                let r = self.ops.control_norm_sq(&exact)?.sqrt();
                Some(if r > 0.0 { e / r } else { e })
            }
            None => None,
        };
        let wall = started.elapsed().as_secs_f64() * 1e3;
        let record = TimeStepRecord {
            step: n,
            time: t,
            u: u.clone(),
            j: terms.total(),
            j_state: terms.state,
            j_xi: terms.xi,
            j_u: terms.control,
            penalty_end: last.penalty,
            comp_residual: state.complementarity_residual,
            kkt: last.residuals,
            err_y_l2,
            err_u_rel,
            wall_ms: cfg.output.as_ref().filter(|o| o.timings).map(|_| wall),
        };
        log::info!(
            "step {n:4} t={t:.4} J={:.6e} penalty={:.3e} kkt_max={:.3e} wall={wall:.1}ms",
            record.j,
            record.penalty_end,
            last.residuals.iter().fold(0.0f64, |m, &v| m.max(v)),
        );

        self.y = state.y.clone();
        self.xi = state.xi.clone();
        self.u = u;
        self.warm = Some(path.state);
        self.step = n;
        Ok(StepOutput {
            record,
            trace: path.trace,
            state,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SimulationOutput {
    pub records: Vec<TimeStepRecord>,
    /// Penalty path of every step.
    pub traces: Vec<Vec<PathTraceEntry>>,
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
    pub u: Vec<f64>,
}

/// Runs all steps. With an output directory, writes `records.csv` (also
/// the partial table when a step fails) and the periodic field files.
pub fn run_simulation(config: SimulationConfig) -> Result<SimulationOutput> {
    run_simulation_with(config, |_, _| Ok(()))
}

/// As [`run_simulation`], calling `inspect` after every stored step.
pub fn run_simulation_with(
    config: SimulationConfig,
    mut inspect: impl FnMut(&Simulation, &StepOutput) -> Result<()>,
) -> Result<SimulationOutput> {
    let output = config.output.clone();
    let mut sim = Simulation::new(config)?;
    log::info!(
        "{}: {} nodes, {} controls, {} steps, tau={}",
        sim.config.benchmark.name(),
        sim.ops.n_nodes(),
        sim.ops.n_controls(),
        sim.config.steps,
        sim.config.tau
    );
    let mut records = Vec::with_capacity(sim.config.steps);
    let mut traces = Vec::with_capacity(sim.config.steps);
    let flush = |records: &[TimeStepRecord]| -> Result<()> {
        match &output {
            Some(o) => write_records(records, &o.dir.join("records.csv")),
            None => Ok(()),
        }
    };
    for _ in 0..sim.config.steps {
        let out = match sim.advance().and_then(|o| inspect(&sim, &o).map(|_| o)) {
            Ok(o) => o,
            Err(e) => {
                if let Err(io) = flush(&records) {
                    log::error!("could not write partial records: {io}");
                }
                return Err(e);
            }
        };
        if let Some(o) = &output {
            if o.fields_every > 0 && sim.step % o.fields_every == 0 {
                let n = sim.step;
                write_fields(&o.dir.join(format!("fields_{n}.csv")), &sim.config.mesh, &sim.y, &sim.xi)?;
                write_control(
                    &o.dir.join(format!("control_{n}.csv")),
                    &sim.config.mesh,
                    &sim.ops.control_nodes,
                    &sim.u,
                )?;
            }
        }
        records.push(out.record);
        traces.push(out.trace);
    }
    flush(&records)?;
    Ok(SimulationOutput {
        records,
        traces,
        y: sim.y,
        xi: sim.xi,
        u: sim.u,
    })
}
