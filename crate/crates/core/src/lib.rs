//! Instantaneous boundary control of a two-phase melting problem.
//!
//! Each time step traces characteristics backwards, solves a
//! complementarity-constrained heat balance for the temperature and solid
//! fraction, and picks the boundary heat flux by following a
//! penalty/relaxation path for the per-step optimal control problem.
//!
//! Numerics are generic over the scalar type ([`Real`]); the aliases at the
//! crate root fix it to `f64`.

pub mod control;
pub mod driver;
pub mod error;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod scalar;
pub mod semilag;
pub mod state;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mesh = mesh::StructuredMesh<f64>;
pub type Operators = fem::StateOperators<f64>;
pub type Velocity = semilag::VelocityField<f64>;
pub type Advected = semilag::AdvectedPair<f64>;
pub type State = state::StateSolution<f64>;
pub type Schedule = control::PathSchedule<f64>;
pub type Kkt = control::KktState<f64>;
pub type ProblemData = control::ControlProblemData<f64>;
