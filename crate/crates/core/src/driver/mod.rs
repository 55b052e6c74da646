//! Time loop, test cases, configuration and CSV output.

pub mod benchmarks;
pub mod config;
pub mod records;
pub mod simulation;
pub mod verify;

pub use benchmarks::{example1_fields, example2_fields, Benchmark, Desired};
pub use config::{load_simulation, ConfigFile, RunOverrides};
pub use records::{read_records, write_records, TimeStepRecord};
pub use simulation::{run_simulation, run_simulation_with, OutputSpec, Simulation, SimulationConfig, SimulationOutput};
pub use verify::{verify_first_step, Check};
