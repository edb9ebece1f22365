//! Nonholonomic extremum seeking: a model-based fast-oscillating stabilizer driven by a
//! model-free seeker, plus the tools to simulate, analyse and tune the pair.

pub mod analysis;
pub mod cost;
pub mod diff;
pub mod error;
pub mod integrator;
pub mod plot;
pub mod presets;
pub mod quadrature;
pub mod seeker;
pub mod stabilizer;
pub mod system;
pub mod tuner;

pub use cost::{Cost, CostSpec};
pub use error::{Error, Result};
pub use integrator::{simulate, PiEpsTrajectory, SimConfig};
pub use presets::{Experiment, ExperimentConfig};
pub use seeker::{pair_library, DitherSchedule, GeneratingPair, PairKind};
pub use stabilizer::{Stabilizer, StabilizerGains};
pub use system::{BracketSelection, ControlSystem, DomainBox, FrameMatrix};
pub use tuner::{compute_bounds, estimate_constants, validate_chain, ConstantEstimates, TuningBudget, TuningResult};
