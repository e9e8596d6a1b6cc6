//! Lagrangian solver for the one-dimensional mean-field planning problem
//! started from a Dirac mass with power congestion `m^theta`, together with
//! the self-similar diagnostics used to check its small-time behaviour.

pub mod error;
pub mod fields;
pub mod metrics;
pub mod numerics;
pub mod profile;
pub mod rescale;
pub mod run;
pub mod solver;
pub mod target;

pub use error::{Error, Result};
pub use profile::{LabelGrid, Profile};
pub use solver::{FlowField, LinearSolver, SolveReport, SolverConfig, SpaceTimeGrid};
pub use target::{CompatibilityReport, TerminalDensity};
