//! Hamiltonian mechanics on algebroids in local coordinates.
//!
//! Dynamics come from the linear tensor Π on the dual bundle ([`hamiltonian`]). They are
//! rebuilt independently through the exact symplectic prolongation ([`prolongation`]), so
//! the two can be compared numerically. Closedness of the symplectic section and the
//! worked examples ([`scenarios`]) are checked the same way.

pub mod algebroid;
pub mod calculus;
pub mod config;
pub mod connections;
pub mod error;
pub mod fields;
pub mod hamiltonian;
pub mod prolongation;
pub mod scenarios;
pub mod verification;

pub use algebroid::{AlgebroidStructure, StructureReport, StructureSnapshot, SymSkewParts};
pub use error::{Error, Result};
pub use fields::{SmoothField, TensorField};
pub use hamiltonian::{Monitor, PhaseFunction, PhasePoint, Trajectory, Variant};
pub use config::RunConfig;
pub use prolongation::ProlongationData;
pub use scenarios::ScenarioBundle;
pub use verification::{CheckResult, VerificationReport};
