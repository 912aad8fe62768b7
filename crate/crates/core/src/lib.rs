//! Transient simulation of coupled electric and magnetic circuits using the
//! gyrator-capacitor analogy, with a builder for a three-legged saturable
//! series reactor and the post-processing used to characterize it.
//!
//! Magnetic paths are capacitors (permeances, charge = flux), windings are
//! gyrators, and the whole two-domain network is solved by modified nodal
//! analysis with trapezoidal companion models and Newton-Raphson.

pub mod analysis;
pub mod circuit;
pub mod cvsr;
pub mod error;
pub mod linalg;
pub mod magnetics;
pub mod solver;

pub use analysis::WaveformSet;
pub use circuit::{Circuit, Domain, ElementKind, NodeRef, SystemState};
pub use error::{Error, Result};
pub use solver::{run_transient, SolverConfig, TransientResult};
