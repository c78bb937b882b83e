//! Simulation and analysis of quantum-jump feedback that stabilizes
//! many-body singlet states of `N` driven two-level atoms with collective
//! cavity decay.
//!
//! The pieces:
//! - [`hilbert`]: computational-basis states, operators, dissipators.
//! - [`spin`]: coupled `|J, J_z, λ⟩` basis, dark subspace, four-qubit singlets.
//! - [`feedback`]: feedback unitaries and the strategy validator.
//! - [`dynamics`]: master equation, steady states, quantum trajectories.
//! - [`measures`]: `C_N` concurrence, dark-subspace ranges, overlaps.
//! - [`cli`]: configuration parsing and the batch experiments.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod feedback;
pub mod hilbert;
pub mod linalg;
pub mod measures;
pub mod spin;

pub use error::{Error, Result};
