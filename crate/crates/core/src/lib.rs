//! Fidelity-optimal quantum control under one- and two-qubit Hamiltonian
//! constraints, and estimation of the optimal physical time of a target
//! unitary from the unit-fidelity limit.
//!
//! Times are in units of `1/omega` internally; anything user-facing is
//! expressed relative to [`propagation::T2_MAX`], the optimal time of the
//! hardest two-qubit gate.

pub mod continuation;
pub mod diagnostics;
pub mod error;
pub mod fitting;
pub mod krotov;
pub mod linalg;
pub mod pauli;
pub mod propagation;
pub mod records;
pub mod targets;

pub use error::{Error, Result};
