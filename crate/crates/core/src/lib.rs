//! Continuous decomposition of two-outcome quantum measurements driven by a
//! stream of weakly coupled probe qubits with Hamiltonian feedback.
//!
//! The pipeline, bottom-up:
//!
//! * [`matcore`]: dense Hermitian/unitary operators and matrix functions.
//! * [`structure`]: anticommutator structure constants of a control set.
//! * [`closure`]: enumeration of anticommutation-closed control subspaces.
//! * [`jordan`]: split of a closed subspace into simple Jordan blocks.
//! * [`dynamics`]: reversible control schedules and their integration.
//! * [`walk`]: the probe-feedback random walk, its exact oracles and the
//!   realized endpoint measurement.
//! * [`synth`]: achievability checks and schedule synthesis for targets.
//! * [`cli`]: the `contdec` command-line surface.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod closure;
pub mod dynamics;
pub mod error;
pub mod jordan;
pub mod matcore;
pub mod structure;
pub mod synth;
pub mod walk;

pub use error::{Error, Result};
