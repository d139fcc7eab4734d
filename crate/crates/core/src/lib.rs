//! Program synthesis as a singular learning problem.
//!
//! The crate simulates smooth relaxations of Turing machines, evaluates the
//! model `p(y | x, w)` produced by directly simulating a staged pseudo-UTM on
//! a distribution over machine codes, samples tempered posteriors over codes
//! with NUTS and estimates the real log canonical threshold (RLCT) of
//! synthesis problems.
//!
//! Module map:
//!
//! - [`probkit`]: alphabets and probability vectors.
//! - [`machines`]: classical Turing machines and the built-in example machines.
//! - [`smoothstep`]: the smooth relaxation of a single machine step.
//! - [`utm`]: code parameters, the classical staged UTM and the direct
//!   simulation of its cycles, with reverse-mode gradients.
//! - [`synthesis`]: synthesis problems, datasets and likelihoods.
//! - [`sampler`]: stick-breaking reparameterization and NUTS.
//! - [`rlct`]: energies, the RLCT regression and theoretical bounds.
//! - [`thermo`]: Hamiltonian, energy and free-energy phase scans.
//! - [`geomlab`]: closed-form geometry of the shift machine model.

// `!(x > 0.0)` is used on purpose so that NaN fails validation, and the
// numerical kernels read more clearly with explicit indices.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod geomlab;
pub mod machines;
pub mod probkit;
pub mod rlct;
pub mod sampler;
pub mod smoothstep;
pub mod synthesis;
pub mod thermo;
pub mod utm;

pub use error::{Error, Result};
pub use machines::{Direction, TapeConfig, Transition, TransitionTable};
pub use probkit::{Alphabet, Dist};
pub use smoothstep::SmoothConfig;
pub use synthesis::{Dataset, SynthesisProblem};
pub use utm::CodeParameter;
