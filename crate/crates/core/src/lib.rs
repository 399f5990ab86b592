//! Numerical laboratory for the instability of the soliton of the
//! L²-critical generalized Korteweg–de Vries equation
//! `u_t + u_xxx + (u^5)_x = 0`, and its stable subcritical counterpart.
//!
//! The pipeline is: build the ground state ([`ground_state`]), study the
//! linearized operator ([`linop`]), evolve perturbed solitons ([`evolve`]),
//! decompose the solution into modulated soliton plus remainder
//! ([`modulation`]), and evaluate monotonicity and virial functionals along
//! the way ([`functionals`]). [`harness`] ties the pieces into reproducible
//! experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod evolve;
pub mod exec;
pub mod functionals;
pub mod grid;
pub mod linop;
pub mod modulation;
pub mod ground_state;
pub mod harness;
pub mod io;
pub mod resample;
pub mod spectral;
pub mod stats;

pub use grid::{Field, GridError, GridSpec};
pub use ground_state::{ground_state, GroundState, GroundStateError, GroundStateIntegrals};
