//! Fixed-output barrier transmission for the one-dimensional nonlinear
//! Schrödinger (Gross-Pitaevskii) equation.
//!
//! * [`model`]: parameters, potentials and the wavenumber relation.
//! * [`linref`]: closed-form and transfer-matrix results for `g = 0`.
//! * [`integrator`]: adaptive integration of the stationary equation.
//! * [`scatter`]: fixed-output scattering and transmission coefficients.
//! * [`resonance`]: sweeps, unit-transmission search and split-potential checks.
//! * [`tdse`]: time-dependent propagation with a monochromatic point source.
//! * [`cli`]: configuration, orchestration and CSV output for the binary.

// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cli;
pub mod error;
pub mod integrator;
pub mod linref;
pub mod model;
pub mod resonance;
pub mod scatter;
pub mod tdse;

pub use error::{Error, ErrorCode, Result};
pub use integrator::{integrate, integrate_sampled, nlse_rhs, IntegratorConfig, WaveState};
pub use model::{wavenumber, PhysicalParams, Potential, Tabulated};
pub use scatter::{solve_scattering, Direction, ScatterProblem, ScatterResult};
