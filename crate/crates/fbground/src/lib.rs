//! Ground states of a two-phase free boundary problem with critical growth.
//!
//! The library discretizes the phase energy
//!
//! `J(u) = integral [ |grad u|^2 / 2 + indicator{u > 1} - F(u - 1) ]`
//!
//! on box domains, regularizes the indicator with a smoothing kernel,
//! finds mountain-pass critical points of the regularized energies along a
//! vanishing-smoothing continuation, and verifies the identities the limit
//! must satisfy: Nehari-manifold membership, level sandwiches, interior
//! Lipschitz and sup-norm bounds, the flux-balance identity across the unit
//! level, the squared-gradient jump, and nondegenerate linear growth of the
//! phase.

pub mod config;
pub mod continuation;
pub mod energy;
pub mod freeboundary;
pub mod grid;
pub mod nehari;
pub mod pipeline;
pub mod poisson;
pub mod solver;
pub mod spectral;
pub mod synthetic;
pub(crate) mod util;

pub use energy::{EnergyReport, Nonlinearity};
pub use grid::{Field, Grid, VectorField};
pub use nehari::{NehariPoint, Path, SplitField};
pub use pipeline::{PipelineOutput, PipelineParams, VerificationBundle};
pub use solver::{CriticalPoint, SolveConfig, Solver};
pub use spectral::SpectralData;
