//! scatlab — a numerical laboratory for 3D Schrödinger operators
//! H = -Δ + div Q with slowly decaying vector fields.
//!
//! The crate computes Born-series Green functions and their spatial decay,
//! far-field scattering amplitudes and the spectral-density factorization,
//! walk-on-spheres harmonic measure on triangles with the subharmonic
//! entropy certificate, the eikonal-with-viscosity phase fixed point, and
//! Monte Carlo statistics for randomized (Anderson-type) slowly decaying
//! potentials.
//!
//! Everything is deterministic given (config, seed): quadrature sums in
//! fixed node order, and all random streams are counter-based.
//!
//! Start with the runnable examples (`cargo run --example free_green`,
//! `born_series`, `harmonic_measure`, ...) or the `scatlab` CLI.

pub mod anderson;
pub mod born;
pub mod cache;
pub mod cli;
pub mod config;
pub mod eikonal;
pub mod error;
pub mod fields;
pub mod fit;
pub mod geom;
pub mod quad;
pub mod report;
pub mod rng;
pub mod scattering;
pub mod verify;

pub use error::{Error, Result};
pub use geom::{ComplexWavenumber, Point3};
