//! Simulation and diagnostics for the renormalised dynamical φ⁴ model on the
//! two-dimensional torus `[-L, L)^2`.
//!
//! The building blocks are spectral fields on a [`TorusGrid`], reproducible noise
//! from an [`RngPolicy`], the exact Ornstein–Uhlenbeck solver and its Wick powers,
//! the Da Prato–Debussche and lattice Langevin schemes, localised Besov/Hölder
//! norm estimators and the relative-entropy toolkit. [`checks`] runs the
//! acceptance experiments on top of them.

// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod besov;
pub mod checks;
pub mod dynamics;
pub mod entropy;
pub mod error;
pub mod gaussian;
pub mod grid;
pub mod noise;
pub mod quadrature;
pub mod stats;
pub mod wick;

pub use besov::{NormConfig, NormEngine, Profile, Region};
pub use checks::{CheckResult, Effort, Suite};
pub use dynamics::{InitialSplit, Scheme, SimConfig};
pub use entropy::{EntropyConfig, EntropyReport};
pub use error::{Error, Result};
pub use gaussian::{Counterterm, OuState};
pub use grid::{Laplacian, RealField, SpectralField, TorusGrid};
pub use noise::{Cutoff, NoiseSlab, RngPolicy, StreamKind};
pub use stats::Welford;
pub use wick::{Convention, WickBundle};
