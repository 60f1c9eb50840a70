//! Numerical laboratory for diffusion on generalized Sierpinski carpets.
//!
//! The crate builds the graphical carpet on a level-`n` box and measures,
//! on that graph, the quantities that control diffusion on the carpet:
//! harmonic measures and Harnack constants ([`harmonic`]), heat-kernel
//! exponents ([`heat`]), the reflection coupling of two walks
//! ([`coupling`]) and effective resistances ([`resistance`]).
//! [`harness`] runs all of it as a seeded, reproducible experiment suite.

pub mod carpet;
pub mod coupling;
pub mod error;
pub mod fit;
pub mod harmonic;
pub mod harness;
pub mod heat;
pub mod network;
pub mod par;
pub mod resistance;
pub mod rng;
pub mod solver;

pub use carpet::{build_graph, validate_params, CarpetGraph, CarpetParams};
pub use error::{Error, ParamError, Result};
