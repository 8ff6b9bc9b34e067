//! Seismic sensing of heterogeneous fractures in a homogeneous elastic
//! full space.
//!
//! The crate implements a three-stage, non-iterative inverse solution for
//! time-harmonic elastic waves scattered by a fracture with a linear-slip
//! contact condition:
//!
//! 1. **Geometric reconstruction** of the fracture support from multistatic
//!    far-field data via the generalized linear sampling method ([`glsm`]).
//! 2. **Fracture-opening-displacement (FOD) recovery** over the reconstructed
//!    surface by regularized inversion of the double-layer far-field map
//!    ([`fod`]).
//! 3. **Specific-stiffness inversion** from the traction boundary integral
//!    equation, with spectral truncation and vanishing-FOD safeguards
//!    ([`stiffness`]).
//!
//! Synthetic data are produced by a collocation boundary-element forward
//! solver ([`forward`]) built on closed-form elastodynamic kernels
//! ([`kernels`]) and parametric fracture meshes ([`mesh`]).

pub mod acceptance;
pub mod config;
pub mod error;
pub mod fod;
pub mod forward;
pub mod glsm;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod mesh;
pub mod pipeline;
pub mod stiffness;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
