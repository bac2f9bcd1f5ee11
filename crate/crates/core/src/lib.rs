//! Inhomogeneous totally asymmetric exclusion and last-passage percolation
//! with discontinuous rates, together with the macroscopic objects they
//! converge to: variational shape functions, level curves, the hydrodynamic
//! current and the discontinuous Hamilton–Jacobi / conservation-law checks.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation; file formats, the CLI and run manifests live in the
//! `ditasep` companion crate.
//!
//! Coordinate frames: a [`SpeedField`] used by [`lpp`] and [`shape`] is the
//! LPP-frame speed `c(u, w)`. The particle system, [`hydro`] and [`pde`] use
//! the sheared field `c̃(x, y) = c(x + y, y)`, obtained with
//! [`SpeedField::shear`].

#![no_std]

extern crate alloc;

mod error;
pub mod hydro;
pub mod lpp;
pub mod pde;
pub mod rng;
pub mod shape;
pub mod speed_field;
pub mod stats;
pub mod tasep;

pub use error::Error;
pub use speed_field::SpeedField;

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;
