//! Physics-informed dual neural operators for gridded nowcasting.
//!
//! A finite-difference advection-diffusion core ([`grid`], [`pde`]) backs
//! both a synthetic data generator ([`scenario`]) and the residual loss that
//! trains a velocity-extraction operator alongside a time-stepping operator
//! ([`operators`], [`training`]). [`metrics`] scores forecasts by lead time.

pub mod autodiff;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod io;
pub mod operators;
pub mod pde;
pub mod rng;
pub mod scenario;
pub mod training;

pub use error::{Error, Result};
pub use grid::{FrameSequence, ScalarField, StencilSpec, VectorField};
pub use pde::PdeParams;
