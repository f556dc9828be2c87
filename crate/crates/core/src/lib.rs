//! Gaussian multi-bubble functionals.
//!
//! Partitions of `R^d` into `m` cells are evaluated against the standard
//! Gaussian measure: cell volumes and first moments, the moment penalty,
//! interface perimeter (facet and Minkowski estimators), Ornstein–Uhlenbeck
//! noise stability, and the discrete noise stability of functions on
//! `{1,…,m}^n`. The optimizer searches the affine-partition family for
//! extremizers of the moment functional and the penalized perimeter.
//!
//! All Monte Carlo estimates are deterministic functions of their
//! [`IntegrationConfig`], independent of the rayon thread count. Cell
//! indices are 0-based throughout.

pub mod error;
pub mod gauss;
pub mod sampling;

pub mod align;
pub mod calibrate;
pub mod cylinder;
pub mod discrete;
pub mod moments;
pub mod noise;
pub mod optimize;
pub mod partition;
pub mod perimeter;
pub mod region;

pub use error::{Error, Result};
pub use sampling::IntegrationConfig;
