//! Numerical toolkit for delay equations driven by fractional Brownian motion
//! with Hurst parameter above one half.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod delay;
pub mod error;
pub mod fbm;
pub mod grid;
pub mod holder;
pub mod io;
pub mod malliavin;
pub mod quad;
pub mod sensitivity;
pub mod young;

pub use error::{Error, Result};
pub use grid::{GridPath, UniformGrid};
