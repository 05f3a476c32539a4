//! Pseudospectral laboratory for the filtered Camassa–Holm equation and its
//! zero-filter (Burgers) limit on a periodic domain.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod io;
pub mod lp;
pub mod oracles;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
