//! Regularized inversion for semi-blind 4Pi deconvolution.
//!
//! The crate is `no_std` (with `alloc`) and carries only numerics: regular
//! grids and FFT convolution, the constrained Tikhonov solver, the
//! iteratively regularized Gauss–Newton outer loop, the 4Pi forward operator
//! with its phase basis, and synthetic test problems with known solutions.
//! File formats, logging and the command line live in the `fourpi` crate.
#![cfg_attr(not(test), no_std)]
// `!(a > b)` is used deliberately so NaN parameters are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod chebyshev;
pub mod conv;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod fit;
pub mod fourpi;
pub mod grid;
pub mod irgnm;
pub mod linalg;
pub mod poisson;
pub mod scene;
pub mod tikhonov;
pub mod toy;

pub use error::{Error, Result};
