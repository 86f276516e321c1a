//! File formats, run logs, image export and the command-line front end for
//! [`fourpi_core`].

pub mod commands;
pub mod config;
pub mod error;
pub mod field;
pub mod image;
pub mod kernel;
pub mod log;
pub mod toyio;

pub use error::{Error, Result};
