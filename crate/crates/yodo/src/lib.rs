//! File formats, the command-line front end and end-to-end commands for
//! `yodo-core`.

pub mod cli;
pub mod commands;
pub mod error;
pub mod io;
pub mod timing;

pub use error::{Error, Result};
