//! File formats, external codecs and the command-line front end for the
//! `ovqe-core` enhancement network.

pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod config;
mod error;
pub mod io;
pub mod report;

pub use error::{Error, ExitKind, InModule, Result};
