//! File formats, the experiment runner and the command-line front end for
//! `htlab-core`.
//!
//! - [`idx`]: IDX image/label files.
//! - [`scenario_io`]: scenario directories (`meta` plus per-split data).
//! - [`checkpoint`]: model parameter files.
//! - [`config`]: TOML experiment configuration.
//! - [`runner`]: the `gen`, `run` and `report` commands.

pub mod checkpoint;
pub mod config;
mod error;
pub mod idx;
pub mod runner;
pub mod scenario_io;

pub use error::{Error, Result};
pub use htlab_core as core;
