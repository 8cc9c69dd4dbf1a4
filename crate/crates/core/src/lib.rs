//! Holistic transfer laboratory core.
//!
//! Adapting a pre-trained classifier to a new domain when the target
//! training data only covers a subset of the classes. This crate holds the
//! pure numerical machinery: dense matrices and a reproducible RNG, the
//! synthetic scenario generators, a small MLP with explicit backprop, the
//! loss suite (cross-entropy, selective distillation, feature-rank
//! regularizer), SGD / leave-out local SGD / weight averaging, the transfer
//! protocols, and evaluation metrics.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the
//! experiment runner and the CLI live in the `htlab` crate.

#![no_std]

extern crate alloc;

mod error;

pub mod data;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numkit;
pub mod optim;
pub mod transfer;

pub use error::{Error, Result};
pub use numkit::{Matrix, Rng, Spectrum};
