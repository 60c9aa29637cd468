//! Self-paced differentiable regression forests.
//!
//! A small fully-connected feature extractor feeds an ensemble of soft binary
//! trees with Gaussian leaves. Training follows a curriculum: at each pace the
//! samples are ranked by log-likelihood plus an entropy bonus, so easy samples
//! *and* samples from sparsely populated target regions enter training first.
//! Optionally, samples whose likelihood falls below a cap are excluded as
//! suspected label noise.
//!
//! The crate is `no_std` with `alloc`. File formats, run directories and the
//! command-line driver live in the companion `paced-forest` crate. Enable the
//! `parallel` feature to evaluate samples on a rayon pool; results do not
//! change.

#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod backbone;
pub mod data;
mod error;
pub mod forest;
pub mod leafopt;
mod math;
pub mod metrics;
mod par;
pub mod spl;
pub mod trainer;

pub use error::{Error, Result};
