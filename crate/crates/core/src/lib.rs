//! Graph pipeline parallelism: strategy search, static micro-batch
//! scheduling and a deterministic pipeline simulator.
//!
//! The crate is `no_std` with `alloc`. File formats, presets and the CLI
//! live in the `gpp` crate.
#![cfg_attr(all(not(feature = "std"), not(test)), no_std)]

extern crate alloc;

pub mod cost;
pub mod error;
pub mod model;
pub mod oracle;
pub mod partition;
pub mod sched;
pub mod sim;
pub mod spgraph;

pub use error::Error;
