#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod appearance;
pub mod assignment;
pub mod association;
pub mod embed;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod pair;
pub mod relation;
pub mod synth;
pub mod tracker;
pub mod training;

pub use error::{Error, Result};
