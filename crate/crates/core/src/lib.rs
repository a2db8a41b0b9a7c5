#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod error;
pub mod kernel;
pub mod lattice;
pub mod oracle;
pub mod protocol;
pub mod stochastic;

pub use error::{Error, Result};
