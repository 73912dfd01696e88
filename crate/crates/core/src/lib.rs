//! Dense kernels, attention masks and mechanisms, visual-token-sparse
//! multimodal decoders, closed-form inference FLOP accounting and a toy
//! two-stage trainer.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, presets on
//! disk and the command line live in the `saisa` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod config;
pub mod cost;
pub mod error;
pub mod model;
pub mod numeric;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use numeric::{DenseMatrix, SeededRng};
