//! Numerical core for multi-exposure image fusion with a jointly searched
//! network structure and training loss.
//!
//! The crate is `no_std` (with `alloc`): it contains the tensors, the
//! searchable fusion network, the candidate-loss space, the contrastive
//! validation objective, the alternating search driver, and the evaluation
//! metrics. Everything here is deterministic given explicit seeds; file
//! formats, image codecs, and the command line live in the companion
//! `mef-cli` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod bilevel;
pub mod contrastive;
pub mod conv;
pub mod data;
pub mod error;
pub mod extractor;
pub mod fmath;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod rng;
pub mod ssim;
pub mod tensor;
pub mod wsras;

pub use error::CoreError;
pub use tensor::{Image, Tensor};
