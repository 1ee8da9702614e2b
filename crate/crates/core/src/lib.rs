//! Skeleton-conditioned silhouette diffusion and gait retrieval.
//!
//! Everything here is pure computation over `alloc` collections; file
//! formats, datasets and the command line live in the companion `gait`
//! crate. Disable the default `std` feature for `no_std` targets.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
pub mod diffgait;
pub mod heat;
pub mod nn;
pub mod optim;
pub mod pgi;
pub mod real;
pub mod recognition;
pub mod schedule;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Shape, Tensor};
