//! Numerical core of a two-stream spatiotemporal recognizer for extremely
//! low-resolution (12×16) video.
//!
//! Everything here is pure computation over in-memory buffers: frame
//! resampling, variational optical flow, 3D convolutional feature
//! extraction, gated recurrent sequence encoding, stream fusion, the
//! RMSprop optimizer and a synthetic action-video renderer. File formats,
//! threading and the command line live in the `twostream` crate.
//!
//! The crate is `no_std` (with `alloc`) when built without the default
//! `std` feature.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod flow;
pub mod fusion;
pub mod gradcheck;
pub mod gru;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod video;

pub use error::{Error, Result};
pub use tensor::Tensor;
