//! Files, orchestration and command line for the two-stream low-resolution
//! action recognizer built on `twostream-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod coupler;
pub mod error;
pub mod frames_io;
pub mod manifest;
pub mod parallel;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
