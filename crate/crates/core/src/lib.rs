//! Mixed-sample discriminator training for GANs with saturated losses.

pub mod analysis;
pub mod augment;
pub mod batch;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod regularize;
pub mod rng;
pub mod run;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
