pub mod band;
pub mod bandwidth;
pub mod charfn;
pub mod cli;
pub mod deconv;
pub mod error;
pub mod estimate;
mod fourier;
pub mod rng;
pub mod samples;
pub mod simulate;

pub use error::{Error, Result};
