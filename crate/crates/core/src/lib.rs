pub mod config;
pub mod data;
pub mod desk;
pub mod error;
pub mod eval;
pub mod face;
pub mod io;
pub mod losses;
pub mod model;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
