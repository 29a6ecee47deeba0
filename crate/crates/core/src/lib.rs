pub mod error;
pub mod numcore;

pub use error::{Error, Result};
pub mod alloc;
pub mod config;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod heads;
pub mod model;
pub mod snn;
