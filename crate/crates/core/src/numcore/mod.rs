//! Dense linear algebra, parameter storage, Adam and a finite-difference oracle.

mod matrix;
mod params;
mod rng;

pub use matrix::Matrix;
pub use params::{finite_diff_grad, init_bias, init_dense, AdamConfig, ParamSlot, ParamStore};
pub use rng::Rng;
