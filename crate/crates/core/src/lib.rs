//! Bounds and simulations for chunk diffusion in mesh-based P2P live
//! streaming with a limited neighbor count.

mod error;

pub mod bound;
pub mod fib;
pub mod sim;
pub mod sweep;
pub mod topology;

pub use error::{Error, Result};
