pub mod error;
pub mod frechet;
pub mod inference;
pub mod linalg;
pub mod manifold;
pub mod privacy;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
