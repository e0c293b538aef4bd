//! Goal-conditioned trajectory planning on synthetic driving scenes.

pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod flow;
pub mod geom;
pub mod goal;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod records;
pub mod rng;
pub mod scenario;
pub mod select;
pub mod train;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
