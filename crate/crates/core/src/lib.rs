pub mod annotate;
pub mod data;
pub mod diffcore;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod harness;
pub mod heads;
pub mod model;
pub mod qdgat;

pub use error::{Error, Result};
