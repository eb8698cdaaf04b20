pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod hypergraph;
pub mod interpret;
pub mod model;
pub mod pipeline;
pub mod train;

pub use error::{Error, Result};
