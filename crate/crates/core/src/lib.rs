pub mod baselines;
pub mod cli;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod model;
pub mod ndgrad;
pub mod train;

pub use error::{Error, Result};
