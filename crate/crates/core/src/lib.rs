pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod train;

pub use error::{Error, Result};
