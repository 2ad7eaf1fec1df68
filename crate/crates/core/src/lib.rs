pub mod cli;
pub mod convert;
pub mod error;
pub mod eval;
pub mod init;
pub mod io;
pub mod lm;
pub mod model;
pub mod numeric;
pub mod sampler;

pub use error::{Error, Result};
