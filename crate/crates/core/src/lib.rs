pub mod autodiff;
pub mod bench;
pub mod config;
pub mod density;
pub mod error;
pub mod net;
pub mod oracles;
pub mod pde;
pub mod persistence;
pub mod quad;
pub mod sampler;
pub mod trainer;

pub use error::{Error, FormatError, Result};
