//! Files, worker pool, benchmark harness and command-line front end for
//! `ftensor-core`.

pub mod bench;
pub mod cli;
pub mod cprun;
pub mod error;
pub mod io;
pub mod pool;

pub use error::{Error, Result};
pub use pool::RayonExecutor;
