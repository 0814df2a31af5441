pub mod checks;
pub mod cli;
pub mod config;
pub mod envs;
pub mod error;
pub mod harness;
pub mod model;
pub mod ot;
pub mod policy;
pub mod survival;

pub use error::{Error, Result};
