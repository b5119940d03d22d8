pub mod agent;
pub mod bonus;
pub mod dbmodel;
pub mod envsim;
pub mod error;
pub mod harness;
pub mod numcore;
pub mod objectives;
pub mod theory;

pub use error::{Error, Result};
