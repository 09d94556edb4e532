pub mod attack;
pub mod data;
pub mod defense;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
