pub mod agents;
pub mod bench;
pub mod control;
pub mod error;
pub mod nn;
pub mod persist;
pub mod render;
pub mod rewards;
pub mod sim;
pub mod task;

pub use error::{Error, Result};
