pub mod condition;
pub mod error;
pub mod flow;
pub mod generator;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod repr;
pub mod scene;
pub mod selfcheck;
pub mod train;

pub use error::{Error, Result};
