pub mod data;
pub mod error;
pub mod experiment;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod plot;
pub mod preprocess;
pub mod synth;
pub mod train;
pub mod util;

pub use error::{Error, Result};
