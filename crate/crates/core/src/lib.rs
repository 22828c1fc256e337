pub mod attention;
pub mod connected;
pub mod error;
pub mod features;
pub mod fit;
pub mod geometry;
pub mod metrics;
pub mod gradcheck;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod scene;
pub mod synth;
pub mod tensor;
pub mod topology_head;
pub mod training;

pub use error::{Error, Result};
