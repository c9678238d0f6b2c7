//! Lane graph transformer: lane-topology attention biases, the encoder,
//! fusion and decoder pipeline, losses, training, metrics and synthetic scenes.

pub mod error;
pub mod geometry;
pub mod attention;
pub mod lane_graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod presets;
pub mod report;
pub mod synth;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
