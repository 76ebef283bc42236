//! Promptable 3D instance queries: synthetic scenes, segment-level features,
//! a prompt-guided query decoder, training and evaluation.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod fourier;
pub mod fps;
pub mod generate;
pub mod gradcheck;
pub mod heads;
pub mod hungarian;
pub mod knn;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod prompt;
pub mod render;
pub mod scene;
pub mod segment;
pub mod tasks;
pub mod train;
pub mod vocab;
pub mod voxel;

pub use error::{Error, Result};
