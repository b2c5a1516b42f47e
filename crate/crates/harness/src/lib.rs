//! Random-bars imaging experiments for robust compressed sensing.
//!
//! Frames are sparsified with an orthonormal 2-D Haar transform, measured
//! through a Gaussian sensing matrix, corrupted by heavy-tailed noise and
//! recovered by the solvers of [`robust_cs`], with λ chosen along the
//! regularization path. Reports are CSV tables, PGM images and a checksummed
//! manifest.

pub mod config;
pub mod error;
pub mod experiment;
pub mod haar;
pub mod image;
pub mod metrics;
pub mod noise;
pub mod pgm;
pub mod report;
pub mod seeds;
pub mod sensing;

pub use config::{ExperimentConfig, SolverKind};
pub use error::{HarnessError, Result};
pub use image::ImageFrame;
pub use noise::NoiseSpec;
