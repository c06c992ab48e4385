//! Completion of partial triangle-mesh scans by latent-space optimization.
//!
//! A graph-convolutional mesh autoencoder is trained on a family of face-like
//! meshes sharing one template topology. A partial scan (mesh, point cloud, or
//! key points) is completed by optimizing the generator's 256-d latent code and
//! a rigid transform so the generated surface explains the scan, optionally
//! guided by an inpainted depth rendering, and finally refined by a geometric
//! post-process that conforms the matched regions to the input.
//!
//! The crate is organized around that pipeline:
//!
//! - [`mesh`]: triangle meshes, OBJ/PLY I/O, surface distance queries
//! - [`autodiff`]: a reverse-mode tape over dense and fixed sparse matrices
//! - [`hierarchy`]: quadric simplification and sparse pooling transforms
//! - [`generator`]: the graph-conv autoencoder and its training loop
//! - [`synth`]: the synthetic face family and defect construction
//! - [`guidance`]: fixed-camera depth rendering and inpainting providers
//! - [`fitting`]: the trimmed fit loss and the latent/rigid optimizer
//! - [`postprocess`]: identification, projection, blending, refinement
//! - [`metrics`]: Chamfer, point-to-surface, margin fitness, error maps
//! - [`bench`]: benchmark grids over defect kinds, radii and seeds

pub mod autodiff;
pub mod bench;
pub mod config;
pub mod fitting;
pub mod generator;
pub mod guidance;
pub mod hierarchy;
pub mod mesh;
pub mod metrics;
pub mod postprocess;
pub mod synth;

use thiserror::Error;

/// Crate-wide error type aggregating the per-subsystem errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] mesh::MeshError),
    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),
    #[error(transparent)]
    Hierarchy(#[from] hierarchy::HierarchyError),
    #[error(transparent)]
    Generator(#[from] generator::GeneratorError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Guidance(#[from] guidance::GuidanceError),
    #[error(transparent)]
    Fitting(#[from] fitting::FitError),
    #[error(transparent)]
    Postprocess(#[from] postprocess::PostprocessError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Data(String),
}

impl Error {
    /// Process exit code category: 1 usage, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Autodiff(autodiff::AutodiffError::NonFinite { .. }) => 3,
            Error::Generator(generator::GeneratorError::NonFiniteLoss { .. }) => 3,
            Error::Fitting(fitting::FitError::Diverged { .. }) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
