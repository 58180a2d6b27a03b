//! Early event detection in multivariate sensor streams using random matrix
//! theory.
//!
//! A moving `N × T` window over an `n × t` measurement matrix is turned into a
//! random matrix model (row standardization, singular value equivalent, ring
//! product, covariance). Linear eigenvalue statistics (LES) `τ = Σ φ(λᵢ)` of
//! those matrices are compared against their theoretical values under the
//! Ring and Marchenko–Pastur laws; excursions are reported as events.
//!
//! Module map:
//!
//! - [`ingest`]: CSV loading, region partitions, window selection.
//! - [`rmm`]: standardization, Haar unitaries, ring products, covariances.
//! - [`spectral`]: eigensolvers, reference densities, Kolmogorov distances.
//! - [`les`]: test functions, LES, expectations and CLT variances.
//! - [`detect`]: the moving-window sweep, indicator series, event extraction.
//! - [`synth`]: synthetic scenarios replacing a power-flow simulator.
//! - [`pca`]: the pilot-sensor PCA baseline.
//! - [`mapgen`]: inverse-distance-weighted map frames.

pub mod detect;
pub mod error;
pub mod ingest;
pub mod les;
pub mod mapgen;
pub mod pca;
pub mod quad;
pub mod rmm;
pub mod seed;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
