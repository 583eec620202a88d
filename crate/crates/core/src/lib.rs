//! Template deformation networks for non-rigid 3D shape correspondence.
//!
//! An encoder maps a point cloud to a global latent code; a decoder deforms
//! the points of a fixed template mesh conditioned on that code. Two shapes
//! are put in correspondence by deforming the template onto each of them and
//! reading matches off through the shared template points.
//!
//! Module map:
//! - [`geometry`]: meshes, point clouds, sampling, normalization, k-d tree.
//! - [`autodiff`]: dense tensors and an eager reverse-mode tape.
//! - [`network`]: encoder/decoder, initialization, checkpoints.
//! - [`losses`]: supervised, Chamfer, edge-ratio and Laplacian losses.
//! - [`training`]: Adam and the supervised/unsupervised training loop.
//! - [`inference`]: rotation search, latent refinement, correspondence
//!   extraction and error metrics.
//! - [`datagen`]: articulated procedural templates and posed datasets.

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod losses;
pub mod network;
pub mod par;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
