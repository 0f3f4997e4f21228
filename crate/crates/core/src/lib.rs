//! Desk-scale generative face pipeline: a procedurally generated face world
//! with exact ground truth, a miniature style-based generator with domain
//! transfer, closed-form latent direction discovery with identity-preserving
//! offset refinement, and single-image 3D reconstruction through a
//! differentiable depth/albedo/viewpoint/lighting renderer.
//!
//! The crate is `no_std`-compatible (`alloc` required); file formats, PNG
//! encoding and the command line live in the companion `toon3d-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod camera;
pub mod directions;
pub mod disc;
pub mod embed;
pub mod error;
pub mod fm;
pub mod gan;
pub mod generator;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod opt;
pub mod params;
pub mod recon;
pub mod render;
pub mod rng;
pub mod tensor;
pub mod vlda;
pub mod world;

pub use error::{Error, Result};
pub use tensor::Tensor;
