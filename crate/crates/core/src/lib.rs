//! Sampling-based LIME explanations for images, together with the closed-form
//! limit they converge to and an integrated-gradients approximation.
//!
//! Superpixel indices are 0-based throughout the library. Files and JSON
//! reports use 1-based ids.

pub mod error;
pub mod harness;
pub mod ig;
pub mod image;
pub mod io;
pub mod lime;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod segmentation;
pub mod theory;

pub use error::{Error, Result};
pub use image::{
    apply_mask, binary_superpixel_mask, compute_replacement, Image, MaskVector, ReplacementSpec,
    SuperpixelPartition,
};
pub use lime::{explain, fit_surrogate, psi, top_k_positive, ExplanationVector, LimeConfig, Provenance};
pub use models::{BlackBoxModel, ModelSpec};
