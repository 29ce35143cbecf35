//! Multi-view consistent image editing on a synthetic testbed.
//!
//! Editing the views of a scene one image at a time produces edits that
//! disagree across views. This crate implements a training-free fix: a
//! consistency loss over dense correspondences (computed between the
//! *unedited* views) steers a diffusion-style editor while it samples, so
//! each new edit agrees with the already-edited neighbors. The diffusion
//! editor here is an analytic mixture over a bank of recoloring variants,
//! which keeps every step exact and testable while exercising the same
//! guidance machinery a real editor would.
//!
//! The pieces, bottom up:
//!
//! - [`scene`]: synthetic multi-view scenes (textures warped by sampled
//!   homographies) with exact ground-truth geometry.
//! - [`matching`]: oracle correspondences, a plain-text match format, and
//!   certainty filtering.
//! - [`consistency`]: the matched-point consistency loss (L1 + patch
//!   perceptual term) and its exact gradient.
//! - [`diffusion`]: noise schedules, the mixture edit model, forward and
//!   backward guidance, ancestral/deterministic sampling, and one-step seed
//!   optimization.
//! - [`session`]: ordering views, picking neighbors, and running a full
//!   sequential editing session.
//! - [`eval`]: consistency scores, variant agreement, texture reconstruction,
//!   held-out PSNR/SSIM, and the JSON report.
//!
//! Each major capability has a runnable demo under `examples/`; start with
//! `cargo run --release --example edit_session`.

pub mod consistency;
pub mod error;
pub mod image;
pub mod matching;
pub mod scene;

pub use error::{Error, Result};
pub use image::Image;
