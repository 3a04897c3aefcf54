//! FORESCENE-style scene-graph anticipation at desk scale.
//!
//! The pipeline has two trained stages and a forecasting procedure:
//!
//! 1. A graph auto-encoder maps each frame's scene graph to a fixed-size
//!    latent vector and decodes latents back into complete graphs (objects,
//!    boxes, relations, connectivity) through a query-based decoder.
//! 2. A latent diffusion model learns the temporal evolution of latent
//!    sequences with fixed-size windows, half conditioning and half noised.
//! 3. Anticipation encodes the observed frames, extends the latent sequence
//!    window by window through reverse diffusion, and decodes the future
//!    latents into scene graphs.
//!
//! Evaluation covers object discovery (recall and Jaccard similarity) and
//! relationship triplets (recall with and without the single-predicate
//! constraint), plus a difficulty-tiered benchmark built from object
//! distribution shift between consecutive frames.

pub mod anticipate;
pub mod benchmark;
pub mod cli;
pub mod config;
pub mod decoder;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod gae;
pub mod graph;
pub mod matching;
pub mod metrics;
pub mod params;
pub mod plot;
pub mod records;
pub mod synth;
pub mod tape;
pub mod testutil;

pub use error::{Error, Result};

/// CLI entry; returns the process exit code.
pub fn run_cli() -> i32 {
    cli::run()
}
