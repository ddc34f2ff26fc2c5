//! Desk-scale trajectory-conditioned driving world model.
//!
//! The pipeline: BEV vehicle trajectories are projected into the first
//! frame's image plane, rasterized into trajectory videos, encoded by a
//! shared spatio-temporal codec into the same latent space as scene videos,
//! and injected into a masked latent-diffusion predictor. A control-latent
//! similarity head scores how well generated latents reflect the trajectory
//! conditioning. A procedural synthetic world provides exact ground truth
//! for every stage.

pub mod controllability;
pub mod diffusion_core;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod latent_codec;
pub mod nn;
pub mod oracles;
pub mod rasterizer;
pub mod synthworld;
pub mod tensor;
pub mod vocab;

pub mod cli;

pub use error::{Error, Result};
