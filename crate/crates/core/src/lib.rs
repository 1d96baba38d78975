//! Few-shot class-incremental point-cloud classification with depth-guided
//! feature rectification.
//!
//! A trainable point encoder is rectified layer by layer with the
//! intermediate features of a frozen 2D encoder that looks at multi-view
//! depth renderings of the same cloud. A small color generator fills the
//! background of those renderings so the frozen image scorer sees
//! texture-like cues, and a binary base/novel discriminator routes test
//! samples either to a frozen copy of the base network or to the network
//! that keeps learning novel classes.

pub mod autograd;
pub mod bnd;
pub mod cli;
pub mod config;
pub mod encoders;
pub mod error;
pub mod metrics;
pub mod params;
pub mod pointset;
pub mod projection;
pub mod sagr;
pub mod tam;
pub mod trainer;

pub use error::{Error, Result};
