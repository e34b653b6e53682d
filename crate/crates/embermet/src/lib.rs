//! Combustion metrology from a spatially-variant-exposure (SVE) camera and a
//! stereo pair of event cameras: smoke-aware HDR fusion, intensity-guided
//! event-based particle extraction, and stereo triangulation of separation
//! height and equivalent particle size. A built-in synthetic scene and sensor
//! simulator provides ground truth for end-to-end verification.

pub mod config;
pub mod error;
pub mod event;
pub mod fusion;
pub mod gmm;
pub mod image;
pub mod io;
pub mod pipeline;
pub mod smoke;
pub mod stereo;
pub mod sve;
pub mod synth;

pub use error::{Error, Result};
