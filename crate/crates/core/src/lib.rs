//! Core extraction, stain harmonization, patch tiling, model inference
//! orchestration, rigid registration and evaluation for paired stained and
//! unstained tissue microarray cores.

pub mod error;
pub mod evaluation;
pub mod harmonize;
pub mod image;
pub mod inference;
pub mod ingest;
pub mod registration;
pub mod synth;
pub mod tiling;
pub mod util;

pub use error::{Error, Result};
pub use image::{CoreImage, StainState};
