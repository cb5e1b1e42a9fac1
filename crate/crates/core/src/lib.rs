//! Cascaded face detection engine.
//!
//! * [`tensor`]: layer kernels, the P/R/O-Net presets and a toy SGD trainer.
//! * [`imaging`]: PPM/PGM decoding, resampling, padded crops, preprocessing.
//! * [`mtcnn`]: image pyramid, proposal scan, box regression, NMS and the three-stage detector.
//! * [`haar`]: integral images, Haar and Gaussian features, AdaBoost stages and the attentional cascade.
//! * [`eval`]: detection matching, confusion counts, metrics and reports.
//! * [`io`]: weights container, annotations, report writers and the synthetic dataset generator.

pub mod error;
pub mod eval;
pub mod haar;
pub mod imaging;
pub mod io;
pub mod mtcnn;
pub mod tensor;

pub use error::{Error, Result};
