//! Lens-free inline holography reconstruction.
//!
//! Angular-spectrum propagation, multi-height phase retrieval, pixel
//! super-resolution, edge-sparsity autofocus and image metrics, together
//! with a forward hologram simulator that provides ground truth for all of
//! them.

pub mod autofocus;
pub mod dataset;
pub mod error;
pub mod fft;
pub mod field;
pub mod io;
pub mod metrics;
pub mod phase_retrieval;
pub mod propagation;
pub mod simulator;
pub mod superres;

pub use error::{Error, Result};
pub use field::{crop_patches, field_from_intensity, ComplexField, Hologram, HologramStack, IntensityImage, OpticalConfig};
pub use num_complex::Complex64;
