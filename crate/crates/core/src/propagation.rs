//! Angular-spectrum free-space propagation.
//!
//! The transfer function is the exact (non-paraxial) kernel
//! `H(fx, fy; dz) = exp(i 2π dz/λ · sqrt(1 - (λfx)² - (λfy)²))` on the
//! propagating disc and zero outside it. Frequencies follow standard DFT
//! ordering, `fx = kx / (W · pitch)`.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{signed_index, Fft2};
use crate::field::{field_from_intensity, ComplexField, HologramStack};

/// Marks evanescent bins in the axial wavenumber table.
const EVANESCENT: f64 = -1.0;

/// Reusable propagation geometry: FFT plans plus the axial wavenumber of every bin.
#[derive(Clone, Debug)]
pub struct PropagationPlan {
    dims: (usize, usize),
    padded: (usize, usize),
    pixel_pitch: f64,
    wavelength: f64,
    fft: Fft2,
    kz: Array2<f64>,
}

impl PropagationPlan {
    pub fn new(dims: (usize, usize), pixel_pitch: f64, wavelength: f64) -> Result<Self> {
        Self::build(dims, pixel_pitch, wavelength, false)
    }

    /// Zero-pads each axis to the next power of two at least twice its length,
    /// suppressing circular wraparound.
    pub fn with_padding(dims: (usize, usize), pixel_pitch: f64, wavelength: f64) -> Result<Self> {
        Self::build(dims, pixel_pitch, wavelength, true)
    }

    pub fn for_field(field: &ComplexField) -> Result<Self> {
        Self::new(field.dim(), field.pixel_pitch(), field.wavelength())
    }

    fn build(dims: (usize, usize), pixel_pitch: f64, wavelength: f64, pad: bool) -> Result<Self> {
        if dims.0 < 2 || dims.1 < 2 {
            return Err(Error::invalid(format!("propagation grid must be at least 2x2, got {dims:?}")));
        }
        if !(pixel_pitch > 0.0 && pixel_pitch.is_finite() && wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::invalid("pixel pitch and wavelength must be positive"));
        }
        let padded = if pad {
            ((2 * dims.0).next_power_of_two(), (2 * dims.1).next_power_of_two())
        } else {
            dims
        };
        let (rows, cols) = padded;
        let k0 = 2.0 * PI / wavelength;
        let kz = Array2::from_shape_fn(padded, |(i, j)| {
            let fy = signed_index(i, rows) as f64 / (rows as f64 * pixel_pitch);
            let fx = signed_index(j, cols) as f64 / (cols as f64 * pixel_pitch);
            let arg = 1.0 - (wavelength * fx).powi(2) - (wavelength * fy).powi(2);
            if arg >= 0.0 {
                k0 * arg.sqrt()
            } else {
                EVANESCENT
            }
        });
        Ok(Self {
            dims,
            padded,
            pixel_pitch,
            wavelength,
            fft: Fft2::new(rows, cols),
            kz,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn is_padded(&self) -> bool {
        self.padded != self.dims
    }

    /// Transfer function on the (padded) frequency grid for distance `dz`.
    pub fn transfer_function(&self, dz: f64) -> Array2<Complex64> {
        self.kz.mapv(|kz| {
            if kz == EVANESCENT {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::from_polar(1.0, kz * dz)
            }
        })
    }

    /// Mask of propagating (non-evanescent) frequency bins.
    pub fn propagating_mask(&self) -> Array2<bool> {
        self.kz.mapv(|kz| kz != EVANESCENT)
    }

    fn check(&self, field: &ComplexField) -> Result<()> {
        if field.dim() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                actual: field.dim(),
            });
        }
        if field.pixel_pitch() != self.pixel_pitch || field.wavelength() != self.wavelength {
            return Err(Error::invalid(format!(
                "plan geometry (pitch {}, wavelength {}) does not match field (pitch {}, wavelength {})",
                self.pixel_pitch,
                self.wavelength,
                field.pixel_pitch(),
                field.wavelength()
            )));
        }
        Ok(())
    }

    /// Diffract `field` by the signed distance `dz` (negative = back-propagation).
    pub fn propagate(&self, field: &ComplexField, dz: f64) -> Result<ComplexField> {
        self.check(field)?;
        if !dz.is_finite() {
            return Err(Error::invalid(format!("propagation distance must be finite, got {dz}")));
        }
        let data = self.propagate_array(field.data(), dz);
        Ok(ComplexField::from_parts(data, self.pixel_pitch, self.wavelength))
    }

    /// Propagate raw samples already known to match the plan geometry.
    pub(crate) fn propagate_array(&self, data: &Array2<Complex64>, dz: f64) -> Array2<Complex64> {
        let spec = self.spectrum(data);
        self.from_spectrum(&spec, dz)
    }

    /// Forward transform of (padded) samples; reusable across many distances.
    pub(crate) fn spectrum(&self, data: &Array2<Complex64>) -> Array2<Complex64> {
        let (h, w) = self.dims;
        let mut buf = if self.is_padded() {
            let mut b = Array2::zeros(self.padded);
            b.slice_mut(s![..h, ..w]).assign(data);
            b
        } else {
            data.as_standard_layout().to_owned()
        };
        self.fft.forward(&mut buf);
        buf
    }

    /// Apply the transfer function for `dz` to a spectrum and return to the spatial domain.
    pub(crate) fn from_spectrum(&self, spectrum: &Array2<Complex64>, dz: f64) -> Array2<Complex64> {
        let (h, w) = self.dims;
        let mut buf = Array2::zeros(self.padded);
        ndarray::Zip::from(&mut buf).and(spectrum).and(&self.kz).for_each(|o, &c, &kz| {
            if kz != EVANESCENT {
                *o = c * Complex64::from_polar(1.0, kz * dz);
            }
        });
        self.fft.inverse(&mut buf);
        if self.is_padded() {
            buf.slice(s![..h, ..w]).to_owned()
        } else {
            buf
        }
    }
}

/// One-shot propagation with a freshly built plan.
pub fn propagate(field: &ComplexField, dz: f64) -> Result<ComplexField> {
    PropagationPlan::for_field(field)?.propagate(field, dz)
}

/// Zero-phase back-propagation of every hologram by `dz` (the network input preparation step).
pub fn back_propagate_stack(stack: &HologramStack, dz: f64) -> Result<Vec<ComplexField>> {
    if stack.is_empty() {
        return Err(Error::invalid("cannot back-propagate an empty stack"));
    }
    let plan = PropagationPlan::new(stack.dim(), stack.pixel_pitch(), stack.wavelength())?;
    stack
        .holograms()
        .iter()
        .map(|h| {
            let f = field_from_intensity(&h.image, stack.wavelength())?;
            plan.propagate(&f, -dz)
        })
        .collect()
}
