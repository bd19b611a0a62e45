//! Optical field and intensity image types.
//!
//! Every length is in micrometres. Complex samples are `Complex<f64>`.

use ndarray::{s, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sensor pixel pitch. Not a measured value; the sensor datasheet pitch is assumed.
pub const DEFAULT_PIXEL_PITCH_UM: f64 = 1.12;
/// Illumination wavelength (530 nm).
pub const DEFAULT_WAVELENGTH_UM: f64 = 0.530;
/// Fixed back-propagation distance used to prepare network inputs.
pub const DEFAULT_ZBAR2_UM: f64 = 500.0;

fn check_physical(pixel_pitch: f64, wavelength: f64) -> Result<()> {
    if !(pixel_pitch.is_finite() && pixel_pitch > 0.0) {
        return Err(Error::invalid(format!("pixel pitch must be > 0, got {pixel_pitch}")));
    }
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::invalid(format!("wavelength must be > 0, got {wavelength}")));
    }
    Ok(())
}

/// H×W complex optical field with its sampling metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    data: Array2<Complex64>,
    pixel_pitch: f64,
    wavelength: f64,
}

impl ComplexField {
    pub fn new(data: Array2<Complex64>, pixel_pitch: f64, wavelength: f64) -> Result<Self> {
        check_physical(pixel_pitch, wavelength)?;
        let (h, w) = data.dim();
        if h < 2 || w < 2 {
            return Err(Error::invalid(format!("field must be at least 2x2, got {h}x{w}")));
        }
        if let Some(bad) = data.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::invalid(format!("non-finite sample at flat index {bad}")));
        }
        Ok(Self {
            data,
            pixel_pitch,
            wavelength,
        })
    }

    /// Constructor for internal producers whose output is finite by construction.
    pub(crate) fn from_parts(data: Array2<Complex64>, pixel_pitch: f64, wavelength: f64) -> Self {
        debug_assert!(data.iter().all(|c| c.re.is_finite() && c.im.is_finite()));
        Self {
            data,
            pixel_pitch,
            wavelength,
        }
    }

    pub fn uniform(dims: (usize, usize), value: Complex64, pixel_pitch: f64, wavelength: f64) -> Result<Self> {
        Self::new(Array2::from_elem(dims, value), pixel_pitch, wavelength)
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<Complex64> {
        self.data
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// Same metadata, new samples.
    pub fn with_data(&self, data: Array2<Complex64>) -> Result<Self> {
        Self::new(data, self.pixel_pitch, self.wavelength)
    }

    pub fn amplitude(&self) -> Array2<f64> {
        self.data.mapv(|c| c.norm())
    }

    pub fn phase(&self) -> Array2<f64> {
        self.data.mapv(|c| c.arg())
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.data.mapv(|c| c.norm_sqr())
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn to_intensity_image(&self) -> IntensityImage {
        IntensityImage::from_parts(self.intensity(), self.pixel_pitch)
    }
}

/// Non-negative real image, e.g. a raw hologram.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityImage {
    data: Array2<f64>,
    pixel_pitch: f64,
}

impl IntensityImage {
    pub fn new(data: Array2<f64>, pixel_pitch: f64) -> Result<Self> {
        if !(pixel_pitch.is_finite() && pixel_pitch > 0.0) {
            return Err(Error::invalid(format!("pixel pitch must be > 0, got {pixel_pitch}")));
        }
        let (h, w) = data.dim();
        if h < 2 || w < 2 {
            return Err(Error::invalid(format!("image must be at least 2x2, got {h}x{w}")));
        }
        if let Some(bad) = data.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!(
                "intensity must be finite and non-negative (flat index {bad} = {})",
                data.iter().nth(bad).copied().unwrap_or(f64::NAN)
            )));
        }
        Ok(Self { data, pixel_pitch })
    }

    pub(crate) fn from_parts(data: Array2<f64>, pixel_pitch: f64) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite() && *v >= 0.0));
        Self { data, pixel_pitch }
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }

    /// Multiply by a positive constant.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.data.mapv(|v| v * factor), self.pixel_pitch)
    }
}

/// One recorded hologram with its axial distance and lateral shift.
#[derive(Clone, Debug, PartialEq)]
pub struct Hologram {
    pub image: IntensityImage,
    /// Sample-to-sensor distance.
    pub z2: f64,
    /// Lateral shift (dx, dy) in pixels of this frame relative to the reference frame.
    pub lateral_shift: (f64, f64),
}

impl Hologram {
    pub fn new(image: IntensityImage, z2: f64) -> Result<Self> {
        if !(z2.is_finite() && z2 > 0.0) {
            return Err(Error::invalid(format!("z2 must be > 0, got {z2}")));
        }
        Ok(Self {
            image,
            z2,
            lateral_shift: (0.0, 0.0),
        })
    }

    pub fn with_shift(mut self, dx: f64, dy: f64) -> Self {
        self.lateral_shift = (dx, dy);
        self
    }
}

/// Ordered holograms sharing dimensions, pitch and wavelength.
#[derive(Clone, Debug, PartialEq)]
pub struct HologramStack {
    holograms: Vec<Hologram>,
    wavelength: f64,
}

impl HologramStack {
    pub fn new(holograms: Vec<Hologram>, wavelength: f64) -> Result<Self> {
        let first = holograms
            .first()
            .ok_or_else(|| Error::invalid("hologram stack must not be empty"))?;
        check_physical(first.image.pixel_pitch(), wavelength)?;
        let dims = first.image.dim();
        let pitch = first.image.pixel_pitch();
        for (i, h) in holograms.iter().enumerate() {
            if h.image.dim() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: h.image.dim(),
                });
            }
            if h.image.pixel_pitch() != pitch {
                return Err(Error::invalid(format!(
                    "hologram {i} pitch {} differs from {pitch}",
                    h.image.pixel_pitch()
                )));
            }
        }
        Ok(Self {
            holograms,
            wavelength,
        })
    }

    pub fn holograms(&self) -> &[Hologram] {
        &self.holograms
    }

    pub fn len(&self) -> usize {
        self.holograms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.holograms.is_empty()
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.holograms[0].image.pixel_pitch()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.holograms[0].image.dim()
    }

    pub fn z2_values(&self) -> Vec<f64> {
        self.holograms.iter().map(|h| h.z2).collect()
    }

    /// Replace every z2 (e.g. with autofocus estimates).
    pub fn with_z2(&self, z2: &[f64]) -> Result<Self> {
        if z2.len() != self.len() {
            return Err(Error::invalid(format!(
                "{} distances supplied for {} holograms",
                z2.len(),
                self.len()
            )));
        }
        let holograms = self
            .holograms
            .iter()
            .zip(z2)
            .map(|(h, &z)| Ok(Hologram::new(h.image.clone(), z)?.with_shift(h.lateral_shift.0, h.lateral_shift.1)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(holograms, self.wavelength)
    }
}

/// Imaging geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpticalConfig {
    pub wavelength_um: f64,
    pub pixel_pitch_um: f64,
    /// Source-to-sample distance (5-10 cm in the bench setup).
    pub z1_um: f64,
    pub z2_range_um: (f64, f64),
    pub zbar2_um: f64,
}

impl Default for OpticalConfig {
    fn default() -> Self {
        Self {
            wavelength_um: DEFAULT_WAVELENGTH_UM,
            pixel_pitch_um: DEFAULT_PIXEL_PITCH_UM,
            z1_um: 7.5e4,
            z2_range_um: (400.0, 600.0),
            zbar2_um: DEFAULT_ZBAR2_UM,
        }
    }
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        check_physical(self.pixel_pitch_um, self.wavelength_um)?;
        let (lo, hi) = self.z2_range_um;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return Err(Error::invalid(format!("z2 range ({lo}, {hi}) must satisfy 0 < min < max")));
        }
        if !(self.z1_um.is_finite() && self.z1_um > 0.0) {
            return Err(Error::invalid("z1 must be > 0"));
        }
        if !(self.zbar2_um.is_finite() && self.zbar2_um > 0.0) {
            return Err(Error::invalid("zbar2 must be > 0"));
        }
        Ok(())
    }
}

/// Amplitude `sqrt(I)` with zero phase.
pub fn field_from_intensity(img: &IntensityImage, wavelength: f64) -> Result<ComplexField> {
    ComplexField::new(
        img.data().mapv(|v| Complex64::new(v.sqrt(), 0.0)),
        img.pixel_pitch(),
        wavelength,
    )
}

/// Non-overlapping `patch`×`patch` tiles in row-major order; trailing rows and columns are dropped.
pub fn crop_patches(field: &ComplexField, patch: usize) -> Result<Vec<ComplexField>> {
    let (h, w) = field.dim();
    if patch == 0 || patch > h || patch > w {
        return Err(Error::invalid(format!("patch size {patch} invalid for {h}x{w} field")));
    }
    if patch < 2 {
        return Err(Error::invalid("patch size must be at least 2"));
    }
    let mut tiles = Vec::with_capacity((h / patch) * (w / patch));
    for ti in 0..h / patch {
        for tj in 0..w / patch {
            let r0 = ti * patch;
            let c0 = tj * patch;
            let tile = field.data.slice(s![r0..r0 + patch, c0..c0 + patch]).to_owned();
            tiles.push(ComplexField::from_parts(tile, field.pixel_pitch, field.wavelength));
        }
    }
    Ok(tiles)
}
