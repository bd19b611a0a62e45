//! Synthetic objects and a forward model of lens-free inline hologram acquisition.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2, signed_index};
use crate::field::{ComplexField, Hologram, HologramStack, IntensityImage, OpticalConfig};
use crate::propagation::PropagationPlan;

/// Radial cutoff (cycles/pixel) of generated textures: half the Nyquist frequency.
const BAND_LIMIT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Smooth phase blobs with weak absorption.
    PhaseBlobs,
    /// Bar groups of several periods, like a resolution target.
    AmplitudeBars,
    /// Independent random amplitude and phase textures.
    MixedTexture,
    /// Sparse sharp-edged discs (about a fifth of the area) on a clear background.
    Cells,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub amplitude_range: (f64, f64),
    /// Phase is confined to [-phase_max, phase_max] radians.
    pub phase_max: f64,
    /// Characteristic feature size in pixels.
    pub feature_scale: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::MixedTexture,
            amplitude_range: (0.5, 1.0),
            phase_max: 1.0,
            feature_scale: 2.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.amplitude_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!("amplitude range ({lo}, {hi}) must lie in (0, 1] with min <= max")));
        }
        if !(self.phase_max >= 0.0 && self.phase_max <= PI) {
            return Err(Error::invalid(format!("phase_max {} must be in [0, pi]", self.phase_max)));
        }
        if !(self.feature_scale.is_finite() && self.feature_scale >= 1.0) {
            return Err(Error::invalid(format!("feature scale {} must be >= 1 px", self.feature_scale)));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// SplitMix64 finalizer; derives independent stream seeds from counters.
pub fn mix_seed(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of stream `index` under `base`.
pub fn child_seed(base: u64, index: u64) -> u64 {
    mix_seed(mix_seed(base) ^ mix_seed(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

fn low_pass(noise: Array2<f64>, sigma_px: f64) -> Array2<f64> {
    let (h, w) = noise.dim();
    let mut spec = fft2(&noise.mapv(|v| Complex64::new(v, 0.0)));
    for ((i, j), c) in spec.indexed_iter_mut() {
        let fy = signed_index(i, h) as f64 / h as f64;
        let fx = signed_index(j, w) as f64 / w as f64;
        let f2 = fx * fx + fy * fy;
        if f2 > BAND_LIMIT * BAND_LIMIT {
            *c = Complex64::new(0.0, 0.0);
        } else {
            *c *= (-2.0 * PI * PI * sigma_px * sigma_px * f2).exp();
        }
    }
    ifft2(&spec).mapv(|c| c.re)
}

/// Zero-mean texture scaled to [-1, 1].
fn normalized(mut g: Array2<f64>) -> Array2<f64> {
    let mean = g.mean().unwrap_or(0.0);
    g.mapv_inplace(|v| v - mean);
    let peak = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        g.mapv_inplace(|v| v / peak);
    }
    g
}

fn random_texture(rng: &mut ChaCha8Rng, dims: (usize, usize), scale: f64) -> Array2<f64> {
    let noise = Array2::from_shape_fn(dims, |_| rng.sample::<f64, _>(StandardNormal));
    normalized(low_pass(noise, scale))
}

fn blobs(rng: &mut ChaCha8Rng, dims: (usize, usize), scale: f64) -> Array2<f64> {
    let (h, w) = dims;
    let count = ((h * w) as f64 / (8.0 * scale * scale)).ceil().max(1.0) as usize;
    let mut g = Array2::<f64>::zeros(dims);
    for _ in 0..count {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let s = scale * rng.random_range(0.7..1.5);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let reach = (4.0 * s).ceil() as i64;
        for di in -reach..=reach {
            let i = ((cy as i64 + di).rem_euclid(h as i64)) as usize;
            let dy = (cy.floor() + di as f64) - cy;
            for dj in -reach..=reach {
                let j = ((cx as i64 + dj).rem_euclid(w as i64)) as usize;
                let dx = (cx.floor() + dj as f64) - cx;
                g[[i, j]] += sign * (-(dx * dx + dy * dy) / (2.0 * s * s)).exp();
            }
        }
    }
    normalized(low_pass(g, 0.0))
}

/// Bar groups at several periods, in both orientations; 1 inside bars.
fn bars(rng: &mut ChaCha8Rng, dims: (usize, usize), scale: f64) -> Array2<f64> {
    let (h, w) = dims;
    let mut mask = Array2::<f64>::zeros(dims);
    let groups = ((h * w) as f64 / (20.0 * scale).powi(2)).ceil().max(2.0) as usize;
    for g in 0..groups {
        let period = (scale * rng.random_range(1.5..4.0)).max(2.0);
        let len = (period * rng.random_range(3.0..6.0)).round() as usize;
        let y0 = rng.random_range(0..h);
        let x0 = rng.random_range(0..w);
        let vertical = g % 2 == 0;
        for a in 0..len {
            for b in 0..len {
                let along = if vertical { b } else { a } as f64;
                if (along / period).fract() < 0.5 {
                    mask[[(y0 + a) % h, (x0 + b) % w]] = 1.0;
                }
            }
        }
    }
    let smooth = low_pass(mask, 0.5);
    let peak = smooth.iter().fold(0.0f64, |m, v| m.max(*v));
    let lo = smooth.iter().fold(f64::MAX, |m, v| m.min(*v));
    if peak > lo {
        smooth.mapv(|v| (v - lo) / (peak - lo))
    } else {
        smooth
    }
}

/// Disc mask with radii in [0.7, 2]·scale covering about 20% of the area; 1 inside.
fn cells(rng: &mut ChaCha8Rng, dims: (usize, usize), scale: f64) -> Array2<f64> {
    let (h, w) = dims;
    let mut mask = Array2::<f64>::zeros(dims);
    let target = 0.2 * (h * w) as f64;
    let mut area = 0.0;
    while area < target {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let r = scale * rng.random_range(0.7..2.0);
        area += PI * r * r;
        let reach = r.ceil() as i64 + 1;
        for di in -reach..=reach {
            let y = cy.floor() + di as f64;
            let i = (y as i64).rem_euclid(h as i64) as usize;
            for dj in -reach..=reach {
                let x = cx.floor() + dj as f64;
                if (x - cx).powi(2) + (y - cy).powi(2) <= r * r {
                    mask[[i, (x as i64).rem_euclid(w as i64) as usize]] = 1.0;
                }
            }
        }
    }
    low_pass(mask, 0.0).mapv(|v| v.clamp(0.0, 1.0))
}

/// Deterministic complex object for the seed in `spec`.
pub fn make_object(spec: &SceneSpec, dims: (usize, usize), pixel_pitch: f64, wavelength: f64) -> Result<ComplexField> {
    spec.validate()?;
    if dims.0 < 4 || dims.1 < 4 {
        return Err(Error::invalid(format!("object dims {dims:?} too small")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (a_min, a_max) = spec.amplitude_range;
    let span = a_max - a_min;
    let (amp, phase) = match spec.kind {
        SceneKind::PhaseBlobs => {
            let g = blobs(&mut rng, dims, spec.feature_scale);
            (g.mapv(|v| a_max - span * v.abs()), g.mapv(|v| spec.phase_max * v))
        }
        SceneKind::AmplitudeBars => {
            let m = bars(&mut rng, dims, spec.feature_scale);
            (m.mapv(|v| a_max - span * v), m.mapv(|v| spec.phase_max * (2.0 * v - 1.0)))
        }
        SceneKind::Cells => {
            let m = cells(&mut rng, dims, spec.feature_scale);
            (m.mapv(|v| a_max - span * v), m.mapv(|v| spec.phase_max * v))
        }
        SceneKind::MixedTexture => {
            let ga = random_texture(&mut rng, dims, spec.feature_scale);
            let gp = random_texture(&mut rng, dims, spec.feature_scale);
            (ga.mapv(|v| a_min + span * 0.5 * (v + 1.0)), gp.mapv(|v| spec.phase_max * v))
        }
    };
    let data = ndarray::Zip::from(&amp)
        .and(&phase)
        .map_collect(|&a, &p| Complex64::from_polar(a.clamp(a_min, a_max), p.clamp(-spec.phase_max, spec.phase_max)));
    ComplexField::new(data, pixel_pitch, wavelength)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionSpec {
    pub optical: OpticalConfig,
    pub z2_list: Vec<f64>,
    /// Gaussian read-noise standard deviation relative to the mean clean intensity.
    pub noise_sigma: f64,
    /// Signal-dependent noise: standard deviation `sqrt(shot_noise_scale · I)`.
    pub shot_noise_scale: f64,
    /// k×k sub-pixel scan: each z2 yields k² frames of the object box-downsampled by k.
    pub psr_pattern: Option<usize>,
    pub bit_depth: Option<u32>,
    /// Intensity mapped to the top quantization level; defaults to 1.25× the stack maximum.
    pub full_scale: Option<f64>,
    pub seed: u64,
}

/// Heights 450, 465, ..., 555 μm.
pub fn default_z2_list() -> Vec<f64> {
    (0..8).map(|k| 450.0 + 15.0 * k as f64).collect()
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        Self {
            optical: OpticalConfig::default(),
            z2_list: default_z2_list(),
            noise_sigma: 0.0,
            shot_noise_scale: 0.0,
            psr_pattern: None,
            bit_depth: None,
            full_scale: None,
            seed: 0,
        }
    }
}

impl AcquisitionSpec {
    pub fn validate(&self) -> Result<()> {
        self.optical.validate()?;
        if self.z2_list.is_empty() {
            return Err(Error::invalid("z2 list must not be empty"));
        }
        let (lo, hi) = self.optical.z2_range_um;
        if let Some(z) = self.z2_list.iter().find(|&&z| !(z >= lo && z <= hi)) {
            return Err(Error::invalid(format!("z2 {z} outside range ({lo}, {hi})")));
        }
        if !(self.noise_sigma >= 0.0 && self.shot_noise_scale >= 0.0) {
            return Err(Error::invalid("noise levels must be non-negative"));
        }
        if let Some(b) = self.bit_depth {
            if !(1..=32).contains(&b) {
                return Err(Error::invalid(format!("bit depth {b} outside 1..=32")));
            }
        }
        if self.psr_pattern == Some(0) {
            return Err(Error::invalid("psr pattern must be at least 1"));
        }
        Ok(())
    }
}

/// Translate a field by (dx, dy) pixels with a linear phase ramp in frequency.
pub fn fourier_shift(data: &Array2<Complex64>, dx: f64, dy: f64) -> Array2<Complex64> {
    let (h, w) = data.dim();
    let mut spec = fft2(data);
    for ((i, j), c) in spec.indexed_iter_mut() {
        let fy = signed_index(i, h) as f64 / h as f64;
        let fx = signed_index(j, w) as f64 / w as f64;
        *c *= Complex64::from_polar(1.0, -2.0 * PI * (fx * dx + fy * dy));
    }
    ifft2(&spec)
}

/// Mean over non-overlapping k×k blocks.
pub fn box_downsample(x: &Array2<f64>, k: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    let norm = 1.0 / (k * k) as f64;
    Array2::from_shape_fn((h / k, w / k), |(i, j)| {
        let mut acc = 0.0;
        for u in 0..k {
            for v in 0..k {
                acc += x[[i * k + u, j * k + v]];
            }
        }
        acc * norm
    })
}

/// Record intensity holograms of `object` at every z2 in `acq`.
///
/// With a sub-pixel pattern the object grid is the fine grid, frames are
/// ordered by z2 then row-major over the k×k offsets, and frame `(ay, ax)`
/// carries the shift `(-ax/k, -ay/k)` low-resolution pixels.
pub fn acquire(object: &ComplexField, acq: &AcquisitionSpec) -> Result<HologramStack> {
    acq.validate()?;
    if (object.wavelength() - acq.optical.wavelength_um).abs() > 1e-12 {
        return Err(Error::invalid("object wavelength differs from acquisition wavelength"));
    }
    let k = acq.psr_pattern.unwrap_or(1);
    let (h, w) = object.dim();
    if h % k != 0 || w % k != 0 {
        return Err(Error::invalid(format!("object {h}x{w} not divisible by psr pattern {k}")));
    }
    let plan = PropagationPlan::for_field(object)?;
    let spectrum = plan.spectrum(object.data());

    let mut clean = Vec::new();
    for &z in &acq.z2_list {
        let at_sensor = plan.from_spectrum(&spectrum, z);
        for ay in 0..k {
            for ax in 0..k {
                let shifted = if k == 1 {
                    at_sensor.clone()
                } else {
                    fourier_shift(&at_sensor, -(ax as f64), -(ay as f64))
                };
                let intensity = box_downsample(&shifted.mapv(|c| c.norm_sqr()), k);
                let shift = (-(ax as f64) / k as f64, -(ay as f64) / k as f64);
                clean.push((z, shift, intensity));
            }
        }
    }
    let peak = clean.iter().flat_map(|(_, _, i)| i.iter()).fold(0.0f64, |m, v| m.max(*v));
    let full_scale = acq.full_scale.unwrap_or(1.25 * peak);

    let mut holos = Vec::with_capacity(clean.len());
    for (idx, (z, shift, intensity)) in clean.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(acq.seed, idx as u64));
        let mean = intensity.mean().unwrap_or(0.0);
        let noisy = intensity.mapv(|v| {
            let mut out = v;
            if acq.noise_sigma > 0.0 {
                out += acq.noise_sigma * mean * rng.sample::<f64, _>(StandardNormal);
            }
            if acq.shot_noise_scale > 0.0 {
                out += (acq.shot_noise_scale * v).sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
            let out = out.max(0.0);
            match acq.bit_depth {
                Some(b) if full_scale > 0.0 => {
                    let levels = ((1u64 << b) - 1) as f64;
                    ((out / full_scale).clamp(0.0, 1.0) * levels).round() / levels * full_scale
                }
                _ => out,
            }
        });
        let image = IntensityImage::new(noisy, object.pixel_pitch() * k as f64)?;
        holos.push(Hologram::new(image, z)?.with_shift(shift.0, shift.1));
    }
    HologramStack::new(holos, object.wavelength())
}

/// `10·log10(mean(clean²) / mean((noisy − clean)²))`.
pub fn snr_db(noisy: &Array2<f64>, clean: &Array2<f64>) -> Result<f64> {
    if noisy.dim() != clean.dim() {
        return Err(Error::DimensionMismatch {
            expected: clean.dim(),
            actual: noisy.dim(),
        });
    }
    let signal = clean.iter().map(|v| v * v).sum::<f64>();
    let noise = noisy.iter().zip(clean.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// The eight elements of the dihedral group D4; index 0 is the identity,
/// 1..=3 rotate by 90° steps, 4..=7 mirror left-right then rotate.
pub fn dihedral<T: Clone>(x: &Array2<T>, element: usize) -> Array2<T> {
    let flipped;
    let base = if element >= 4 {
        let (_, w) = x.dim();
        flipped = Array2::from_shape_fn(x.dim(), |(i, j)| x[[i, w - 1 - j]].clone());
        &flipped
    } else {
        x
    };
    let mut out = base.clone();
    for _ in 0..element % 4 {
        let (h, w) = out.dim();
        out = Array2::from_shape_fn((w, h), |(i, j)| out[[j, w - 1 - i]].clone());
    }
    out
}

/// An (input sequence, target) training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub inputs: Vec<ComplexField>,
    pub target: ComplexField,
}

/// Expand a pair into its eight dihedral variants, identity first.
pub fn augment_8x(pair: &Pair) -> Result<Vec<Pair>> {
    let (h, w) = pair.target.dim();
    if h != w || pair.inputs.iter().any(|f| f.dim() != (h, w)) {
        return Err(Error::invalid("augmentation requires square patches of equal size"));
    }
    (0..8)
        .map(|e| {
            let t = &pair.target;
            Ok(Pair {
                inputs: pair
                    .inputs
                    .iter()
                    .map(|f| f.with_data(dihedral(f.data(), e)))
                    .collect::<Result<_>>()?,
                target: t.with_data(dihedral(t.data(), e))?,
            })
        })
        .collect()
}
