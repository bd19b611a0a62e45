//! On-disk formats.
//!
//! Field file (`.fld`), all integers and floats little-endian:
//!
//! | offset | size      | content                                   |
//! |--------|-----------|-------------------------------------------|
//! | 0      | 8         | magic `HOLOFLD\0`                         |
//! | 8      | 4         | format version (u32, currently 1)         |
//! | 12     | 4         | reserved, must be zero                    |
//! | 16     | 4         | rows H (u32)                              |
//! | 20     | 4         | cols W (u32)                              |
//! | 24     | 16·H·W    | row-major interleaved (re, im) f64 pairs  |
//!
//! Physical metadata lives in a JSON sidecar next to the file (`<name>.json`).
//! Intensity images may also be stored as 8- or 16-bit grayscale PNG; the
//! sidecar then records the linear mapping `I = offset + scale · pixel`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, Hologram, HologramStack, IntensityImage};

pub const FIELD_MAGIC: &[u8; 8] = b"HOLOFLD\0";
pub const FIELD_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    #[default]
    Complex,
    /// Real, non-negative samples stored in the real part.
    Intensity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PngMapping {
    pub bit_depth: u8,
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

/// JSON sidecar carrying physical metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub pixel_pitch_um: f64,
    pub wavelength_um: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z2_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<SampleKind>,
    /// Lateral shift (dx, dy) in pixels for super-resolution frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_px: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub png: Option<PngMapping>,
}

impl Sidecar {
    pub fn parse(text: &[u8]) -> Result<Self> {
        let s: Sidecar = serde_json::from_slice(text)?;
        if !(s.pixel_pitch_um.is_finite() && s.pixel_pitch_um > 0.0) {
            return Err(Error::format("sidecar", format!("pixel_pitch_um {} must be > 0", s.pixel_pitch_um)));
        }
        if !(s.wavelength_um.is_finite() && s.wavelength_um > 0.0) {
            return Err(Error::format("sidecar", format!("wavelength_um {} must be > 0", s.wavelength_um)));
        }
        if let Some(z) = s.z2_um {
            if !(z.is_finite() && z > 0.0) {
                return Err(Error::format("sidecar", format!("z2_um {z} must be > 0")));
            }
        }
        if let Some(m) = s.png {
            if !(m.bit_depth == 8 || m.bit_depth == 16) || !(m.scale.is_finite() && m.scale > 0.0) || !m.offset.is_finite() {
                return Err(Error::format("sidecar", "png mapping needs bit depth 8/16 and positive scale"));
            }
        }
        Ok(s)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Serialize samples into the binary field format.
pub fn encode_field(data: &Array2<Complex64>) -> Vec<u8> {
    let (h, w) = data.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * h * w);
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for c in data.iter() {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

/// Parse the binary field format. Rejects bad magic, unknown versions and
/// payloads whose length disagrees with the header dimensions.
pub fn decode_field(bytes: &[u8]) -> Result<Array2<Complex64>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("field file", format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != FIELD_MAGIC {
        return Err(Error::format("field file", "bad magic"));
    }
    let version = u32_at(bytes, 8);
    if version != FIELD_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if u32_at(bytes, 12) != 0 {
        return Err(Error::format("field file", "reserved header word is not zero"));
    }
    let h = u32_at(bytes, 16) as usize;
    let w = u32_at(bytes, 20) as usize;
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(16))
        .ok_or_else(|| Error::format("field file", format!("dimensions {h}x{w} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::format(
            "field file",
            format!("payload of {} bytes does not match {h}x{w} ({expected} bytes)", payload.len()),
        ));
    }
    let values: Vec<Complex64> = payload
        .chunks_exact(16)
        .map(|c| Complex64::new(f64_at(c, 0), f64_at(c, 8)))
        .collect();
    Array2::from_shape_vec((h, w), values).map_err(|e| Error::format("field file", e.to_string()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_sidecar(path: &Path, meta: &Sidecar) -> Result<()> {
    write(&sidecar_path(path), &serde_json::to_vec_pretty(meta)?)
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    Sidecar::parse(&read(&sidecar_path(path))?)
}

/// Write a complex field and its sidecar.
pub fn save_field(path: &Path, field: &ComplexField, z2: Option<f64>) -> Result<()> {
    write(path, &encode_field(field.data()))?;
    write_sidecar(
        path,
        &Sidecar {
            pixel_pitch_um: field.pixel_pitch(),
            wavelength_um: field.wavelength(),
            z2_um: z2,
            kind: Some(SampleKind::Complex),
            shift_px: None,
            png: None,
        },
    )
}

pub fn load_field_with_meta(path: &Path) -> Result<(ComplexField, Sidecar)> {
    let data = decode_field(&read(path)?)?;
    let meta = read_sidecar(path)?;
    Ok((ComplexField::new(data, meta.pixel_pitch_um, meta.wavelength_um)?, meta))
}

pub fn load_field(path: &Path) -> Result<ComplexField> {
    Ok(load_field_with_meta(path)?.0)
}

/// Store a hologram as a real-valued field file.
pub fn save_hologram(path: &Path, holo: &Hologram, wavelength: f64) -> Result<()> {
    let data = holo.image.data().mapv(|v| Complex64::new(v, 0.0));
    write(path, &encode_field(&data))?;
    write_sidecar(
        path,
        &Sidecar {
            pixel_pitch_um: holo.image.pixel_pitch(),
            wavelength_um: wavelength,
            z2_um: Some(holo.z2),
            kind: Some(SampleKind::Intensity),
            shift_px: (holo.lateral_shift != (0.0, 0.0)).then_some(holo.lateral_shift),
            png: None,
        },
    )
}

/// Store an intensity image as grayscale PNG with a linear mapping in the sidecar.
/// The scale maps the image maximum to the top code value.
pub fn save_intensity_png(path: &Path, img: &IntensityImage, bit_depth: u8, wavelength: f64, z2: Option<f64>) -> Result<PngMapping> {
    let top = match bit_depth {
        8 => u8::MAX as f64,
        16 => u16::MAX as f64,
        other => return Err(Error::invalid(format!("PNG bit depth must be 8 or 16, got {other}"))),
    };
    let peak = img.data().iter().fold(0.0f64, |m, v| m.max(*v));
    let scale = if peak > 0.0 { peak / top } else { 1.0 };
    let (h, w) = img.dim();
    let code = |v: f64| (v / scale).round().clamp(0.0, top);
    let dyn_img = if bit_depth == 8 {
        let buf: Vec<u8> = img.data().iter().map(|&v| code(v) as u8).collect();
        image::DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w as u32, h as u32, buf).ok_or_else(|| Error::invalid("png buffer size"))?,
        )
    } else {
        let buf: Vec<u16> = img.data().iter().map(|&v| code(v) as u16).collect();
        image::DynamicImage::ImageLuma16(
            image::ImageBuffer::from_raw(w as u32, h as u32, buf).ok_or_else(|| Error::invalid("png buffer size"))?,
        )
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    dyn_img.save_with_format(path, image::ImageFormat::Png)?;
    let mapping = PngMapping {
        bit_depth,
        scale,
        offset: 0.0,
    };
    write_sidecar(
        path,
        &Sidecar {
            pixel_pitch_um: img.pixel_pitch(),
            wavelength_um: wavelength,
            z2_um: z2,
            kind: Some(SampleKind::Intensity),
            shift_px: None,
            png: Some(mapping),
        },
    )?;
    Ok(mapping)
}

/// Decode PNG bytes into intensities using `mapping`.
pub fn decode_intensity_png(bytes: &[u8], mapping: &PngMapping) -> Result<Array2<f64>> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let codes: Vec<f64> = match mapping.bit_depth {
        8 => img.to_luma8().into_raw().into_iter().map(f64::from).collect(),
        _ => img.to_luma16().into_raw().into_iter().map(f64::from).collect(),
    };
    let values = codes.into_iter().map(|c| mapping.offset + mapping.scale * c).collect();
    Array2::from_shape_vec((h, w), values).map_err(|e| Error::format("png", e.to_string()))
}

/// Load a hologram from a `.fld` (real-valued) or `.png` file plus sidecar.
pub fn load_hologram(path: &Path) -> Result<(Hologram, Sidecar)> {
    let meta = read_sidecar(path)?;
    let data = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => {
            let mapping = meta.png.ok_or_else(|| Error::format("sidecar", "PNG image without a png mapping"))?;
            decode_intensity_png(&read(path)?, &mapping)?
        }
        _ => {
            let c = decode_field(&read(path)?)?;
            if c.iter().any(|v| v.im != 0.0) {
                return Err(Error::format("hologram", "intensity file has non-zero imaginary samples"));
            }
            c.mapv(|v| v.re)
        }
    };
    let image = IntensityImage::new(data, meta.pixel_pitch_um)?;
    let z2 = meta
        .z2_um
        .ok_or_else(|| Error::format("sidecar", format!("{} has no z2_um", path.display())))?;
    let mut holo = Hologram::new(image, z2)?;
    if let Some((dx, dy)) = meta.shift_px {
        holo = holo.with_shift(dx, dy);
    }
    Ok((holo, meta))
}

/// Hologram files (`*.fld`, `*.png`) of a directory in name order.
pub fn stack_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("fld") | Some("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no hologram files in {}", dir.display())));
    }
    Ok(files)
}

pub fn load_stack(dir: &Path) -> Result<HologramStack> {
    let mut holos = Vec::new();
    let mut wavelength = None;
    for path in stack_files(dir)? {
        let (h, meta) = load_hologram(&path)?;
        match wavelength {
            None => wavelength = Some(meta.wavelength_um),
            Some(wl) if wl != meta.wavelength_um => {
                return Err(Error::invalid(format!("{} has wavelength {} != {wl}", path.display(), meta.wavelength_um)))
            }
            _ => {}
        }
        holos.push(h);
    }
    HologramStack::new(holos, wavelength.expect("non-empty"))
}

pub fn save_stack(dir: &Path, stack: &HologramStack) -> Result<()> {
    for (i, h) in stack.holograms().iter().enumerate() {
        save_hologram(&dir.join(format!("holo_{i:02}.fld")), h, stack.wavelength())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(h: usize, w: usize) -> ComplexField {
        let data = Array2::from_shape_fn((h, w), |(i, j)| Complex64::new(i as f64 * 0.1, -(j as f64) / 3.0));
        ComplexField::new(data, 1.12, 0.530).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_field(field(2, 3).data());
        assert_eq!(&bytes[..8], b"HOLOFLD\0");
        assert_eq!(bytes.len(), 24 + 16 * 6);
        assert_eq!(u32_at(&bytes, 16), 2);
        assert_eq!(u32_at(&bytes, 20), 3);
    }

    #[test]
    fn malformed_inputs() {
        let good = encode_field(field(4, 4).data());
        assert!(decode_field(&good[..good.len() - 1]).is_err());
        assert!(decode_field(&good[..10]).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode_field(&extra).is_err());
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(decode_field(&magic).is_err());
        let mut ver = good.clone();
        ver[8] = 2;
        assert!(matches!(decode_field(&ver), Err(Error::UnsupportedVersion(2))));
        let mut dims = good;
        dims[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        dims[20..24].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_field(&dims).is_err());
    }

    #[test]
    fn sidecar_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.fld");
        let f = field(4, 5);
        save_field(&p, &f, Some(512.5)).unwrap();
        let (g, meta) = load_field_with_meta(&p).unwrap();
        assert_eq!(g, f);
        assert_eq!(meta.wavelength_um, 0.530);
        assert_eq!(meta.z2_um, Some(512.5));
        assert!(Sidecar::parse(br#"{"pixel_pitch_um": 0, "wavelength_um": 0.5}"#).is_err());
        assert!(Sidecar::parse(br#"{"pixel_pitch_um": 1.0}"#).is_err());
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array2::from_shape_fn((6, 7), |(i, j)| (i * 7 + j) as f64 * 0.37);
        let img = IntensityImage::new(data.clone(), 1.12).unwrap();
        for depth in [8u8, 16] {
            let p = dir.path().join(format!("h{depth}.png"));
            let m = save_intensity_png(&p, &img, depth, 0.53, Some(480.0)).unwrap();
            let (h, _) = load_hologram(&p).unwrap();
            assert_eq!(h.z2, 480.0);
            for (a, b) in h.image.data().iter().zip(data.iter()) {
                assert!((a - b).abs() <= 0.5 * m.scale + 1e-12);
            }
        }
    }

    #[test]
    fn stack_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let holos = (0..3)
            .map(|k| {
                let img = IntensityImage::new(Array2::from_elem((4, 4), 1.0 + k as f64), 1.12).unwrap();
                Hologram::new(img, 450.0 + 15.0 * k as f64).unwrap()
            })
            .collect();
        let stack = HologramStack::new(holos, 0.53).unwrap();
        save_stack(dir.path(), &stack).unwrap();
        assert_eq!(load_stack(dir.path()).unwrap(), stack);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn encode_decode_bit_exact(h in 2usize..12, w in 2usize..12, bits in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 288)) {
            let data = Array2::from_shape_fn((h, w), |(i, j)| Complex64::new(bits[2 * (i * w + j)], bits[2 * (i * w + j) + 1]));
            let back = decode_field(&encode_field(&data)).unwrap();
            for (a, b) in back.iter().zip(data.iter()) {
                proptest::prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
                proptest::prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
            }
        }
    }
}
