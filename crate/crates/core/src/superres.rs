//! Pixel super-resolution: subpixel registration and shift-and-add fusion.
//!
//! Shift convention: a frame with shift `(dx, dy)` satisfies
//! `moving(x, y) ≈ ref(x - dx, y - dy)`; `dx` runs along columns.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2, signed_index};
use crate::field::{Hologram, IntensityImage};

/// Per-frame lateral shifts in low-resolution pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftTable {
    shifts: Vec<(f64, f64)>,
    reference: usize,
}

impl ShiftTable {
    pub fn new(shifts: Vec<(f64, f64)>, reference: usize) -> Result<Self> {
        match shifts.get(reference) {
            None => Err(Error::invalid(format!("reference frame {reference} out of range"))),
            Some(&s) if s != (0.0, 0.0) => Err(Error::invalid(format!("reference frame shift must be (0, 0), got {s:?}"))),
            Some(_) if shifts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) => {
                Err(Error::invalid("shift table contains non-finite entries"))
            }
            Some(_) => Ok(Self { shifts, reference }),
        }
    }

    /// Register every frame against `frames[reference]`.
    pub fn estimate(frames: &[Hologram], reference: usize, upsample: usize) -> Result<Self> {
        let r = frames
            .get(reference)
            .ok_or_else(|| Error::invalid(format!("reference frame {reference} out of range")))?;
        let mut shifts = Vec::with_capacity(frames.len());
        for (i, f) in frames.iter().enumerate() {
            shifts.push(if i == reference {
                (0.0, 0.0)
            } else {
                estimate_shift(&r.image, &f.image, upsample)?
            });
        }
        Self::new(shifts, reference)
    }

    /// Shifts recorded on the frames themselves, relative to frame `reference`.
    pub fn from_frames(frames: &[Hologram], reference: usize) -> Result<Self> {
        let r = frames
            .get(reference)
            .ok_or_else(|| Error::invalid(format!("reference frame {reference} out of range")))?
            .lateral_shift;
        let shifts = frames.iter().map(|f| (f.lateral_shift.0 - r.0, f.lateral_shift.1 - r.1)).collect();
        Self::new(shifts, reference)
    }

    pub fn shifts(&self) -> &[(f64, f64)] {
        &self.shifts
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    /// CSV with header `frame_index,dx_px,dy_px`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_index,dx_px,dy_px\n");
        for (i, (dx, dy)) in self.shifts.iter().enumerate() {
            out.push_str(&format!("{i},{dx},{dy}\n"));
        }
        out
    }

    /// Parse the CSV written by [`ShiftTable::to_csv`]. Rows must list frames
    /// 0..n in order; the reference is the first row with a zero shift.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["frame_index", "dx_px", "dy_px"] {
            return Err(Error::format("shift table", format!("unexpected header {headers:?}")));
        }
        let mut shifts = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::format("shift table", format!("row {row} has {} fields", rec.len())));
            }
            let idx: usize = rec[0]
                .parse()
                .map_err(|_| Error::format("shift table", format!("bad frame index {:?}", &rec[0])))?;
            if idx != row {
                return Err(Error::format("shift table", format!("frame index {idx} at row {row}")));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format("shift table", format!("bad shift {s:?}")))
            };
            shifts.push((parse(&rec[1])?, parse(&rec[2])?));
        }
        let reference = shifts
            .iter()
            .position(|&s| s == (0.0, 0.0))
            .ok_or_else(|| Error::format("shift table", "no zero-shift reference row"))?;
        Self::new(shifts, reference)
    }
}

fn centered(img: &IntensityImage) -> Result<Array2<Complex64>> {
    let mean = img.mean();
    let var = img.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    if var == 0.0 {
        return Err(Error::Undefined("cross-correlation of a constant image".into()));
    }
    Ok(img.data().mapv(|v| Complex64::new(v - mean, 0.0)))
}

/// Shift of `moving` relative to `reference`, to 1/`upsample` pixel.
///
/// The integer peak of the FFT cross-correlation is refined by evaluating
/// the correlation on a ±1.5 px neighbourhood at the finer step with a
/// matrix-multiply DFT.
pub fn estimate_shift(reference: &IntensityImage, moving: &IntensityImage, upsample: usize) -> Result<(f64, f64)> {
    if reference.dim() != moving.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            actual: moving.dim(),
        });
    }
    if upsample == 0 {
        return Err(Error::invalid("upsample factor must be at least 1"));
    }
    let (h, w) = reference.dim();
    let fr = fft2(&centered(reference)?);
    let fm = fft2(&centered(moving)?);
    let cross = &fm * &fr.mapv(|c| c.conj());
    let corr = ifft2(&cross);

    let (mut pr, mut pc, mut best) = (0, 0, f64::NEG_INFINITY);
    for ((i, j), c) in corr.indexed_iter() {
        if c.re > best {
            best = c.re;
            pr = i;
            pc = j;
        }
    }
    let dy0 = signed_index(pr, h) as f64;
    let dx0 = signed_index(pc, w) as f64;
    if upsample == 1 {
        return Ok((dx0, dy0));
    }

    let up = upsample as f64;
    let half = (1.5 * up).ceil() as i64;
    let offsets: Vec<f64> = (-half..=half).map(|k| k as f64 / up).collect();
    let n = offsets.len();
    // e_y[p, ky] = exp(i 2π ky τy_p / H), e_x[kx, q] likewise for columns.
    let e_y = Array2::from_shape_fn((n, h), |(p, ky)| {
        Complex64::from_polar(1.0, 2.0 * PI * signed_index(ky, h) as f64 * (dy0 + offsets[p]) / h as f64)
    });
    let e_x = Array2::from_shape_fn((w, n), |(kx, q)| {
        Complex64::from_polar(1.0, 2.0 * PI * signed_index(kx, w) as f64 * (dx0 + offsets[q]) / w as f64)
    });
    let local = e_y.dot(&cross).dot(&e_x);
    let (mut br, mut bc, mut bv) = (half as usize, half as usize, f64::NEG_INFINITY);
    for ((p, q), c) in local.indexed_iter() {
        if c.re > bv {
            bv = c.re;
            br = p;
            bc = q;
        }
    }
    Ok((dx0 + offsets[bc], dy0 + offsets[br]))
}

/// Fuse shifted low-resolution frames onto a grid `factor` times finer.
///
/// Each sample lands on the nearest fine pixel of its shifted position; hit
/// pixels hold the mean of their deposits and unhit pixels are filled from hit
/// neighbours with a tent (bilinear) kernel of radius `factor`.
pub fn shift_and_add(frames: &[Hologram], shifts: &ShiftTable, factor: usize) -> Result<IntensityImage> {
    let first = frames.first().ok_or_else(|| Error::invalid("no frames to fuse"))?;
    if factor == 0 {
        return Err(Error::invalid("super-resolution factor must be at least 1"));
    }
    if shifts.len() != frames.len() {
        return Err(Error::invalid(format!(
            "shift table has {} entries for {} frames",
            shifts.len(),
            frames.len()
        )));
    }
    let (h, w) = first.image.dim();
    for f in frames {
        if f.image.dim() != (h, w) {
            return Err(Error::DimensionMismatch {
                expected: (h, w),
                actual: f.image.dim(),
            });
        }
    }
    let (fh, fw) = (h * factor, w * factor);
    let k = factor as f64;
    let mut sum = Array2::<f64>::zeros((fh, fw));
    let mut hits = Array2::<u32>::zeros((fh, fw));
    for (frame, &(dx, dy)) in frames.iter().zip(shifts.shifts()) {
        let img = frame.image.data();
        for r in 0..h {
            let fr = (((r as f64 - dy) * k).round() as i64).rem_euclid(fh as i64) as usize;
            for c in 0..w {
                let fc = (((c as f64 - dx) * k).round() as i64).rem_euclid(fw as i64) as usize;
                sum[[fr, fc]] += img[[r, c]];
                hits[[fr, fc]] += 1;
            }
        }
    }
    let deposited = Array2::from_shape_fn((fh, fw), |p| if hits[p] > 0 { sum[p] / hits[p] as f64 } else { 0.0 });
    let mut out = deposited.clone();
    for i in 0..fh {
        for j in 0..fw {
            if hits[[i, j]] == 0 {
                out[[i, j]] = tent_fill(&deposited, &hits, i, j, factor);
            }
        }
    }
    IntensityImage::new(out, first.image.pixel_pitch() / k)
}

fn tent_fill(values: &Array2<f64>, hits: &Array2<u32>, i: usize, j: usize, factor: usize) -> f64 {
    let (fh, fw) = values.dim();
    let mut radius = factor.max(2);
    loop {
        let r = radius as i64;
        let (mut acc, mut wsum) = (0.0, 0.0);
        for di in -(r - 1)..r {
            let wi = 1.0 - di.abs() as f64 / radius as f64;
            let ii = (i as i64 + di).rem_euclid(fh as i64) as usize;
            for dj in -(r - 1)..r {
                let jj = (j as i64 + dj).rem_euclid(fw as i64) as usize;
                if hits[[ii, jj]] > 0 {
                    let wt = wi * (1.0 - dj.abs() as f64 / radius as f64);
                    acc += wt * values[[ii, jj]];
                    wsum += wt;
                }
            }
        }
        if wsum > 0.0 {
            return acc / wsum;
        }
        if radius > fh.max(fw) {
            return 0.0;
        }
        radius *= 2;
    }
}

/// Bilinear upsampling of one frame, the single-frame baseline for fusion.
pub fn upsample_bilinear(frame: &IntensityImage, factor: usize) -> Result<IntensityImage> {
    let holo = Hologram {
        image: frame.clone(),
        z2: 1.0,
        lateral_shift: (0.0, 0.0),
    };
    shift_and_add(std::slice::from_ref(&holo), &ShiftTable::new(vec![(0.0, 0.0)], 0)?, factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn texture(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0))
    }

    fn image(a: Array2<f64>) -> IntensityImage {
        IntensityImage::new(a, 1.12).unwrap()
    }

    fn holo(a: Array2<f64>) -> Hologram {
        Hologram::new(image(a), 500.0).unwrap()
    }

    #[test]
    fn identical_images_have_zero_shift() {
        let a = image(texture(32, 32, 1));
        assert_eq!(estimate_shift(&a, &a, 10).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn integer_circular_shift_exact() {
        let a = texture(32, 40, 2);
        // moving(x, y) = ref(x - 3, y + 2)
        let b = Array2::from_shape_fn((32, 40), |(i, j)| a[[(i + 2) % 32, (j + 40 - 3) % 40]]);
        assert_eq!(estimate_shift(&image(a.clone()), &image(b.clone()), 1).unwrap(), (3.0, -2.0));
        assert_eq!(estimate_shift(&image(a), &image(b), 20).unwrap(), (3.0, -2.0));
    }

    #[test]
    fn constant_image_is_undefined() {
        let a = image(Array2::from_elem((8, 8), 2.0));
        let b = image(texture(8, 8, 3));
        assert!(matches!(estimate_shift(&a, &b, 4), Err(Error::Undefined(_))));
        assert!(estimate_shift(&b, &image(texture(8, 9, 3)), 4).is_err());
    }

    #[test]
    fn single_frame_factor_one_is_identity() {
        let a = texture(9, 7, 4);
        let out = shift_and_add(&[holo(a.clone())], &ShiftTable::new(vec![(0.0, 0.0)], 0).unwrap(), 1).unwrap();
        assert_eq!(out.data(), &a);
    }

    #[test]
    fn identical_frames_degenerate_diversity() {
        let a = texture(8, 8, 5);
        let frames: Vec<_> = (0..36).map(|_| holo(a.clone())).collect();
        let table = ShiftTable::new(vec![(0.0, 0.0); 36], 0).unwrap();
        let x = shift_and_add(&frames, &table, 6).unwrap();
        let y = shift_and_add(&frames, &table, 6).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.dim(), (48, 48));
        assert!((x.pixel_pitch() - 1.12 / 6.0).abs() < 1e-15);
        let single = upsample_bilinear(&image(a), 6).unwrap();
        for (p, q) in x.data().iter().zip(single.data().iter()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_fill_on_regular_lattice() {
        let a = Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let up = upsample_bilinear(&image(a), 2).unwrap();
        // Midpoint between (0,0)=0 and (0,2)=1 in the fine grid.
        assert!((up.data()[[0, 1]] - 0.5).abs() < 1e-15);
        assert!((up.data()[[1, 1]] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn shift_table_validation() {
        assert!(ShiftTable::new(vec![(0.1, 0.0)], 0).is_err());
        assert!(ShiftTable::new(vec![(0.0, 0.0)], 1).is_err());
        let t = ShiftTable::new(vec![(0.5, -0.25), (0.0, 0.0)], 1).unwrap();
        let frames = vec![holo(texture(4, 4, 1))];
        assert!(shift_and_add(&frames, &t, 2).is_err());
    }

    #[test]
    fn shift_table_csv_round_trip() {
        let t = ShiftTable::new(vec![(0.0, 0.0), (0.5, -0.25), (1.0 / 3.0, 2.0)], 0).unwrap();
        assert_eq!(ShiftTable::from_csv(&t.to_csv()).unwrap(), t);
        assert!(ShiftTable::from_csv("frame_index,dx_px,dy_px\n0,0.1,0\n").is_err());
        assert!(ShiftTable::from_csv("a,b,c\n0,0,0\n").is_err());
        assert!(ShiftTable::from_csv("frame_index,dx_px,dy_px\n1,0,0\n").is_err());
        assert!(ShiftTable::from_csv("frame_index,dx_px,dy_px\n0,NaN,0\n").is_err());
    }

    #[test]
    fn mean_conserved_by_fusion() {
        let a = texture(16, 16, 6);
        let frames: Vec<_> = (0..4)
            .map(|k| holo(Array2::from_shape_fn((16, 16), |(i, j)| a[[(i + k) % 16, j]])))
            .collect();
        let table = ShiftTable::new(vec![(0.0, 0.0), (0.0, -1.0 / 3.0), (0.5, 0.0), (0.25, 0.25)], 0).unwrap();
        let out = shift_and_add(&frames, &table, 3).unwrap();
        let dep_mean: f64 = frames.iter().map(|f| f.image.mean()).sum::<f64>() / frames.len() as f64;
        assert!((out.mean() - dep_mean).abs() / dep_mean < 0.01);
    }
}
