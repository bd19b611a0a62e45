//! Two-dimensional FFT on row-major `Array2<Complex64>`.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Signed DFT frequency index for bin `k` of an `n`-point transform
/// (negative frequencies occupy the upper half).
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k <= (n - 1) / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Forward and inverse plans for one H×W geometry.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    fwd_row: Arc<dyn Fft<f64>>,
    inv_row: Arc<dyn Fft<f64>>,
    fwd_col: Arc<dyn Fft<f64>>,
    inv_col: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("rows", &self.rows).field("cols", &self.cols).finish()
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            fwd_row: planner.plan_fft_forward(cols),
            inv_row: planner.plan_fft_inverse(cols),
            fwd_col: planner.plan_fft_forward(rows),
            inv_col: planner.plan_fft_inverse(rows),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.run(data, &self.fwd_row, &self.fwd_col);
    }

    /// Inverse transform scaled by 1/(H·W), in place.
    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.run(data, &self.inv_row, &self.inv_col);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        data.mapv_inplace(|c| c * scale);
    }

    fn run(&self, data: &mut Array2<Complex64>, row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.dim(), (self.rows, self.cols), "fft geometry mismatch");
        if !data.is_standard_layout() {
            *data = data.as_standard_layout().to_owned();
        }
        let buf = data.as_slice_mut().expect("standard layout");
        row.process(buf);

        let mut t = vec![Complex64::new(0.0, 0.0); self.rows * self.cols];
        transpose(buf, &mut t, self.rows, self.cols);
        col.process(&mut t);
        transpose(&t, buf, self.cols, self.rows);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const B: usize = 16;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Forward 2-D DFT of a copy.
pub fn fft2(data: &Array2<Complex64>) -> Array2<Complex64> {
    let (r, c) = data.dim();
    let mut out = data.as_standard_layout().to_owned();
    Fft2::new(r, c).forward(&mut out);
    out
}

/// Normalized inverse 2-D DFT of a copy.
pub fn ifft2(data: &Array2<Complex64>) -> Array2<Complex64> {
    let (r, c) = data.dim();
    let mut out = data.as_standard_layout().to_owned();
    Fft2::new(r, c).inverse(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &Array2<Complex64>) -> Array2<Complex64> {
        let (h, w) = x.dim();
        Array2::from_shape_fn((h, w), |(u, v)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..h {
                for j in 0..w {
                    let ang = -2.0 * std::f64::consts::PI * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                    acc += x[[i, j]] * Complex64::from_polar(1.0, ang);
                }
            }
            acc
        })
    }

    #[test]
    fn matches_naive_dft_on_rectangular_grid() {
        let x = Array2::from_shape_fn((5, 6), |(i, j)| Complex64::new((i * 7 + j) as f64 % 3.0, (i as f64) - 0.5 * j as f64));
        let got = fft2(&x);
        let want = naive_dft(&x);
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).norm() < 1e-10);
        }
        let back = ifft2(&got);
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn signed_frequency_ordering() {
        let idx: Vec<i64> = (0..6).map(|k| signed_index(k, 6)).collect();
        assert_eq!(idx, vec![0, 1, 2, -3, -2, -1]);
        let idx: Vec<i64> = (0..5).map(|k| signed_index(k, 5)).collect();
        assert_eq!(idx, vec![0, 1, 2, -2, -1]);
    }
}
