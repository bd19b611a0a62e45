//! Image-quality metrics: RMSE, ECC, MAE and multiscale SSIM.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ComplexField;

fn same_dims<A, B>(x: &Array2<A>, y: &Array2<B>) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            actual: y.dim(),
        });
    }
    Ok(())
}

pub fn rmse(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    same_dims(x, y)?;
    let sq: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / x.len() as f64).sqrt())
}

/// Plain sum of absolute differences (no 1/HW factor).
pub fn mae(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    same_dims(x, y)?;
    Ok(x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).sum())
}

/// Mean absolute difference; this is the form used as a training loss.
pub fn mae_mean(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    Ok(mae(x, y)? / x.len() as f64)
}

/// Enhanced correlation coefficient `Re<x, y> / (|x| |y|)` with `x` conjugated.
pub fn ecc(x: &Array2<Complex64>, y: &Array2<Complex64>) -> Result<f64> {
    same_dims(x, y)?;
    let mut inner = 0.0;
    let mut ex = 0.0;
    let mut ey = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        inner += (a.conj() * b).re;
        ex += a.norm_sqr();
        ey += b.norm_sqr();
    }
    if ex == 0.0 || ey == 0.0 {
        return Err(Error::Undefined("ECC of a zero-energy image".into()));
    }
    Ok((inner / (ex.sqrt() * ey.sqrt())).clamp(-1.0, 1.0))
}

/// Exponents and stabilizers of multiscale SSIM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    /// Contrast exponent per scale, finest first.
    pub beta: Vec<f64>,
    /// Structure exponent per scale.
    pub gamma: Vec<f64>,
    /// Luminance exponent, applied at the coarsest scale only.
    pub alpha: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Dynamic range of the inputs.
    pub dynamic_range: f64,
}

impl Default for SsimConstants {
    fn default() -> Self {
        Self::standard()
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Smallest side admitted at the coarsest scale.
const MIN_COARSE_SIDE: usize = 16;

impl SsimConstants {
    /// Five-scale weights for 8-bit images (L = 255).
    pub fn standard() -> Self {
        let w = vec![0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
        Self::with_range(w.clone(), w, 0.1333, 255.0)
    }

    fn with_range(beta: Vec<f64>, gamma: Vec<f64>, alpha: f64, l: f64) -> Self {
        let c1 = (0.01 * l).powi(2);
        let c2 = (0.03 * l).powi(2);
        Self {
            beta,
            gamma,
            alpha,
            c1,
            c2,
            c3: c2 / 2.0,
            dynamic_range: l,
        }
    }

    pub fn scales(&self) -> usize {
        self.beta.len()
    }

    /// Keep the first `scales` weights, renormalized to sum to one; the
    /// coarsest kept weight also becomes the luminance exponent.
    pub fn truncated(&self, scales: usize) -> Result<Self> {
        if scales == 0 || scales > self.scales() {
            return Err(Error::invalid(format!("cannot keep {scales} of {} scales", self.scales())));
        }
        if scales == self.scales() {
            return Ok(self.clone());
        }
        let norm = |v: &[f64]| {
            let total: f64 = v[..scales].iter().sum();
            v[..scales].iter().map(|b| b / total).collect::<Vec<_>>()
        };
        let beta = norm(&self.beta);
        let gamma = norm(&self.gamma);
        let alpha = beta[scales - 1];
        let mut k = Self::with_range(beta, gamma, alpha, self.dynamic_range);
        k.c1 = self.c1;
        k.c2 = self.c2;
        k.c3 = self.c3;
        Ok(k)
    }

    /// Same exponents, stabilizers rescaled for a different dynamic range.
    pub fn for_range(&self, l: f64) -> Self {
        Self::with_range(self.beta.clone(), self.gamma.clone(), self.alpha, l)
    }

    pub fn min_side(&self) -> usize {
        (1 << (self.scales() - 1)) * MIN_COARSE_SIDE
    }

    /// Largest scale count (≤ available) whose size requirement fits `side`.
    pub fn max_scales_for(&self, side: usize) -> usize {
        (1..=self.scales())
            .rev()
            .find(|&m| (1usize << (m - 1)) * MIN_COARSE_SIDE <= side)
            .unwrap_or(0)
    }

    /// Contrast and structure combine into `(2σxy + C2)/(σx² + σy² + C2)` when the
    /// exponents agree and `C2 = 2·C3`.
    fn combined_cs(&self) -> bool {
        self.beta == self.gamma && self.c2 == 2.0 * self.c3
    }
}

/// Normalized 1-D Gaussian taps (the 2-D window is their outer product).
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering with the SSIM Gaussian window.
pub fn gaussian_filter_valid(x: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let k = taps.len();
    let (h, w) = x.dim();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut tmp = Array2::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            let mut acc = 0.0;
            for (t, &g) in taps.iter().enumerate() {
                acc += g * x[[i, j + t]];
            }
            tmp[[i, j]] = acc;
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for (t, &g) in taps.iter().enumerate() {
                acc += g * tmp[[i + t, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// 2×2 mean pooling; an odd trailing row/column is dropped.
pub fn mean_pool2(x: &Array2<f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    Array2::from_shape_fn((h / 2, w / 2), |(i, j)| {
        0.25 * (x[[2 * i, 2 * j]] + x[[2 * i + 1, 2 * j]] + x[[2 * i, 2 * j + 1]] + x[[2 * i + 1, 2 * j + 1]])
    })
}

fn signed_pow(v: f64, p: f64) -> f64 {
    v.signum() * v.abs().powf(p)
}

/// Per-scale mean statistics: (luminance, contrast, structure, combined contrast·structure).
struct ScaleStats {
    luminance: f64,
    contrast: f64,
    structure: f64,
    cs: f64,
}

fn scale_stats(x: &Array2<f64>, y: &Array2<f64>, k: &SsimConstants, taps: &[f64]) -> ScaleStats {
    let mu_x = gaussian_filter_valid(x, taps);
    let mu_y = gaussian_filter_valid(y, taps);
    let xx = gaussian_filter_valid(&(x * x), taps);
    let yy = gaussian_filter_valid(&(y * y), taps);
    let xy = gaussian_filter_valid(&(x * y), taps);
    let n = mu_x.len() as f64;
    let (mut lum, mut con, mut stru, mut cs) = (0.0, 0.0, 0.0, 0.0);
    for idx in 0..mu_x.len() {
        let (i, j) = (idx / mu_x.ncols(), idx % mu_x.ncols());
        let mx = mu_x[[i, j]];
        let my = mu_y[[i, j]];
        let vx = xx[[i, j]] - mx * mx;
        let vy = yy[[i, j]] - my * my;
        let cov = xy[[i, j]] - mx * my;
        lum += (2.0 * mx * my + k.c1) / (mx * mx + my * my + k.c1);
        cs += (2.0 * cov + k.c2) / (vx + vy + k.c2);
        let sx = vx.max(0.0).sqrt();
        let sy = vy.max(0.0).sqrt();
        con += (2.0 * sx * sy + k.c2) / (vx + vy + k.c2);
        stru += (cov + k.c3) / (sx * sy + k.c3);
    }
    ScaleStats {
        luminance: lum / n,
        contrast: con / n,
        structure: stru / n,
        cs: cs / n,
    }
}

/// Multiscale SSIM of two real images expected in `[0, k.dynamic_range]`.
///
/// Window statistics use an 11×11 Gaussian (σ = 1.5) over valid positions;
/// scale `s` works on the image mean-pooled `s-1` times. Negative per-scale
/// means are raised with their sign preserved so the result stays in [-1, 1].
pub fn ms_ssim(x: &Array2<f64>, y: &Array2<f64>, k: &SsimConstants) -> Result<f64> {
    same_dims(x, y)?;
    let (h, w) = x.dim();
    if k.scales() == 0 || k.beta.len() != k.gamma.len() {
        return Err(Error::invalid("SSIM constants need matching, non-empty exponent lists"));
    }
    if h.min(w) < k.min_side() {
        return Err(Error::invalid(format!(
            "image {h}x{w} too small for {} SSIM scales (need {} per side)",
            k.scales(),
            k.min_side()
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let combined = k.combined_cs();
    let mut xs = x.clone();
    let mut ys = y.clone();
    let mut result = 1.0;
    for s in 0..k.scales() {
        if s > 0 {
            xs = mean_pool2(&xs);
            ys = mean_pool2(&ys);
        }
        let st = scale_stats(&xs, &ys, k, &taps);
        if combined {
            result *= signed_pow(st.cs, k.beta[s]);
        } else {
            result *= signed_pow(st.contrast, k.beta[s]) * signed_pow(st.structure, k.gamma[s]);
        }
        if s + 1 == k.scales() {
            result *= signed_pow(st.luminance, k.alpha);
        }
    }
    Ok(result)
}

/// Metrics of a reconstruction against its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Amplitude RMSE.
    pub rmse: f64,
    /// Complex ECC.
    pub ecc: f64,
    /// Amplitude MAE, plain sum.
    pub mae: f64,
    /// Amplitude MAE divided by pixel count.
    pub mae_mean: f64,
    /// Amplitude MS-SSIM after rescaling both amplitudes by 255 / max(gt amplitude).
    pub ms_ssim: f64,
    /// Number of SSIM scales used (5 unless the image is too small).
    pub ms_ssim_scales: usize,
}

pub fn report(out: &ComplexField, gt: &ComplexField) -> Result<MetricReport> {
    same_dims(out.data(), gt.data())?;
    let a_out = out.amplitude();
    let a_gt = gt.amplitude();
    let peak = a_gt.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::Undefined("ground truth has zero amplitude".into()));
    }
    let scale = 255.0 / peak;
    let base = SsimConstants::standard();
    let (h, w) = gt.dim();
    let scales = base.max_scales_for(h.min(w));
    if scales == 0 {
        return Err(Error::invalid(format!("image {h}x{w} too small for MS-SSIM")));
    }
    let k = base.truncated(scales)?;
    Ok(MetricReport {
        rmse: rmse(&a_out, &a_gt)?,
        ecc: ecc(out.data(), gt.data())?,
        mae: mae(&a_out, &a_gt)?,
        mae_mean: mae_mean(&a_out, &a_gt)?,
        ms_ssim: ms_ssim(&a_out.mapv(|v| v * scale), &a_gt.mapv(|v| v * scale), &k)?,
        ms_ssim_scales: scales,
    })
}

impl MetricReport {
    /// Fixed-precision table (6 significant digits).
    pub fn to_table(&self) -> String {
        let rows = [
            ("rmse", self.rmse),
            ("ecc", self.ecc),
            ("mae", self.mae),
            ("mae_mean", self.mae_mean),
            ("ms_ssim", self.ms_ssim),
        ];
        let mut out = String::new();
        for (name, v) in rows {
            out.push_str(&format!("{name:<10} {}\n", sig6(v)));
        }
        out.push_str(&format!("{:<10} {}\n", "ms_ssim_scales", self.ms_ssim_scales));
        out
    }
}

/// Format with six significant digits.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.5e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arr(v: &[f64], h: usize, w: usize) -> Array2<f64> {
        Array2::from_shape_vec((h, w), v.to_vec()).unwrap()
    }

    fn random_image(h: usize, w: usize, seed: u64, lo: f64, hi: f64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random_range(lo..hi))
    }

    #[test]
    fn rmse_cases() {
        let z = Array2::zeros((2, 2));
        assert_eq!(rmse(&z, &z).unwrap(), 0.0);
        assert_eq!(rmse(&z, &Array2::ones((2, 2))).unwrap(), 1.0);
        assert_eq!(rmse(&arr(&[0.0, 0.0, 3.0, 4.0], 2, 2), &z).unwrap(), 2.5);
        assert!(rmse(&z, &Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn mae_cases() {
        let z = Array2::zeros((2, 2));
        let o = Array2::ones((2, 2));
        assert_eq!(mae(&z, &z).unwrap(), 0.0);
        assert_eq!(mae(&z, &o).unwrap(), 4.0);
        assert_eq!(mae_mean(&z, &o).unwrap(), 1.0);
        let x = random_image(8, 8, 1, 0.0, 1.0);
        let y = random_image(8, 8, 2, 0.0, 1.0);
        assert_eq!(mae(&x, &y).unwrap(), 64.0 * mae_mean(&x, &y).unwrap());
    }

    #[test]
    fn ecc_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((8, 8), |_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        assert!((ecc(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let rot = x.mapv(|c| c * Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_3));
        assert!((ecc(&x, &rot).unwrap() - 0.5).abs() < 1e-12);
        assert!((ecc(&x, &x.mapv(|c| -c)).unwrap() + 1.0).abs() < 1e-15);
        assert!(ecc(&x, &Array2::zeros((8, 8))).is_err());
    }

    #[test]
    fn standard_exponents_sum() {
        let k = SsimConstants::standard();
        let sum: f64 = k.beta.iter().sum();
        assert!((sum - 1.0001).abs() < 1e-12);
        assert_eq!(k.alpha, 0.1333);
        assert_eq!(k.c1, (0.01f64 * 255.0).powi(2));
        assert_eq!(k.c2, (0.03f64 * 255.0).powi(2));
        assert_eq!(k.c2, 2.0 * k.c3);
    }

    #[test]
    fn ms_ssim_identity_is_exactly_one() {
        let x = random_image(256, 256, 4, 0.0, 255.0);
        assert_eq!(ms_ssim(&x, &x, &SsimConstants::standard()).unwrap(), 1.0);
    }

    #[test]
    fn ms_ssim_rejects_small_images() {
        let x = random_image(128, 256, 4, 0.0, 255.0);
        assert!(ms_ssim(&x, &x, &SsimConstants::standard()).is_err());
        let k3 = SsimConstants::standard().truncated(3).unwrap();
        assert_eq!(k3.min_side(), 64);
        assert!(ms_ssim(&random_image(64, 64, 1, 0.0, 255.0), &random_image(64, 64, 2, 0.0, 255.0), &k3).is_ok());
    }

    #[test]
    fn truncated_weights_renormalize() {
        let k = SsimConstants::standard().truncated(3).unwrap();
        assert_eq!(k.scales(), 3);
        assert!((k.beta.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k.alpha, k.beta[2]);
    }

    #[test]
    fn report_of_identical_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Array2::from_shape_fn((64, 64), |_| Complex64::from_polar(rng.random_range(0.2..1.0), rng.random_range(-1.0..1.0)));
        let f = ComplexField::new(data, 1.12, 0.53).unwrap();
        let r = report(&f, &f).unwrap();
        assert_eq!((r.rmse, r.mae), (0.0, 0.0));
        assert!((r.ecc - 1.0).abs() < 1e-15);
        assert_eq!(r.ms_ssim, 1.0);
        assert_eq!(r.ms_ssim_scales, 3);

        let theta = 0.7;
        let g = f.with_data(f.data().mapv(|c| c * Complex64::from_polar(1.0, theta))).unwrap();
        let r = report(&g, &f).unwrap();
        assert!(r.rmse < 1e-15);
        assert!((r.ecc - theta.cos()).abs() < 1e-12);
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(12.3456789), "12.3457");
        assert_eq!(sig6(1.0), "1.00000");
        assert_eq!(sig6(1.5e-7), "1.50000e-7");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn rmse_and_mae_are_metrics(a in 0u64..10_000, b in 0u64..10_000) {
            let x = random_image(5, 7, a, -3.0, 3.0);
            let y = random_image(5, 7, b, -3.0, 3.0);
            for f in [rmse, mae] {
                let dxy = f(&x, &y).unwrap();
                proptest::prop_assert_eq!(dxy, f(&y, &x).unwrap());
                proptest::prop_assert!(dxy >= 0.0);
                proptest::prop_assert_eq!(f(&x, &x).unwrap(), 0.0);
                if a != b {
                    proptest::prop_assert!(dxy > 0.0);
                }
            }
        }

        #[test]
        fn ecc_bounded_and_scale_invariant(a in 0u64..10_000, b in 0u64..10_000, c in 0.01f64..100.0) {
            let mut r1 = ChaCha8Rng::seed_from_u64(a);
            let mut r2 = ChaCha8Rng::seed_from_u64(b);
            let x = Array2::from_shape_fn((6, 6), |_| Complex64::new(r1.random_range(-1.0..1.0), r1.random_range(-1.0..1.0)));
            let y = Array2::from_shape_fn((6, 6), |_| Complex64::new(r2.random_range(-1.0..1.0), r2.random_range(-1.0..1.0)));
            let e = ecc(&x, &y).unwrap();
            proptest::prop_assert!((-1.0..=1.0).contains(&e));
            let scaled = ecc(&x.mapv(|v| v * c), &y).unwrap();
            proptest::prop_assert!((scaled - e).abs() < 1e-12);
        }

        #[test]
        fn ms_ssim_self_similarity(seed in 0u64..1000) {
            let k = SsimConstants::standard().truncated(2).unwrap();
            let x = random_image(32, 40, seed, 0.0, 255.0);
            proptest::prop_assert_eq!(ms_ssim(&x, &x, &k).unwrap(), 1.0);
        }
    }
}
