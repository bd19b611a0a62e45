//! Sample-to-sensor distance estimation by edge sparsity.
//!
//! The sharpness score is the Tamura coefficient `sqrt(σ/μ)` of the
//! gradient-magnitude image of the back-propagated amplitude. A coarse grid
//! scan locates the best candidate, then a golden-section search refines it.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, Hologram};
use crate::propagation::PropagationPlan;

/// Golden-section stopping width.
pub const REFINE_TOLERANCE_UM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocusStatus {
    Refined,
    /// Every candidate scored the same; the coarse maximum is returned.
    Plateau,
    /// Refinement failed to beat the coarse maximum, which is returned instead.
    BracketLost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusResult {
    pub z_hat: f64,
    pub score: f64,
    /// Every evaluated (z, score): coarse grid first, then refinement probes.
    pub scan_trace: Vec<(f64, f64)>,
    pub status: FocusStatus,
}

impl FocusResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("z_um,score\n");
        for (z, s) in &self.scan_trace {
            out.push_str(&format!("{z},{s}\n"));
        }
        out
    }
}

fn tamura_of_gradient(amp: &Array2<f64>) -> f64 {
    let (h, w) = amp.dim();
    let n = ((h - 2) * (w - 2)) as f64;
    let mut grad = Vec::with_capacity((h - 2) * (w - 2));
    for i in 1..h - 1 {
        for j in 1..w - 1 {
            let gx = 0.5 * (amp[[i, j + 1]] - amp[[i, j - 1]]);
            let gy = 0.5 * (amp[[i + 1, j]] - amp[[i - 1, j]]);
            grad.push((gx * gx + gy * gy).sqrt());
        }
    }
    let mean = grad.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = grad.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n;
    (var.sqrt() / mean).sqrt()
}

/// Edge-sparsity sharpness of the field amplitude; 0 for a constant amplitude.
pub fn sharpness(field: &ComplexField) -> Result<f64> {
    let (h, w) = field.dim();
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!("sharpness needs at least 3x3 samples, got {h}x{w}")));
    }
    Ok(tamura_of_gradient(&field.amplitude()))
}

/// Estimate the sample-to-sensor distance of `holo` within `z_range`.
pub fn autofocus(holo: &Hologram, wavelength: f64, z_range: (f64, f64), coarse_step: f64) -> Result<FocusResult> {
    let (lo, hi) = z_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid(format!("degenerate search range ({lo}, {hi})")));
    }
    if !(coarse_step > 0.0 && coarse_step < hi - lo) {
        return Err(Error::invalid(format!(
            "coarse step {coarse_step} must be positive and smaller than the range width {}",
            hi - lo
        )));
    }
    let (h, w) = holo.image.dim();
    if h < 3 || w < 3 {
        return Err(Error::invalid("autofocus needs at least 3x3 samples"));
    }
    let plan = PropagationPlan::new((h, w), holo.image.pixel_pitch(), wavelength)?;
    let spectrum = plan.spectrum(&holo.image.data().mapv(|v| Complex64::new(v.sqrt(), 0.0)));
    let score_at = |z: f64| tamura_of_gradient(&plan.from_spectrum(&spectrum, -z).mapv(|c| c.norm()));

    let mut trace = Vec::new();
    let steps = ((hi - lo) / coarse_step + 1e-9).floor() as usize;
    for k in 0..=steps {
        trace.push(lo + k as f64 * coarse_step);
    }
    if hi - trace[trace.len() - 1] > 1e-9 {
        trace.push(hi);
    }
    let mut trace: Vec<(f64, f64)> = trace.into_iter().map(|z| (z, score_at(z))).collect();

    // Ascending scan with strict comparison breaks ties toward smaller z.
    let (mut best_idx, mut best) = (0, trace[0].1);
    let mut worst = trace[0].1;
    for (i, &(_, s)) in trace.iter().enumerate() {
        if s > best {
            best = s;
            best_idx = i;
        }
        worst = worst.min(s);
    }
    let z_coarse = trace[best_idx].0;
    if best == worst {
        return Ok(FocusResult {
            z_hat: z_coarse,
            score: best,
            scan_trace: trace,
            status: FocusStatus::Plateau,
        });
    }

    let mut a = (z_coarse - coarse_step).max(lo);
    let mut b = (z_coarse + coarse_step).min(hi);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = score_at(c);
    let mut fd = score_at(d);
    trace.push((c, fc));
    trace.push((d, fd));
    while b - a > REFINE_TOLERANCE_UM {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = score_at(c);
            trace.push((c, fc));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = score_at(d);
            trace.push((d, fd));
        }
    }
    let (z_ref, s_ref) = if fc >= fd { (c, fc) } else { (d, fd) };
    if s_ref >= best {
        Ok(FocusResult {
            z_hat: z_ref,
            score: s_ref,
            scan_trace: trace,
            status: FocusStatus::Refined,
        })
    } else {
        Ok(FocusResult {
            z_hat: z_coarse,
            score: best,
            scan_trace: trace,
            status: FocusStatus::BracketLost,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::IntensityImage;

    #[test]
    fn constant_field_scores_zero() {
        let f = ComplexField::uniform((8, 8), Complex64::new(0.7, 0.2), 1.12, 0.53).unwrap();
        assert_eq!(sharpness(&f).unwrap(), 0.0);
    }

    #[test]
    fn too_small_for_gradient() {
        let f = ComplexField::uniform((2, 8), Complex64::new(1.0, 0.0), 1.12, 0.53).unwrap();
        assert!(sharpness(&f).is_err());
    }

    #[test]
    fn scale_invariant() {
        let data = Array2::from_shape_fn((16, 16), |(i, j)| Complex64::new(((i * 3 + j * 5) % 7) as f64 + 0.5, 0.1 * j as f64));
        let f = ComplexField::new(data.clone(), 1.12, 0.53).unwrap();
        let g = ComplexField::new(data.mapv(|c| c * 3.7), 1.12, 0.53).unwrap();
        let (a, b) = (sharpness(&f).unwrap(), sharpness(&g).unwrap());
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn uniform_hologram_is_plateau() {
        let img = IntensityImage::new(Array2::from_elem((16, 16), 1.0), 1.12).unwrap();
        let holo = Hologram::new(img, 500.0).unwrap();
        let r = autofocus(&holo, 0.53, (400.0, 600.0), 10.0).unwrap();
        assert_eq!(r.status, FocusStatus::Plateau);
        assert_eq!(r.score, 0.0);
        assert_eq!(r.z_hat, 400.0);
        assert_eq!(r.scan_trace.len(), 21);
    }

    #[test]
    fn degenerate_ranges_rejected() {
        let img = IntensityImage::new(Array2::from_elem((8, 8), 1.0), 1.12).unwrap();
        let holo = Hologram::new(img, 500.0).unwrap();
        assert!(autofocus(&holo, 0.53, (500.0, 500.0 + 1e-6), 10.0).is_err());
        assert!(autofocus(&holo, 0.53, (600.0, 400.0), 10.0).is_err());
        assert!(autofocus(&holo, 0.53, (400.0, 600.0), 0.0).is_err());
        assert!(autofocus(&holo, 0.53, (400.0, 600.0), 250.0).is_err());
    }
}
