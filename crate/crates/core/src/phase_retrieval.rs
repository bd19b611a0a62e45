//! Multi-height phase retrieval.
//!
//! Starting from the first hologram's amplitude with zero phase, the field is
//! carried through every hologram plane in stack order. At each plane the
//! amplitude is replaced by a weighted average of the current and measured
//! amplitudes while the phase is kept. After the last sweep the field is
//! back-propagated to the sample plane (z = 0).

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, HologramStack};
use crate::propagation::PropagationPlan;

/// Hologram count required for ground-truth targets.
pub const GROUND_TRUTH_HOLOGRAMS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MhprConfig {
    pub iterations: usize,
    /// Weight of the measured amplitude in the update (0.5 = arithmetic mean).
    pub measured_weight: f64,
    pub record_residuals: bool,
    /// Rotate the output so its mean (DC) component is real and positive.
    /// The absolute phase of a field is not observable from intensities.
    pub reference_background_phase: bool,
}

impl Default for MhprConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            measured_weight: 0.5,
            record_residuals: true,
            reference_background_phase: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MhprResult {
    pub sample_field: ComplexField,
    /// Per sweep: mean |current amplitude − measured amplitude| before each update,
    /// averaged over planes.
    pub residual_trace: Vec<f64>,
}

impl MhprResult {
    pub fn residuals_csv(&self) -> String {
        let mut out = String::from("iteration,residual\n");
        for (i, r) in self.residual_trace.iter().enumerate() {
            out.push_str(&format!("{},{r}\n", i + 1));
        }
        out
    }
}

/// Multiply by the conjugate unit phase of the field's mean.
pub fn reference_phase(data: &mut Array2<Complex64>) {
    let mean: Complex64 = data.iter().sum::<Complex64>() / data.len() as f64;
    if mean.norm() > 0.0 {
        let rot = mean.conj() / mean.norm();
        data.mapv_inplace(|c| c * rot);
    }
}

pub fn mhpr(stack: &HologramStack, cfg: &MhprConfig) -> Result<MhprResult> {
    if !(0.0..=1.0).contains(&cfg.measured_weight) {
        return Err(Error::invalid(format!(
            "measured amplitude weight {} outside [0, 1]",
            cfg.measured_weight
        )));
    }
    let z = stack.z2_values();
    if z.len() > 1 && z.iter().all(|&v| v == z[0]) {
        return Err(Error::invalid("all holograms share the same z2; no axial diversity"));
    }
    let plan = PropagationPlan::new(stack.dim(), stack.pixel_pitch(), stack.wavelength())?;
    let measured: Vec<Array2<f64>> = stack.holograms().iter().map(|h| h.image.data().mapv(f64::sqrt)).collect();

    let mut field = measured[0].mapv(|a| Complex64::new(a, 0.0));
    let mut z_cur = z[0];
    let w = cfg.measured_weight;
    let mut trace = Vec::new();
    for _ in 0..cfg.iterations {
        let mut residual = 0.0;
        for (amp, &zj) in measured.iter().zip(&z) {
            if zj != z_cur {
                field = plan.propagate_array(&field, zj - z_cur);
                z_cur = zj;
            }
            let mut diff = 0.0;
            ndarray::Zip::from(&mut field).and(amp).for_each(|c, &m| {
                let cur = c.norm();
                diff += (cur - m).abs();
                let new_amp = (1.0 - w) * cur + w * m;
                *c = if cur > 0.0 {
                    *c * (new_amp / cur)
                } else {
                    Complex64::new(new_amp, 0.0)
                };
            });
            residual += diff / amp.len() as f64;
        }
        if cfg.record_residuals {
            trace.push(residual / measured.len() as f64);
        }
    }
    let mut sample = plan.propagate_array(&field, -z_cur);
    if cfg.reference_background_phase {
        reference_phase(&mut sample);
    }
    if sample.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(Error::Numerical("phase retrieval produced non-finite samples".into()));
    }
    Ok(MhprResult {
        sample_field: ComplexField::new(sample, stack.pixel_pitch(), stack.wavelength())?,
        residual_trace: trace,
    })
}

/// Training target from exactly eight holograms with the default configuration.
pub fn make_ground_truth(stack8: &HologramStack) -> Result<ComplexField> {
    if stack8.len() != GROUND_TRUTH_HOLOGRAMS {
        return Err(Error::invalid(format!(
            "ground truth requires {GROUND_TRUTH_HOLOGRAMS} holograms, got {}",
            stack8.len()
        )));
    }
    Ok(mhpr(stack8, &MhprConfig::default())?.sample_field)
}
