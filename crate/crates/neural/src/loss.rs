//! Generator and discriminator objectives.
//!
//! `L_G = α·L_MAE + β·L_SSIM + γ·L_adv` with `L_adv = (D(ŷ) − 1)²` and
//! `L_D = ½·D(ŷ)² + ½·(D(y) − 1)²`. Image terms are evaluated per output
//! channel and summed.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use holorec::metrics::{gaussian_taps, SsimConstants, SSIM_SIGMA, SSIM_WINDOW};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            beta: 1.0,
            gamma: 0.3,
        }
    }
}

/// Scales used by the SSIM term on 64×64 patches.
pub const DEFAULT_SSIM_SCALES: usize = 3;

/// Floor applied before raising per-scale SSIM means to fractional powers.
const POW_FLOOR: f64 = 1e-6;

/// Per-channel value range: amplitude in [0, 1], phase shifted into [0, 2π].
const CHANNEL_RANGES: [(f64, f64); 2] = [(0.0, 1.0), (PI, 2.0 * PI)];

/// Sum over channels of the mean absolute error.
pub fn mae_loss(g: &mut Graph, out: Var, target: Var) -> Result<Var> {
    let shape = g.value(out)?.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::shape("mae_loss", format!("{shape:?}")));
    }
    let d = g.sub(out, target)?;
    let a = g.abs(d)?;
    let s = g.sum(a)?;
    g.affine(s, 1.0 / (shape[1] * shape[2]) as f64, 0.0)
}

/// SSIM constants for a side length: at most `max_scales`, fewer if the
/// image is too small, stabilisers set for dynamic range `l`.
pub fn ssim_constants(side: usize, max_scales: usize, l: f64) -> Result<SsimConstants> {
    let standard = SsimConstants::standard();
    let fit = standard.max_scales_for(side).min(max_scales);
    if fit == 0 {
        return Err(Error::shape("ssim", format!("side {side} below the single-scale minimum")));
    }
    Ok(standard.truncated(fit)?.for_range(l))
}

/// Differentiable multiscale SSIM of two `[1, H, W]` images. Per-scale means
/// are clamped below at a small positive floor before the fractional power.
pub fn ms_ssim_graph(g: &mut Graph, x: Var, y: Var, k: &SsimConstants) -> Result<Var> {
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (mut xs, mut ys) = (x, y);
    let mut result: Option<Var> = None;
    for s in 0..k.scales() {
        if s > 0 {
            xs = g.mean_pool2(xs)?;
            ys = g.mean_pool2(ys)?;
        }
        let mx = g.filter_valid(xs, &taps)?;
        let my = g.filter_valid(ys, &taps)?;
        let xx = g.mul(xs, xs)?;
        let yy = g.mul(ys, ys)?;
        let xy = g.mul(xs, ys)?;
        let exx = g.filter_valid(xx, &taps)?;
        let eyy = g.filter_valid(yy, &taps)?;
        let exy = g.filter_valid(xy, &taps)?;
        let mx2 = g.mul(mx, mx)?;
        let my2 = g.mul(my, my)?;
        let mxy = g.mul(mx, my)?;
        let vx = g.sub(exx, mx2)?;
        let vy = g.sub(eyy, my2)?;
        let cov = g.sub(exy, mxy)?;

        let num = g.affine(cov, 2.0, k.c2)?;
        let vsum = g.add(vx, vy)?;
        let den = g.affine(vsum, 1.0, k.c2)?;
        let cs_map = g.div(num, den)?;
        let cs = g.mean(cs_map)?;
        let mut term = g.pow_clamped(cs, k.beta[s], POW_FLOOR)?;
        if s + 1 == k.scales() {
            let lnum = g.affine(mxy, 2.0, k.c1)?;
            let msum = g.add(mx2, my2)?;
            let lden = g.affine(msum, 1.0, k.c1)?;
            let lmap = g.div(lnum, lden)?;
            let lum = g.mean(lmap)?;
            let lp = g.pow_clamped(lum, k.alpha, POW_FLOOR)?;
            term = g.mul(term, lp)?;
        }
        result = Some(match result {
            None => term,
            Some(r) => g.mul(r, term)?,
        });
    }
    result.ok_or_else(|| Error::Config("no SSIM scales".into()))
}

/// Sum over (amplitude, phase) of `1 − MS-SSIM`.
pub fn ssim_loss(g: &mut Graph, out: Var, target: Var, max_scales: usize) -> Result<Var> {
    let shape = g.value(out)?.shape().to_vec();
    if shape.len() != 3 || shape[0] != CHANNEL_RANGES.len() || g.value(target)?.shape() != shape.as_slice() {
        return Err(Error::shape("ssim_loss", format!("{shape:?}")));
    }
    let side = shape[1].min(shape[2]);
    let mut total: Option<Var> = None;
    for (c, &(offset, range)) in CHANNEL_RANGES.iter().enumerate() {
        let k = ssim_constants(side, max_scales, range)?;
        let oc = g.channel(out, c)?;
        let tc = g.channel(target, c)?;
        let oc = g.affine(oc, 1.0, offset)?;
        let tc = g.affine(tc, 1.0, offset)?;
        let v = ms_ssim_graph(g, oc, tc, &k)?;
        let term = g.affine(v, -1.0, 1.0)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(total.expect("two channels"))
}

/// `(D − 1)²` summed to a 0-d scalar.
pub fn adversarial_loss(g: &mut Graph, d_fake: Var) -> Result<Var> {
    let e = g.affine(d_fake, 1.0, -1.0)?;
    let sq = g.mul(e, e)?;
    g.sum(sq)
}

/// `½·D(ŷ)² + ½·(D(y) − 1)²`.
pub fn discriminator_loss(g: &mut Graph, d_fake: Var, d_real: Var) -> Result<Var> {
    let f2 = g.mul(d_fake, d_fake)?;
    let f2 = g.sum(f2)?;
    let r = g.affine(d_real, 1.0, -1.0)?;
    let r2 = g.mul(r, r)?;
    let r2 = g.sum(r2)?;
    let s = g.add(f2, r2)?;
    g.affine(s, 0.5, 0.0)
}

/// Generator loss and its components, as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub mae: Var,
    pub ssim: Var,
    pub adv: Var,
    pub total: Var,
}

pub fn generator_loss(g: &mut Graph, out: Var, target: Var, d_fake: Var, w: &LossWeights, ssim_scales: usize) -> Result<GeneratorLoss> {
    let mae = mae_loss(g, out, target)?;
    let ssim = ssim_loss(g, out, target, ssim_scales)?;
    let adv = adversarial_loss(g, d_fake)?;
    let a = g.affine(mae, w.alpha, 0.0)?;
    let b = g.affine(ssim, w.beta, 0.0)?;
    let c = g.affine(adv, w.gamma, 0.0)?;
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(GeneratorLoss { mae, ssim, adv, total })
}
