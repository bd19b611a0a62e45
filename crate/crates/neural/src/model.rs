//! Recurrent holographic reconstruction network and its discriminator.
//!
//! Each input hologram (real, imaginary) passes through a shared four-block
//! encoder. At every scale a recurrent block of two convolutional GRU layers
//! and a 1×1 convolution folds the sequence into one feature map, which
//! feeds the decoder through a skip connection. The head emits (amplitude,
//! phase).

use ndarray::{Array2, Array3, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use holorec::{Complex64, ComplexField};

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor, Var};
use crate::params::{normal_tensor, BlockTag, Bound, Parameter, ParameterSet};

/// Encoder/decoder depth and number of recurrent blocks.
pub const DEPTH: usize = 4;
pub const IN_CHANNELS: usize = 2;
pub const OUT_CHANNELS: usize = 2;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub base_channels: usize,
    /// Sequence length the model was configured for; any length ≥ 1 runs.
    pub sequence_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 8,
            sequence_len: 5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if self.sequence_len == 0 {
            return Err(Error::Config("sequence_len must be positive".into()));
        }
        Ok(())
    }

    /// Channels at encoder scale `k` (1-based): c, 2c, 4c, 8c.
    pub fn channels(&self, k: usize) -> usize {
        self.base_channels << (k - 1)
    }
}

struct Init<'a> {
    set: &'a mut ParameterSet,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn tensor(&mut self, name: String, tag: BlockTag, value: Tensor) -> Result<()> {
        self.set.push(Parameter {
            name,
            value,
            tag,
            frozen: false,
        })
    }

    /// `k×k` convolution; He initialisation scaled by `gain`.
    fn conv(&mut self, name: &str, tag: BlockTag, cin: usize, cout: usize, k: usize, gain: f64) -> Result<()> {
        let std = gain * (2.0 / (cin * k * k) as f64).sqrt();
        let w = normal_tensor(&mut self.rng, &[cout, cin, k, k], std);
        self.tensor(format!("{name}.weight"), tag, w)?;
        self.tensor(format!("{name}.bias"), tag, Tensor::zeros(IxDyn(&[cout])))
    }

    fn conv_t(&mut self, name: &str, tag: BlockTag, cin: usize, cout: usize) -> Result<()> {
        let std = (2.0 / cin as f64).sqrt();
        let w = normal_tensor(&mut self.rng, &[cin, cout, 2, 2], std);
        self.tensor(format!("{name}.weight"), tag, w)?;
        self.tensor(format!("{name}.bias"), tag, Tensor::zeros(IxDyn(&[cout])))
    }

    fn gru(&mut self, name: &str, tag: BlockTag, cin: usize, hidden: usize) -> Result<()> {
        for gate in ["z", "r", "h"] {
            self.conv(&format!("{name}.conv_{gate}"), tag, cin + hidden, hidden, 3, 0.5)?;
        }
        Ok(())
    }
}

/// Fresh generator parameters for `cfg`, seeded by `cfg.seed`.
pub fn init_generator(cfg: &ModelConfig) -> Result<ParameterSet> {
    cfg.validate()?;
    let mut set = ParameterSet::new();
    let mut init = Init {
        set: &mut set,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    for k in 1..=DEPTH {
        let tag = BlockTag::DownConv(k as u8);
        let cin = if k == 1 { IN_CHANNELS } else { cfg.channels(k - 1) };
        let c = cfg.channels(k);
        init.conv(&format!("down_conv_{k}.conv_a"), tag, cin, c, 3, 1.0)?;
        init.conv(&format!("down_conv_{k}.conv_b"), tag, c, c, 3, 1.0)?;
    }
    for k in 1..=DEPTH {
        let tag = BlockTag::Rnn(k as u8);
        let c = cfg.channels(k);
        init.gru(&format!("rnn_{k}.gru_1"), tag, c, c)?;
        init.gru(&format!("rnn_{k}.gru_2"), tag, c, c)?;
        init.conv(&format!("rnn_{k}.proj"), tag, c, c, 1, 1.0)?;
    }
    for k in (1..=DEPTH).rev() {
        let tag = BlockTag::UpConv(k as u8);
        if k == 1 {
            let c = cfg.channels(1);
            init.conv_t("up_conv_1.up", tag, c, c)?;
            init.conv("up_conv_1.conv", tag, c, c, 3, 1.0)?;
        } else {
            let (cin, cout) = (cfg.channels(k), cfg.channels(k - 1));
            init.conv_t(&format!("up_conv_{k}.up"), tag, cin, cout)?;
            init.conv(&format!("up_conv_{k}.conv"), tag, 2 * cout, cout, 3, 1.0)?;
        }
    }
    init.conv("head", BlockTag::Head, cfg.channels(1), OUT_CHANNELS, 1, 0.5)?;
    Ok(set)
}

/// Fresh discriminator parameters: four stride-2 stages and an affine head.
pub fn init_discriminator(cfg: &ModelConfig) -> Result<ParameterSet> {
    cfg.validate()?;
    let mut set = ParameterSet::new();
    let mut init = Init {
        set: &mut set,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd15c),
    };
    for k in 1..=DEPTH {
        let cin = if k == 1 { OUT_CHANNELS } else { cfg.channels(k - 1) };
        init.conv(&format!("disc_{k}"), BlockTag::Disc(k as u8), cin, cfg.channels(k), 3, 1.0)?;
    }
    let c = cfg.channels(DEPTH);
    let w = normal_tensor(&mut init.rng, &[1, c], (1.0 / c as f64).sqrt());
    init.tensor("disc_head.weight".into(), BlockTag::DiscHead, w)?;
    init.tensor("disc_head.bias".into(), BlockTag::DiscHead, Tensor::zeros(IxDyn(&[1])))?;
    Ok(set)
}

fn conv(g: &mut Graph, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    g.conv2d(x, w, b, stride)
}

fn conv_leaky(g: &mut Graph, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let y = conv(g, p, name, x, stride)?;
    g.leaky_relu(y, LEAKY_SLOPE)
}

/// One convolutional GRU update:
/// `z = σ(Conv_z[x, h])`, `r = σ(Conv_r[x, h])`, `h̃ = tanh(Conv_h[x, r⊙h])`,
/// `h' = (1 − z)⊙h + z⊙h̃`.
pub fn conv_gru_step(g: &mut Graph, p: &Bound, name: &str, x: Var, h: Var) -> Result<Var> {
    let (xs, hs) = (g.value(x)?.shape().to_vec(), g.value(h)?.shape().to_vec());
    if xs.len() != 3 || hs.len() != 3 || xs[1..] != hs[1..] {
        return Err(Error::shape("conv_gru_step", format!("input {xs:?}, hidden {hs:?}")));
    }
    let xh = g.concat(&[x, h])?;
    let z = conv(g, p, &format!("{name}.conv_z"), xh, 1)?;
    let z = g.sigmoid(z)?;
    let r = conv(g, p, &format!("{name}.conv_r"), xh, 1)?;
    let r = g.sigmoid(r)?;
    let rh = g.mul(r, h)?;
    let xrh = g.concat(&[x, rh])?;
    let cand = conv(g, p, &format!("{name}.conv_h"), xrh, 1)?;
    let cand = g.tanh(cand)?;
    let delta = g.sub(cand, h)?;
    let step = g.mul(z, delta)?;
    g.add(h, step)
}

/// Recurrent block: two stacked GRU layers over the sequence, then a 1×1
/// projection of the last hidden state.
fn rnn_block(g: &mut Graph, p: &Bound, k: usize, seq: &[Var]) -> Result<Var> {
    let shape = g.value(seq[0])?.raw_dim();
    let mut h1 = g.constant(Tensor::zeros(shape.clone()));
    let mut h2 = g.constant(Tensor::zeros(shape));
    for &x in seq {
        h1 = conv_gru_step(g, p, &format!("rnn_{k}.gru_1"), x, h1)?;
        h2 = conv_gru_step(g, p, &format!("rnn_{k}.gru_2"), h1, h2)?;
    }
    conv(g, p, &format!("rnn_{k}.proj"), h2, 1)
}

/// Generator forward pass over a sequence of `[2, H, W]` (real, imaginary)
/// inputs; returns `[2, H, W]` (amplitude, phase).
pub fn rhm_forward(g: &mut Graph, p: &Bound, inputs: &[Var]) -> Result<Var> {
    let first = inputs.first().ok_or_else(|| Error::Config("empty input sequence".into()))?;
    let shape = g.value(*first)?.shape().to_vec();
    let div = 1 << DEPTH;
    if shape.len() != 3 || shape[0] != IN_CHANNELS || shape[1] % div != 0 || shape[2] % div != 0 || shape[1] == 0 || shape[2] == 0 {
        return Err(Error::shape(
            "rhm_forward",
            format!("input {shape:?}: need [{IN_CHANNELS}, H, W] with H, W positive multiples of {div}"),
        ));
    }
    for &x in inputs {
        if g.value(x)?.shape() != shape.as_slice() {
            return Err(Error::shape("rhm_forward", "sequence elements differ in shape"));
        }
    }
    // features[k][t]: encoder output at scale k+1 for element t
    let mut features: Vec<Vec<Var>> = vec![Vec::with_capacity(inputs.len()); DEPTH];
    for &x in inputs {
        let mut cur = x;
        for k in 1..=DEPTH {
            cur = conv_leaky(g, p, &format!("down_conv_{k}.conv_a"), cur, 2)?;
            cur = conv_leaky(g, p, &format!("down_conv_{k}.conv_b"), cur, 1)?;
            features[k - 1].push(cur);
        }
    }
    let skips: Vec<Var> = (1..=DEPTH).map(|k| rnn_block(g, p, k, &features[k - 1])).collect::<Result<_>>()?;

    let mut cur = skips[DEPTH - 1];
    for k in (2..=DEPTH).rev() {
        let up = g.conv_transpose2x2(cur, p.get(&format!("up_conv_{k}.up.weight"))?, p.get(&format!("up_conv_{k}.up.bias"))?)?;
        let cat = g.concat(&[up, skips[k - 2]])?;
        cur = conv_leaky(g, p, &format!("up_conv_{k}.conv"), cat, 1)?;
    }
    let up = g.conv_transpose2x2(cur, p.get("up_conv_1.up.weight")?, p.get("up_conv_1.up.bias")?)?;
    let cur = conv_leaky(g, p, "up_conv_1.conv", up, 1)?;
    conv(g, p, "head", cur, 1)
}

/// Discriminator score `[1]` of an `[2, H, W]` (amplitude, phase) image.
pub fn disc_forward(g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
    let mut cur = x;
    for k in 1..=DEPTH {
        cur = conv_leaky(g, p, &format!("disc_{k}"), cur, 2)?;
    }
    let pooled = g.global_mean(cur)?;
    g.linear(pooled, p.get("disc_head.weight")?, p.get("disc_head.bias")?)
}

/// `[2, H, W]` (real, imaginary) network input.
pub fn field_to_input(f: &ComplexField) -> Tensor {
    let d = f.data();
    let re = d.mapv(|c| c.re);
    let im = d.mapv(|c| c.im);
    ndarray::stack(Axis(0), &[re.view(), im.view()]).unwrap().into_dyn()
}

/// `[2, H, W]` (amplitude, phase) training target.
pub fn field_to_target(f: &ComplexField) -> Tensor {
    let amp = f.amplitude();
    let phase = f.phase();
    ndarray::stack(Axis(0), &[amp.view(), phase.view()]).unwrap().into_dyn()
}

/// Complex field from an (amplitude, phase) output tensor.
pub fn output_to_field(t: &Tensor, pixel_pitch: f64, wavelength: f64) -> Result<ComplexField> {
    let t3: Array3<f64> = t
        .view()
        .into_dimensionality()
        .map_err(|_| Error::shape("output_to_field", format!("{:?}", t.shape())))?
        .to_owned();
    if t3.dim().0 != OUT_CHANNELS {
        return Err(Error::shape("output_to_field", format!("{} channels", t3.dim().0)));
    }
    let (_, h, w) = t3.dim();
    let data = Array2::from_shape_fn((h, w), |(i, j)| Complex64::from_polar(t3[[0, i, j]], t3[[1, i, j]]));
    Ok(ComplexField::new(data, pixel_pitch, wavelength)?)
}

/// Reconstruct one field of view with fixed parameters.
pub fn reconstruct(gen: &ParameterSet, inputs: &[ComplexField]) -> Result<ComplexField> {
    let first = inputs.first().ok_or_else(|| Error::Config("empty input sequence".into()))?;
    let mut g = Graph::new();
    let p = gen.bind_constant(&mut g);
    let xs: Vec<Var> = inputs.iter().map(|f| g.constant(field_to_input(f))).collect();
    let y = rhm_forward(&mut g, &p, &xs)?;
    output_to_field(g.value(y)?, first.pixel_pitch(), first.wavelength())
}
