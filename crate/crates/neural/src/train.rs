//! Adversarial training, early stopping and frozen-backbone transfer.

use std::collections::HashMap;
use std::time::Instant;

use ndarray::{Axis, Ix3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use holorec::simulator::{dihedral, Pair};

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor, Var};
use crate::loss::{discriminator_loss, generator_loss, mae_loss, LossWeights, DEFAULT_SSIM_SCALES};
use crate::model::{disc_forward, field_to_input, field_to_target, init_discriminator, init_generator, rhm_forward, ModelConfig};
use crate::optim::{Adam, AdamConfig};
use crate::params::{count_parameters, ParamCounts, ParameterSet};

/// Generator, discriminator and the configuration they were built from.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    pub gen: ParameterSet,
    pub disc: ParameterSet,
}

impl Network {
    pub fn new(config: ModelConfig) -> Result<Self> {
        Ok(Self {
            gen: init_generator(&config)?,
            disc: init_discriminator(&config)?,
            config,
        })
    }

    /// Both parameter sets match the layout implied by the configuration.
    pub fn check_layout(&self) -> Result<()> {
        self.gen.check_layout(&init_generator(&self.config)?)?;
        self.disc.check_layout(&init_discriminator(&self.config)?)
    }
}

/// A training pair as network tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub inputs: Vec<Tensor>,
    pub target: Tensor,
}

impl TrainSample {
    pub fn from_pair(pair: &Pair) -> Self {
        Self {
            inputs: pair.inputs.iter().map(field_to_input).collect(),
            target: field_to_target(&pair.target),
        }
    }

    fn transformed(&self, element: usize) -> Self {
        if element == 0 {
            return self.clone();
        }
        Self {
            inputs: self.inputs.iter().map(|t| dihedral_tensor(t, element)).collect(),
            target: dihedral_tensor(&self.target, element),
        }
    }
}

fn dihedral_tensor(t: &Tensor, element: usize) -> Tensor {
    let t3 = t.view().into_dimensionality::<Ix3>().expect("[C, H, W] tensor");
    let chans: Vec<_> = t3.axis_iter(Axis(0)).map(|c| dihedral(&c.to_owned(), element)).collect();
    let views: Vec<_> = chans.iter().map(|c| c.view()).collect();
    ndarray::stack(Axis(0), &views).unwrap().into_dyn()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gen_lr: f64,
    pub disc_lr: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: Option<f64>,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Stop after this many epochs without a new best validation MAE.
    pub patience: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    /// Random dihedral transform per sample and epoch.
    pub augment: bool,
    pub loss: LossWeights,
    pub ssim_scales: usize,
    /// Validation MAE whose first crossing is reported as epochs-to-target.
    pub target_val_mae: Option<f64>,
    /// End training as soon as the target is reached.
    pub stop_at_target: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::pretrain()
    }
}

impl TrainConfig {
    /// Pretraining rates 1e-5 / 1e-6, constant.
    pub fn pretrain() -> Self {
        Self {
            gen_lr: 1e-5,
            disc_lr: 1e-6,
            lr_decay: None,
            adam: AdamConfig::default(),
            max_epochs: 200,
            patience: Some(20),
            batch_size: 4,
            seed: 0,
            augment: true,
            loss: LossWeights::default(),
            ssim_scales: DEFAULT_SSIM_SCALES,
            target_val_mae: None,
            stop_at_target: false,
        }
    }

    /// Transfer rates 2e-4 / 2e-5, decaying by 0.97 per epoch.
    pub fn transfer() -> Self {
        Self {
            gen_lr: 2e-4,
            disc_lr: 2e-5,
            lr_decay: Some(0.97),
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate_ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(rate_ok(self.gen_lr) && rate_ok(self.disc_lr)) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if let Some(d) = self.lr_decay {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config(format!("lr decay {d} outside (0, 1]")));
            }
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("max_epochs and batch_size must be positive".into()));
        }
        if self.ssim_scales == 0 {
            return Err(Error::Config("ssim_scales must be positive".into()));
        }
        Ok(())
    }

    fn rates(&self, epoch: usize) -> (f64, f64) {
        let f = self.lr_decay.map_or(1.0, |d| d.powi(epoch as i32 - 1));
        (self.gen_lr * f, self.disc_lr * f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    TargetReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
    pub best_val_mae: f64,
    pub best_epoch: usize,
    pub epochs_to_target: Option<usize>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mae,val_mae,seconds\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_mae, r.val_mae, r.seconds));
        }
        out
    }

    pub fn final_val_mae(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |r| r.val_mae)
    }

    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|r| r.seconds).sum::<f64>() / self.epochs.len() as f64
    }
}

fn accumulate(into: &mut HashMap<String, Tensor>, g: &Graph, bound: &crate::params::Bound, grads: &mut crate::graph::Gradients, weight: f64) -> Result<()> {
    for (name, v) in bound.iter() {
        if !g.requires_grad(v)? {
            continue;
        }
        if let Some(t) = grads.take(v) {
            match into.get_mut(name) {
                Some(acc) => acc.scaled_add(weight, &t),
                None => {
                    into.insert(name.to_string(), t * weight);
                }
            }
        }
    }
    Ok(())
}

fn all_finite(grads: &HashMap<String, Tensor>) -> bool {
    grads.values().all(|t| t.iter().all(|v| v.is_finite()))
}

struct StepOutcome {
    mae: f64,
    finite: bool,
}

/// Gradients of one batch, averaged over its samples.
fn batch_gradients(
    net: &Network,
    batch: &[TrainSample],
    cfg: &TrainConfig,
    gen_grads: &mut HashMap<String, Tensor>,
    disc_grads: &mut HashMap<String, Tensor>,
) -> Result<StepOutcome> {
    let w = 1.0 / batch.len() as f64;
    let (mut mae, mut finite) = (0.0, true);
    for s in batch {
        let mut g = Graph::new();
        let gp = net.gen.bind(&mut g);
        let dp = net.disc.bind(&mut g);
        let xs: Vec<Var> = s.inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = g.constant(s.target.clone());
        let out = rhm_forward(&mut g, &gp, &xs)?;
        let d_fake = disc_forward(&mut g, &dp, out)?;
        let lg = generator_loss(&mut g, out, y, d_fake, &cfg.loss, cfg.ssim_scales)?;
        let detached = g.detach(out)?;
        let d_fake_d = disc_forward(&mut g, &dp, detached)?;
        let d_real = disc_forward(&mut g, &dp, y)?;
        let ld = discriminator_loss(&mut g, d_fake_d, d_real)?;

        let (lg_v, ld_v) = (g.scalar(lg.total)?, g.scalar(ld)?);
        finite &= lg_v.is_finite() && ld_v.is_finite();
        mae += g.scalar(lg.mae)? * w;

        let mut grads = g.backward(lg.total)?;
        accumulate(gen_grads, &g, &gp, &mut grads, w)?;
        let mut grads = g.backward(ld)?;
        accumulate(disc_grads, &g, &dp, &mut grads, w)?;
    }
    Ok(StepOutcome { mae, finite })
}

/// Mean validation `L_MAE` of the generator.
pub fn evaluate_mae(gen: &ParameterSet, samples: &[TrainSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let mut g = Graph::new();
        let p = gen.bind_constant(&mut g);
        let xs: Vec<Var> = s.inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = g.constant(s.target.clone());
        let out = rhm_forward(&mut g, &p, &xs)?;
        let m = mae_loss(&mut g, out, y)?;
        total += g.scalar(m)?;
    }
    Ok(total / samples.len() as f64)
}

/// Train generator and discriminator with alternating Adam updates.
///
/// On a non-finite loss or gradient the parameters are left at their last
/// finite values and [`Error::Diverged`] is returned.
pub fn train(net: &mut Network, train_set: &[TrainSample], val_set: &[TrainSample], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gen_opt = Adam::new(cfg.adam);
    let mut disc_opt = Adam::new(cfg.adam);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::new();
    let (mut best_val, mut best_epoch) = (f64::INFINITY, 0);
    let mut epochs_to_target = None;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let (gen_lr, disc_lr) = cfg.rates(epoch);
        order.shuffle(&mut rng);
        let mut train_mae = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<TrainSample> = chunk
                .iter()
                .map(|&i| {
                    let element = if cfg.augment { rng.random_range(0..8) } else { 0 };
                    train_set[i].transformed(element)
                })
                .collect();
            let mut gen_grads = HashMap::new();
            let mut disc_grads = HashMap::new();
            let step = batch_gradients(net, &batch, cfg, &mut gen_grads, &mut disc_grads)?;
            if !(step.finite && all_finite(&gen_grads) && all_finite(&disc_grads)) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            train_mae += step.mae * chunk.len() as f64;
            gen_opt.step(&mut net.gen, &gen_grads, gen_lr);
            disc_opt.step(&mut net.disc, &disc_grads, disc_lr);
        }
        let val_mae = evaluate_mae(&net.gen, val_set)?;
        epochs.push(EpochRecord {
            epoch,
            train_mae: train_mae / train_set.len() as f64,
            val_mae,
            seconds: start.elapsed().as_secs_f64(),
        });
        if val_mae < best_val {
            best_val = val_mae;
            best_epoch = epoch;
        }
        if epochs_to_target.is_none() && cfg.target_val_mae.is_some_and(|t| val_mae <= t) {
            epochs_to_target = Some(epoch);
            if cfg.stop_at_target {
                stop = StopReason::TargetReached;
                break;
            }
        }
        if cfg.patience.is_some_and(|p| epoch - best_epoch >= p) {
            stop = StopReason::EarlyStop;
            break;
        }
    }
    Ok(TrainLog {
        epochs,
        stop,
        best_val_mae: best_val,
        best_epoch,
        epochs_to_target,
    })
}

#[derive(Clone, Debug)]
pub struct TransferOutcome {
    pub network: Network,
    pub log: TrainLog,
    pub summary: ParamCounts,
}

/// Fine-tune a pretrained network. With `freeze_backbone` every recurrent
/// block is frozen; otherwise every parameter trains.
pub fn transfer(pretrained: &Network, freeze_backbone: bool, train_set: &[TrainSample], val_set: &[TrainSample], cfg: &TrainConfig) -> Result<TransferOutcome> {
    pretrained.check_layout()?;
    let mut network = pretrained.clone();
    network.gen.unfreeze_all();
    network.disc.unfreeze_all();
    network.gen.set_rnn_frozen(freeze_backbone);
    let summary = count_parameters(&network.gen);
    let log = train(&mut network, train_set, val_set, cfg)?;
    Ok(TransferOutcome { network, log, summary })
}
