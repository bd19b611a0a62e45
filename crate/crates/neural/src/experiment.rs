//! Transfer-learning experiment grid: pretrain on a source scene family,
//! then compare training from scratch with frozen-backbone and full
//! fine-tuning on a target family.
//!
//! For every (M_t, N_t ratio, seed) cell the scratch model runs first; its
//! final validation MAE becomes the threshold the two transfer modes race to.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use holorec::dataset::{make_dataset, DatasetSpec, Split};
use holorec::metrics::{ecc, rmse};
use holorec::simulator::{child_seed, Pair, SceneKind, SceneSpec};

use crate::error::{Error, Result};
use crate::model::{reconstruct, ModelConfig};
use crate::params::{count_parameters, ParamCounts};
use crate::train::{train, transfer, Network, TrainConfig, TrainLog, TrainSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Scratch,
    TransferFrozen,
    TransferFull,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Scratch, Mode::TransferFrozen, Mode::TransferFull];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Scratch => "scratch",
            Mode::TransferFrozen => "transfer_frozen",
            Mode::TransferFull => "transfer_full",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub base_channels: usize,
    pub dims: (usize, usize),
    pub source_scene: SceneKind,
    pub source_train: usize,
    pub source_val: usize,
    pub source_m: usize,
    pub pretrain: TrainConfig,
    pub target_scene: SceneKind,
    /// Target-family training FOVs at ratio 1.
    pub target_train: usize,
    pub target_val: usize,
    pub target_test: usize,
    pub m_t: Vec<usize>,
    /// Fractions of `target_train` used for training.
    pub n_t_ratio: Vec<f64>,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    /// Schedule shared by every mode on the target family.
    pub finetune: TrainConfig,
    /// Epoch cap for the transfer modes; `None` uses `finetune.max_epochs`.
    pub transfer_epochs: Option<usize>,
    /// Stop transfer runs once they reach the scratch threshold.
    pub stop_at_threshold: bool,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            base_channels: 4,
            dims: (64, 64),
            source_scene: SceneKind::MixedTexture,
            source_train: 32,
            source_val: 4,
            source_m: 5,
            pretrain: TrainConfig {
                gen_lr: 5e-4,
                disc_lr: 5e-5,
                max_epochs: 40,
                patience: None,
                augment: false,
                ..TrainConfig::pretrain()
            },
            target_scene: SceneKind::PhaseBlobs,
            target_train: 8,
            target_val: 4,
            target_test: 4,
            m_t: vec![2],
            n_t_ratio: vec![1.0],
            seeds: vec![0, 1, 2],
            modes: Mode::ALL.to_vec(),
            finetune: TrainConfig {
                max_epochs: 200,
                patience: None,
                augment: false,
                ..TrainConfig::transfer()
            },
            transfer_epochs: None,
            stop_at_threshold: false,
            seed: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_channels", self.base_channels),
            ("source_train", self.source_train),
            ("source_val", self.source_val),
            ("source_m", self.source_m),
            ("target_train", self.target_train),
            ("target_val", self.target_val),
            ("target_test", self.target_test),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.m_t.is_empty() || self.m_t.contains(&0) {
            return Err(Error::Config("m_t must list positive sequence lengths".into()));
        }
        if self.n_t_ratio.is_empty() || self.n_t_ratio.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::Config("n_t_ratio values must lie in (0, 1]".into()));
        }
        if self.seeds.is_empty() || self.modes.is_empty() {
            return Err(Error::Config("seeds and modes must be non-empty".into()));
        }
        if self.transfer_epochs == Some(0) {
            return Err(Error::Config("transfer_epochs must be positive".into()));
        }
        self.pretrain.validate()?;
        self.finetune.validate()
    }

    fn dataset(&self, kind: SceneKind) -> DatasetSpec {
        DatasetSpec {
            scene: SceneSpec {
                kind,
                ..SceneSpec::default()
            },
            dims: self.dims,
            ..DatasetSpec::default()
        }
    }

    fn samples(&self, kind: SceneKind, n: usize, m: usize, split: Split, seed: u64) -> Result<Vec<TrainSample>> {
        let ds = make_dataset(&self.dataset(kind), n, m, split, seed)?;
        Ok(ds.pairs().iter().map(TrainSample::from_pair).collect())
    }

    fn n_train(&self, ratio: f64) -> usize {
        ((ratio * self.target_train as f64).round() as usize).max(1)
    }
}

/// Pretrain on the source family.
pub fn pretrain_source(spec: &ExperimentSpec) -> Result<(Network, TrainLog)> {
    spec.validate()?;
    let base = child_seed(spec.seed, 0x5052);
    let train_set = spec.samples(spec.source_scene, spec.source_train, spec.source_m, Split::Train, base)?;
    let val_set = spec.samples(spec.source_scene, spec.source_val, spec.source_m, Split::Val, base)?;
    let mut net = Network::new(ModelConfig {
        base_channels: spec.base_channels,
        sequence_len: spec.source_m,
        seed: child_seed(spec.seed, 0x4d4f),
    })?;
    let cfg = TrainConfig {
        seed: spec.seed,
        ..spec.pretrain.clone()
    };
    let log = train(&mut net, &train_set, &val_set, &cfg)?;
    Ok((net, log))
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub mode: Mode,
    pub m_t: usize,
    pub n_t_ratio: f64,
    pub n_train: usize,
    pub seed: u64,
    pub epochs_run: usize,
    pub final_val_mae: f64,
    pub best_val_mae: f64,
    pub test_rmse: f64,
    pub test_ecc: f64,
    /// Scratch model's final validation MAE for this cell.
    pub threshold: f64,
    /// First epoch whose validation MAE is at or below the threshold.
    pub epochs_to_threshold: Option<usize>,
    pub wall_seconds: f64,
    pub mean_epoch_seconds: f64,
    pub trainable: usize,
    pub total: usize,
    /// Set when the cell failed; the numeric fields are then meaningless.
    pub error: Option<String>,
}

/// Mean amplitude RMSE and complex ECC of the generator on a test set.
pub fn test_metrics(net: &Network, pairs: &[Pair]) -> Result<(f64, f64)> {
    let (mut r, mut e) = (0.0, 0.0);
    for p in pairs {
        let out = reconstruct(&net.gen, &p.inputs)?;
        r += rmse(&out.amplitude(), &p.target.amplitude())?;
        e += ecc(out.data(), p.target.data())?;
    }
    let n = pairs.len() as f64;
    Ok((r / n, e / n))
}

fn first_at_or_below(log: &TrainLog, threshold: f64) -> Option<usize> {
    log.epochs.iter().find(|e| e.val_mae <= threshold).map(|e| e.epoch)
}

impl ExperimentRow {
    fn failed(mode: Mode, m_t: usize, n_t_ratio: f64, n_train: usize, seed: u64, threshold: f64, err: &Error) -> Self {
        Self {
            mode,
            m_t,
            n_t_ratio,
            n_train,
            seed,
            epochs_run: 0,
            final_val_mae: f64::NAN,
            best_val_mae: f64::NAN,
            test_rmse: f64::NAN,
            test_ecc: f64::NAN,
            threshold,
            epochs_to_threshold: None,
            wall_seconds: 0.0,
            mean_epoch_seconds: 0.0,
            trainable: 0,
            total: 0,
            error: Some(err.to_string()),
        }
    }
}

struct Cell<'a> {
    m_t: usize,
    ratio: f64,
    n_train: usize,
    seed: u64,
    train_set: Vec<TrainSample>,
    val_set: Vec<TrainSample>,
    test: Vec<Pair>,
    finetune: TrainConfig,
    spec: &'a ExperimentSpec,
}

impl Cell<'_> {
    fn row(&self, mode: Mode, net: &Network, log: &TrainLog, threshold: f64, wall: f64, counts: ParamCounts) -> Result<ExperimentRow> {
        let (test_rmse, test_ecc) = test_metrics(net, &self.test)?;
        Ok(ExperimentRow {
            mode,
            m_t: self.m_t,
            n_t_ratio: self.ratio,
            n_train: self.n_train,
            seed: self.seed,
            epochs_run: log.epochs.len(),
            final_val_mae: log.final_val_mae(),
            best_val_mae: log.best_val_mae,
            test_rmse,
            test_ecc,
            threshold,
            epochs_to_threshold: first_at_or_below(log, threshold),
            wall_seconds: wall,
            mean_epoch_seconds: log.mean_epoch_seconds(),
            trainable: counts.trainable,
            total: counts.total,
            error: None,
        })
    }

    fn scratch(&self, base: u64) -> Result<(Network, TrainLog, f64)> {
        let start = Instant::now();
        let mut net = Network::new(ModelConfig {
            base_channels: self.spec.base_channels,
            sequence_len: self.m_t,
            seed: child_seed(base, 0x5343),
        })?;
        let log = train(&mut net, &self.train_set, &self.val_set, &self.finetune)?;
        Ok((net, log, start.elapsed().as_secs_f64()))
    }

    fn transfer(&self, mode: Mode, pretrained: &Network, threshold: f64) -> Result<ExperimentRow> {
        let cfg = TrainConfig {
            max_epochs: self.spec.transfer_epochs.unwrap_or(self.finetune.max_epochs),
            target_val_mae: Some(threshold),
            stop_at_target: self.spec.stop_at_threshold,
            ..self.finetune.clone()
        };
        let start = Instant::now();
        let out = transfer(pretrained, mode == Mode::TransferFrozen, &self.train_set, &self.val_set, &cfg)?;
        let wall = start.elapsed().as_secs_f64();
        self.row(mode, &out.network, &out.log, threshold, wall, out.summary)
    }
}

/// Run every grid cell. `pretrained` is required when a transfer mode is
/// listed. A failing cell is recorded in its row's `error` field and the
/// grid carries on; `progress` sees each row as it completes.
pub fn run_experiment(spec: &ExperimentSpec, pretrained: Option<&Network>, mut progress: impl FnMut(&ExperimentRow)) -> Result<Vec<ExperimentRow>> {
    spec.validate()?;
    let needs_source = spec.modes.iter().any(|m| *m != Mode::Scratch);
    let pretrained = match pretrained {
        Some(p) => Some(p),
        None if needs_source => return Err(Error::Config("transfer modes need a pretrained network".into())),
        None => None,
    };
    let mut rows = Vec::new();
    let mut emit = |row: ExperimentRow, rows: &mut Vec<ExperimentRow>| {
        progress(&row);
        rows.push(row);
    };
    for &m_t in &spec.m_t {
        for &ratio in &spec.n_t_ratio {
            for &seed in &spec.seeds {
                let base = child_seed(child_seed(spec.seed, 0x5447), seed);
                let n_train = spec.n_train(ratio);
                let data = (|| -> Result<_> {
                    let train_set = spec.samples(spec.target_scene, n_train, m_t, Split::Train, base)?;
                    let val_set = spec.samples(spec.target_scene, spec.target_val, m_t, Split::Val, base)?;
                    let test = make_dataset(&spec.dataset(spec.target_scene), spec.target_test, m_t, Split::Test, base)?.pairs();
                    Ok((train_set, val_set, test))
                })();
                let (train_set, val_set, test) = match data {
                    Ok(d) => d,
                    Err(e) => {
                        for &mode in &spec.modes {
                            emit(ExperimentRow::failed(mode, m_t, ratio, n_train, seed, f64::NAN, &e), &mut rows);
                        }
                        continue;
                    }
                };
                let cell = Cell {
                    m_t,
                    ratio,
                    n_train,
                    seed,
                    train_set,
                    val_set,
                    test,
                    finetune: TrainConfig {
                        seed,
                        ..spec.finetune.clone()
                    },
                    spec,
                };
                // The scratch run defines the threshold, so it always runs.
                let (scratch, slog, scratch_wall) = match cell.scratch(base) {
                    Ok(s) => s,
                    Err(e) => {
                        for &mode in &spec.modes {
                            emit(ExperimentRow::failed(mode, m_t, ratio, n_train, seed, f64::NAN, &e), &mut rows);
                        }
                        continue;
                    }
                };
                let threshold = slog.final_val_mae();
                for &mode in &spec.modes {
                    let row = match mode {
                        Mode::Scratch => cell.row(mode, &scratch, &slog, threshold, scratch_wall, count_parameters(&scratch.gen)),
                        _ => cell.transfer(mode, pretrained.expect("checked above"), threshold),
                    };
                    let row = row.unwrap_or_else(|e| ExperimentRow::failed(mode, m_t, ratio, n_train, seed, threshold, &e));
                    emit(row, &mut rows);
                }
            }
        }
    }
    Ok(rows)
}
