use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "holorec", version, about = "Lens-free hologram simulation, reconstruction and learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command.
#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic dataset (objects, 8-height stacks, network pairs).
    Simulate(SimulateArgs),
    /// Multi-height phase retrieval of a hologram stack directory.
    Reconstruct(ReconstructArgs),
    /// Estimate the sample-to-sensor distance of one hologram.
    Autofocus(AutofocusArgs),
    /// Fuse sub-pixel-shifted frames onto a finer grid.
    Psr(PsrArgs),
    /// Compare a reconstructed field with ground truth.
    Metrics(MetricsArgs),
    /// Train the recurrent network from scratch.
    Train(TrainArgs),
    /// Fine-tune a trained network on new data.
    Transfer(TransferArgs),
    /// Run a scratch / frozen / full transfer grid.
    Experiment(ExperimentArgs),
    /// Re-run a recorded command and compare output hashes.
    Replay(ReplayArgs),
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Simulation spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ZSearch {
    /// Lower end of the autofocus search range, μm.
    #[arg(long, default_value_t = 400.0)]
    pub z_min: f64,
    /// Upper end of the autofocus search range, μm.
    #[arg(long, default_value_t = 600.0)]
    pub z_max: f64,
    /// Coarse grid step, μm.
    #[arg(long, default_value_t = 10.0)]
    pub z_step: f64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ReconstructArgs {
    /// Directory of hologram files with sidecars.
    pub stack: PathBuf,
    /// Replace each hologram's z2 with its autofocus estimate.
    #[arg(long, conflicts_with = "z_list")]
    pub autofocus: bool,
    /// Comma-separated z2 values (μm), one per hologram in file-name order.
    #[arg(long, value_delimiter = ',')]
    pub z_list: Option<Vec<f64>>,
    /// Phase-retrieval sweeps; 0 gives zero-phase back-propagation.
    #[arg(long, default_value_t = 30)]
    pub iters: usize,
    /// Ground-truth field for metrics.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub search: ZSearch,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct AutofocusArgs {
    /// Hologram file (.fld or .png) with sidecar.
    pub hologram: PathBuf,
    #[command(flatten)]
    pub search: ZSearch,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct PsrArgs {
    /// Directory of low-resolution frames.
    pub frames: PathBuf,
    /// Fine-grid factor.
    #[arg(long)]
    pub factor: usize,
    /// Registration upsampling factor.
    #[arg(long, default_value_t = 20)]
    pub upsample: usize,
    #[arg(long, default_value_t = 0)]
    pub reference: usize,
    /// Shift table CSV (frame, dx, dy) instead of registration.
    #[arg(long, conflicts_with = "use_metadata")]
    pub shift_table: Option<PathBuf>,
    /// Use the shifts recorded in the frame sidecars instead of registration.
    #[arg(long)]
    pub use_metadata: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct MetricsArgs {
    /// Reconstructed field.
    pub field: PathBuf,
    /// Ground-truth field.
    #[arg(long)]
    pub truth: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Training dataset directory (from `simulate`).
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset directory.
    #[arg(long)]
    pub val: PathBuf,
    /// Job config (JSON with `model` and `train` sections); defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TransferArgs {
    /// Checkpoint directory of the pretrained network.
    #[arg(long)]
    pub pretrained: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// Freeze every recurrent block during fine-tuning.
    #[arg(long)]
    pub freeze_backbone: bool,
    /// Training config (JSON); defaults to the transfer schedule.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ExperimentArgs {
    /// Grid spec (JSON).
    #[arg(long)]
    pub grid: PathBuf,
    /// Pretrained checkpoint; pretrained from the grid's source family when absent.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A `run_manifest.json` written by an earlier command.
    pub manifest: PathBuf,
    /// Fresh output directory for the re-run.
    #[arg(long)]
    pub out: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Reconstruct(_) => "reconstruct",
            Command::Autofocus(_) => "autofocus",
            Command::Psr(_) => "psr",
            Command::Metrics(_) => "metrics",
            Command::Train(_) => "train",
            Command::Transfer(_) => "transfer",
            Command::Experiment(_) => "experiment",
            Command::Replay(_) => "replay",
        }
    }

    /// Shared flags; `None` for `replay`.
    pub fn common_mut(&mut self) -> Option<&mut Common> {
        match self {
            Command::Simulate(a) => Some(&mut a.common),
            Command::Reconstruct(a) => Some(&mut a.common),
            Command::Autofocus(a) => Some(&mut a.common),
            Command::Psr(a) => Some(&mut a.common),
            Command::Metrics(a) => Some(&mut a.common),
            Command::Train(a) => Some(&mut a.common),
            Command::Transfer(a) => Some(&mut a.common),
            Command::Experiment(a) => Some(&mut a.common),
            Command::Replay(_) => None,
        }
    }

    /// Every input path the command reads.
    pub fn inputs_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            Command::Simulate(a) => vec![&mut a.spec],
            Command::Reconstruct(a) => {
                let mut v = vec![&mut a.stack];
                v.extend(a.truth.as_mut());
                v
            }
            Command::Autofocus(a) => vec![&mut a.hologram],
            Command::Psr(a) => {
                let mut v = vec![&mut a.frames];
                v.extend(a.shift_table.as_mut());
                v
            }
            Command::Metrics(a) => vec![&mut a.field, &mut a.truth],
            Command::Train(a) => {
                let mut v = vec![&mut a.data, &mut a.val];
                v.extend(a.config.as_mut());
                v
            }
            Command::Transfer(a) => {
                let mut v = vec![&mut a.pretrained, &mut a.data, &mut a.val];
                v.extend(a.config.as_mut());
                v
            }
            Command::Experiment(a) => {
                let mut v = vec![&mut a.grid];
                v.extend(a.pretrained.as_mut());
                v
            }
            Command::Replay(a) => vec![&mut a.manifest],
        }
    }
}
