use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use holorec::autofocus::autofocus;
use holorec::dataset::{load_dataset, make_dataset, save_dataset, DatasetSpec, Split};
use holorec::io::{load_field, load_hologram, load_stack, save_field, save_hologram, save_stack, stack_files};
use holorec::metrics::{report, sig6};
use holorec::phase_retrieval::{mhpr, MhprConfig};
use holorec::simulator::{acquire, child_seed, AcquisitionSpec};
use holorec::superres::{shift_and_add, ShiftTable};
use holorec::Hologram;
use holorec_neural::checkpoint::{load_checkpoint, save_checkpoint};
use holorec_neural::experiment::{pretrain_source, run_experiment, ExperimentRow, ExperimentSpec, Mode};
use holorec_neural::train::TrainLog;
use holorec_neural::{count_parameters, ModelConfig, Network, ParamCounts, TrainConfig, TrainSample};

use crate::cli::{
    AutofocusArgs, Command, ExperimentArgs, MetricsArgs, PsrArgs, ReconstructArgs, SimulateArgs, TrainArgs, TransferArgs,
};
use crate::error::{CliError, Result};

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, serde_json::to_vec_pretty(value)?)
}

/// Config from the replay override, else the file, else defaults; returned
/// alongside its fully resolved JSON.
fn resolve<T: DeserializeOwned + Serialize + Default>(path: Option<&Path>, replay: Option<&Value>) -> Result<T> {
    Ok(match (replay, path) {
        (Some(v), _) => serde_json::from_value(v.clone())?,
        (None, Some(p)) => serde_json::from_slice(&read(p)?)?,
        (None, None) => T::default(),
    })
}

fn resolved<T: Serialize>(config: &T) -> Result<Option<Value>> {
    Ok(Some(serde_json::to_value(config)?))
}

/// Run one command (never `replay`). Returns the resolved config to record.
pub fn execute(cmd: &Command, replay: Option<&Value>) -> Result<Option<Value>> {
    match cmd {
        Command::Simulate(a) => simulate(a, replay),
        Command::Reconstruct(a) => reconstruct(a, replay),
        Command::Autofocus(a) => focus(a),
        Command::Psr(a) => psr(a),
        Command::Metrics(a) => metrics(a),
        Command::Train(a) => train_cmd(a, replay),
        Command::Transfer(a) => transfer_cmd(a, replay),
        Command::Experiment(a) => experiment(a, replay),
        Command::Replay(_) => Err(CliError::input("replay cannot be nested")),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    pub dataset: DatasetSpec,
    pub n_fovs: usize,
    pub m_inputs: usize,
    pub split: Split,
    /// Also record k×k sub-pixel-shifted frames of every object at z̄₂.
    pub psr_factor: Option<usize>,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            n_fovs: 4,
            m_inputs: 2,
            split: Split::Train,
            psr_factor: None,
        }
    }
}

fn simulate(a: &SimulateArgs, replay: Option<&Value>) -> Result<Option<Value>> {
    let spec: SimulateSpec = resolve(Some(&a.spec), replay)?;
    let out = &a.common.out;
    let ds = make_dataset(&spec.dataset, spec.n_fovs, spec.m_inputs, spec.split, a.common.seed)?;
    save_dataset(out, &ds)?;
    if let Some(k) = spec.psr_factor {
        for s in &ds.samples {
            let acq = AcquisitionSpec {
                z2_list: vec![spec.dataset.acquisition.optical.zbar2_um],
                psr_pattern: Some(k),
                seed: child_seed(s.seed, 3),
                ..spec.dataset.acquisition.clone()
            };
            save_stack(&out.join(format!("fov_{:04}/psr", s.index)), &acquire(&s.object, &acq)?)?;
        }
    }
    println!("{} fields of view, {} inputs each, written to {}", ds.len(), spec.m_inputs, out.display());
    resolved(&spec)
}

fn reconstruct(a: &ReconstructArgs, replay: Option<&Value>) -> Result<Option<Value>> {
    let out = &a.common.out;
    let mut stack = load_stack(&a.stack)?;
    if let Some(z) = &a.z_list {
        stack = stack.with_z2(z)?;
    } else if a.autofocus {
        let mut csv = String::from("hologram,z_hat_um,score,status\n");
        let mut z_hat = Vec::with_capacity(stack.len());
        for (i, h) in stack.holograms().iter().enumerate() {
            let f = autofocus(h, stack.wavelength(), (a.search.z_min, a.search.z_max), a.search.z_step)?;
            csv.push_str(&format!("{i},{},{},{}\n", f.z_hat, f.score, serde_json::to_value(f.status)?.as_str().unwrap_or("")));
            z_hat.push(f.z_hat);
        }
        write(&out.join("focus.csv"), csv)?;
        stack = stack.with_z2(&z_hat)?;
    }
    let cfg = match replay {
        Some(v) => serde_json::from_value(v.clone())?,
        None => MhprConfig {
            iterations: a.iters,
            ..MhprConfig::default()
        },
    };
    let result = mhpr(&stack, &cfg)?;
    save_field(&out.join("field.fld"), &result.sample_field, None)?;
    write(&out.join("residuals.csv"), result.residuals_csv())?;
    if let Some(truth) = &a.truth {
        let rep = report(&result.sample_field, &load_field(truth)?)?;
        write_json(&out.join("metrics.json"), &rep)?;
        print!("{}", rep.to_table());
    }
    println!("reconstructed {} holograms, {} iterations", stack.len(), cfg.iterations);
    resolved(&cfg)
}

fn focus(a: &AutofocusArgs) -> Result<Option<Value>> {
    let (holo, meta) = load_hologram(&a.hologram)?;
    let f = autofocus(&holo, meta.wavelength_um, (a.search.z_min, a.search.z_max), a.search.z_step)?;
    let out = &a.common.out;
    write(&out.join("scan.csv"), f.to_csv())?;
    write_json(
        &out.join("focus.json"),
        &serde_json::json!({ "z_hat_um": f.z_hat, "score": f.score, "status": f.status }),
    )?;
    println!("z_hat_um {}", sig6(f.z_hat));
    Ok(None)
}

fn psr(a: &PsrArgs) -> Result<Option<Value>> {
    let mut frames = Vec::new();
    let mut wavelength = None;
    for path in stack_files(&a.frames)? {
        let (h, meta) = load_hologram(&path)?;
        wavelength.get_or_insert(meta.wavelength_um);
        frames.push(h);
    }
    let table = if let Some(path) = &a.shift_table {
        let text = String::from_utf8(read(path)?).map_err(|_| CliError::input(format!("{} is not UTF-8", path.display())))?;
        ShiftTable::from_csv(&text)?
    } else if a.use_metadata {
        ShiftTable::from_frames(&frames, a.reference)?
    } else {
        ShiftTable::estimate(&frames, a.reference, a.upsample)?
    };
    let fused = shift_and_add(&frames, &table, a.factor)?;
    let (h, w) = fused.dim();
    let out = &a.common.out;
    let z2 = frames[table.reference()].z2;
    save_hologram(&out.join("fused.fld"), &Hologram::new(fused, z2)?, wavelength.expect("at least one frame"))?;
    write(&out.join("shifts.csv"), table.to_csv())?;
    println!("fused {} frames onto {h}x{w}", frames.len());
    Ok(None)
}

fn metrics(a: &MetricsArgs) -> Result<Option<Value>> {
    let rep = report(&load_field(&a.field)?, &load_field(&a.truth)?)?;
    write_json(&a.common.out.join("metrics.json"), &rep)?;
    print!("{}", rep.to_table());
    Ok(None)
}

fn load_samples(dir: &Path) -> Result<Vec<TrainSample>> {
    Ok(load_dataset(dir)?.pairs().iter().map(TrainSample::from_pair).collect())
}

/// Deterministic part of a training log.
fn log_csv(log: &TrainLog) -> String {
    let mut out = String::from("epoch,train_mae,val_mae\n");
    for r in &log.epochs {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_mae, r.val_mae));
    }
    out
}

fn timing_csv(log: &TrainLog) -> String {
    let mut out = String::from("epoch,seconds\n");
    for r in &log.epochs {
        out.push_str(&format!("{},{}\n", r.epoch, r.seconds));
    }
    out
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    epochs: usize,
    stop: holorec_neural::train::StopReason,
    best_val_mae: f64,
    best_epoch: usize,
    final_val_mae: f64,
    parameters: &'a ParamCounts,
    trainable_fraction: f64,
}

fn write_training(dir: &Path, net: &Network, log: &TrainLog, counts: &ParamCounts) -> Result<()> {
    save_checkpoint(&dir.join("checkpoint"), net)?;
    write(&dir.join("log.csv"), log_csv(log))?;
    write(&dir.join("timing.csv"), timing_csv(log))?;
    write_json(
        &dir.join("summary.json"),
        &TrainSummary {
            epochs: log.epochs.len(),
            stop: log.stop,
            best_val_mae: log.best_val_mae,
            best_epoch: log.best_epoch,
            final_val_mae: log.final_val_mae(),
            parameters: counts,
            trainable_fraction: counts.trainable_fraction(),
        },
    )
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainJob {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn train_cmd(a: &TrainArgs, replay: Option<&Value>) -> Result<Option<Value>> {
    let mut job: TrainJob = resolve(a.config.as_deref(), replay)?;
    job.model.seed = a.common.seed;
    job.train.seed = a.common.seed;
    let (tr, va) = (load_samples(&a.data)?, load_samples(&a.val)?);
    let mut net = Network::new(job.model.clone())?;
    let log = holorec_neural::train(&mut net, &tr, &va, &job.train)?;
    let counts = count_parameters(&net.gen);
    write_training(&a.common.out, &net, &log, &counts)?;
    println!(
        "{} epochs, best val MAE {} at epoch {}",
        log.epochs.len(),
        sig6(log.best_val_mae),
        log.best_epoch
    );
    resolved(&job)
}

/// Fine-tuning schedule; the transfer rates are the default.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(transparent)]
struct TransferConfig(TrainConfig);

impl Default for TransferConfig {
    fn default() -> Self {
        Self(TrainConfig::transfer())
    }
}

fn transfer_cmd(a: &TransferArgs, replay: Option<&Value>) -> Result<Option<Value>> {
    let TransferConfig(mut cfg) = resolve(a.config.as_deref(), replay)?;
    cfg.seed = a.common.seed;
    let pretrained = load_checkpoint(&a.pretrained)?;
    let (tr, va) = (load_samples(&a.data)?, load_samples(&a.val)?);
    let out = holorec_neural::transfer(&pretrained, a.freeze_backbone, &tr, &va, &cfg)?;
    write_training(&a.common.out, &out.network, &out.log, &out.summary)?;
    println!(
        "trainable {} of {} parameters ({:.4}); best val MAE {} at epoch {}",
        out.summary.trainable,
        out.summary.total,
        out.summary.trainable_fraction(),
        sig6(out.log.best_val_mae),
        out.log.best_epoch
    );
    resolved(&cfg)
}

/// `results.csv` row: everything except wall-clock figures.
#[derive(Serialize)]
struct ResultRow<'a> {
    mode: String,
    m_t: usize,
    n_t_ratio: f64,
    n_train: usize,
    seed: u64,
    epochs_run: usize,
    final_val_mae: f64,
    best_val_mae: f64,
    test_rmse: f64,
    test_ecc: f64,
    threshold: f64,
    epochs_to_threshold: Option<usize>,
    trainable: usize,
    total: usize,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct TimingRow {
    mode: String,
    m_t: usize,
    n_t_ratio: f64,
    seed: u64,
    wall_seconds: f64,
    mean_epoch_seconds: f64,
}

fn write_rows(dir: &Path, rows: &[ExperimentRow]) -> Result<()> {
    let mut results = csv::Writer::from_writer(Vec::new());
    let mut timing = csv::Writer::from_writer(Vec::new());
    for r in rows {
        results.serialize(ResultRow {
            mode: r.mode.to_string(),
            m_t: r.m_t,
            n_t_ratio: r.n_t_ratio,
            n_train: r.n_train,
            seed: r.seed,
            epochs_run: r.epochs_run,
            final_val_mae: r.final_val_mae,
            best_val_mae: r.best_val_mae,
            test_rmse: r.test_rmse,
            test_ecc: r.test_ecc,
            threshold: r.threshold,
            epochs_to_threshold: r.epochs_to_threshold,
            trainable: r.trainable,
            total: r.total,
            error: r.error.as_deref(),
        })?;
        timing.serialize(TimingRow {
            mode: r.mode.to_string(),
            m_t: r.m_t,
            n_t_ratio: r.n_t_ratio,
            seed: r.seed,
            wall_seconds: r.wall_seconds,
            mean_epoch_seconds: r.mean_epoch_seconds,
        })?;
    }
    let finish = |w: csv::Writer<Vec<u8>>| w.into_inner().map_err(|e| CliError::input(e.to_string()));
    write(&dir.join("results.csv"), finish(results)?)?;
    write(&dir.join("timing.csv"), finish(timing)?)
}

fn experiment(a: &ExperimentArgs, replay: Option<&Value>) -> Result<Option<Value>> {
    let mut spec: ExperimentSpec = resolve(Some(&a.grid), replay)?;
    spec.seed = a.common.seed;
    spec.validate()?;
    let out = &a.common.out;
    let needs_source = spec.modes.iter().any(|m| *m != Mode::Scratch);
    let pretrained = match (&a.pretrained, needs_source) {
        (Some(dir), _) => Some(load_checkpoint(dir)?),
        (None, true) => {
            let (net, log) = pretrain_source(&spec)?;
            write_training(&out.join("pretrain"), &net, &log, &count_parameters(&net.gen))?;
            println!("pretrained {} epochs, val MAE {}", log.epochs.len(), sig6(log.final_val_mae()));
            // Continue from the stored (single-precision) weights so a later
            // run given `--pretrained` sees exactly the same network.
            Some(load_checkpoint(&out.join("pretrain/checkpoint"))?)
        }
        (None, false) => None,
    };
    let rows = run_experiment(&spec, pretrained.as_ref(), |r| match &r.error {
        None => println!(
            "{:<16} m_t={} ratio={} seed={} val_mae={} epochs_to_threshold={} trainable={}",
            r.mode.to_string(),
            r.m_t,
            r.n_t_ratio,
            r.seed,
            sig6(r.final_val_mae),
            r.epochs_to_threshold.map_or("-".into(), |e| e.to_string()),
            r.trainable
        ),
        Some(e) => eprintln!("{} m_t={} seed={} failed: {e}", r.mode, r.m_t, r.seed),
    })?;
    write_rows(out, &rows)?;
    if rows.iter().all(|r| r.error.is_some()) {
        return Err(CliError::Numerical("every experiment cell failed".into()));
    }
    resolved(&spec)
}

/// Absolute form of `p` against the current directory.
pub fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| CliError::io(p, e))
}
