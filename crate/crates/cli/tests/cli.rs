//! Drives the `holorec` binary end to end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn holorec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_holorec"))
        .args(args)
        .output()
        .expect("spawn holorec")
}

fn ok(args: &[&str]) -> String {
    let out = holorec(args);
    assert!(
        out.status.success(),
        "holorec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    holorec(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_json(path: &Path, v: Value) -> PathBuf {
    fs::write(path, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
    path.to_path_buf()
}

fn outputs(dir: &Path) -> BTreeMap<String, String> {
    let m: Value = serde_json::from_slice(&fs::read(dir.join("run_manifest.json")).unwrap()).unwrap();
    serde_json::from_value(m["outputs"].clone()).unwrap()
}

fn replay_ok(dir: &Path, fresh: &Path) {
    let msg = ok(&["replay", s(&dir.join("run_manifest.json")), "--out", s(fresh)]);
    assert!(msg.contains("hash-identical"), "{msg}");
    assert_eq!(outputs(dir), outputs(fresh));
}

fn table_value(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| {
            let mut it = l.split_whitespace();
            (it.next() == Some(key)).then(|| it.next().unwrap().parse().unwrap())
        })
        .unwrap_or_else(|| panic!("no {key} in {stdout}"))
}

/// Small datasets shared by the tests: a training split with sub-pixel
/// frames, a validation split and a cells split for autofocus.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let f = Fixture { dir };
        let train = write_json(
            &f.path("train.json"),
            serde_json::json!({"n_fovs": 4, "m_inputs": 2, "psr_factor": 2}),
        );
        let val = write_json(
            &f.path("val.json"),
            serde_json::json!({"n_fovs": 2, "m_inputs": 2, "split": "val"}),
        );
        let cells = write_json(
            &f.path("cells.json"),
            serde_json::json!({
                "dataset": {
                    "scene": {"kind": "cells", "phase_max": 0.0},
                    "dims": [128, 128],
                    "acquisition": {"noise_sigma": 0.05}
                },
                "n_fovs": 1,
                "m_inputs": 1
            }),
        );
        ok(&["simulate", "--spec", s(&train), "--out", s(&f.path("train")), "--seed", "5"]);
        ok(&["simulate", "--spec", s(&val), "--out", s(&f.path("val")), "--seed", "6"]);
        ok(&["simulate", "--spec", s(&cells), "--out", s(&f.path("cells")), "--seed", "2"]);
        f
    })
}

#[test]
fn simulate_writes_one_directory_per_fov() {
    let f = fixture();
    let fovs: Vec<_> = fs::read_dir(f.path("train"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("fov_"))
        .collect();
    assert_eq!(fovs.len(), 4);
    for fov in &fovs {
        assert_eq!(fs::read_dir(fov.path().join("stack")).unwrap().count(), 16);
        assert_eq!(fs::read_dir(fov.path().join("psr")).unwrap().count(), 8);
    }
}

#[test]
fn simulate_is_reproducible_from_the_seed() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let again = tmp.path().join("again");
    ok(&["simulate", "--spec", s(&f.path("val.json")), "--out", s(&again), "--seed", "6"]);
    assert_eq!(outputs(&again), outputs(&f.path("val")));
    let other = tmp.path().join("other");
    ok(&["simulate", "--spec", s(&f.path("val.json")), "--out", s(&other), "--seed", "7"]);
    assert_ne!(outputs(&other), outputs(&f.path("val")));
}

#[test]
fn simulate_rejects_bad_specs() {
    let tmp = tempfile::tempdir().unwrap();
    let zero = write_json(&tmp.path().join("zero.json"), serde_json::json!({"m_inputs": 0}));
    assert_eq!(code(&["simulate", "--spec", s(&zero), "--out", s(&tmp.path().join("a"))]), 2);
    let unknown = write_json(&tmp.path().join("unknown.json"), serde_json::json!({"n_fov": 3}));
    assert_eq!(code(&["simulate", "--spec", s(&unknown), "--out", s(&tmp.path().join("b"))]), 2);
    let broken = tmp.path().join("broken.json");
    fs::write(&broken, b"{\"n_fovs\": ").unwrap();
    assert_eq!(code(&["simulate", "--spec", s(&broken), "--out", s(&tmp.path().join("c"))]), 2);
    let missing = tmp.path().join("missing.json");
    assert_eq!(code(&["simulate", "--spec", s(&missing), "--out", s(&tmp.path().join("d"))]), 2);
}

#[test]
fn reconstruct_matches_the_object() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("rec");
    let stdout = ok(&[
        "reconstruct",
        s(&f.path("train/fov_0000/stack")),
        "--truth",
        s(&f.path("train/fov_0000/object.fld")),
        "--out",
        s(&out),
    ]);
    assert!(table_value(&stdout, "ecc") > 0.95, "{stdout}");
    assert!(table_value(&stdout, "rmse") < 0.05, "{stdout}");
    for name in ["field.fld", "residuals.csv", "metrics.json"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let residuals = fs::read_to_string(out.join("residuals.csv")).unwrap();
    assert_eq!(residuals.lines().count(), 31);
    replay_ok(&out, &tmp.path().join("replayed"));
}

#[test]
fn reconstruct_without_iterations_is_back_propagation() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(&[
        "reconstruct",
        s(&f.path("train/fov_0001/stack")),
        "--iters",
        "0",
        "--truth",
        s(&f.path("train/fov_0001/object.fld")),
        "--out",
        s(&tmp.path().join("bp")),
    ]);
    let zero = table_value(&stdout, "rmse");
    let stdout = ok(&[
        "reconstruct",
        s(&f.path("train/fov_0001/stack")),
        "--truth",
        s(&f.path("train/fov_0001/object.fld")),
        "--out",
        s(&tmp.path().join("full")),
    ]);
    assert!(table_value(&stdout, "rmse") < zero);
}

#[test]
fn reconstruct_with_explicit_heights_and_autofocus() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let stack = f.path("cells/fov_0000/stack");
    let listed = tmp.path().join("listed");
    let z = "450,465,480,495,510,525,540,555";
    ok(&["reconstruct", s(&stack), "--z-list", z, "--iters", "5", "--out", s(&listed)]);
    let wrong = tmp.path().join("wrong");
    assert_eq!(code(&["reconstruct", s(&stack), "--z-list", "450,465", "--out", s(&wrong)]), 2);
    let focused = tmp.path().join("focused");
    ok(&["reconstruct", s(&stack), "--autofocus", "--iters", "5", "--out", s(&focused)]);
    let focus = fs::read_to_string(focused.join("focus.csv")).unwrap();
    let mut lines = focus.lines();
    assert_eq!(lines.next(), Some("hologram,z_hat_um,score,status"));
    let expected = [450.0, 465.0, 480.0, 495.0, 510.0, 525.0, 540.0, 555.0];
    let mut close = 0;
    for (line, z) in lines.zip(expected) {
        let z_hat: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        close += usize::from((z_hat - z).abs() <= 2.0);
    }
    assert!(close >= 7, "{focus}");
    replay_ok(&focused, &tmp.path().join("replayed"));
}

#[test]
fn reconstruct_missing_stack_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    assert_eq!(code(&["reconstruct", s(&missing), "--out", s(&tmp.path().join("r"))]), 2);
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(code(&["reconstruct", s(&empty), "--out", s(&tmp.path().join("r2"))]), 2);
}

#[test]
fn autofocus_locates_cells() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("af");
    let stdout = ok(&["autofocus", s(&f.path("cells/fov_0000/stack/holo_03.fld")), "--out", s(&out)]);
    let z_hat = table_value(&stdout, "z_hat_um");
    assert!((z_hat - 495.0).abs() <= 2.0, "{z_hat}");
    let focus: Value = serde_json::from_slice(&fs::read(out.join("focus.json")).unwrap()).unwrap();
    assert_eq!(focus["status"], "refined");
    let scan = fs::read_to_string(out.join("scan.csv")).unwrap();
    assert!(scan.starts_with("z_um,score\n"));
    assert!(scan.lines().count() > 21);
    replay_ok(&out, &tmp.path().join("replayed"));

    let bad = tmp.path().join("bad_range");
    let holo = f.path("cells/fov_0000/stack/holo_03.fld");
    assert_eq!(code(&["autofocus", s(&holo), "--z-min", "600", "--z-max", "400", "--out", s(&bad)]), 2);
}

#[test]
fn psr_fuses_frames_onto_a_finer_grid() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("psr");
    let stdout = ok(&["psr", s(&f.path("train/fov_0000/psr")), "--factor", "2", "--out", s(&out)]);
    assert!(stdout.contains("4 frames"), "{stdout}");
    let shifts = fs::read_to_string(out.join("shifts.csv")).unwrap();
    assert_eq!(shifts.lines().count(), 5);
    replay_ok(&out, &tmp.path().join("replayed"));

    // A shift table read back from the estimate reproduces the fusion.
    let table = tmp.path().join("shifts.csv");
    fs::copy(out.join("shifts.csv"), &table).unwrap();
    let from_table = tmp.path().join("from_table");
    ok(&[
        "psr",
        s(&f.path("train/fov_0000/psr")),
        "--factor",
        "2",
        "--shift-table",
        s(&table),
        "--out",
        s(&from_table),
    ]);
    assert_eq!(
        fs::read(out.join("fused.fld")).unwrap(),
        fs::read(from_table.join("fused.fld")).unwrap()
    );
    let meta = tmp.path().join("meta");
    ok(&["psr", s(&f.path("train/fov_0000/psr")), "--factor", "2", "--use-metadata", "--out", s(&meta)]);
}

#[test]
fn metrics_of_identical_fields() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let obj = f.path("train/fov_0002/object.fld");
    let truth = tmp.path().join("truth.fld");
    fs::copy(&obj, &truth).unwrap();
    fs::copy(obj.with_extension("json"), truth.with_extension("json")).unwrap();
    let out = tmp.path().join("m");
    let stdout = ok(&["metrics", s(&obj), "--truth", s(&truth), "--out", s(&out)]);
    assert_eq!(table_value(&stdout, "rmse"), 0.0);
    assert_eq!(table_value(&stdout, "ecc"), 1.0);
    assert_eq!(table_value(&stdout, "ms_ssim"), 1.0);
    let m: Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["mae"], 0.0);
    replay_ok(&out, &tmp.path().join("replayed"));

    let other = tmp.path().join("other");
    let stdout = ok(&["metrics", s(&obj), "--truth", s(&f.path("train/fov_0003/object.fld")), "--out", s(&other)]);
    assert!(table_value(&stdout, "rmse") > 0.05, "{stdout}");
    assert!(table_value(&stdout, "ms_ssim") < 0.9, "{stdout}");
}

#[test]
fn train_then_transfer_with_a_frozen_backbone() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let job = write_json(
        &tmp.path().join("job.json"),
        serde_json::json!({"model": {"base_channels": 2}, "train": {"max_epochs": 2, "gen_lr": 1e-3, "disc_lr": 1e-4}}),
    );
    let trained = tmp.path().join("trained");
    let train = ok(&[
        "train",
        "--data",
        s(&f.path("train")),
        "--val",
        s(&f.path("val")),
        "--config",
        s(&job),
        "--out",
        s(&trained),
        "--seed",
        "3",
    ]);
    assert!(train.contains("2 epochs"), "{train}");
    let log = fs::read_to_string(trained.join("log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,train_mae,val_mae"));
    assert_eq!(log.lines().count(), 3);
    assert!(fs::read_to_string(trained.join("timing.csv")).unwrap().starts_with("epoch,seconds"));
    assert!(!outputs(&trained).contains_key("timing.csv"));
    replay_ok(&trained, &tmp.path().join("trained_again"));

    let schedule = write_json(&tmp.path().join("ft.json"), serde_json::json!({"max_epochs": 2}));
    let run = |freeze: bool, name: &str| -> Value {
        let out = tmp.path().join(name);
        let (ckpt, data, val) = (trained.join("checkpoint"), f.path("train"), f.path("val"));
        let mut args = vec![
            "transfer",
            "--pretrained",
            s(&ckpt),
            "--data",
            s(&data),
            "--val",
            s(&val),
            "--config",
            s(&schedule),
            "--seed",
            "1",
            "--out",
            s(&out),
        ];
        if freeze {
            args.push("--freeze-backbone");
        }
        ok(&args);
        serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap()
    };
    let frozen = run(true, "frozen");
    let full = run(false, "full");
    let frac = |v: &Value| v["trainable_fraction"].as_f64().unwrap();
    assert!(frac(&frozen) > 0.0 && frac(&frozen) < 1.0);
    assert_eq!(frac(&full), 1.0);
    replay_ok(&tmp.path().join("frozen"), &tmp.path().join("frozen_again"));

    let fresh = tmp.path().join("not_a_dataset");
    let wrong_data = f.path("cells/fov_0000");
    assert_eq!(
        code(&[
            "transfer",
            "--pretrained",
            s(&trained.join("checkpoint")),
            "--data",
            s(&wrong_data),
            "--val",
            s(&f.path("val")),
            "--out",
            s(&fresh),
        ]),
        2
    );
}

#[test]
fn experiment_grid_has_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = write_json(
        &tmp.path().join("grid.json"),
        serde_json::json!({
            "base_channels": 2,
            "dims": [32, 32],
            "source_train": 4,
            "source_val": 2,
            "source_m": 4,
            "pretrain": {"max_epochs": 2},
            "target_train": 2,
            "target_val": 2,
            "target_test": 2,
            "m_t": [2, 3, 4],
            "seeds": [0],
            "finetune": {"max_epochs": 2}
        }),
    );
    let out = tmp.path().join("exp");
    ok(&["experiment", "--grid", s(&grid), "--out", s(&out)]);
    let mut reader = csv::Reader::from_path(out.join("results.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 9);
    for m_t in ["2", "3", "4"] {
        let cell: Vec<_> = rows.iter().filter(|r| &r[col("m_t")] == m_t).collect();
        assert_eq!(cell.len(), 3);
        let trainable = |mode: &str| -> usize {
            cell.iter().find(|r| &r[col("mode")] == mode).unwrap()[col("trainable")].parse().unwrap()
        };
        assert!(trainable("transfer_frozen") < trainable("transfer_full"));
        assert_eq!(trainable("transfer_full"), trainable("scratch"));
        assert!(cell.iter().all(|r| r[col("error")].is_empty()));
    }
    assert!(out.join("pretrain/checkpoint").is_dir());
    replay_ok(&out, &tmp.path().join("exp_again"));

    // Reusing the pretrained checkpoint skips pretraining.
    let reuse = tmp.path().join("reuse");
    ok(&[
        "experiment",
        "--grid",
        s(&grid),
        "--pretrained",
        s(&out.join("pretrain/checkpoint")),
        "--out",
        s(&reuse),
    ]);
    assert!(!reuse.join("pretrain").exists());
    assert_eq!(
        fs::read(out.join("results.csv")).unwrap(),
        fs::read(reuse.join("results.csv")).unwrap()
    );
}

#[test]
fn replay_guards_its_inputs_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_json(&tmp.path().join("spec.json"), serde_json::json!({"n_fovs": 1, "m_inputs": 1}));
    let first = tmp.path().join("first");
    ok(&["simulate", "--spec", s(&spec), "--out", s(&first)]);
    let manifest = first.join("run_manifest.json");

    // A non-empty replay directory is refused.
    assert_eq!(code(&["replay", s(&manifest), "--out", s(&first)]), 2);

    // A recorded hash that no longer matches is a numerical mismatch.
    let mut m: Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    let key = m["outputs"].as_object().unwrap().keys().next().unwrap().clone();
    m["outputs"][&key] = Value::String("0".repeat(64));
    let tampered = write_json(&tmp.path().join("tampered.json"), m);
    assert_eq!(code(&["replay", s(&tampered), "--out", s(&tmp.path().join("t"))]), 3);

    // An input edited after the run is refused.
    write_json(&spec, serde_json::json!({"n_fovs": 2, "m_inputs": 1}));
    assert_eq!(code(&["replay", s(&manifest), "--out", s(&tmp.path().join("edited"))]), 2);

    assert_eq!(code(&["replay", s(&tmp.path().join("none.json")), "--out", s(&tmp.path().join("n"))]), 2);
}

#[test]
fn output_may_not_overlap_an_input() {
    let f = fixture();
    let inside = f.path("train/fov_0000/stack/rec");
    assert_eq!(code(&["reconstruct", s(&f.path("train/fov_0000/stack")), "--out", s(&inside)]), 2);
    assert!(!inside.exists());
}
