use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use relkd::harness::{compute_centroids, prepare, StudentModel, StudentShape, TrainConfig};
use relkd::io;

fn relkd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relkd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn hashes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|p| {
            let digest = Sha256::digest(fs::read(&p).unwrap()).to_vec();
            (p.file_name().unwrap().into(), digest)
        })
        .collect()
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    fs::write(
        &path,
        format!("num_identities=6\nsamples_per_identity=8\nepochs=3\nbatch_size=16\neval_pairs=200\n{extra}"),
    )
    .unwrap();
    path
}

#[test]
fn gen_data_writes_six_to_one_manifest_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&relkd(&["gen-data", "--out", "a"], d));
    let manifest = io::read_key_values(&d.join("a/manifest.txt")).unwrap();
    let get = |k: &str| manifest.iter().find(|(key, _)| key == k).unwrap().1.clone();
    assert_eq!(get("samples"), "768");
    assert_eq!(get("eval"), "110");
    assert_eq!(get("train"), "658");
    ok(&relkd(&["gen-data", "--out", "b"], d));
    assert_eq!(hashes(&d.join("a")), hashes(&d.join("b")));
    ok(&relkd(&["gen-data", "--out", "c", "--seed", "1"], d));
    assert_ne!(hashes(&d.join("a")), hashes(&d.join("c")));
}

#[test]
fn validation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("cover.cfg"), "raster_side=8\nmask_coverage=0.9\n").unwrap();
    let out = relkd(&["gen-data", "--config", "cover.cfg", "--out", "x"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("coverage"));

    fs::write(d.join("unknown.cfg"), "learning_rate=0.2\n").unwrap();
    let out = relkd(&["train", "--config", "unknown.cfg"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let out = relkd(&["train", "--data", "missing", "--out", "y"], d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_writes_metrics_checkpoint_and_cached_centroids() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = small_config(d, "");
    let cfg = cfg.to_str().unwrap();
    ok(&relkd(&["gen-data", "--config", cfg, "--out", "data"], d));
    assert!(!d.join("data/centroids.bin").exists());
    let stdout = ok(&relkd(
        &["train", "--config", cfg, "--data", "data", "--out", "run"],
        d,
    ));
    assert!(stdout.contains("trained 3 epochs"));

    let (header, rows) = io::read_csv(&d.join("run/metrics.csv")).unwrap();
    assert_eq!(
        header,
        ["epoch", "lr", "ce", "instance", "pair", "triplet", "total"]
    );
    assert_eq!(rows.len(), 3);

    let ds = io::load_dataset(&d.join("data")).unwrap();
    let cached = io::load_centroids(&d.join("data"))
        .unwrap()
        .expect("cached");
    let prepared = prepare(&ds, &TrainConfig::default()).unwrap();
    assert_eq!(cached, prepared.centroids);
    let teacher_train = {
        let mut m = relkd::math::Mat64::zeros(ds.train.len(), ds.config.embed_dim);
        for (r, &i) in ds.train.iter().enumerate() {
            m.row_mut(r)
                .copy_from_slice(prepared.teacher_features.row(i));
        }
        m
    };
    let labels: Vec<u32> = ds.train.iter().map(|&i| ds.samples[i].label).collect();
    assert_eq!(cached, compute_centroids(&teacher_train, &labels).unwrap());

    let model = io::load_checkpoint(&d.join("run/checkpoint")).unwrap();
    assert_eq!(model.shape().input, 64);

    let stdout = ok(&relkd(
        &[
            "eval",
            "--checkpoint",
            "run/checkpoint",
            "--data",
            "data",
            "--out",
            "ev",
        ],
        d,
    ));
    assert!(stdout.starts_with("accuracy"));
    let (_, eval_rows) = io::read_csv(&d.join("ev/eval.csv")).unwrap();
    let acc: f64 = eval_rows[0][0].parse().unwrap();
    assert!((0.5..=1.0).contains(&acc));
}

#[test]
fn zero_epochs_checkpoint_is_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = small_config(d, "seed=4\n");
    let cfg = cfg.to_str().unwrap();
    ok(&relkd(&["gen-data", "--config", cfg, "--out", "data"], d));
    fs::write(
        d.join("zero.cfg"),
        fs::read_to_string(cfg)
            .unwrap()
            .replace("epochs=3", "epochs=0"),
    )
    .unwrap();
    ok(&relkd(
        &[
            "train", "--config", "zero.cfg", "--data", "data", "--out", "run",
        ],
        d,
    ));
    let model = io::load_checkpoint(&d.join("run/checkpoint")).unwrap();
    let init = StudentModel::init(
        StudentShape {
            input: 64,
            hidden: 32,
            embed: 16,
            classes: 6,
        },
        4,
    )
    .unwrap();
    assert_eq!(model, init);
    let (_, rows) = io::read_csv(&d.join("run/metrics.csv")).unwrap();
    assert!(rows.is_empty());
}

#[test]
fn training_is_deterministic_and_config_echo_reproduces_it() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = small_config(d, "mode=hard\n");
    let cfg = cfg.to_str().unwrap();
    ok(&relkd(&["gen-data", "--config", cfg, "--out", "data"], d));
    ok(&relkd(
        &["train", "--config", cfg, "--data", "data", "--out", "r1"],
        d,
    ));
    ok(&relkd(
        &["train", "--config", cfg, "--data", "data", "--out", "r2"],
        d,
    ));
    let m1 = fs::read(d.join("r1/metrics.csv")).unwrap();
    assert_eq!(m1, fs::read(d.join("r2/metrics.csv")).unwrap());
    ok(&relkd(
        &[
            "train",
            "--config",
            "r1/config.txt",
            "--data",
            "data",
            "--out",
            "r3",
        ],
        d,
    ));
    let (_, a) = io::read_csv(&d.join("r1/metrics.csv")).unwrap();
    let (_, b) = io::read_csv(&d.join("r3/metrics.csv")).unwrap();
    assert_eq!(a.len(), b.len());
    for (ra, rb) in a.iter().zip(&b) {
        for (x, y) in ra.iter().zip(rb) {
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
        }
    }
}

#[test]
fn divergence_exits_two_and_keeps_partial_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = small_config(d, "lr0=1e300\n");
    let cfg = cfg.to_str().unwrap();
    ok(&relkd(&["gen-data", "--config", cfg, "--out", "data"], d));
    let out = relkd(
        &["train", "--config", cfg, "--data", "data", "--out", "run"],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    assert!(d.join("run/metrics.csv").exists());
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = small_config(d, "");
    let cfg = cfg.to_str().unwrap();
    ok(&relkd(&["gen-data", "--config", cfg, "--out", "data"], d));
    let wrong = StudentModel::init(
        StudentShape {
            input: 100,
            hidden: 4,
            embed: 3,
            classes: 6,
        },
        0,
    )
    .unwrap();
    io::save_checkpoint(&d.join("wrong"), &wrong).unwrap();
    let out = relkd(
        &[
            "eval",
            "--checkpoint",
            "wrong",
            "--data",
            "data",
            "--out",
            "ev",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dim mismatch"));
}

#[test]
fn gradcheck_reports_one_row_per_op() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(&relkd(&["gradcheck", "--points", "20"], tmp.path()));
    let rows: Vec<&str> = stdout.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ends_with("pass")));
}

#[test]
fn ablate_emits_five_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = small_config(d, "ablation_seeds=7\n");
    let stdout = ok(&relkd(
        &["ablate", "--config", cfg.to_str().unwrap(), "--out", "ab"],
        d,
    ));
    assert!(stdout.contains("soft-instance eval loss <= hard-instance in 1/1 seeds"));
    let (_, summary) = io::read_csv(&d.join("ab/summary.csv")).unwrap();
    assert_eq!(summary.len(), 5);
    assert!(summary.iter().all(|r| r[1] == "1" && r[3] == "0"));
    let (_, rows) = io::read_csv(&d.join("ab/ablation.csv")).unwrap();
    assert_eq!(rows.len(), 5);
}
