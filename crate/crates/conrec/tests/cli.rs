//! End-to-end pipeline tests through the installed binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conrec"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("conrec_cli_{}_{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[test]
fn generate_is_byte_deterministic_and_counts_match() {
    let root = tmp("gen");
    for sub in ["a", "b"] {
        run_ok(bin().args([
            "generate",
            "--dataset",
            "rectangle-triangle",
            "--out",
            root.join(sub).to_str().unwrap(),
            "--n-train",
            "12",
            "--n-test",
            "8",
            "--size",
            "32",
            "--seed",
            "3",
        ]));
    }
    let a_train = dir_bytes(&root.join("a/train"));
    let b_train = dir_bytes(&root.join("b/train"));
    assert_eq!(a_train, b_train, "rerun must be byte-identical");
    let pgms = a_train.iter().filter(|(n, _)| n.ends_with(".pgm")).count();
    assert_eq!(pgms, 12);
    assert!(root.join("a/train/manifest.csv").exists());
    assert!(root.join("a/test/manifest.csv").exists());
    assert_eq!(dir_bytes(&root.join("a/test")).iter().filter(|(n, _)| n.ends_with(".pgm")).count(), 8);
}

fn tiny_pretrain_args(root: &Path, method: &str, epochs: &str, out: &str) -> Vec<String> {
    [
        "pretrain",
        "--dataset.train_dir",
        root.join("data/train").to_str().unwrap(),
        "--dataset.test_dir",
        root.join("data/test").to_str().unwrap(),
        "--run.out_dir",
        root.join(out).to_str().unwrap(),
        "--run.threads",
        "1",
        "--train.method",
        method,
        "--train.epochs",
        epochs,
        "--train.eval_every",
        "2",
        "--train.batch_size",
        "4",
        "--model.image_size",
        "32",
        "--model.levels",
        "2",
        "--model.base_channels",
        "2",
        "--model.projection_hidden",
        "8",
        "--model.projection_dim",
        "4",
        "--model.attention_filters",
        "4,2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn generate_tiny(root: &Path) {
    run_ok(bin().args([
        "generate",
        "--dataset",
        "circles-squares",
        "--out",
        root.join("data").to_str().unwrap(),
        "--n-train",
        "12",
        "--n-test",
        "9",
        "--size",
        "32",
        "--seed",
        "5",
    ]));
}

#[test]
fn pretrain_writes_artifacts_and_respects_method_wiring() {
    let root = tmp("pretrain");
    generate_tiny(&root);

    // conrec run: all artifacts present, marker removed.
    run_ok(bin().args(tiny_pretrain_args(&root, "conrec", "2", "run_conrec")));
    let out = root.join("run_conrec");
    for f in ["config.resolved", "metrics_epochs.csv", "metrics_eval.csv", "best.ckpt", "final.ckpt"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(!out.join("INCOMPLETE").exists());
    let epochs_csv = fs::read_to_string(out.join("metrics_epochs.csv")).unwrap();
    assert!(epochs_csv.starts_with("epoch,loss_contrastive,loss_reconstruction,loss_total,wall_seconds"));
    assert_eq!(epochs_csv.lines().count(), 3);

    // simclr run: decoder parameters must equal their initialization.
    run_ok(bin().args(tiny_pretrain_args(&root, "simclr", "2", "run_simclr")));
    let ckpt = conrec::train::load_checkpoint(&root.join("run_simclr/final.ckpt")).unwrap();
    let init = conrec::model::init_model::<f32>(&ckpt.params.cfg, 42).unwrap();
    for (name, t) in ckpt.params.tensors() {
        if name.starts_with("dec.") {
            assert_eq!(t.data(), init.get(name).data(), "{name} changed in a simclr run");
        }
    }

    // epochs = 0: exits 0 with the initial checkpoint only.
    run_ok(bin().args(tiny_pretrain_args(&root, "conrec", "0", "run_zero")));
    let ckpt0 = conrec::train::load_checkpoint(&root.join("run_zero/final.ckpt")).unwrap();
    assert_eq!(ckpt0.epoch, 0);
    let init0 = conrec::model::init_model::<f32>(&ckpt0.params.cfg, 42).unwrap();
    assert_eq!(ckpt0.params.digest(), init0.digest());
}

#[test]
fn evaluate_and_report_roundtrip() {
    let root = tmp("eval");
    generate_tiny(&root);
    run_ok(bin().args(tiny_pretrain_args(&root, "conrec-gap", "2", "run")));

    // Evaluating even an untrained checkpoint must produce a summary.
    run_ok(bin().args(tiny_pretrain_args(&root, "conrec-gap", "0", "run0")));
    run_ok(bin().args([
        "evaluate",
        "--checkpoint",
        root.join("run0/final.ckpt").to_str().unwrap(),
        "--train-dir",
        root.join("data/train").to_str().unwrap(),
        "--test-dir",
        root.join("data/test").to_str().unwrap(),
        "--out",
        root.join("eval0").to_str().unwrap(),
        "--fractions",
        "1.0",
        "--repeats",
        "1",
    ]));
    assert!(root.join("eval0/summary.txt").exists());

    run_ok(bin().args([
        "evaluate",
        "--checkpoint",
        root.join("run/best.ckpt").to_str().unwrap(),
        "--train-dir",
        root.join("data/train").to_str().unwrap(),
        "--test-dir",
        root.join("data/test").to_str().unwrap(),
        "--out",
        root.join("eval").to_str().unwrap(),
        "--fractions",
        "1.0",
        "--repeats",
        "2",
    ]));
    let runs = fs::read_to_string(root.join("eval/sweep_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3, "header plus one row per repeat:\n{runs}");
    let agg = fs::read_to_string(root.join("eval/sweep_agg.csv")).unwrap();
    assert_eq!(agg.lines().count(), 2, "single fraction aggregates to one row");
    let summary = fs::read_to_string(root.join("eval/summary.csv")).unwrap();
    assert!(summary.contains("conrec-gap"), "{summary}");

    run_ok(bin().args([
        "report",
        "--out",
        root.join("table.csv").to_str().unwrap(),
        root.join("eval").to_str().unwrap(),
        root.join("eval0").to_str().unwrap(),
    ]));
    let table = fs::read_to_string(root.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 3, "header + one row per run:\n{table}");
    assert!(table.starts_with("run,checkpoint,method,dataset,"));
}

#[test]
fn preview_augment_writes_triplets_with_exact_targets() {
    let root = tmp("preview");
    generate_tiny(&root);
    run_ok(bin().args([
        "preview-augment",
        "--dataset-dir",
        root.join("data/train").to_str().unwrap(),
        "--out",
        root.join("previews").to_str().unwrap(),
        "--index",
        "2",
        "--seed",
        "9",
    ]));
    let files = dir_bytes(&root.join("previews"));
    assert_eq!(files.len(), 12, "four modes x (input, masked, target)");
    for mode in ["inpaint", "outpaint", "shuffle", "nonlinear"] {
        for part in ["input", "masked", "target"] {
            assert!(files.iter().any(|(n, _)| n == &format!("{mode}_{part}.pgm")));
        }
    }

    // The target file is the SimCLR view rendered byte-for-byte.
    let ds = conrec::synthgen::load_dataset(&root.join("data/train")).unwrap();
    let cfg = conrec::augment::AugmentConfig::default();
    let target =
        conrec::augment::simclr_view(&ds.images[2], conrec::augment::view_seed(9, 1), &cfg).unwrap();
    let expect = root.join("expect.pgm");
    conrec::synthgen::write_pgm_gray(&expect, &target).unwrap();
    let want = fs::read(&expect).unwrap();
    let got = fs::read(root.join("previews/inpaint_target.pgm")).unwrap();
    assert_eq!(want, got);

    // Invalid index: nonzero exit.
    let out = bin()
        .args([
            "preview-augment",
            "--dataset-dir",
            root.join("data/train").to_str().unwrap(),
            "--out",
            root.join("previews2").to_str().unwrap(),
            "--index",
            "99",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn rerunning_from_the_frozen_config_reproduces_metrics() {
    let root = tmp("frozen");
    generate_tiny(&root);
    run_ok(bin().args(tiny_pretrain_args(&root, "conrec", "2", "first")));

    // The frozen config pins out_dir to the first run; override it.
    run_ok(bin().args([
        "pretrain",
        "--config",
        root.join("first/config.resolved").to_str().unwrap(),
        "--run.out_dir",
        root.join("second").to_str().unwrap(),
    ]));
    let strip_wall = |p: PathBuf| {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(
        strip_wall(root.join("first/metrics_epochs.csv")),
        strip_wall(root.join("second/metrics_epochs.csv"))
    );
    assert_eq!(
        fs::read_to_string(root.join("first/metrics_eval.csv")).unwrap(),
        fs::read_to_string(root.join("second/metrics_eval.csv")).unwrap()
    );
}

#[test]
fn evaluate_with_crop_augmented_probe_training() {
    let root = tmp("cropaug");
    generate_tiny(&root);
    run_ok(bin().args(tiny_pretrain_args(&root, "simclr", "2", "run")));
    run_ok(bin().args([
        "evaluate",
        "--checkpoint",
        root.join("run/best.ckpt").to_str().unwrap(),
        "--train-dir",
        root.join("data/train").to_str().unwrap(),
        "--test-dir",
        root.join("data/test").to_str().unwrap(),
        "--out",
        root.join("eval").to_str().unwrap(),
        "--fractions",
        "1.0",
        "--repeats",
        "1",
        "--crop-augment",
    ]));
    assert!(root.join("eval/summary.txt").exists());
}

#[test]
fn bad_config_keys_and_missing_flags_fail() {
    let out = bin().args(["pretrain", "--train.epochz", "5"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key"));

    let out = bin().args(["generate", "--dataset", "rectangle-triangle"]).output().unwrap();
    assert!(!out.status.success());

    let out = bin().args(["frobnicate"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn config_file_plus_overrides() {
    let root = tmp("cfg");
    generate_tiny(&root);
    let cfg_path = root.join("run.conf");
    fs::write(
        &cfg_path,
        format!(
            "# tiny run\n\
             dataset.train_dir = {}\n\
             dataset.test_dir = {}\n\
             run.out_dir = {}\n\
             run.threads = 1\n\
             train.method = simclr\n\
             train.epochs = 3\n\
             train.eval_every = 5\n\
             train.batch_size = 4\n\
             model.image_size = 32\n\
             model.levels = 2\n\
             model.base_channels = 2\n\
             model.projection_hidden = 8\n\
             model.projection_dim = 4\n\
             model.attention_filters = 4,2\n",
            root.join("data/train").display(),
            root.join("data/test").display(),
            root.join("from_file").display(),
        ),
    )
    .unwrap();
    // Command-line override wins over the file.
    run_ok(bin().args([
        "pretrain",
        "--config",
        cfg_path.to_str().unwrap(),
        "--train.epochs",
        "1",
    ]));
    let rows = fs::read_to_string(root.join("from_file/metrics_epochs.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2, "override to one epoch must win");
    let frozen = fs::read_to_string(root.join("from_file/config.resolved")).unwrap();
    assert!(frozen.contains("train.epochs = 1"));
    assert!(frozen.contains("train.method = simclr"));
}
