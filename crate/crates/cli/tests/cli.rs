//! End-to-end runs of the `wvae` binary.

use std::path::Path;
use std::process::{Command, Output};

fn wvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wvae"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = wvae(args);
    assert!(
        out.status.success(),
        "wvae {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_generate_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# tiny run\nmodel = wavelet_vae\nsynth_count = 200\nepochs = 2\nfid_samples = 64\n").unwrap();
    let out = ok(&["train", "--config", p(&cfg), "--out", p(&run), "--seed", "3", "--set", "beta=0.5"]);
    let ckpt = run.join("checkpoint.wgc");
    assert_eq!(out.trim(), p(&ckpt));
    let log = std::fs::read_to_string(run.join("loss.tsv")).unwrap();
    assert_eq!(log.lines().count(), 3, "header plus one row per epoch");
    let echoed = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(echoed.contains("beta = 0.5"), "{echoed}");
    assert!(!run.join("train.lock").exists());

    let samples = dir.path().join("samples");
    let listed = ok(&["generate", p(&ckpt), "-n", "4", "--out", p(&samples)]);
    assert_eq!(listed.lines().count(), 5);
    assert!(samples.join("grid.pgm").exists());

    let eval = dir.path().join("eval");
    ok(&["eval", p(&ckpt), "--metrics", "iqm,mi", "--trials", "2", "--out", p(&eval)]);
    let tsv = std::fs::read_to_string(eval.join("eval.tsv")).unwrap();
    assert!(tsv.lines().any(|l| l.starts_with("iqm_generated\t")), "{tsv}");
    assert!(tsv.lines().any(|l| l.starts_with("mi\t")), "{tsv}");

    let trav = dir.path().join("trav");
    ok(&["traverse", p(&ckpt), "--dims", "0,2", "--steps", "5", "--out", p(&trav)]);
    assert!(trav.join("traverse.pgm").exists());

    // Resuming with a changed config is refused unless forced.
    let refused = wvae(&[
        "train", "--config", p(&cfg), "--out", p(&run), "--set", "beta=2", "--resume", p(&ckpt),
    ]);
    assert_eq!(refused.status.code(), Some(2));
    ok(&["train", "--config", p(&cfg), "--out", p(&run), "--set", "beta=0.5", "--set", "epochs=3", "--seed", "3", "--resume", p(&ckpt)]);
    let log = std::fs::read_to_string(run.join("loss.tsv")).unwrap();
    assert_eq!(log.lines().count(), 4, "resumed run appends epoch 3");
}

#[test]
fn synth_and_wavelet_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--recipe", "blobs:3", "--count", "3", "--extent", "16", "--out", p(&data)]);
    let first = data.join("img00000.pgm");
    assert!(first.exists());

    let fwd = dir.path().join("fwd");
    ok(&["wavelet", p(&first), "-j", "2", "--out", p(&fwd)]);
    assert!(fwd.join("layout.pgm").exists());
    let inv = dir.path().join("inv");
    ok(&["wavelet", p(&fwd.join("coeffs")), "--direction", "inverse", "--out", p(&inv)]);
    let a = std::fs::read(&first).unwrap();
    let b = std::fs::read(inv.join("reconstruction.pgm")).unwrap();
    assert_eq!(a, b, "8-bit round trip is exact");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = wvae(&["train", "--out", p(dir.path()), "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
    let out = wvae(&["train", "--out", p(dir.path()), "--set", "epochs=0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gan_run_logs_samples_and_fid() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("gan");
    let sets = ["model=gan_ns", "synth_count=128", "gan_steps=4", "sample_every=2", "fid_samples=64"];
    let mut args = vec!["train", "--out", p(&run)];
    for s in &sets {
        args.extend(["--set", s]);
    }
    ok(&args);
    let fid = std::fs::read_to_string(run.join("fid.tsv")).unwrap();
    assert_eq!(fid.lines().count(), 3, "{fid}");
    assert!(run.join("samples/step_000004.pgm").exists());
    let losses = std::fs::read_to_string(run.join("loss.tsv")).unwrap();
    assert_eq!(losses.lines().count(), 5);

    let out = dir.path().join("gen");
    ok(&["generate", p(&run.join("checkpoint.wgc")), "-n", "2", "--out", p(&out)]);
    assert!(out.join("grid.pgm").exists());
    let refused = wvae(&["reconstruct", p(&run.join("checkpoint.wgc")), "--out", p(&out)]);
    assert_eq!(refused.status.code(), Some(2), "GAN checkpoints have no encoder");
}
