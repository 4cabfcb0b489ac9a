use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rse_core::data::load_pair_dataset;
use rse_core::train::evaluate;
use rse_core::ModelCheckpoint;

fn rse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rse")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = rse(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut all = Vec::new();
    for sub in ["clean", "noisy"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        all.extend(names.into_iter().map(|p| (p.display().to_string(), fs::read(p).unwrap())));
    }
    all.push(("manifest".into(), fs::read(dir.join("manifest.json")).unwrap()));
    all
}

/// Clean fixtures plus a paired dataset built from them.
fn dataset(root: &Path, name: &str, count: usize) -> std::path::PathBuf {
    let clean = root.join(format!("{name}_clean"));
    let data = root.join(name);
    ok(&["gen-fixtures", "--count", &count.to_string(), "--seed", "3", "--out", s(&clean)]);
    ok(&["synth", "--in", s(&clean), "--sigma", "0.147", "--seed", "1", "--out", s(&data)]);
    data
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    ok(&["gen-fixtures", "--count", "3", "--size", "32", "--out", s(&clean)]);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["synth", "--in", s(&clean), "--sigma", "0.147", "--seed", "1", "--out", s(&a)]);
    ok(&["synth", "--in", s(&clean), "--sigma", "0.147", "--seed", "1", "--out", s(&b)]);
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 7);
    for ((_, x), (_, y)) in fa.iter().zip(&fb) {
        assert_eq!(x, y);
    }
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rse(&["synth", "--sigma", "0.147", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = rse(&["train", "--data", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = rse(&["eval", "--ckpt", s(&dir.path().join("nope")), "--data", s(dir.path()), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn non_finite_loss_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "train", 4);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[train]\nbase_lr = 1e30\n").unwrap();
    let out = rse(&["train", "--config", s(&cfg), "--data", s(&data), "--epochs", "3", "--out", s(&dir.path().join("ck"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn train_eval_enhance_and_viz() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let train = dataset(root, "train", 4);
    let held = dataset(root, "held", 2);
    let ck = root.join("ck");
    ok(&["train", "--preset", "celeba-synth", "--data", s(&train), "--epochs", "1", "--out", s(&ck)]);
    let loss = fs::read_to_string(ck.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 2);
    let model = ModelCheckpoint::load(&ck).unwrap();

    let ev = root.join("eval");
    ok(&["eval", "--ckpt", s(&ck), "--data", s(&held), "--out", s(&ev)]);
    let csv = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "id,psnr_noisy,psnr_denoised,ssim_noisy,ssim_denoised,uqi_noisy,uqi_denoised");
    assert!(ev.join("metrics.json").exists());

    // 64x64 at D=16, overlap 4 gives 25 patches per image
    let viz = root.join("latent.csv");
    ok(&["viz-latent", "--ckpt", s(&ck), "--data", s(&held), "--out", s(&viz)]);
    assert_eq!(fs::read_to_string(&viz).unwrap().lines().count(), 1 + 2 * 3 * 2 * 25);

    let en = root.join("enhanced");
    ok(&["enhance", "--ckpt", s(&ck), "--data", s(&held), "--rl-epochs", "0", "--seed", "5", "--out", s(&en)]);
    let traj = fs::read_to_string(en.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 2);
    let pairs = load_pair_dataset(&held).unwrap();
    let before = evaluate(&pairs, &model.model).unwrap().mean.psnr_denoised;
    let after = evaluate(&pairs, &ModelCheckpoint::load(&en).unwrap().model).unwrap().mean.psnr_denoised;
    assert_eq!(before, after);

    let den = root.join("denoised");
    fs::create_dir_all(&den).unwrap();
    ok(&["denoise", "--ckpt", s(&ck), "--in", s(&held.join("noisy")), "--out", s(&den)]);
    assert_eq!(fs::read_dir(&den).unwrap().count(), 2);

    // same seed, same bytes
    let ck2 = root.join("ck2");
    ok(&["train", "--preset", "celeba-synth", "--data", s(&train), "--epochs", "1", "--out", s(&ck2)]);
    for e in fs::read_dir(&ck).unwrap() {
        let name = e.unwrap().file_name();
        assert_eq!(fs::read(ck.join(&name)).unwrap(), fs::read(ck2.join(&name)).unwrap(), "{name:?}");
    }
}
