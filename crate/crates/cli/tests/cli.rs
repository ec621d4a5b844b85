use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mafgan"))
}

fn recipes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes")
}

const SMALL: &[&str] = &[
    "--set", "train.epochs=2",
    "--set", "train.batch_size=32",
    "--set", "data.count=128",
    "--set", "train.generator.hidden=8",
    "--set", "train.discriminator.hidden=8",
    "--set", "train.schedule.eval_samples=64",
    "--set", "train.schedule.probe_batch=32",
    "--set", "train.schedule.confmap_resolution=5",
    "--set", "train.schedule.confmap_epochs=[0, 1, 2]",
];

fn run(recipe: &str, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("run")
        .arg(recipes().join(recipe))
        .args(["--seed", "0", "--seed", "1", "--out"])
        .arg(out)
        .args(SMALL)
        .args(extra)
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stdout:\n{}\nstderr:\n{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
}

#[test]
fn run_writes_self_describing_directory() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&run("maf-e-tc-gaussians", tmp.path(), &[]));
    let dir = tmp.path().join("maf-e-tc-gaussians");
    for f in ["config.toml", "manifest.json", "seed-0/record.csv", "seed-0/summary.json", "seed-0/confmap_epoch0.csv",
        "seed-0/confmap_epoch1.csv", "seed-0/confmap_epoch2.csv", "seed-1/weight_hist.csv", "seed-1/generator.ckpt"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let first = fs::read(dir.join("manifest.json")).unwrap();

    // the written config alone reproduces the run
    let again = tmp.path().join("again");
    ok(&bin().arg("run").arg(dir.join("config.toml")).arg("--out").arg(&again).output().unwrap());
    assert_eq!(first, fs::read(again.join("maf-e-tc-gaussians/manifest.json")).unwrap());
}

#[test]
fn invalid_config_names_every_field() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run("maf-e-tc-gaussians", tmp.path(), &["--set", "train.objective=maf-z", "--set", "train.constraint.tc_metric=l3"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("train.objective"), "{err}");
    assert!(err.contains("train.constraint.tc_metric"), "{err}");

    let o = run("maf-e-tc-gaussians", tmp.path(), &["--set", "train.learning_rate=1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn compare_needs_two_runs_and_reports_sd() {
    let tmp = tempfile::tempdir().unwrap();
    for k in ["k-1", "k-5"] {
        ok(&run(k, tmp.path(), &[]));
    }
    let one = bin().arg("compare").arg(tmp.path().join("k-1")).output().unwrap();
    assert!(!one.status.success());

    let prefix = tmp.path().join("table");
    ok(&bin().arg("compare").arg(tmp.path().join("k-1")).arg(tmp.path().join("k-5")).arg("--out").arg(&prefix).output().unwrap());
    let csv = fs::read_to_string(prefix.with_extension("csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("final_frechet_sd"));
    assert_eq!(csv.lines().count(), 3);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(prefix.with_extension("json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn confmap_and_probe_reload_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&run("maf-c-tc-gaussians", tmp.path(), &[]));
    let seed = tmp.path().join("maf-c-tc-gaussians/seed-1");
    let map = tmp.path().join("map.csv");
    ok(&bin().arg("confmap").arg(&seed).args(["--resolution", "5", "--out"]).arg(&map).output().unwrap());
    assert_eq!(fs::read(&map).unwrap(), fs::read(seed.join("confmap_epoch2.csv")).unwrap());

    let o = bin().arg("probe").arg(&seed).args(["--trials", "3", "--batch", "16"]).output().unwrap();
    ok(&o);
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["trials"], 3);
    assert!(stats["mean"].as_f64().unwrap() >= 0.0);
}

#[test]
fn verify_passes_and_catches_broken_ordering() {
    let o = bin().arg("verify").output().unwrap();
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
    assert!(text.lines().all(|l| !l.starts_with("FAIL")));

    let broken = bin().args(["verify", "--break-tc-order"]).output().unwrap();
    assert!(!broken.status.success());
    assert!(String::from_utf8_lossy(&broken.stdout).contains("FAIL tc_affine_exact_zero"));
}
