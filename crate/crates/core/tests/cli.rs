use std::path::Path;
use std::process::Command;

const SMOKE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml");

fn ved(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ved"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn missing_config_is_a_config_error() {
    let out = ved(&["generate", "--config", "/nonexistent/ved.toml", "--out", "/tmp/ved-never"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "seed = 1\n[train]\nepochz = 3\n").unwrap();
    let out = ved(&["generate", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = ved(&["generate", "--config", SMOKE, "--out", d.path().to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (fa, fb) = (files(&a.path().join("dataset")), files(&b.path().join("dataset")));
    assert_eq!(fa.len(), 4);
    assert_eq!(fa, fb);
    assert!(a.path().join("run_manifest.json").exists());
}

#[test]
fn stages_chain_through_the_cli() {
    let d = tempfile::tempdir().unwrap();
    let out_dir = d.path().to_str().unwrap();
    let run = |args: &[&str]| {
        let mut all = args.to_vec();
        all.extend(["--config", SMOKE, "--out", out_dir]);
        let o = ved(&all);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    run(&["generate"]);
    let cca = run(&["cca"]);
    assert!(cca.contains("latent_dim_for_threshold"));
    let cev = std::fs::read_to_string(d.path().join("cca/cev.csv")).unwrap();
    let last: f64 = cev.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(last, 1.0);
    assert_eq!(cev.lines().count(), 1 + 6);

    let train = run(&["train", "--epochs", "1", "--r", "3"]);
    assert!(train.contains("best test mse"));
    assert!(d.path().join("train/best/checkpoint.json").exists());
    for cmd in ["eval-recon", "eval-decode", "eval-cov"] {
        run(&[cmd]);
    }
    let manifest = std::fs::read_to_string(d.path().join("run_manifest.json")).unwrap();
    assert!(manifest.contains("eval-cov"));
}
