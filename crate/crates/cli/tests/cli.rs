use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aoi_sense::harness::{sha256_hex, Manifest, MANIFEST_FILE};

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi-sense"))
        .current_dir(dir)
        .env_remove("AOI_SENSE_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn with_config<'a>(cfg: &'a str, args: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![args[0], "--config", cfg];
    v.extend_from_slice(&args[1..]);
    v
}

fn check_manifest(dir: &Path, command: &str) {
    let m: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m.command, command);
    assert!(!m.outputs.is_empty());
    for o in &m.outputs {
        let bytes = fs::read(dir.join(&o.path)).unwrap();
        assert_eq!(sha256_hex(&bytes), o.sha256, "{}", o.path);
    }
}

#[test]
fn pipeline_chains_artifacts_by_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let steps: [(&str, Vec<&str>); 4] = [
        ("generate", vec!["generate", "--out", "gen"]),
        (
            "train-predictor",
            vec!["train-predictor", "--data", "gen", "--out", "pred"],
        ),
        (
            "train-dqn",
            vec![
                "train-dqn",
                "--data",
                "gen",
                "--predictor",
                "pred",
                "--out",
                "agent",
            ],
        ),
        (
            "evaluate",
            vec![
                "evaluate",
                "--data",
                "gen/scenario.csv",
                "--predictor",
                "pred",
                "--agent",
                "agent",
                "--seed",
                "7",
                "--out",
                "eval",
            ],
        ),
    ];
    for (name, args) in &steps {
        let o = run(tmp.path(), &with_config(cfg, args));
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        let out = args[args.len() - 1];
        check_manifest(&tmp.path().join(out), name);
    }
    let eval = tmp.path().join("eval");
    for f in ["metrics.csv", "results.csv", "summary.csv", "trace.csv"] {
        assert!(eval.join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("dqn,0.3,10,3,7,"));

    let o = run(tmp.path(), &["plot", "--results", "eval"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(eval.join("plots/top1_vs_budget.svg").exists());
}

#[test]
fn generate_is_reproducible_and_honours_out_env() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let a = run(
        tmp.path(),
        &["generate", "--config", cfg, "--seed", "3", "--out", "a"],
    );
    assert!(a.status.success());
    let b = Command::new(env!("CARGO_BIN_EXE_aoi-sense"))
        .current_dir(tmp.path())
        .env("AOI_SENSE_OUT", tmp.path().join("b"))
        .args(["generate", "--config", cfg, "--seed", "3"])
        .output()
        .unwrap();
    assert!(b.status.success(), "{}", stderr(&b));
    let read = |d: &str| fs::read(tmp.path().join(d).join("scenario.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    let c = run(
        tmp.path(),
        &["generate", "--config", cfg, "--seed", "4", "--out", "c"],
    );
    assert!(c.status.success());
    assert_ne!(read("a"), read("c"));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();

    let o = run(tmp.path(), &["evaluate", "--data", "x", "--predictor", "y"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--config"));

    let o = run(
        tmp.path(),
        &["generate", "--config", cfg, "--set", "dqn.gamma=1.5"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gamma < 1"), "{}", stderr(&o));

    let o = run(
        tmp.path(),
        &["generate", "--config", cfg, "--set", "dqn.gama=0.5"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dqn.gama=0.5"), "{}", stderr(&o));

    let o = run(tmp.path(), &["generate", "--config", "does/not/exist.toml"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(tmp.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    // nothing was written by the rejected commands
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn runtime_failures_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let o = run(tmp.path(), &["generate", "--config", cfg, "--out", "gen"]);
    assert!(o.status.success());

    let o = run(
        tmp.path(),
        &[
            "evaluate",
            "--config",
            cfg,
            "--data",
            "gen",
            "--predictor",
            "nope",
            "--out",
            "e",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing artifact"), "{}", stderr(&o));

    let o = run(
        tmp.path(),
        &[
            "train-predictor",
            "--config",
            cfg,
            "--data",
            "missing",
            "--out",
            "p",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing artifact"), "{}", stderr(&o));

    fs::create_dir(tmp.path().join("empty")).unwrap();
    let o = run(tmp.path(), &["plot", "--results", "empty"]);
    assert_eq!(o.status.code(), Some(1));
}
