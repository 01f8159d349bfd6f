//! End-to-end checks of the binary: exit codes, produced artifacts, and
//! trace determinism.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aap-cli"))
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("aap_cli_test_{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("run"));
}

#[test]
fn invalid_flags_exit_two() {
    for args in [
        vec!["run"],
        vec!["run", "--problem", "bogus"],
        vec!["run", "--problem", "affine", "--solvers", "nope"],
        vec!["run", "--problem", "affine", "--m", "0"],
        vec!["run", "--problem", "affine", "--tol", "-1"],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "args {args:?}");
    }
}

#[test]
fn affine_run_emits_traces_and_aap_wins() {
    let dir = temp_dir("affine");
    let out = bin()
        .args([
            "run",
            "--problem",
            "affine",
            "--d",
            "20",
            "--norm",
            "0.9",
            "--solvers",
            "picard,aap",
            "--m",
            "5",
            "--tol",
            "1e-10",
            "--out-dir",
        ])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    for name in ["picard.csv", "picard.json", "aap.csv", "aap.json", "summary.json"] {
        assert!(dir.join(name).exists(), "missing {name}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    let to_tol = |solver: &str| {
        summary["solvers"][solver]["runs"][0]["g_evals_to_tol"]
            .as_u64()
            .unwrap()
    };
    assert!(to_tol("aap") < to_tol("picard"));
}

#[test]
fn identical_specs_give_byte_identical_traces() {
    let dir_a = temp_dir("det_a");
    let dir_b = temp_dir("det_b");
    for dir in [&dir_a, &dir_b] {
        let out = bin()
            .args([
                "run",
                "--problem",
                "quadratic",
                "--d",
                "8",
                "--solvers",
                "aap",
                "--diagnostics",
                "--seed",
                "7",
                "--out-dir",
            ])
            .arg(dir)
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    for name in ["aap.csv", "aap.json", "summary.json"] {
        let a = std::fs::read(dir_a.join(name)).unwrap();
        let b = std::fs::read(dir_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn sweep_m_emits_combined_trace() {
    let dir = temp_dir("sweep");
    let out = bin()
        .args([
            "sweep-m",
            "--problem",
            "logistic",
            "--n",
            "80",
            "--d",
            "8",
            "--solvers",
            "aap",
            "--m-values",
            "1,3,3",
            "--out-dir",
        ])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate m value"));
    let trace = std::fs::read_to_string(dir.join("sweep_m.csv")).unwrap();
    assert!(trace.lines().any(|l| l.starts_with("aap_m1,")));
    assert!(trace.lines().any(|l| l.starts_with("aap_m3,")));
    assert!(dir.join("sweep_summary.json").exists());
}

#[test]
fn repeats_produce_per_seed_traces_and_quartiles() {
    let dir = temp_dir("repeats");
    let out = bin()
        .env("AAP_THREADS", "2")
        .args([
            "run",
            "--problem",
            "affine",
            "--d",
            "10",
            "--solvers",
            "aap",
            "--repeats",
            "3",
            "--out-dir",
        ])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    for seed in 0..3 {
        assert!(dir.join(format!("aap_seed{seed}.csv")).exists());
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    let q = &summary["solvers"]["aap"]["g_evals_to_tol"];
    assert_eq!(q["successes"].as_u64(), Some(3));
    assert!(q["median"].as_f64().unwrap() > 0.0);
    assert!(q["iqr"].as_f64().unwrap() >= 0.0);
}
