use std::path::Path;
use std::process::{Command, Output};

fn tnn_eig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tnn-eig"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn preset_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = tnn_eig(&["--preset", "box-laplace", "--steps-adam", "20", "--steps-lbfgs", "5", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("results.json")).unwrap()).unwrap();
    assert_eq!(json["schema"], "tnn-eig/results/v1");
    assert_eq!(json["rows"].as_array().unwrap().len(), 4);
    assert_eq!(json["adam_steps"], 20);
    let table = std::fs::read_to_string(dir.path().join("results.txt")).unwrap();
    assert_eq!(table.lines().count(), 2 + 4);
    assert!(dir.path().join("checkpoint.bin").exists());
    assert!(dir.path().join("timing.json").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("final loss"));
}

#[test]
fn resume_continues_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let first = tnn_eig(&["--preset", "box-laplace", "--steps-adam", "10", "--steps-lbfgs", "0", "--out", path(dir.path())]);
    assert_eq!(first.status.code(), Some(0));
    let ckpt = dir.path().join("checkpoint.bin");
    let resumed_dir = dir.path().join("resumed");
    let second = tnn_eig(&[
        "--preset", "box-laplace", "--steps-adam", "15", "--steps-lbfgs", "0",
        "--resume", path(&ckpt), "--out", path(&resumed_dir),
    ]);
    assert_eq!(second.status.code(), Some(0), "{}", String::from_utf8_lossy(&second.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(resumed_dir.join("results.json")).unwrap()).unwrap();
    assert_eq!(json["adam_steps"], 15);
}

#[test]
fn printed_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = tnn_eig(&["--preset", "hydrogen", "--seed", "5", "--print-config"]);
    assert_eq!(out.status.code(), Some(0));
    let file = dir.path().join("run.toml");
    std::fs::write(&file, &out.stdout).unwrap();
    let again = tnn_eig(&["--config", path(&file), "--print-config"]);
    assert_eq!(again.status.code(), Some(0), "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(out.stdout, again.stdout);
    assert!(String::from_utf8_lossy(&out.stdout).contains("seed = 5"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.toml");
    std::fs::write(&file, "seed = 1\nk = 0\n").unwrap();
    assert_eq!(tnn_eig(&["--config", path(&file)]).status.code(), Some(2));
    assert_eq!(tnn_eig(&["--config", path(&dir.path().join("missing.toml"))]).status.code(), Some(2));
    assert_eq!(tnn_eig(&["--preset", "no-such-preset"]).status.code(), Some(2));
    assert_eq!(tnn_eig(&[]).status.code(), Some(2));
    let garbage = dir.path().join("garbage.bin");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = tnn_eig(&["--preset", "box-laplace", "--resume", path(&garbage), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overflowing_stiffness_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let printed = tnn_eig(&["--preset", "box-laplace", "--print-config"]);
    let text = String::from_utf8(printed.stdout).unwrap();
    // Custom forms whose stiffness overflows to infinity.
    let mut doc: toml::Table = text.parse().unwrap();
    let kernel = |deriv: i64| {
        let mut t = toml::Table::new();
        t.insert("weight".into(), toml::Value::String("one".into()));
        t.insert("deriv_left".into(), toml::Value::Integer(deriv));
        t.insert("deriv_right".into(), toml::Value::Integer(deriv));
        toml::Value::Table(t)
    };
    let term = |coeff: f64| {
        let mut t = toml::Table::new();
        t.insert("coeff".into(), toml::Value::Float(coeff));
        t.insert("kernels".into(), toml::Value::Array(vec![kernel(0), kernel(0)]));
        toml::Value::Table(t)
    };
    let mut problem = toml::Table::new();
    problem.insert("kind".into(), toml::Value::String("custom".into()));
    problem.insert("a".into(), toml::Value::Array(vec![term(1e308), term(1e308)]));
    problem.insert("b".into(), toml::Value::Array(vec![term(1.0)]));
    doc.insert("problem".into(), toml::Value::Table(problem));
    let file = dir.path().join("overflow.toml");
    std::fs::write(&file, toml::to_string(&doc).unwrap()).unwrap();
    let out = tnn_eig(&["--config", path(&file), "--steps-adam", "1", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("numerical failure"));
}
