use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn ldmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldmc"))
        .args(args)
        .output()
        .expect("spawn ldmc")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&o.stdout)
        )
    })
}

fn check_schema(name: &str, value: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(format!("{name}.schema.json"));
    let schema: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(value)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn counterexample_files(dir: &TempDir) -> (PathBuf, PathBuf) {
    let data = p(dir, "ce.csv");
    let fit = p(dir, "ce.json");
    let o = ldmc(&[
        "counterexample",
        "--write-data",
        s(&data),
        "--write-predictor",
        s(&fit),
    ]);
    assert_eq!(code(&o), 0);
    (data, fit)
}

#[test]
fn gen_is_reproducible_and_summarised() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (p(&dir, "a.csv"), p(&dir, "b.csv"));
    let o = ldmc(&[
        "--format",
        "json",
        "--seed",
        "9",
        "gen",
        "--preset",
        "planted",
        "--n",
        "300",
        "--out",
        s(&a),
    ]);
    assert_eq!(code(&o), 0);
    let summary = stdout_json(&o);
    check_schema("gen", &summary);
    assert_eq!(summary["records"], 300);
    assert_eq!(summary["groups"].as_array().unwrap().len(), 8);
    ldmc(&[
        "--seed",
        "9",
        "gen",
        "--preset",
        "planted",
        "--n",
        "300",
        "--out",
        s(&b),
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let header = fs::read_to_string(&a)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert!(header.contains("fstar0") && header.contains("fstar1"));
}

#[test]
fn gen_rejects_invalid_specs() {
    let dir = TempDir::new().unwrap();
    let spec = p(&dir, "spec.json");
    fs::write(&spec, r#"{"classes": 2, "n": 10, "surprise": true}"#).unwrap();
    let o = ldmc(&["gen", "--spec", s(&spec), "--out", s(&p(&dir, "x.csv"))]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
    let o = ldmc(&["gen", "--preset", "planted", "--out", "/no/such/dir/x.csv"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_on_the_counterexample_reaches_alpha() {
    let dir = TempDir::new().unwrap();
    let (data, _) = counterexample_files(&dir);
    let (out, trace) = (p(&dir, "f.json"), p(&dir, "trace.csv"));
    let o = ldmc(&[
        "--format",
        "json",
        "train",
        "--data",
        s(&data),
        "--class",
        "edges:0,1",
        "--family",
        "degree",
        "--degree",
        "2",
        "--alpha",
        "0.005",
        "--out",
        s(&out),
        "--trace",
        s(&trace),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout_json(&o);
    check_schema("train", &summary);
    assert!(summary["iterations"].as_u64().unwrap() >= 1);
    assert!(summary["final_audit"].as_f64().unwrap() <= 0.005);
    let predictor: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    check_schema("predictor", &predictor);
    let header = fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    for col in [
        "iteration",
        "weight",
        "group",
        "correlation",
        "potential_proxy",
    ] {
        assert!(header.split(',').any(|h| h == col), "{header}");
    }

    let o = ldmc(&[
        "--format",
        "json",
        "diagnose",
        "--data",
        s(&data),
        "--class",
        "edges:0,1",
        "--predictor",
        s(&out),
        "--alpha",
        "0.005",
    ]);
    let report = stdout_json(&o);
    let c11 = report["covariance"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["group"] == "x0=1")
        .unwrap();
    assert!(c11["cov_f_y"].as_f64().unwrap() >= -0.03);
}

#[test]
fn train_edge_cases() {
    let dir = TempDir::new().unwrap();
    let (data, _) = counterexample_files(&dir);
    let out = p(&dir, "f.json");
    let o = ldmc(&[
        "--format",
        "json",
        "train",
        "--data",
        s(&data),
        "--class",
        "edges:0,1",
        "--family",
        "ma",
        "--base",
        "l2",
        "--alpha",
        "0.01",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["iterations"], 0);
    let o = ldmc(&[
        "train",
        "--data",
        s(&data),
        "--class",
        "edges:0,1",
        "--alpha",
        "0",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
    let trace = p(&dir, "t.csv");
    let o = ldmc(&[
        "train",
        "--data",
        s(&data),
        "--class",
        "edges:0,1",
        "--alpha",
        "0.005",
        "--max-iterations",
        "3",
        "--out",
        s(&p(&dir, "g.json")),
        "--trace",
        s(&trace),
    ]);
    assert_eq!(code(&o), 3);
    assert_eq!(fs::read_to_string(&trace).unwrap().lines().count(), 4);
}

#[test]
fn audit_gate_exit_codes() {
    let dir = TempDir::new().unwrap();
    let (data, fit) = counterexample_files(&dir);
    let args = |alpha: &'static str, family: &'static str| {
        vec![
            "--format".to_string(),
            "json".into(),
            "audit".into(),
            "--data".into(),
            s(&data).into(),
            "--class".into(),
            "edges:0,1".into(),
            "--family".into(),
            family.into(),
            "--predictor".into(),
            s(&fit).into(),
            "--alpha".into(),
            alpha.into(),
        ]
    };
    let run = |a: Vec<String>| {
        Command::new(env!("CARGO_BIN_EXE_ldmc"))
            .args(a)
            .output()
            .unwrap()
    };
    let ma = run(args("1e-9", "ma"));
    assert_eq!(code(&ma), 0);
    check_schema("audit", &stdout_json(&ma));
    let mc2 = run(args("0.03", "degree"));
    assert_eq!(code(&mc2), 1);
    let report = stdout_json(&mc2);
    check_schema("audit", &report);
    assert!((report["max_abs"].as_f64().unwrap() - 1.0 / 27.0).abs() < 1e-12);
    assert_eq!(code(&run(args("0.04", "degree"))), 0);
    let o = ldmc(&[
        "audit",
        "--data",
        "/does/not/exist.csv",
        "--class",
        "cols:0",
        "--predictor",
        "fstar",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn diagnose_reports() {
    let dir = TempDir::new().unwrap();
    let (data, fit) = counterexample_files(&dir);
    let run = |pred: &str| {
        ldmc(&[
            "--format",
            "json",
            "diagnose",
            "--data",
            s(&data),
            "--class",
            "edges:0,1",
            "--predictor",
            pred,
            "--alpha",
            "0.005",
        ])
    };
    let star = run("fstar");
    assert_eq!(code(&star), 0);
    let star = stdout_json(&star);
    check_schema("diagnose", &star);
    assert_eq!(star["pass"], true);

    let l2 = run(s(&fit));
    assert_eq!(code(&l2), 1);
    let l2 = stdout_json(&l2);
    check_schema("diagnose", &l2);
    let c11 = l2["covariance"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["group"] == "x0=1")
        .unwrap();
    assert!((c11["cov_f_y"].as_f64().unwrap() + 1.0 / 12.0).abs() < 1e-9);
    assert_eq!(c11["lower_ok"], false);

    let bare = p(&dir, "bare.csv");
    fs::write(&bare, "x0,x1,y\n0,0,1\n1,1,0\n").unwrap();
    let o = ldmc(&[
        "diagnose",
        "--data",
        s(&bare),
        "--class",
        "cols:0",
        "--predictor",
        s(&fit),
        "--alpha",
        "0.1",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn counterexample_json() {
    let o = ldmc(&["--format", "json", "counterexample"]);
    assert_eq!(code(&o), 0);
    let report = stdout_json(&o);
    check_schema("counterexample", &report);
    assert!((report["covariance_c11"].as_f64().unwrap() + 1.0 / 12.0).abs() < 1e-9);
    let text = String::from_utf8(ldmc(&["counterexample"]).stdout).unwrap();
    assert!(text.contains("Cov[f, y | c11] = -0.083333333333"));
    let o = ldmc(&["counterexample", "--eps", "0.3"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn compare_rows_and_determinism() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (p(&dir, "a.csv"), p(&dir, "b.csv"));
    let args = |out: &Path| {
        ldmc(&[
            "--format",
            "json",
            "compare",
            "--preset",
            "adversarial",
            "--sizes",
            "400",
            "--seeds",
            "0,1,2,3,4",
            "--out",
            s(out),
        ])
    };
    let o = args(&a);
    assert_eq!(code(&o), 0);
    let rows = stdout_json(&o);
    check_schema("compare", &rows);
    assert_eq!(rows.as_array().unwrap().len(), 5 * 3 * 2 * 2);
    args(&b);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let header = fs::read_to_string(&a)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert!(header.starts_with("method,size,seed,split,metric,value"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&ldmc(&["frobnicate"])), 2);
    assert_eq!(code(&ldmc(&["train", "--alpha", "0.1"])), 2);
    assert_eq!(code(&ldmc(&["--help"])), 0);
}
