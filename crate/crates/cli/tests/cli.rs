use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn limexp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_limexp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}, stderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// 12x12 grayscale image, a partition into 2x3 blocks and a few model specs.
struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut pgm = b"P5\n12 12\n255\n".to_vec();
        pgm.extend((0..144u32).map(|u| ((u * 37 + 11) % 251) as u8));
        std::fs::write(dir.path().join("img.pgm"), pgm).unwrap();
        let specs = [
            ("shape.json", r#"{"type":"shape_detector","tau":0.1,"pixels":[26,27]}"#.to_string()),
            ("mlp.json", r#"{"type":"mlp","init":{"hidden":[6],"seed":3,"scale":2.0}}"#.to_string()),
            ("const.json", r#"{"type":"constant","value":0.75}"#.to_string()),
            (
                "linear.json",
                format!(
                    r#"{{"type":"linear","coefficients":[{}]}}"#,
                    (0..144).map(|u| format!("{}", (u as f64 * 0.3).sin())).collect::<Vec<_>>().join(",")
                ),
            ),
        ];
        for (name, body) in specs {
            std::fs::write(dir.path().join(name), body).unwrap();
        }
        let f = Self { dir };
        let out = limexp(&[
            "segment",
            "--image",
            p(&f.path("img.pgm")),
            "--segmenter",
            "grid",
            "--rows",
            "2",
            "--cols",
            "3",
            "--output",
            p(&f.path("part.csv")),
        ]);
        assert_eq!(stdout_json(&out)["d"], 6);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn input(&self, model: &str) -> Vec<String> {
        vec![
            "--image".into(),
            p(&self.path("img.pgm")).into(),
            "--partition".into(),
            p(&self.path("part.csv")).into(),
            "--model".into(),
            p(&self.path(model)).into(),
        ]
    }

    fn run(&self, cmd: &str, model: &str, extra: &[&str]) -> Output {
        let mut args: Vec<String> = vec![cmd.into()];
        args.extend(self.input(model));
        args.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        limexp(&refs)
    }
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn segment_writes_partition_and_sidecar() {
    let f = Fixture::new();
    assert!(f.path("part.csv").exists());
    let sidecar = std::fs::read_dir(f.dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .any(|e| e.file_name().to_string_lossy().ends_with(".json") && e.file_name() != "shape.json");
    assert!(sidecar);
}

#[test]
fn explain_reports_fixed_keys_and_is_deterministic() {
    let f = Fixture::new();
    let out_dir = f.path("out");
    let args = ["--n", "300", "--k", "2", "--seed", "9", "--out-dir", p(&out_dir)];
    let a = f.run("explain", "mlp.json", &args);
    let b = f.run("explain", "mlp.json", &args);
    assert_eq!(a.stdout, b.stdout);
    let v = stdout_json(&a);
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    let at: Vec<usize> = ["intercept", "coefficients", "top_k", "config"]
        .iter()
        .map(|k| text.find(&format!("\"{k}\"")).unwrap())
        .collect();
    assert!(at.windows(2).all(|w| w[0] < w[1]), "key order: {text}");
    assert_eq!(floats(&v["coefficients"]).len(), 6);
    for id in v["top_k"].as_array().unwrap() {
        let id = id.as_u64().unwrap();
        assert!((1..=6).contains(&id), "ids are 1-based");
    }
    assert!(out_dir.join("explanation.json").exists());
    let csv = std::fs::read_to_string(out_dir.join("explanation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);

    let c = f.run("explain", "mlp.json", &["--n", "300", "--seed", "10"]);
    assert_ne!(stdout_json(&c)["coefficients"], v["coefficients"]);
}

#[test]
fn thread_count_does_not_change_results() {
    let f = Fixture::new();
    let one = f.run("explain", "mlp.json", &["--n", "500", "--threads", "1"]);
    let three = f.run("explain", "mlp.json", &["--n", "500", "--threads", "3", "--batch-size", "7"]);
    assert_eq!(stdout_json(&one)["coefficients"], stdout_json(&three)["coefficients"]);
}

#[test]
fn limit_closed_form_agrees_with_enumeration() {
    let f = Fixture::new();
    for model in ["shape.json", "linear.json", "const.json"] {
        for nu in ["0.5", "inf"] {
            let closed = stdout_json(&f.run("limit", model, &["--nu", nu]));
            let exact = stdout_json(&f.run("limit", model, &["--nu", nu, "--estimator", "exact"]));
            assert_eq!(closed["config"]["estimator"], "closed-form");
            let a = floats(&closed["coefficients"]);
            let b = floats(&exact["coefficients"]);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9, "{model} nu={nu}: {a:?} vs {b:?}");
            }
        }
    }
}

#[test]
fn limit_defaults_to_exact_for_networks_and_reports_sample_bound() {
    let f = Fixture::new();
    let v = stdout_json(&f.run("limit", "mlp.json", &[]));
    assert_eq!(v["config"]["estimator"], "exact");
    assert_eq!(v["config"]["nu"].as_f64(), Some(0.25));
    let out = f.run("limit", "mlp.json", &["--estimator", "closed-form"]);
    assert_eq!(out.status.code(), Some(1));

    let v = stdout_json(&f.run("limit", "const.json", &["--nu", "inf", "--epsilon", "1", "--eta", "0.5"]));
    assert_eq!(v["config"]["nu"], "inf");
    assert!(v["config"]["sample_size_bound"].is_string());

    let mc = stdout_json(&f.run("limit", "mlp.json", &["--estimator", "monte-carlo", "--samples", "20000"]));
    let ex = stdout_json(&f.run("limit", "mlp.json", &[]));
    for (x, y) in floats(&mc["coefficients"]).iter().zip(floats(&ex["coefficients"])) {
        assert!((x - y).abs() < 0.05);
    }
}

#[test]
fn ig_on_linear_model_matches_limit_and_dumps_gradients() {
    let f = Fixture::new();
    let dump = f.path("ig.csv");
    let ig = stdout_json(&f.run("ig", "linear.json", &["--m", "7", "--dump-ig", p(&dump)]));
    let lim = stdout_json(&f.run("limit", "linear.json", &[]));
    for (x, y) in floats(&ig["coefficients"]).iter().zip(floats(&lim["coefficients"])) {
        assert!((x - y).abs() < 1e-12);
    }
    let text = std::fs::read_to_string(dump).unwrap();
    assert_eq!(text.lines().count(), 12);
    assert!(text.lines().all(|l| l.split(',').count() == 12));
}

#[test]
fn ig_on_piecewise_constant_models_is_zero() {
    let f = Fixture::new();
    for model in ["const.json", "shape.json"] {
        let v = stdout_json(&f.run("ig", model, &[]));
        assert!(floats(&v["coefficients"]).iter().all(|&c| c == 0.0), "{model}");
        assert_eq!(v["top_k"].as_array().unwrap().len(), 0);
    }
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    assert_eq!(limexp(&["--help"]).status.code(), Some(0));
    assert_eq!(limexp(&["no-such-command"]).status.code(), Some(1));
    let missing = limexp(&["explain", "--image", "/does/not/exist.pgm", "--model", "m.json"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("exist.pgm"));
    // A negative ridge term and a zero bandwidth are input errors.
    assert_eq!(f.run("explain", "mlp.json", &["--lambda", "-1"]).status.code(), Some(1));
    assert_eq!(f.run("explain", "mlp.json", &["--nu", "0"]).status.code(), Some(1));
    // Two samples and no ridge term cannot determine seven coefficients.
    let singular = f.run("explain", "mlp.json", &["--n", "2", "--lambda", "0"]);
    assert_eq!(singular.status.code(), Some(2), "{}", String::from_utf8_lossy(&singular.stderr));
    // Huge bound at a tiny bandwidth overflows.
    let overflow = f.run("limit", "const.json", &["--nu", "0.05", "--epsilon", "0.01", "--eta", "0.1"]);
    assert_eq!(overflow.status.code(), Some(2));
    // Experiments need a config.
    assert_eq!(limexp(&["compare"]).status.code(), Some(1));
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn compare_and_concentration_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cmp.json",
        r#"{
          "model": {"type": "mlp", "init": {"hidden": [8], "seed": 2}},
          "images": {"synthetic": {"kind": "texture", "count": 2, "seed": 1, "height": 12, "width": 12}},
          "segmenter": {"method": "grid", "rows": 2, "cols": 3},
          "replacement": {"mode": "mean_per_superpixel"},
          "lime": {"n": 200},
          "k_values": [2]
        }"#,
    );
    let out = dir.path().join("out");
    let run = |seed: &str| limexp(&["compare", "--config", p(&cfg), "--out-dir", p(&out), "--seed", seed]);
    let v = stdout_json(&run("1"));
    assert_eq!(v["images_ok"], 2);
    let first = std::fs::read(out.join("comparison.json")).unwrap();
    stdout_json(&run("1"));
    assert_eq!(first, std::fs::read(out.join("comparison.json")).unwrap());
    assert!(out.join("comparison_coefficients.csv").exists());

    let cfg = write_config(
        dir.path(),
        "conc.json",
        r#"{
          "model": {"type": "mlp", "init": {"hidden": [8], "seed": 2}},
          "images": {"synthetic": {"kind": "digit", "count": 1, "seed": 4, "height": 12, "width": 12}},
          "segmenter": {"method": "grid", "rows": 2, "cols": 2},
          "replacement": {"mode": "solid_color", "color": [0.0]},
          "lime": {"n": 200},
          "repetitions": 3
        }"#,
    );
    let v = stdout_json(&limexp(&["concentration", "--config", p(&cfg), "--out-dir", p(&out)]));
    assert_eq!(v[0]["summary"].as_array().unwrap().len(), 5);
    let report: Value = serde_json::from_slice(&std::fs::read(out.join("concentration.json")).unwrap()).unwrap();
    assert_eq!(report["images"][0]["samples"].as_array().unwrap().len(), 3);
    assert!(out.join("concentration_0.dat").exists());
}

#[test]
fn selftest_passes_and_perturbation_fails() {
    let ok = limexp(&["selftest"]);
    assert_eq!(ok.status.code(), Some(0));
    let table = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(table.matches("PASS").count(), 12, "{table}");

    let bad = limexp(&["selftest", "--perturb-sigma2", "1e-6"]);
    assert_eq!(bad.status.code(), Some(3));
    let table = String::from_utf8_lossy(&bad.stdout);
    let failing: Vec<&str> = table.lines().filter(|l| l.contains("FAIL")).collect();
    assert_eq!(failing.len(), 1);
    assert!(failing[0].starts_with("useful equalities"));
}
