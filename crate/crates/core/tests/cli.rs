use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn small_drift(out: &Path) -> Value {
    json!({
        "name": "small_drift",
        "scenario_kind": "drift_diffusion",
        "grid": { "x_min": -1.0, "x_max": 1.0, "n": 7 },
        "coefficients": { "a": 0.5, "b": -0.3, "d_coef": 0.1, "c": 0.0 },
        "alpha": 1.0,
        "obstacles": {
            "lower": { "kind": "hat", "center": 0.5, "width": 0.6, "height": 0.6 },
            "upper": { "kind": "hat", "center": -0.5, "width": 0.6, "height": -0.4, "base": 0.8 }
        },
        "mc": { "n_paths": 2000, "dt": 0.001, "t_max": 3.0, "seed": 4, "x0": 0.0,
                "sweep": [{ "kind": "threshold_above", "level": 0.3 }] },
        "solver": { "tol": 1e-13 },
        "outputs": out,
    })
}

fn write_config(dir: &Path, config: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn dynkin(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynkin"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn every_verb_writes_its_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), &small_drift(&out));

    let o = dynkin(&["assemble"], &config, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["n"], 7);
    assert_eq!(summary["markov_passes"], true);
    assert!(read_json(out.join("form.json"))["triplets"].is_array());

    for method in ["pgs", "penalty", "separability"] {
        let o = dynkin(&["solve", "--method", method], &config, &out);
        assert_eq!(code(&o), 0, "{method}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(read_json(out.join("solution.json"))["method"], method);
    }
    let profile = fs::read_to_string(out.join("profile.csv")).unwrap();
    assert_eq!(profile.lines().next().unwrap(), "x,g,h,v,lower_contact,upper_contact");
    assert_eq!(profile.lines().count(), 8);

    let o = dynkin(&["oracle"], &config, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let oracle = read_json(out.join("oracle.json"));
    assert!(oracle["sup_diff"].as_f64().unwrap() <= 1e-8);
    assert_eq!(oracle["saddle"]["passes"], true);
    let table = fs::read_to_string(out.join("enumeration.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + (1 << 14));
    assert!(read_json(out.join("chain.json"))["P_triplets"].is_array());

    let o = dynkin(&["simulate"], &config, &out);
    assert_eq!(code(&o), 0);
    let est = read_json(out.join("simulate.json"))["estimate"].clone();
    assert_eq!(est["n_paths"], 2000);
    assert_eq!(est["seed"], 4);

    let o = dynkin(&["verify"], &config, &out);
    assert!(matches!(code(&o), 0 | 2));
    let report = read_json(out.join("mc_report.json"));
    assert_eq!(report["passes"].as_bool().unwrap(), code(&o) == 0);
    assert!(fs::read_to_string(out.join("mc.csv")).unwrap().starts_with("rule,side,J,stderr,reference,pass"));

    let o = dynkin(&["run"], &config, &out);
    let report = read_json(out.join("report.json"));
    let expected = match report["status"].as_str().unwrap() {
        "pass" => 0,
        "fail" => 2,
        _ => 3,
    };
    assert_eq!(code(&o), expected);
    for file in ["errors.json", "metadata.json", "solution.json", "profile.csv"] {
        assert!(out.join(file).exists(), "{file}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), &small_drift(&out));
    let mut args = vec!["simulate", "--seed", "99"];
    let o = dynkin(&args, &config, &out);
    assert_eq!(code(&o), 0);
    let a = read_json(out.join("simulate.json"))["estimate"].clone();
    assert_eq!(a["seed"], 99);
    args[2] = "4";
    dynkin(&args, &config, &out);
    let b = read_json(out.join("simulate.json"))["estimate"].clone();
    assert_ne!(a["mean"], b["mean"]);
}

#[test]
fn unknown_field_is_a_schema_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let mut config = small_drift(&out);
    config["grid"]["spacing"] = json!(0.1);
    let path = write_config(dir.path(), &config);
    let o = dynkin(&["run"], &path, &out);
    assert_eq!(code(&o), 2);
    let errors = read_json(out.join("errors.json"));
    assert_eq!(errors[0]["kind"], "schema");
    assert!(errors[0]["message"].as_str().unwrap().contains("spacing"), "{errors}");
}

#[test]
fn missing_config_exits_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = dynkin(&["solve"], &dir.path().join("absent.json"), &out);
    assert_eq!(code(&o), 2);
    assert!(out.join("errors.json").exists());
}

#[test]
fn exhausted_budget_exits_three() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let mut config = small_drift(&out);
    config["solver"]["max_iter"] = json!(1);
    let path = write_config(dir.path(), &config);
    for verb in ["solve", "run"] {
        let o = dynkin(&[verb], &path, &out);
        assert_eq!(code(&o), 3, "{verb}");
        let errors = read_json(out.join("errors.json"));
        assert_eq!(errors[0]["kind"], "non_convergence", "{verb}: {errors}");
    }
}

#[test]
fn jump_scenario_is_not_simulated() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let config = json!({
        "name": "small_jump",
        "scenario_kind": "jump",
        "grid": { "x_min": -1.0, "x_max": 1.0, "n": 15 },
        "coefficients": { "kappa": 0.5, "beta_exp": 1.2, "eta": 0.3, "R": 0.6 },
        "alpha": 1.0,
        "obstacles": {
            "lower": { "kind": "hat", "center": 0.0, "width": 0.5, "height": 0.7 },
            "upper": { "kind": "hat", "center": 0.5, "width": 0.4, "height": -0.3, "base": 0.8 }
        },
        "outputs": out,
    });
    let path = write_config(dir.path(), &config);
    assert_eq!(code(&dynkin(&["simulate"], &path, &out)), 2);
    let o = dynkin(&["run"], &path, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = read_json(out.join("report.json"));
    assert!(report["mc"].is_null());
    assert!(!report["notes"].as_array().unwrap().is_empty());
}

#[test]
fn callable_put_without_penalty_passes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let config = json!({
        "name": "put_no_penalty",
        "scenario_kind": "callable_put",
        "grid": { "x_min": -2.0, "x_max": 3.0, "n": 49 },
        "coefficients": { "lambda": 1.0, "mu": 0.2, "strike": 1.0, "cap": 1.5, "penalty_profile": 0.0 },
        "alpha": 0.5,
        "mc": { "n_paths": 1000, "dt": 0.01, "t_max": 2.0, "seed": 2, "x0": 0.5 },
        "outputs": out,
    });
    let path = write_config(dir.path(), &config);
    let o = dynkin(&["oracle"], &path, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}
