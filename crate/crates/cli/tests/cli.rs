use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pmqkd"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const BASE: &str = r#"{
  "channel": {"distance_km": 50.0, "dark_count": 1e-8},
  "params": {"mu_x": 0.05, "mu_y": 0.1, "p_basis0": 0.9, "p_aux0": 0.8, "p_trash": 0.1, "n_tot": 1e12},
  "sweep": {"distance_min_km": 40.0, "distance_max_km": 80.0, "step_km": 20.0, "optimize": false},
  "validation": {"trials": 200, "epsilon": 0.05},
  "seed": 11
}"#;

fn setup(cfg: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cfg.json");
    std::fs::write(&p, cfg).unwrap();
    (dir, p)
}

fn without_timestamp(text: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    v.as_object_mut().unwrap().remove("generated_at_unix");
    v
}

#[test]
fn certify_writes_accepted_certificate() {
    let (dir, _) = setup(BASE);
    let o = run(dir.path(), &["certify", "--config", "cfg.json", "--certificate", "c.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("c.json")).unwrap()).unwrap();
    assert_eq!(v["verification"]["accepted"], serde_json::Value::Bool(true));
}

#[test]
fn certify_is_deterministic() {
    let (dir, _) = setup(BASE);
    for f in ["a.json", "b.json"] {
        assert_eq!(code(&run(dir.path(), &["certify", "--config", "cfg.json", "--out", f])), 0);
    }
    let a = std::fs::read_to_string(dir.path().join("a.json")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b.json")).unwrap();
    assert_eq!(without_timestamp(&a), without_timestamp(&b));
}

#[test]
fn corrupt_config_exits_2_without_output() {
    let (dir, _) = setup("{ \"channel\": ");
    let o = run(dir.path(), &["certify", "--config", "cfg.json", "--certificate", "c.json"]);
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("c.json").exists());
    assert!(!o.stderr.is_empty());
}

#[test]
fn unknown_field_and_bad_values_are_config_errors() {
    let (dir, _) = setup(&BASE.replace("\"seed\"", "\"sed\""));
    assert_eq!(code(&run(dir.path(), &["certify", "--config", "cfg.json"])), 2);
    let (dir, _) = setup(&BASE.replace("\"p_trash\": 0.1", "\"p_trash\": 1.5"));
    assert_eq!(code(&run(dir.path(), &["certify", "--config", "cfg.json"])), 2);
    let (dir, _) = setup(&BASE.replace("\"step_km\": 20.0", "\"step_km\": 0.0"));
    assert_eq!(code(&run(dir.path(), &["sweep", "--config", "cfg.json"])), 2);
    let (dir, _) = setup(BASE);
    assert_eq!(code(&run(dir.path(), &["certify", "--config", "missing.json"])), 2);
}

#[test]
fn missing_instance_file_is_rejected_at_load() {
    let (dir, _) = setup(&BASE.replacen('{', "{\"protocol\": \"custom-instance-file\", \"instance_file\": \"nope.json\",", 1));
    assert_eq!(code(&run(dir.path(), &["certify", "--config", "cfg.json"])), 2);
}

#[test]
fn unwritable_output_is_computation_failure() {
    let (dir, _) = setup(BASE);
    let o = run(dir.path(), &["sweep", "--config", "cfg.json", "--out", "no/such/dir/out.csv"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn finite_rate_uses_stored_certificate_and_refuses_stale_one() {
    let (dir, _) = setup(BASE);
    assert_eq!(code(&run(dir.path(), &["certify", "--config", "cfg.json", "--certificate", "c.json"])), 0);
    let o = run(dir.path(), &["finite-rate", "--config", "cfg.json", "--certificate", "c.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["finite"]["rate_per_pulse"].as_f64().unwrap() > 0.0);

    std::fs::write(dir.path().join("cfg2.json"), BASE.replace("\"mu_x\": 0.05", "\"mu_x\": 0.06")).unwrap();
    let o = run(dir.path(), &["finite-rate", "--config", "cfg2.json", "--certificate", "c.json"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stale"));
}

#[test]
fn finite_rate_with_observed_counts() {
    let cfg = BASE.replacen(
        "\"seed\"",
        "\"observed\": {\"n_sig\": 1.8e10, \"n_bit_x\": 1e3, \"n_bit_y\": 1e3, \"n_pass_x\": 2.3e10, \"n_pass_y\": 6.1e10},\n  \"seed\"",
        1,
    );
    let (dir, _) = setup(&cfg);
    let o = run(dir.path(), &["finite-rate", "--config", "cfg.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["counts"]["n_sig"].as_f64(), Some(1.8e10));
}

#[test]
fn sweep_rows_columns_and_order() {
    let (dir, _) = setup(BASE);
    let o = run(dir.path(), &["sweep", "--config", "cfg.json", "--threads", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "distance_km,eta_tot,rate_finite,rate_asymptotic,rate_plob,mu_x,mu_y,n_sig_nom"
    );
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![40.0, 60.0, 80.0]);
    for w in rows.windows(2) {
        assert!(w[1][2] <= w[0][2]);
    }
    assert!(rows.iter().all(|r| r[2] >= 0.0 && r[3] >= 0.0));
}

#[test]
fn zero_length_sweep_gives_single_row() {
    let (dir, _) = setup(&BASE.replace("\"distance_max_km\": 80.0", "\"distance_max_km\": 40.0"));
    let o = run(dir.path(), &["sweep", "--config", "cfg.json"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 2);
}

#[test]
fn sweep_reuses_certificate_across_distances() {
    let (dir, _) = setup(BASE);
    assert_eq!(code(&run(dir.path(), &["certify", "--config", "cfg.json", "--certificate", "c.json"])), 0);
    let with = run(dir.path(), &["sweep", "--config", "cfg.json", "--certificate", "c.json"]);
    assert_eq!(code(&with), 0, "{}", String::from_utf8_lossy(&with.stderr));
    // a fresh sweep certifies at every distance, so rates agree closely but not bitwise
    let fresh = run(dir.path(), &["sweep", "--config", "cfg.json", "--threads", "1"]);
    let parse = |o: &Output| -> Vec<Vec<f64>> {
        String::from_utf8_lossy(&o.stdout).lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect()
    };
    let (a, b) = (parse(&with), parse(&fresh));
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x[0], y[0]);
        assert!((x[2] - y[2]).abs() <= 1e-3 * y[2], "{} vs {}", x[2], y[2]);
    }
    let again = run(dir.path(), &["sweep", "--config", "cfg.json", "--certificate", "c.json", "--threads", "2"]);
    assert_eq!(with.stdout, again.stdout);
}

#[test]
fn validate_is_reproducible_from_seed() {
    let (dir, _) = setup(&BASE.replace("1e12", "1e5"));
    let a = run(dir.path(), &["validate", "--config", "cfg.json", "--seed", "4"]);
    let b = run(dir.path(), &["validate", "--config", "cfg.json", "--seed", "4"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["seed"], 4);
    assert_eq!(v["pass"], true);
}

#[test]
fn validate_refuses_few_trials() {
    let (dir, _) = setup(&BASE.replace("\"trials\": 200", "\"trials\": 99"));
    let o = run(dir.path(), &["validate", "--config", "cfg.json"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("refused"));
}

#[test]
fn validate_flags_unmeasurable_epsilon() {
    let cfg = BASE.replace("1e12", "1e5").replace("\"trials\": 200, \"epsilon\": 0.05", "\"trials\": 1000, \"epsilon\": 1e-9");
    let (dir, _) = setup(&cfg);
    let o = run(dir.path(), &["validate", "--config", "cfg.json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["refused"], true);
    assert!(v["bounds"].as_array().unwrap().iter().all(|b| b["measurable"] == false));
}
