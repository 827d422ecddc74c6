use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proxy_causal::dgp::{fixtures, oracle_do_categorical, Estimators, StudyConfig};
use proxy_causal::ident_cat::IdentifyConfig;
use proxy_causal::nulltest::NullTestConfig;
use serde_json::Value;
use tempfile::TempDir;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proxycausal")).args(args).output().expect("spawn cli")
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json output")
}

fn write_json(dir: &TempDir, name: &str, value: &impl serde::Serialize) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, serde_json::to_string(value).unwrap()).unwrap();
    path
}

fn write_text(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sampled(dir: &TempDir, n: usize) -> PathBuf {
    let model = write_json(dir, "model.json", &fixtures::binary_confounded());
    let data = dir.path().join("data.csv");
    let out = cli(&["sample", "--model", s(&model), "--n", &n.to_string(), "--seed", "3", "--output", s(&data)]);
    assert!(out.status.success());
    data
}

#[test]
fn identify_recovers_interventional_law() {
    let dir = TempDir::new().unwrap();
    let data = sampled(&dir, 100_000);
    let csv = dir.path().join("effects.csv");
    let v = json_of(&cli(&["identify", "--input", s(&data), "--csv", s(&csv), "--no-timestamp"]));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["command"], "identify");
    assert!(v.get("generated_at_unix").is_none());
    let oracle = oracle_do_categorical(&fixtures::binary_confounded());
    let rows = v["result"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let (x, y) = (r["x_level"].as_u64().unwrap() as usize, r["y_level"].as_u64().unwrap() as usize);
        assert!((r["estimate"].as_f64().unwrap() - oracle.get(x, y)).abs() < 0.03);
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("x,y,estimate,naive_estimate,condition_number,clipped,coarsening_used\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn timestamp_present_by_default() {
    let dir = TempDir::new().unwrap();
    let data = sampled(&dir, 2000);
    let v = json_of(&cli(&["identify", "--input", s(&data)]));
    assert!(v["generated_at_unix"].as_u64().unwrap() > 1_600_000_000);
}

#[test]
fn test_command_reports_per_level_and_combined() {
    let dir = TempDir::new().unwrap();
    let data = sampled(&dir, 5000);
    let v = json_of(&cli(&["test", "--input", s(&data)]));
    let results = v["result"]["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    assert_eq!(results[0]["dof"], 2);
    let min_p = results.iter().map(|r| r["p_value"].as_f64().unwrap()).fold(1.0, f64::min);
    assert!((v["result"]["combined_p_value"].as_f64().unwrap() - (2.0 * min_p).min(1.0)).abs() < 1e-15);
    assert_eq!(v["result"]["reject"], true);

    let one = json_of(&cli(&["test", "--input", s(&data), "--y-level", "1", "--cov", "plugin"]));
    assert_eq!(one["result"]["y_labels"], serde_json::json!(["1"]));
    assert_eq!(one["result"]["results"][0]["diagnostics"]["cov_method"], "plugin");

    let mean = json_of(&cli(&["test", "--input", s(&data), "--mean-scale"]));
    assert_eq!(mean["result"]["results"][0]["scale"], "mean");
}

#[test]
fn labelled_columns_are_read_by_name() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("treat,proxy_a,proxy_b,outcome\n");
    for r in 0..400 {
        let z = r % 2;
        let x = (r / 2) % 2;
        let w = usize::from((r * 7) % 10 < 7) ^ z;
        let y = (r / 3) % 2;
        text.push_str(&format!("{},{},{},{}\n", ["no", "yes"][x], ["lo", "hi"][z], w, y));
    }
    let path = write_text(&dir, "named.csv", &text);
    let v = json_of(&cli(&[
        "identify", "--input", s(&path), "--x-col", "treat", "--z-col", "proxy_a", "--w-col", "proxy_b", "--y-col", "outcome",
    ]));
    let xs: Vec<&str> = v["result"]["rows"].as_array().unwrap().iter().map(|r| r["x"].as_str().unwrap()).collect();
    assert!(xs.contains(&"no") && xs.contains(&"yes"));
}

#[test]
fn invalid_input_exits_with_code_two() {
    let dir = TempDir::new().unwrap();
    let path = write_text(&dir, "constant.csv", "x,z,w,y\n0,0,1,0\n1,1,1,1\n0,1,1,0\n1,0,1,1\n");
    let out = cli(&["identify", "--input", s(&path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let missing = cli(&["identify", "--input", s(&dir.path().join("absent.csv"))]);
    assert_eq!(missing.status.code(), Some(2));

    let bad_flag = cli(&["test", "--input", s(&path), "--cov", "sandwich"]);
    assert_eq!(bad_flag.status.code(), Some(2));
}

#[test]
fn rank_failure_exits_with_code_three() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("x,z,w,y\n");
    for r in 0..800 {
        let (x, z, w, y) = (r % 2, (r / 2) % 2, (r / 4) % 2, (r / 8) % 2);
        text.push_str(&format!("{x},{z},{w},{y}\n"));
    }
    let path = write_text(&dir, "independent.csv", &text);
    let out = cli(&["identify", "--input", s(&path)]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gaussian_commands() {
    let dir = TempDir::new().unwrap();
    let sem = fixtures::gaussian_sem();
    let path = write_json(&dir, "sem.json", &sem);
    let v = json_of(&cli(&["gauss", "--sem", s(&path)]));
    assert!((v["result"]["gamma1"].as_f64().unwrap() - sem.d2).abs() < 1e-8);

    let f = json_of(&cli(&["fredholm", "--sem", s(&path), "--x", "-0.5", "--y", "0.2", "--grid-points", "121"]));
    assert!(f["result"]["abs_error"].as_f64().unwrap() < 1e-3);
    assert_eq!(f["result"]["l_curve"].as_array().unwrap().len(), 25);
    assert_eq!(f["result"]["picard"]["blow_up"], false);
}

#[test]
fn power_under_null_is_near_nominal() {
    let dir = TempDir::new().unwrap();
    let cfg = StudyConfig {
        model: fixtures::binary_null(),
        n: 5000,
        replicates: 2000,
        alpha: 0.05,
        seed: 0,
        estimators: Estimators {
            effect: false,
            null_test: true,
        },
        y_level: 1,
        test: NullTestConfig::default(),
        identify: IdentifyConfig::default(),
        keep_statistics: false,
        jobs: None,
    };
    let path = write_json(&dir, "study.json", &cfg);
    let csv = dir.path().join("power.csv");
    let v = json_of(&cli(&["power", "--config", s(&path), "--seed", "99", "--deltas", "0", "--csv", s(&csv)]));
    let rate = v["result"]["rows"][0]["rejection_rate"].as_f64().unwrap();
    assert!((0.03..=0.07).contains(&rate), "rate {rate}");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("delta,"));
}

#[test]
fn simulate_requires_seed() {
    let dir = TempDir::new().unwrap();
    let path = write_json(&dir, "study.json", &StudyConfig {
        model: fixtures::binary_null(),
        n: 500,
        replicates: 5,
        alpha: 0.05,
        seed: 0,
        estimators: Estimators::default(),
        y_level: 1,
        test: NullTestConfig::default(),
        identify: IdentifyConfig::default(),
        keep_statistics: false,
        jobs: None,
    });
    let out = cli(&["simulate", "--config", s(&path)]);
    assert_eq!(out.status.code(), Some(2));
    let ok = json_of(&cli(&["simulate", "--config", s(&path), "--seed", "1"]));
    assert_eq!(ok["result"]["replicates"], 5);
}
