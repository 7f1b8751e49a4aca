use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mohsm::data::{Dataset, Point};
use mohsm::init::init_model;
use mohsm::io::{save_csv, CsvLayout, TrainedModel};
use mohsm::kernel::Method;
use serde_json::Value;

fn mohsm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mohsm"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(cmd: &mut Command) -> (i32, Value, String) {
    let Output { status, stdout, stderr } = cmd.output().expect("binary runs");
    let json = serde_json::from_slice(&stdout).unwrap_or(Value::Null);
    (status.code().unwrap_or(-1), json, String::from_utf8_lossy(&stderr).into_owned())
}

fn train_fixture(out: &Path, extra: &[&str]) -> Value {
    let (code, json, err) = run(mohsm()
        .args(["train", "--config"])
        .arg(fixture("gonu_config.json"))
        .arg("--out")
        .arg(out)
        .args(extra));
    assert_eq!(code, 0, "{err}");
    json
}

#[test]
fn synth_writes_all_points_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (code, json, err) = run(mohsm().args(["synth", "--seed", "3", "--out"]).arg(&a));
    assert_eq!(code, 0, "{err}");
    let counts = &json["counts"];
    let total: u64 = ["train", "test", "masked"].iter().map(|k| counts[k].as_u64().unwrap()).sum();
    assert_eq!(total, 1500);
    assert!(counts["masked"].as_u64().unwrap() > 0);

    let (code, _, _) = run(mohsm().args(["synth", "--seed", "3", "--out"]).arg(&b));
    assert_eq!(code, 0);
    for f in ["train.csv", "test.csv", "masked.csv", "gram.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn synth_rejects_reversed_range() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    fs::write(&cfg, r#"{"range": [10.0, -10.0]}"#).unwrap();
    let (code, _, err) = run(mohsm().args(["synth", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")));
    assert_eq!(code, 2);
    assert!(err.contains("range"), "{err}");
}

#[test]
fn train_rejects_unknown_method() {
    let (code, _, _) = run(mohsm()
        .args(["train", "--method", "rbf", "--config"])
        .arg(fixture("gonu_config.json")));
    assert_eq!(code, 2);
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(mohsm().args(["train", "--config"]).arg(dir.path().join("nope.json")));
    assert_eq!(code, 5, "{err}");
}

#[test]
fn train_writes_a_loadable_model_and_warm_start_does_not_regress() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let json = train_fixture(&first, &[]);
    let nll = json["final_nll"].as_f64().unwrap();
    assert!(nll.is_finite());
    assert!(json["n_heldout"].as_u64().unwrap() > 0);

    let model_path = first.join("model.json");
    let saved = TrainedModel::load(&model_path).unwrap();
    assert_eq!(saved.model.method(), Method::Mohsm);
    assert_eq!(saved.training_data.n_channels(), 4);
    assert_eq!(saved.training_data.len() as u64, json["n_train"].as_u64().unwrap());
    for f in ["train_report.csv", "train.csv", "heldout.csv", "periodograms.csv"] {
        assert!(first.join(f).exists(), "{f}");
    }

    let second = dir.path().join("second");
    let init = model_path.to_str().unwrap().to_owned();
    let json = train_fixture(&second, &["--init", &init]);
    let warm = json["final_nll"].as_f64().unwrap();
    assert!(warm <= nll + 1e-6, "{warm} > {nll}");

    let (code, _, err) = run(mohsm()
        .args(["train", "--method", "mosm", "--init", &init, "--config"])
        .arg(fixture("gonu_config.json"))
        .arg("--out")
        .arg(dir.path().join("third")));
    assert_eq!(code, 2, "{err}");
}

/// Channels of smooth positive signals on a shared grid.
fn smooth_dataset(channels: usize, n: usize) -> Dataset {
    let names = (0..channels).map(|c| format!("s{c}")).collect();
    let mut points = Vec::new();
    for c in 0..channels {
        for k in 0..n {
            let x = k as f64 * 0.25;
            let y = 10.0 + (c as f64 + 1.0) * (0.4 * x + c as f64).sin();
            points.push(Point::new(c, vec![x], y));
        }
    }
    Dataset::new(points, names).unwrap()
}

/// Saves a spectrally initialized MOSM model with tiny noise, trained on
/// `data` normalized, and the raw data as held-out CSV.
fn interpolating_model(dir: &Path, data: &Dataset) -> (PathBuf, PathBuf) {
    let train = data.renormalized(data.fit_normalization()).unwrap();
    let mut model = init_model(Method::Mosm, &train, 1, 2).unwrap();
    for s in model.noise_mut() {
        *s = 1e-4;
    }
    let model_path = dir.join("model.json");
    TrainedModel { model, training_data: train }.save(&model_path).unwrap();
    let data_path = dir.join("heldout.csv");
    save_csv(data, &data_path, CsvLayout::Long).unwrap();
    (model_path, data_path)
}

fn evaluate(model: &Path, data: &Path, metrics: &str, out: &Path) -> (i32, Value, String) {
    run(mohsm()
        .arg("evaluate")
        .arg("--model")
        .arg(model)
        .arg("--data")
        .arg(data)
        .args(["--metrics", metrics])
        .arg("--out")
        .arg(out))
}

fn metric(json: &Value, name: &str, channel: &str) -> f64 {
    json["report"]["rows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["metric"] == name && r["channel"] == channel)
        .unwrap_or_else(|| panic!("no {name}/{channel} row"))["mean"]
        .as_f64()
        .unwrap()
}

#[test]
fn evaluate_on_training_points_is_near_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = smooth_dataset(2, 40);
    let (model, heldout) = interpolating_model(dir.path(), &data);
    let (code, json, err) = evaluate(&model, &heldout, "mape,rmse", &dir.path().join("eval"));
    assert_eq!(code, 0, "{err}");
    assert!(metric(&json, "mape", "overall") < 0.05);
    assert!(metric(&json, "rmse", "overall") < 5e-3);
    assert!(dir.path().join("eval/metrics.json").exists());
    let posterior = fs::read_to_string(dir.path().join("eval/posterior.csv")).unwrap();
    assert_eq!(posterior.lines().count(), 81);
}

#[test]
fn overall_nmae_is_the_channel_mean() {
    let dir = tempfile::tempdir().unwrap();
    let data = smooth_dataset(8, 12);
    let data = data.renormalized(data.fit_normalization()).unwrap();
    let (model, _) = interpolating_model(dir.path(), &data);
    // score on shifted inputs so the errors are not all near zero
    let shifted: Vec<Point> = data
        .denormalized()
        .points()
        .iter()
        .map(|p| Point::new(p.channel, vec![p.x[0] + 0.1], p.y))
        .collect();
    let shifted = data.denormalized().with_points(shifted).unwrap();
    let path = dir.path().join("shifted.csv");
    save_csv(&shifted, &path, CsvLayout::Long).unwrap();

    let (code, json, err) = evaluate(&model, &path, "nmae", &dir.path().join("eval"));
    assert_eq!(code, 0, "{err}");
    let per: Vec<f64> = (0..8).map(|c| metric(&json, "nmae", &format!("s{c}"))).collect();
    let mean = per.iter().sum::<f64>() / 8.0;
    assert!(per.iter().all(|v| v.is_finite() && *v > 0.0));
    assert!((metric(&json, "nmae", "overall") - mean).abs() < 1e-12);
}

#[test]
fn evaluate_rejects_cmd_and_unknown_channels() {
    let dir = tempfile::tempdir().unwrap();
    let data = smooth_dataset(2, 10);
    let (model, heldout) = interpolating_model(dir.path(), &data);
    let (code, _, _) = evaluate(&model, &heldout, "cmd", &dir.path().join("e1"));
    assert_eq!(code, 4);
    let (code, _, _) = evaluate(&model, &heldout, "bogus", &dir.path().join("e2"));
    assert_eq!(code, 2);

    let other = dir.path().join("other.csv");
    fs::write(&other, "channel,x,y\nzzz,0.0,1.0\n").unwrap();
    let (code, _, err) = evaluate(&model, &other, "rmse", &dir.path().join("e3"));
    assert_eq!(code, 5, "{err}");
}
