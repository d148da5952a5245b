use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dlpls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlpls"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = dlpls(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Header and numeric rows of a plain CSV file.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn numbers(path: &Path) -> Vec<Vec<f64>> {
    read_csv(path)
        .1
        .iter()
        .map(|r| r.iter().map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn simulate(dir: &TempDir, scenario: &str, seed: &str) -> PathBuf {
    let out = dir.path().join(format!("sim-{scenario}-{seed}"));
    ok(&["simulate", "--scenario", scenario, "--n", "300", "--p", "6", "--seed", seed, "--output", s(&out)]);
    out.join("data.csv")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn predictions_on_training_rows_match_fitted_values() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "two-output", "1");
    let fit = dir.path().join("fit");
    let pred = dir.path().join("pred");
    ok(&["fit", "--input", s(&data), "--target", "y1", "--target", "y2", "--components", "2", "--output", s(&fit)]);
    ok(&["predict", "--model", s(&fit.join("model.json")), "--input", s(&data), "--output", s(&pred)]);
    let fitted = numbers(&fit.join("fitted.csv"));
    let predicted = numbers(&pred.join("predictions.csv"));
    assert_eq!(fitted.len(), 300);
    for (a, b) in fitted.iter().zip(&predicted) {
        for (u, v) in a.iter().zip(b) {
            assert!((u - v).abs() <= 1e-10);
        }
    }
}

#[test]
fn cross_validation_is_reported_when_components_are_omitted() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "two-output", "2");
    let fit = dir.path().join("fit");
    ok(&["fit", "--input", s(&data), "--target", "y1", "--target", "y2", "--output", s(&fit)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(fit.join("fit_report.json")).unwrap()).unwrap();
    assert_eq!(report["selected_by"], "cross-validation");
    assert_eq!(numbers(&fit.join("cv.csv")).len(), 4);
}

#[test]
fn empty_table_exits_with_data_error() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "a,b,c\n").unwrap();
    let out = dlpls(&["fit", "--input", s(&empty), "--output", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no rows"));
}

#[test]
fn wrong_column_count_exits_with_data_error() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "log-abs", "3");
    let fit = dir.path().join("fit");
    ok(&["fit", "--input", s(&data), "--components", "1", "--output", s(&fit)]);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,b\n1,2\n").unwrap();
    let out = dlpls(&["predict", "--model", s(&fit.join("model.json")), "--input", s(&bad), "--output", s(&dir.path().join("p"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diverging_training_exits_with_numerical_error() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "two-output", "4");
    let out = dlpls(&[
        "fit", "--input", s(&data), "--target", "y1", "--target", "y2", "--components", "2",
        "--inner", "mlp", "--learning-rate", "1e8", "--epochs", "3",
        "--output", s(&dir.path().join("fit")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(dlpls(&["fit"]).status.code(), Some(2));
    assert_eq!(dlpls(&["reproduce", "--experiment", "wine", "--output", "/nonexistent/x"]).status.code(), Some(2));
}

#[test]
fn expanded_model_scores_raw_rows() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("small.csv");
    let mut text = String::from("a,b,c,y\n");
    for i in 0..40 {
        let (a, b, c) = ((i as f64 * 0.37).sin(), (i as f64 * 0.91).cos(), (i % 7) as f64 / 7.0);
        text.push_str(&format!("{a},{b},{c},{}\n", a * b + c * c + 0.1 * a));
    }
    fs::write(&data, text).unwrap();
    let fit = dir.path().join("fit");
    ok(&["fit", "--input", s(&data), "--expand", "--components", "3", "--output", s(&fit)]);
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(fit.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["document"]["input_names"].as_array().unwrap().len(), 9);
    let pred = dir.path().join("pred");
    ok(&["predict", "--model", s(&fit.join("model.json")), "--input", s(&data), "--output", s(&pred)]);
    assert_eq!(numbers(&pred.join("predictions.csv")).len(), 40);
}

#[test]
fn bayesian_predictions_cover_every_row_and_output() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "two-output", "5");
    let fit = dir.path().join("fit");
    ok(&["fit", "--input", s(&data), "--target", "y1", "--target", "y2", "--components", "2", "--output", s(&fit)]);
    let pred = dir.path().join("bayes");
    ok(&["bayes-predict", "--model", s(&fit.join("model.json")), "--input", s(&data), "--output", s(&pred)]);
    let (header, rows) = read_csv(&pred.join("predictive.csv"));
    assert_eq!(header, ["row", "output", "mean", "variance", "q05", "q50", "q95"]);
    assert_eq!(rows.len(), 600);
    for r in &rows {
        let v: Vec<f64> = r[2..].iter().map(|x| x.parse().unwrap()).collect();
        assert!(v[1] > 0.0 && v[2] < v[3] && v[3] < v[4]);
    }
}

#[test]
fn diagnostics_tables_have_expected_properties() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "two-output", "6");
    let run = |artifact: &str| {
        let out = dir.path().join(artifact);
        ok(&["diagnose", "--artifact", artifact, "--input", s(&data), "--target", "y1", "--target", "y2", "--output", s(&out)]);
        out
    };
    let scree = numbers(&run("scree").join("scree.csv"));
    assert_eq!(scree.len(), 2);
    assert!(scree.windows(2).all(|w| w[0][1] >= w[1][1]));

    let (header, rows) = read_csv(&run("corr-circle").join("corr_circle.csv"));
    let (c1, c2) = (header.iter().position(|h| h == "corr_t1").unwrap(), header.iter().position(|h| h == "corr_t2").unwrap());
    assert_eq!(rows.len(), 6);
    for r in rows {
        let (a, b): (f64, f64) = (r[c1].parse().unwrap(), r[c2].parse().unwrap());
        assert!(a * a + b * b <= 1.0 + 1e-9);
    }
    assert!(run("biplot").join("biplot.csv").is_file());
    assert!(run("link-recovery").join("link.csv").is_file());
}

#[test]
fn collinear_fixture_shows_pls_expansion() {
    let dir = TempDir::new().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--scenario", "collinear", "--seed", "21", "--output", s(&sim)]);
    let out = dir.path().join("shrink");
    ok(&["diagnose", "--artifact", "shrinkage", "--input", s(&sim.join("data.csv")), "--output", s(&out)]);
    let (header, rows) = read_csv(&out.join("scale_factors.csv"));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (method, factor, indeterminate) = (col("method"), col("factor"), col("indeterminate"));
    let expands = rows.iter().any(|r| {
        r[method].starts_with("pls") && r[indeterminate] == "false" && r[factor].parse::<f64>().unwrap() > 1.0
    });
    assert!(expands);
}

#[test]
fn rerun_from_manifest_is_bit_identical() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "two-output", "7");
    let first = dir.path().join("first");
    ok(&[
        "fit", "--input", s(&data), "--target", "y1", "--target", "y2",
        "--inner", "mlp", "--epochs", "20", "--seed", "9", "--output", s(&first),
    ]);
    let second = dir.path().join("second");
    ok(&["rerun", "--manifest", s(&first.join("manifest.json")), "--output", s(&second)]);
    let (a, b) = (manifest(&first), manifest(&second));
    assert_eq!(a["outputs"], b["outputs"]);
    assert_eq!(a["seeds"], b["seeds"]);
    for entry in a["outputs"].as_array().unwrap() {
        let name = entry["file"].as_str().unwrap();
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn simulation_is_seed_deterministic_and_json_format_works() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["simulate", "--scenario", "relu-index", "--n", "50", "--seed", "11", "--format", "json", "--output", s(out)]);
    }
    assert_eq!(fs::read(a.join("data.json")).unwrap(), fs::read(b.join("data.json")).unwrap());
    assert!(a.join("truth.json").is_file());
}

#[test]
fn independent_simulation_reproduction_passes_its_checks() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("rep");
    ok(&["reproduce", "--experiment", "independent-sim", "--no-network", "--output", s(&out)]);
    let coef = numbers(&out.join("coefficients.csv"));
    assert_eq!(coef.len(), 4);
    for (row, target) in coef.iter().zip([0.0, 0.0, 2.0, 2.0]) {
        assert!((row[1] - target).abs() <= 0.1);
    }
    let (_, checks) = read_csv(&out.join("checks.csv"));
    assert!(checks.iter().all(|r| r.last().unwrap() == "true"));
}
