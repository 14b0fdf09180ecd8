use std::fs;
use std::path::Path;
use std::process::Command;

use kalman_affine::calibration::fit_metrics;
use kalman_affine::io::{read_panel, ModelConfig, ResultBundle};
use kalman_affine::kalman::{filter, fitted_yields};

const BIN: &str = env!("CARGO_BIN_EXE_kalman-affine");

const ONE_VAS: &str = r#"
dt = 0.003968253968253968
sigma_eps = 0.0005
maturities = [0.25, 1.0, 3.0, 10.0]

[[factors]]
kind = "vasicek"
kappa = 0.5
eta = 0.04
theta = 0.015

[optimizer]
starts = 2
seed = 7

[simulate]
days = 250
seed = 3
"#;

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn setup(dir: &Path, config: &str) -> (String, String) {
    let cfg = dir.join("model.toml");
    fs::write(&cfg, config).unwrap();
    let panel = dir.join("panel.csv");
    let (code, _, err) = run(&["simulate-panel", "--config", s(&cfg), "--out", s(&panel)]);
    assert_eq!(code, 0, "{err}");
    (s(&cfg).to_string(), s(&panel).to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn calibrate_writes_a_complete_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, panel) = setup(dir.path(), ONE_VAS);
    let out = dir.path().join("fit");
    let (code, stdout, err) = run(&["calibrate", "--panel", &panel, "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    for needle in ["loglik", "AIC", "first-order optimality", "boundary hits", "APE (%)", "RMSE (bp)", "total"] {
        assert!(stdout.contains(needle), "summary lacks {needle}:\n{stdout}");
    }
    let text = fs::read_to_string(out.join("bundle.json")).unwrap();
    let bundle = ResultBundle::from_json(&text).unwrap();
    assert_eq!(bundle.command, "calibrate");
    for f in &bundle.files {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert_eq!(bundle.to_json().unwrap(), text);

    let again = dir.path().join("again");
    let (code, _, _) = run(&["calibrate", "--panel", &panel, "--config", &cfg, "--out", s(&again)]);
    assert_eq!(code, 0);
    assert_eq!(fs::read(again.join("bundle.json")).unwrap(), text.as_bytes());
}

#[test]
fn bad_header_is_an_input_error_naming_the_column() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path(), ONE_VAS);
    let panel = dir.path().join("bad.csv");
    fs::write(&panel, "date,0.25,1,0.5,10\n2020-01-02,0.01,0.02,0.03,0.04\n").unwrap();
    let (code, _, err) = run(&["calibrate", "--panel", s(&panel), "--config", &cfg, "--out", s(&dir.path().join("o"))]);
    assert_eq!(code, 2);
    assert!(err.contains("column 4"), "{err}");
}

#[test]
fn unknown_config_keys_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.toml");
    fs::write(&cfg, format!("{ONE_VAS}\nsurprise = true\n")).unwrap();
    let (code, _, err) = run(&["simulate-panel", "--config", s(&cfg), "--out", s(&dir.path().join("p.csv"))]);
    assert_eq!(code, 2);
    assert!(err.contains("surprise"), "{err}");
}

#[test]
fn filter_outputs_are_consistent_with_the_fit_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, panel_path) = setup(dir.path(), ONE_VAS);
    let out = dir.path().join("f");
    let (code, _, err) = run(&["filter", "--panel", &panel_path, "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");

    let factors = fs::read_to_string(out.join("factors.csv")).unwrap();
    let rows: Vec<&str> = factors.lines().collect();
    assert_eq!(rows.len(), 251);
    assert_eq!(rows[0], "date,f1,short_rate");

    let panel = read_panel(Path::new(&panel_path)).unwrap();
    let spec = ModelConfig::read(Path::new(&cfg)).unwrap().model_spec(Some(&panel.maturities)).unwrap();
    let fitted = fitted_yields(&spec, &filter(&spec, &panel).unwrap()).unwrap();
    let residuals = fs::read_to_string(out.join("residuals.csv")).unwrap();
    for (t, line) in residuals.lines().skip(1).enumerate() {
        for (j, cell) in line.split(',').skip(1).enumerate() {
            let r: f64 = cell.parse().unwrap();
            assert_eq!(r, panel.yields[(t, j)] - fitted[(t, j)]);
        }
    }
    let bundle = ResultBundle::read(&out.join("bundle.json")).unwrap();
    assert_eq!(bundle.fit.unwrap(), fit_metrics(&panel, &fitted).unwrap());
}

#[test]
fn default_forecast_writes_six_horizons() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path(), ONE_VAS);
    let out = dir.path().join("fc");
    let (code, _, err) = run(&["forecast", "--config", &cfg, "--out", s(&out), "--paths", "500", "--state", "0.03"]);
    assert_eq!(code, 0, "{err}");
    for h in [5, 10, 20, 60, 120, 260] {
        let text = fs::read_to_string(out.join(format!("forecast_h{h}.csv"))).unwrap();
        assert!(text.starts_with("maturity,mean,p05,p95\n"));
        assert_eq!(text.lines().count(), 5);
    }
}

#[test]
fn single_path_forecast_has_equal_columns() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, panel) = setup(dir.path(), ONE_VAS);
    let out = dir.path().join("fc");
    let (code, _, err) = run(&["forecast", "--config", &cfg, "--out", s(&out), "--paths", "1", "--panel", &panel, "--horizons", "3,9"]);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(out.join("forecast_h9.csv")).unwrap();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[1], cells[2]);
        assert_eq!(cells[1], cells[3]);
    }
    assert!(!out.join("forecast_h5.csv").exists());
}

#[test]
fn noiseless_simulation_is_affine_in_the_states() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.toml");
    fs::write(&cfg, ONE_VAS.replace("sigma_eps = 0.0005", "sigma_eps = 0.0")).unwrap();
    let panel_path = dir.path().join("p.csv");
    let states_path = dir.path().join("x.csv");
    let (code, _, err) = run(&["simulate-panel", "--config", s(&cfg), "--out", s(&panel_path), "--states", s(&states_path), "--days", "40"]);
    assert_eq!(code, 0, "{err}");
    let panel = read_panel(&panel_path).unwrap();
    let spec = ModelConfig::read(&cfg).unwrap().simulation_spec(None).unwrap();
    let states = fs::read_to_string(&states_path).unwrap();
    for (t, line) in states.lines().skip(1).enumerate() {
        let x: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        for (j, &tau) in spec.maturities.iter().enumerate() {
            let l = kalman_affine::factor::loadings(spec.factors[0].kind, tau, &spec.factors[0].params).unwrap();
            assert!((panel.yields[(t, j)] - (-l.a - l.b * x) / tau).abs() < 1e-15);
        }
    }
}

#[test]
fn filter_needs_every_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let (_, panel) = setup(dir.path(), ONE_VAS);
    let cfg = dir.path().join("partial.toml");
    fs::write(&cfg, "[[factors]]\nkind = \"vasicek\"\n").unwrap();
    let (code, _, err) = run(&["filter", "--panel", &panel, "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code, 2);
    assert!(err.contains("kappa"), "{err}");
}
