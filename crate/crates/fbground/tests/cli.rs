//! Command-line interface integration: artifacts, exit codes, determinism.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fbground"))
}

const CONFIG: &str = r#"
[grid]
dim = 3
extents = [1.0, 1.0, 1.0]
nodes = [17, 17, 17]

[nonlinearity]
kind = "critical"
lambda_factor = 1.5
kappa_fraction = 0.5

[schedule]
eps0 = 0.4
ratio = 0.5
steps = 2

[solver]
max_sweeps = 80
path_samples = 9

[verify]
fbc = false
nondegeneracy = true
bounds = true
sandwich = true
"#;

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, CONFIG).unwrap();
    path
}

#[test]
fn spectrum_reports_constants() {
    let dir = tempdir("spectrum");
    let cfg = write_config(&dir);
    let out = bin()
        .args(["--config", cfg.to_str().unwrap(), "spectrum"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let lambda1 = json["lambda1"].as_f64().unwrap();
    let exact = 3.0 * std::f64::consts::PI * std::f64::consts::PI;
    assert!((lambda1 - exact).abs() / exact < 0.02, "lambda1 {lambda1}");
    assert!(json["sobolev"].as_f64().unwrap() > 5.0);
    assert!(json["kappa_star_lower"].as_f64().unwrap() < json["kappa_star_upper"].as_f64().unwrap());
    assert!(json["notes"].as_array().unwrap().len() >= 4);
}

#[test]
fn spectrum_flags_infinite_bound() {
    let dir = tempdir("spectrum-sentinel");
    let cfg_text = CONFIG.to_string()
        + r#"
[pipeline]
lambda_star_factor = 0.8
"#;
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg_text).unwrap();
    let out = bin()
        .args(["--config", path.to_str().unwrap(), "spectrum"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["m_lambda_star_finite"].as_bool(), Some(false));
    assert!(json["m_lambda_star"].is_null());
    assert!(json["kappa_star_upper"].is_null());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempdir("config-errors");
    // empty schedule
    let path = dir.join("bad.toml");
    std::fs::write(&path, CONFIG.replace("steps = 2", "steps = 0")).unwrap();
    let out = bin()
        .args(["--config", path.to_str().unwrap(), "solve"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty schedule"));

    // supercritical fraction rejected without the override
    std::fs::write(&path, CONFIG.replace("kappa_fraction = 0.5", "kappa_fraction = 1.5")).unwrap();
    let out = bin()
        .args(["--config", path.to_str().unwrap(), "solve"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // malformed file
    std::fs::write(&path, "not a config [").unwrap();
    let out = bin()
        .args(["--config", path.to_str().unwrap(), "spectrum"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_verify_report_roundtrip_and_determinism() {
    let dir = tempdir("solve");
    let cfg = write_config(&dir);
    let out1 = dir.join("out1");
    let status = bin()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out1.to_str().unwrap(),
            "solve",
        ])
        .output()
        .unwrap();
    let code = status.status.code().unwrap();
    assert!(
        code == 0 || code == 1,
        "solve exit {code}: {}",
        String::from_utf8_lossy(&status.stderr)
    );
    for artifact in [
        "trace.json",
        "verify.json",
        "fields/step_000.txt",
        "fields/step_001.txt",
        "fields/limit.txt",
        "fields/ground_state.txt",
        "residuals/step_000.csv",
    ] {
        assert!(out1.join(artifact).exists(), "missing {artifact}");
    }
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out1.join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace["schedule"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(out1.join("residuals/step_000.csv")).unwrap();
    assert!(csv.starts_with("iteration,level,residual_norm"));

    // identical configs produce bit-identical artifacts
    let out2 = dir.join("out2");
    let status = bin()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out2.to_str().unwrap(),
            "solve",
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(code));
    assert_eq!(
        std::fs::read(out1.join("trace.json")).unwrap(),
        std::fs::read(out2.join("trace.json")).unwrap(),
        "trace.json not deterministic"
    );
    assert_eq!(
        std::fs::read(out1.join("verify.json")).unwrap(),
        std::fs::read(out2.join("verify.json")).unwrap()
    );

    // verify the written limit field
    let out = bin()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "verify",
        ])
        .arg(out1.join("fields/limit.txt"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(json["max_principle_ok"].as_bool().unwrap());
    assert!(json["energy"]["total"].as_f64().unwrap() > 0.0);

    // verify the zero field: sentinel residual, empty scan
    let zero_path = dir.join("zero.txt");
    let mut text = String::from("3 1.00000000000000000e0 1.00000000000000000e0 1.00000000000000000e0 17 17 17\n");
    for _ in 0..17 * 17 * 17 {
        text.push_str("0.0\n");
    }
    std::fs::write(&zero_path, &text).unwrap();
    let out = bin()
        .args(["--config", cfg.to_str().unwrap(), "verify"])
        .arg(&zero_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(json["nehari_residual"].is_null(), "sentinel expected");
    assert_eq!(json["energy"]["total"].as_f64(), Some(0.0));

    // truncated field file: nonzero exit
    let broken = dir.join("broken.txt");
    let head: String = text.lines().take(100).collect::<Vec<_>>().join("\n");
    std::fs::write(&broken, head).unwrap();
    let out = bin()
        .args(["--config", cfg.to_str().unwrap(), "verify"])
        .arg(&broken)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // report renders the artifacts
    let out = bin()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out1.to_str().unwrap(),
            "report",
        ])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("continuation"));
    assert!(stdout.contains("overall:"));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempdir("sweep");
    let cfg_text = CONFIG.to_string()
        + r#"
[sweep]
lambda_factors = [1.4, 1.6]
kappa_fractions = [0.5]
"#;
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg_text).unwrap();
    let out_dir = dir.join("out");
    let out = bin()
        .args([
            "--config",
            path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "sweep",
        ])
        .env("FBGROUND_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "header + 2 cells: {csv}");
    assert!(lines[0].starts_with("lambda_factor,kappa_fraction"));
    assert!(lines[1].starts_with("1.4,0.5,"));
    assert!(lines[2].starts_with("1.6,0.5,"));
}

fn tempdir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("fbground-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
