use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn selpulse(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selpulse"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("SELPULSE_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_pulse(dir: &Path, name: &str, omega: f64, segs: &[(f64, f64, f64)]) -> String {
    let segments: Vec<Value> = segs.iter().map(|&(dt, ux, uy)| serde_json::json!({"dt": dt, "ux": ux, "uy": uy})).collect();
    let path = dir.join(name);
    fs::write(&path, serde_json::json!({"omega": omega, "segments": segments}).to_string()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn solve_output_feeds_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let o = selpulse(&["solve", "--omega", "0.2"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let design = json(&dir.path().join("design.json"));
    assert_eq!(design["design"], "singular");
    assert!((design["t_f"].as_f64().unwrap() - 5.072464).abs() < 1e-6);

    let pulse = dir.path().join("pulse.json");
    let o = selpulse(&["simulate", pulse.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0);
    let summary = json(&dir.path().join("summary.json"));
    assert!(summary["J_excitation"].as_f64().unwrap() < 1e-12);
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x1,y1,z1,x2,y2,z2\n0,0,0,1,0,0,1\n"));
}

#[test]
fn solve_inversion_below_threshold_is_singular() {
    let dir = tempfile::tempdir().unwrap();
    let o = selpulse(&["solve", "--omega", "0.5", "--target", "inversion"], dir.path());
    assert_eq!(code(&o), 0);
    let design = json(&dir.path().join("design.json"));
    assert_eq!(design["design"], "singular");
    assert!(design["J_final"].as_f64().unwrap() < 1e-12);
}

#[test]
fn resonant_pulse_excites() {
    let dir = tempfile::tempdir().unwrap();
    let omega = 15f64.sqrt() / 2.0;
    let n = 4000;
    let dt = std::f64::consts::FRAC_PI_2 / n as f64;
    let segs: Vec<(f64, f64, f64)> = (0..n)
        .map(|k| {
            let ph = omega * (k as f64 + 0.5) * dt;
            (dt, ph.cos(), ph.sin())
        })
        .collect();
    let p = write_pulse(dir.path(), "res.json", omega, &segs);
    let o = selpulse(&["simulate", &p], dir.path());
    assert_eq!(code(&o), 0);
    assert!(json(&dir.path().join("summary.json"))["J_excitation"].as_f64().unwrap() < 1e-6);
}

#[test]
fn empty_pulse_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_pulse(dir.path(), "empty.json", 1.0, &[]);
    let o = selpulse(&["simulate", &p], dir.path());
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["J_excitation"].as_f64(), Some(1.0));
    assert_eq!(s["duration"].as_f64(), Some(0.0));
}

#[test]
fn bad_pulses_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_pulse(dir.path(), "strong.json", 1.0, &[(0.1, 0.5, 0.0), (0.2, 1.5, 0.0)]);
    let o = selpulse(&["simulate", &p], dir.path());
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("segment 1"));

    let bad = dir.path().join("broken.json");
    fs::write(&bad, "{\"omega\": 1, \"segments\": [").unwrap();
    assert_eq!(code(&selpulse(&["simulate", bad.to_str().unwrap()], dir.path())), 2);

    let neg = write_pulse(dir.path(), "neg.json", 1.0, &[(-0.1, 0.0, 0.0)]);
    assert_eq!(code(&selpulse(&["simulate", &neg], dir.path())), 3);
    assert_eq!(code(&selpulse(&["simulate", &p, "--omega=-1"], dir.path())), 3);
}

#[test]
fn config_is_validated_before_work() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&selpulse(&["landscape", "--omega", "1", "--grid", "16"], dir.path())), 3);
    assert_eq!(code(&selpulse(&["landscape", "--omega=-0.5"], dir.path())), 3);
    assert_eq!(code(&selpulse(&["landscape", "--omega", "1", "--target", "rotation"], dir.path())), 2);
    assert_eq!(code(&selpulse(&["grape", "--omega", "1.5"], dir.path())), 3);
    assert_eq!(code(&selpulse(&["grape", "--omega", "0.2", "--tfinal", "1", "--segments", "2"], dir.path())), 3);
}

#[test]
fn landscape_below_threshold_reports_singular() {
    let dir = tempfile::tempdir().unwrap();
    let o = selpulse(&["landscape", "--omega", "0.2", "--grid", "32"], dir.path());
    assert_eq!(code(&o), 0);
    let rep = json(&dir.path().join("optimum.json"));
    assert_eq!(rep["regime"], "Singular");
    assert!((rep["t_f_star"].as_f64().unwrap() - 5.072464).abs() < 1e-6);
    let csv = fs::read_to_string(dir.path().join("landscape_grid.csv")).unwrap();
    assert!(csv.starts_with("phi1,phi2,r0,s,j_min,t_hit,converged\n"));
    assert_eq!(csv.lines().count(), 1 + 32 * 32);
}

#[test]
fn grape_resonant_case_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let omega = (15f64.sqrt() / 2.0).to_string();
    let t = std::f64::consts::FRAC_PI_2.to_string();
    let o = selpulse(&["grape", "--omega", &omega, "--tfinal", &t, "--restarts", "3"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("grape_sweep.csv")).unwrap();
    let j: f64 = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(j < 1e-6);
    let pulse = json(&dir.path().join("grape_pulse.json"));
    assert_eq!(pulse["segments"].as_array().unwrap().len(), 64);

    let args = ["grape", "--omega", "0.3", "--tmin", "3", "--tmax", "3.2", "--step", "0.1", "--segments", "16", "--restarts", "3", "--seed", "9"];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let oa = selpulse(&args, a.path());
    let ob = selpulse(&args, b.path());
    assert_eq!(code(&oa), code(&ob));
    assert_eq!(
        fs::read(a.path().join("grape_sweep.csv")).unwrap(),
        fs::read(b.path().join("grape_sweep.csv")).unwrap()
    );
    assert_eq!(oa.stdout, ob.stdout);
}

#[test]
fn verify_filters_and_fails_on_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = selpulse(&["verify", "--suite", "table2"], dir.path());
    assert_eq!(code(&o), 0);
    let rep = json(&dir.path().join("verify_report.json"));
    let suites = rep["suites"].as_array().unwrap();
    assert_eq!(suites.len(), 1);
    assert_eq!(suites[0]["suite"], "table2");
    assert_eq!(rep["passed"], true);

    let o = selpulse(&["verify", "--suite", "analytic", "--inject-fault"], dir.path());
    assert_eq!(code(&o), 5);
    assert_eq!(json(&dir.path().join("verify_report.json"))["passed"], false);

    assert_eq!(code(&selpulse(&["verify", "--suite", "nonsense"], dir.path())), 2);
}
