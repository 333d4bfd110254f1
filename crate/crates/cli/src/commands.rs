use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use selpulse::grape::{self, GrapeProblem, CLIFF_J};
use selpulse::landscape::{self, Regime, ScanConfig};
use selpulse::singular::{self, DesignReport};
use selpulse::spin::{
    figure_of_merit, final_state, propagate_pulse_dense, write_trajectory_csv, PulseFile, SpinPairState,
    TransferTarget,
};
use selpulse::verify::{self, Suite, VerifyOptions};
use serde::Serialize;

/// Sampling of regular-arc pulses exported by `solve`.
const REGULAR_PULSE_DT: f64 = 1e-3;

#[derive(Debug)]
pub enum CliError {
    Parse(String),
    Validation(String),
    NotConverged(String),
    VerifyFailed(String),
    Failed(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::NotConverged(_) => 4,
            CliError::VerifyFailed(_) => 5,
            CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "malformed input: {m}"),
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::NotConverged(m) => write!(f, "not converged: {m}"),
            CliError::VerifyFailed(m) => write!(f, "verification failed: {m}"),
            CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(format!("i/o: {e}"))
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Failed(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

fn check_omega(omega: f64) -> Result<()> {
    if omega.is_finite() && omega >= 0.0 {
        Ok(())
    } else {
        Err(CliError::Validation(format!("omega must be finite and non-negative, got {omega}")))
    }
}

#[derive(Serialize)]
struct SimulationSummary {
    omega: f64,
    duration: f64,
    segments: usize,
    #[serde(rename = "J_excitation")]
    j_excitation: f64,
    #[serde(rename = "J_inversion")]
    j_inversion: f64,
    final_state: SpinPairState,
}

pub fn simulate(path: &Path, omega: Option<f64>, step: f64, out: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let file = PulseFile::from_json(&text)?;
    let omega = omega.unwrap_or(file.omega);
    check_omega(omega)?;
    if !(step > 0.0) {
        return Err(CliError::Validation(format!("step must be positive, got {step}")));
    }
    let pulse = file.pulse()?;
    let traj = propagate_pulse_dense(&SpinPairState::thermal(), omega, &pulse, step)?;
    let mut w = create(out, "trajectory.csv")?;
    write_trajectory_csv(&mut w, &traj)?;
    w.flush()?;
    let last = *traj.last().expect("trajectory holds the initial state");
    let summary = SimulationSummary {
        omega,
        duration: pulse.total_duration(),
        segments: pulse.segments().len(),
        j_excitation: figure_of_merit(&last, TransferTarget::Excitation),
        j_inversion: figure_of_merit(&last, TransferTarget::Inversion),
        final_state: last,
    };
    write_json(out, "summary.json", &summary)?;
    println!(
        "{} samples over t = {:.6}: J_excitation {:.3e}, J_inversion {:.3e}",
        traj.len(),
        summary.duration,
        summary.j_excitation,
        summary.j_inversion
    );
    Ok(())
}

pub fn landscape(omega: f64, target: TransferTarget, cfg: ScanConfig, out: &Path) -> Result<()> {
    check_omega(omega)?;
    cfg.validate()?;
    let (grid, rep) = landscape::minimum_time(omega, target, &cfg)?;
    let mut w = create(out, "landscape_grid.csv")?;
    grid.write_csv(&mut w)?;
    w.flush()?;
    write_json(out, "optimum.json", &rep)?;
    println!(
        "{target} at omega {omega}: {:?} regime, phi1 {:.5}π, phi2 {:.5}π, r0 {:.6}, s {:.3e}, t_f {:.6} ({:.5}π), J {:.2e}",
        rep.regime,
        rep.phi1_star / std::f64::consts::PI,
        rep.phi2_star / std::f64::consts::PI,
        rep.r0_star,
        rep.s_star,
        rep.t_f_star,
        rep.t_f_star / std::f64::consts::PI,
        rep.j_star
    );
    if !rep.converged {
        return Err(CliError::NotConverged(format!("best refinement stopped at J = {:.2e}", rep.j_star)));
    }
    Ok(())
}

#[derive(Serialize)]
#[serde(tag = "design", rename_all = "lowercase")]
enum Design {
    Singular(DesignReport),
    Regular(landscape::OptimumReport),
}

pub fn solve(omega: f64, target: TransferTarget, cfg: ScanConfig, out: &Path) -> Result<()> {
    check_omega(omega)?;
    let (design, pulse) = if omega > 0.0 && omega <= singular::threshold(target) {
        let d = singular::solve(target, omega)?;
        (Design::Singular(DesignReport::new(target, &d)), singular::build_pulse(&d))
    } else {
        cfg.validate()?;
        let (_, rep) = landscape::find_optimum(omega, target, &cfg)?;
        if !rep.converged || rep.regime == Regime::Singular {
            return Err(CliError::NotConverged(format!(
                "no regular optimum reached the tolerance (best J = {:.2e})",
                rep.j_star
            )));
        }
        let params = selpulse::extremal::ExtremalParams::new(omega, rep.phi1_star, rep.phi2_star)?;
        let pulse = landscape::extremal_pulse(&params, rep.t_f_star, REGULAR_PULSE_DT)?;
        (Design::Regular(rep), pulse)
    };
    let j = figure_of_merit(&final_state(&SpinPairState::thermal(), omega, &pulse)?, target);
    write_json(out, "design.json", &design)?;
    let mut w = create(out, "pulse.json")?;
    writeln!(w, "{}", PulseFile::from_pulse(omega, &pulse).to_json())?;
    match &design {
        Design::Singular(d) => println!(
            "singular design: delta_alpha {:.6}, T_r {:.7}, T_s {:.7}, t_f {:.7}",
            d.delta_alpha, d.t_r, d.t_s, d.t_f
        ),
        Design::Regular(r) => println!(
            "regular optimum: phi1 {:.6}, phi2 {:.6}, t_f {:.7}",
            r.phi1_star, r.phi2_star, r.t_f_star
        ),
    }
    println!("re-simulated {target} J = {j:.3e} over {} segments", pulse.segments().len());
    Ok(())
}

pub struct TimeGrid {
    pub single: Option<f64>,
    pub tmin: Option<f64>,
    pub tmax: Option<f64>,
    pub step: f64,
}

pub fn grape(template: GrapeProblem, grid: TimeGrid, out: &Path) -> Result<()> {
    check_omega(template.omega)?;
    let reference = singular::solve(template.target, template.omega).ok().map(|d| d.t_final);
    let times = match grid.single {
        Some(t) => vec![t],
        None => {
            let (lo, hi) = match (grid.tmin, grid.tmax, reference) {
                (Some(a), Some(b), _) => (a, b),
                (a, b, Some(r)) => (a.unwrap_or(0.9 * r), b.unwrap_or(1.06 * r)),
                _ => {
                    return Err(CliError::Validation(
                        "no analytic reference above the singular threshold; give --tmin and --tmax or --tfinal".into(),
                    ))
                }
            };
            if !(grid.step > 0.0 && hi >= lo) {
                return Err(CliError::Validation(format!("bad time grid [{lo}, {hi}] step {}", grid.step)));
            }
            let n = ((hi - lo) / grid.step + 1e-9).floor() as usize;
            (0..=n).map(|k| lo + grid.step * k as f64).collect()
        }
    };
    GrapeProblem { t_final: times[0].max(f64::MIN_POSITIVE), ..template }.validate()?;
    let sweep = grape::time_sweep(&template, &times)?;
    let mut w = create(out, "grape_sweep.csv")?;
    sweep.write_csv(&mut w)?;
    w.flush()?;
    if let Some(best) = &sweep.best {
        let mut w = create(out, "grape_pulse.json")?;
        writeln!(w, "{}", PulseFile::from_pulse(template.omega, &best.pulse).to_json())?;
    }
    for p in &sweep.points {
        println!("t_f {:.4}  J {:.3e}", p.t_final, p.best_j);
    }
    match (sweep.cliff(), reference) {
        (Some(t), Some(r)) => println!(
            "cliff (first J < {CLIFF_J:e}) at t = {t:.4}; analytic reference {r:.4}; relative deviation {:+.2}%",
            100.0 * (t - r) / r
        ),
        (Some(t), None) => println!("cliff (first J < {CLIFF_J:e}) at t = {t:.4}; no analytic reference"),
        (None, _) => println!("no swept time reached J < {CLIFF_J:e}"),
    }
    if let (Some((t, p)), Some(r)) = (sweep.extrapolated_zero(), reference) {
        println!("power-law zero of J(t_f) at t = {t:.4} (exponent {p:.2}); deviation {:+.2}%", 100.0 * (t - r) / r);
    }
    if sweep.cliff().is_none() {
        let best = sweep.points.iter().map(|p| p.best_j).fold(f64::INFINITY, f64::min);
        return Err(CliError::NotConverged(format!("best J over the sweep is {best:.2e}")));
    }
    Ok(())
}

pub fn verify(suites: &[Suite], opts: &VerifyOptions, out: &Path) -> Result<()> {
    let suites = if suites.is_empty() { Suite::ALL.to_vec() } else { suites.to_vec() };
    let report = verify::run(&suites, opts);
    write_json(out, "verify_report.json", &report)?;
    for s in &report.suites {
        println!(
            "{:<15} {}  {} cases, max error {:.3e} (tolerance {:.0e})",
            s.suite.name(),
            if s.passed { "PASS" } else { "FAIL" },
            s.cases,
            s.max_error,
            s.tolerance
        );
    }
    if !report.passed {
        let failed: Vec<&str> = report.suites.iter().filter(|s| !s.passed).map(|s| s.suite.name()).collect();
        return Err(CliError::VerifyFailed(failed.join(", ")));
    }
    Ok(())
}
