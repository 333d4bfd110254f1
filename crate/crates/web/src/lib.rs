//! Browser bindings. Every export returns a JSON string holding the pulse
//! and the two Bloch trajectories, ready to plot:
//! `{"t": [..], "ux": [..], "uy": [..], "m1": [[x,y,z]..], "m2": [..], "info": {..}}`.

use selpulse::extremal::ExtremalParams;
use selpulse::grape::{self, GrapeProblem};
use selpulse::landscape;
use selpulse::singular::{self, DesignReport};
use selpulse::spin::{figure_of_merit, propagate_pulse_dense, PiecewisePulse, SpinPairState, TransferTarget};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Plot resolution along the pulse.
const SAMPLES: f64 = 400.0;

fn trace(omega: f64, pulse: &PiecewisePulse, info: Value) -> Result<String, String> {
    let dt = (pulse.total_duration() / SAMPLES).max(1e-4);
    let traj = propagate_pulse_dense(&SpinPairState::thermal(), omega, pulse, dt).map_err(|e| e.to_string())?;
    let t: Vec<f64> = traj.iter().map(|s| s.time).collect();
    let (ux, uy): (Vec<f64>, Vec<f64>) = t.iter().map(|&t| pulse.field_at(t)).unzip();
    let m = |i: usize| -> Vec<[f64; 3]> {
        traj.iter().map(|s| s.spin(i)).map(|v| [v.x, v.y, v.z]).collect()
    };
    let end = traj.last().expect("initial state is always present");
    let out = json!({
        "t": t,
        "ux": ux,
        "uy": uy,
        "m1": m(0),
        "m2": m(1),
        "J_excitation": figure_of_merit(end, TransferTarget::Excitation),
        "J_inversion": figure_of_merit(end, TransferTarget::Inversion),
        "info": info,
    });
    Ok(out.to_string())
}

fn target(name: &str) -> Result<TransferTarget, String> {
    name.parse().map_err(|e: selpulse::Error| e.to_string())
}

/// Regular-singular-regular design for `omega` at or below the threshold.
#[wasm_bindgen]
pub fn singular_design(omega: f64, target_name: &str) -> Result<String, String> {
    let target = target(target_name)?;
    let d = singular::solve(target, omega).map_err(|e| e.to_string())?;
    let info = serde_json::to_value(DesignReport::new(target, &d)).map_err(|e| e.to_string())?;
    trace(omega, &singular::build_pulse(&d), info)
}

/// The extremal started from the angles `(phi1, phi2)`, followed for `duration`.
#[wasm_bindgen]
pub fn extremal(omega: f64, phi1: f64, phi2: f64, duration: f64) -> Result<String, String> {
    let params = ExtremalParams::new(omega, phi1, phi2).map_err(|e| e.to_string())?;
    let pulse = landscape::extremal_pulse(&params, duration, 1e-3).map_err(|e| e.to_string())?;
    let info = json!({ "omega": omega, "phi1": phi1, "phi2": phi2, "duration": pulse.total_duration() });
    trace(omega, &pulse, info)
}

/// A small GRAPE run at one final time.
#[wasm_bindgen]
pub fn grape_run(
    omega: f64,
    target_name: &str,
    t_final: f64,
    segments: usize,
    restarts: usize,
    seed: u64,
) -> Result<String, String> {
    let mut p = GrapeProblem::new(omega, target(target_name)?, t_final);
    p.n_segments = segments;
    p.restarts = restarts;
    p.max_iterations = 1000;
    p.seed = seed;
    let res = grape::optimize(&p).map_err(|e| e.to_string())?;
    let info = json!({
        "J": res.j_final,
        "iterations": res.iterations,
        "restart_index": res.restart_index,
        "gradient_norm": res.gradient_norm,
    });
    trace(omega, &res.pulse, info)
}
