//! Regular–singular–regular pulses.
//!
//! Below a target-dependent offset threshold the optimal pulse is a full
//! amplitude arc of phase 0, a zero-field dwell of length `T_s`, and a
//! second full-amplitude arc of phase `Δα`, both regular arcs lasting
//! `T_r = t_S`. The first arc brings spin `i` to `(ω_i, sqrt(1-ω²), 0)`;
//! everything after that is a pair of rotations in closed form.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, PI};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extremal::{integrate_extremal, CostateState, ExtremalParams, Termination};
use crate::spin::{
    figure_of_merit, final_state, integrate_bloch, offsets, BlochVector, PiecewisePulse, Segment, SpinPairState,
    TransferTarget,
};

/// Offset below which selective excitation uses a singular arc.
pub fn excitation_threshold() -> f64 {
    0.5 * (2.0 - 2f64.sqrt()).sqrt()
}

/// Offset below which selective inversion uses a singular arc.
pub const INVERSION_THRESHOLD: f64 = FRAC_1_SQRT_2;

pub fn threshold(target: TransferTarget) -> f64 {
    match target {
        TransferTarget::Excitation => excitation_threshold(),
        TransferTarget::Inversion => INVERSION_THRESHOLD,
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::Domain(format!("singular arcs need 0 < omega <= 1, got {omega}")));
    }
    Ok(())
}

/// Time at which the `E = 0`, `s = 0` extremal reaches the origin with zero
/// velocity.
pub fn singular_onset(omega: f64) -> Result<f64> {
    check_omega(omega)?;
    Ok((-omega * omega).acos() / (1.0 + omega * omega).sqrt())
}

/// `atan2(2ω sqrt(1-ω²), 1-2ω²)`, in `[0, π]`.
pub fn gamma(omega: f64) -> f64 {
    (2.0 * omega * (1.0 - omega * omega).max(0.0).sqrt()).atan2(1.0 - 2.0 * omega * omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegSingDesign {
    pub omega: f64,
    pub delta_alpha: f64,
    pub t_singular: f64,
    pub t_regular: f64,
    pub gamma: f64,
    pub t_final: f64,
}

impl RegSingDesign {
    pub fn new(omega: f64, delta_alpha: f64, t_singular: f64) -> Result<Self> {
        let t_regular = singular_onset(omega)?;
        if !(t_singular >= 0.0) {
            return Err(Error::NegativeDuration(t_singular));
        }
        Ok(Self {
            omega,
            delta_alpha,
            t_singular,
            t_regular,
            gamma: gamma(omega),
            t_final: 2.0 * t_regular + t_singular,
        })
    }
}

/// Durations this close below zero at a threshold are rounding, not a
/// regime change.
const TS_ROUNDING: f64 = 1e-12;

fn design_from_sums(omega: f64, delta_alpha: f64, rotation: f64) -> Result<RegSingDesign> {
    check_omega(omega)?;
    let mut ts = (rotation - gamma(omega)) / omega;
    if ts < 0.0 && ts > -TS_ROUNDING {
        ts = 0.0;
    }
    if ts < 0.0 {
        return Err(Error::Domain(format!(
            "omega = {omega} is above the singular threshold (T_s = {ts})"
        )));
    }
    RegSingDesign::new(omega, delta_alpha, ts)
}

/// `Δα = 3π/4`, `ωT_s + γ = π/4`.
pub fn solve_excitation(omega: f64) -> Result<RegSingDesign> {
    solve_excitation_branch(omega, true)
}

/// Both sign choices of `Δα - ωT_s - γ = ±π/2`, `Δα + ωT_s + γ = π`. Only
/// the `+` branch is time-minimal.
pub fn solve_excitation_branch(omega: f64, plus: bool) -> Result<RegSingDesign> {
    if plus {
        design_from_sums(omega, 3.0 * FRAC_PI_4, FRAC_PI_4)
    } else {
        design_from_sums(omega, FRAC_PI_4, 3.0 * FRAC_PI_4)
    }
}

/// `Δα = π/2`, `ωT_s + γ = π/2`.
pub fn solve_inversion(omega: f64) -> Result<RegSingDesign> {
    design_from_sums(omega, FRAC_PI_2, FRAC_PI_2)
}

pub fn solve(target: TransferTarget, omega: f64) -> Result<RegSingDesign> {
    match target {
        TransferTarget::Excitation => solve_excitation(omega),
        TransferTarget::Inversion => solve_inversion(omega),
    }
}

pub fn build_pulse(design: &RegSingDesign) -> PiecewisePulse {
    let (s, c) = design.delta_alpha.sin_cos();
    PiecewisePulse::new(vec![
        Segment { dt: design.t_regular, ux: 1.0, uy: 0.0 },
        Segment { dt: design.t_singular, ux: 0.0, uy: 0.0 },
        Segment { dt: design.t_regular, ux: c, uy: s },
    ])
    .expect("design segments are bounded and non-negative")
}

/// Final Bloch vectors in closed form, derived independently of the
/// printed components. With `β_i = atan2(sqrt(1-ω²), ω_i)`
/// and `Φ_i = 2β_i - ω_i T_s - Δα`,
///
/// ```text
/// M_i(t_f) = (sin Φ_i sin(Δα + β_i), -sin Φ_i cos(Δα + β_i), cos Φ_i)
/// ```
///
/// Since `2β_1 = π + γ` and `2β_2 = π - γ`, this gives
/// `z_1 = -cos(Δα - ωT_s - γ)` and `z_2 = -cos(Δα + ωT_s + γ)`.
pub fn final_state_formulas(design: &RegSingDesign) -> SpinPairState {
    let w = design.omega;
    let c = (1.0 - w * w).max(0.0).sqrt();
    let spin = |wi: f64| {
        let beta = c.atan2(wi);
        let big = 2.0 * beta - wi * design.t_singular - design.delta_alpha;
        let (sp, cp) = big.sin_cos();
        let (sa, ca) = (design.delta_alpha + beta).sin_cos();
        BlochVector::new(sp * sa, -sp * ca, cp)
    };
    let [w1, w2] = offsets(w);
    SpinPairState { m1: spin(w1), m2: spin(w2), time: design.t_final }
}

/// The final-state components exactly as printed in the reference, with
/// their `2Δα` arguments and `1/(4ω)` prefactors.
pub fn printed_final_state(design: &RegSingDesign) -> SpinPairState {
    let (w, da, ts, g) = (design.omega, design.delta_alpha, design.t_singular, design.gamma);
    let k = 1.0 / (4.0 * w);
    let m1 = BlochVector::new(
        k * ((2.0 * da - w * ts - g).cos() + (w * ts + 2.0 * g).cos() - (2.0 * da - w * ts).cos() - (w * ts + g).cos()),
        k * ((2.0 * da - w * ts - g).sin() + (w * ts + 2.0 * g).sin() - (2.0 * da - w * ts).sin() - (w * ts + g).sin()),
        -(2.0 * da - w * ts - g).cos(),
    );
    let m2 = BlochVector::new(
        k * (-(2.0 * da + w * ts + g).cos() - (w * ts + 2.0 * g).cos() + (2.0 * da + w * ts).cos() + (w * ts + g).cos()),
        k * (-(2.0 * da - w * ts - g).sin() + (w * ts + 2.0 * g).sin() + (2.0 * da + w * ts).sin() - (w * ts + g).sin()),
        -(2.0 * da + w * ts + g).cos(),
    );
    SpinPairState { m1, m2, time: design.t_final }
}

/// The printed components with the two corrections the propagator asks
/// for: `Δα` instead of `2Δα` in the z-components, and
/// `2Δα + ωT_s + γ` as the first argument of `y_2`.
pub fn corrected_printed_final_state(design: &RegSingDesign) -> SpinPairState {
    let (w, da, ts, g) = (design.omega, design.delta_alpha, design.t_singular, design.gamma);
    let k = 1.0 / (4.0 * w);
    let mut s = printed_final_state(design);
    s.m1.z = -(da - w * ts - g).cos();
    s.m2.z = -(da + w * ts + g).cos();
    s.m2.y = k * (-(2.0 * da + w * ts + g).sin() + (w * ts + 2.0 * g).sin() + (2.0 * da + w * ts).sin() - (w * ts + g).sin());
    s
}

/// Final state of the exactly propagated design pulse.
pub fn propagated_final_state(design: &RegSingDesign) -> SpinPairState {
    final_state(&SpinPairState::thermal(), design.omega, &build_pulse(design))
        .expect("design pulse is admissible")
}

/// One component of the printed-versus-propagated comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentCheck {
    pub component: String,
    pub printed: f64,
    pub derived: f64,
    pub propagated: f64,
}

pub fn final_state_report(design: &RegSingDesign) -> Vec<ComponentCheck> {
    let pr = printed_final_state(design);
    let de = final_state_formulas(design);
    let ex = propagated_final_state(design);
    let comps = |s: &SpinPairState| [s.m1.x, s.m1.y, s.m1.z, s.m2.x, s.m2.y, s.m2.z];
    let names = ["x1", "y1", "z1", "x2", "y2", "z2"];
    let (p, d, e) = (comps(&pr), comps(&de), comps(&ex));
    (0..6)
        .map(|i| ComponentCheck { component: names[i].into(), printed: p[i], derived: d[i], propagated: e[i] })
        .collect()
}

/// Final state of the regular extremal with `s = 0`, `E = 0` continued
/// through the origin: the costate flow is integrated up to the onset, and
/// the mirrored arc is launched with its direction turned by `Δα`. The
/// resulting smooth field is integrated with RK4, independently of the
/// exact segment propagator.
pub fn limiting_regular_final_state(target: TransferTarget, omega: f64) -> Result<SpinPairState> {
    let design = solve(target, omega)?;
    let ts = design.t_regular;
    // On the line phi2 = pi - phi1, r0 = sqrt(2)|cos phi1| = omega sqrt(2).
    let params = ExtremalParams::new(omega, omega.acos(), PI - omega.acos())?;
    let traj = integrate_extremal(&params, ts, 1e-4)?;
    let t_hit = match traj.termination {
        Termination::Completed => ts,
        Termination::SingularHit { t } => t,
    };
    // Close to the origin the direction of ℓ is rounding noise, and a
    // slightly positive E would even carry the flow through it. The approach
    // is radial, so hold the last well-resolved direction.
    let anchor = traj
        .samples
        .iter()
        .take_while(|s| s.t <= t_hit && s.r() > 1e-6)
        .last()
        .expect("r(0) = omega sqrt(2) is resolved");
    let t_valid = anchor.t;
    let (lx, ly) = (anchor.costate.lx, anchor.costate.ly);
    let dir_end = ly.atan2(lx);
    // Field of the incoming arc at time t; the outgoing arc replays it
    // backwards, turned by Δα.
    let incoming = |t: f64| {
        if t <= t_valid {
            traj.field_at(t)
        } else {
            dir_end.sin_cos().swap_tuple()
        }
    };
    let (sa, ca) = design.delta_alpha.sin_cos();
    let start2 = ts + design.t_singular;
    let outgoing = |t: f64| {
        let (ux, uy) = incoming(ts - (t - start2));
        (ca * ux - sa * uy, sa * ux + ca * uy)
    };
    // Separate runs so that no RK4 step straddles a switch.
    let arc1 = integrate_bloch(&SpinPairState::thermal(), omega, incoming, ts, 1e-3)?;
    let mut mid = *arc1.trajectory.last().expect("at least the initial state");
    if design.t_singular > 0.0 {
        let dwell = integrate_bloch(&mid, omega, |_| (0.0, 0.0), design.t_singular, 1e-3)?;
        mid = *dwell.trajectory.last().expect("at least the initial state");
    }
    let arc2 = integrate_bloch(&mid, omega, outgoing, ts, 1e-3)?;
    Ok(*arc2.trajectory.last().expect("at least the initial state"))
}

trait SwapTuple {
    fn swap_tuple(self) -> (f64, f64);
}

impl SwapTuple for (f64, f64) {
    fn swap_tuple(self) -> (f64, f64) {
        (self.1, self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SingularVerdict {
    /// The state is on a regular arc.
    NotSingular,
    /// Zero field, `m_z` held at `mz` (up to `mz_drift`) across the arc.
    Singular { field: (f64, f64), mz: f64, mz_drift: f64 },
    /// `m_z = 0` as well: the pseudo-Hamiltonian vanishes.
    Exceptional,
}

/// Threshold on `|ℓ_x|, |ℓ_y|, |m_x|, |m_y|` for the singular set.
pub const SINGULAR_TOL: f64 = 1e-8;

/// Classifies a costate and, on the singular set, flows it with zero field
/// for `duration` to confirm it stays put.
pub fn singular_field_check(c: &CostateState, omega: f64, duration: f64) -> SingularVerdict {
    if [c.lx, c.ly, c.mx, c.my].iter().any(|v| v.abs() >= SINGULAR_TOL) {
        return SingularVerdict::NotSingular;
    }
    if c.mz.abs() < SINGULAR_TOL {
        return SingularVerdict::Exceptional;
    }
    // Zero field: ℓ' = ω(-m_y, m_x), m_xy' = ω(-ℓ_y, ℓ_x), m_z' = 0.
    let f = |y: [f64; 5]| [-omega * y[3], omega * y[2], -omega * y[1], omega * y[0], 0.0];
    let mut y = [c.lx, c.ly, c.mx, c.my, c.mz];
    let n = (duration / 1e-3).ceil().max(1.0) as usize;
    let h = duration / n as f64;
    let add = |a: [f64; 5], b: [f64; 5], k: f64| std::array::from_fn::<f64, 5, _>(|i| a[i] + k * b[i]);
    for _ in 0..n {
        let k1 = f(y);
        let k2 = f(add(y, k1, h / 2.0));
        let k3 = f(add(y, k2, h / 2.0));
        let k4 = f(add(y, k3, h));
        y = std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    let r = y[0].hypot(y[1]);
    let field = if r < SINGULAR_TOL { (0.0, 0.0) } else { (y[0] / r, y[1] / r) };
    SingularVerdict::Singular { field, mz: c.mz, mz_drift: (y[4] - c.mz).abs() }
}

/// The design export record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignReport {
    pub target: TransferTarget,
    pub omega: f64,
    pub delta_alpha: f64,
    #[serde(rename = "T_r")]
    pub t_r: f64,
    #[serde(rename = "T_s")]
    pub t_s: f64,
    pub t_f: f64,
    #[serde(rename = "J_final")]
    pub j_final: f64,
}

impl DesignReport {
    pub fn new(target: TransferTarget, design: &RegSingDesign) -> Self {
        Self {
            target,
            omega: design.omega,
            delta_alpha: design.delta_alpha,
            t_r: design.t_regular,
            t_s: design.t_singular,
            t_f: design.t_final,
            j_final: figure_of_merit(&propagated_final_state(design), target),
        }
    }
}

/// Writes `omega,T_s,t_f,inv_tf` for every `omega` the target admits.
pub fn write_sweep_csv<W: Write>(mut w: W, target: TransferTarget, omegas: &[f64]) -> std::io::Result<()> {
    writeln!(w, "omega,T_s,t_f,inv_tf")?;
    for &om in omegas {
        if let Ok(d) = solve(target, om) {
            writeln!(w, "{},{},{},{}", om, d.t_singular, d.t_final, 1.0 / d.t_final)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn onset_values() {
        assert!((singular_onset(1.0).unwrap() - PI / 2f64.sqrt()).abs() < 1e-12);
        assert!((singular_onset(1e-9).unwrap() - FRAC_PI_2).abs() < 1e-8);
        assert!((singular_onset(0.2).unwrap() - 1.5795262).abs() < 1e-6);
        assert!(singular_onset(1.01).is_err() && singular_onset(0.0).is_err());
    }

    #[test]
    fn excitation_at_0_2() {
        let d = solve_excitation(0.2).unwrap();
        // (π/4 - atan2(0.4 sqrt(0.96), 0.92)) / 0.2, evaluated independently.
        assert!((d.t_singular - 1.9134116).abs() < 1e-6, "{}", d.t_singular);
        assert!((d.t_final - 5.072464).abs() < 1e-5);
        let segs = build_pulse(&d);
        let durs: Vec<f64> = segs.segments().iter().map(|s| s.dt).collect();
        assert!((durs[0] - 1.5795262).abs() < 1e-6 && (durs[2] - durs[0]).abs() < 1e-15);
        let amps: Vec<f64> = segs.segments().iter().map(|s| s.amplitude()).collect();
        assert_eq!(amps, vec![1.0, 0.0, 1.0]);
        assert!(figure_of_merit(&propagated_final_state(&d), TransferTarget::Excitation) < 1e-9);
    }

    #[test]
    fn thresholds_close_the_dwell() {
        assert!(solve_excitation(excitation_threshold()).unwrap().t_singular.abs() < 1e-10);
        assert!(solve_inversion(INVERSION_THRESHOLD).unwrap().t_singular.abs() < 1e-10);
        assert!(solve_excitation(0.39).is_err());
        assert!(solve_inversion(0.72).is_err());
        let zero = RegSingDesign::new(0.5, 1.0, 0.0).unwrap();
        assert_eq!(build_pulse(&zero).segments().len(), 2);
    }

    #[test]
    fn closed_form_matches_propagator() {
        for (w, da, ts) in [(0.2, 2.356, 1.9), (0.5, 1.0, 0.3), (0.9, -2.0, 4.0), (1.0, 0.0, 0.0)] {
            let d = RegSingDesign::new(w, da, ts).unwrap();
            let err = final_state_formulas(&d).max_abs_diff(&propagated_final_state(&d));
            assert!(err < 1e-12, "{err}");
        }
        let d = solve_excitation(0.2).unwrap();
        let s = final_state_formulas(&d);
        assert!(s.m1.z.abs() < 1e-12 && (s.m2.z - 1.0).abs() < 1e-12);
        let d = solve_inversion(0.5).unwrap();
        let s = final_state_formulas(&d);
        assert!((s.m1.z + 1.0).abs() < 1e-12 && (s.m2.z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn printed_components_against_propagator() {
        let mut worst = [0.0f64; 6];
        for i in 0..100 {
            let w = 0.05 + 0.009 * i as f64;
            let da = -3.0 + 0.06 * ((i * 37) % 100) as f64;
            let ts = 0.04 * ((i * 71) % 100) as f64;
            let d = RegSingDesign::new(w, da, ts).unwrap();
            for (k, c) in final_state_report(&d).iter().enumerate() {
                worst[k] = worst[k].max((c.printed - c.propagated).abs());
                assert!((c.derived - c.propagated).abs() < 1e-12);
            }
        }
        // x1, y1, x2 are right as printed; z1, z2 and y2 are not.
        for k in [0, 1, 3] {
            assert!(worst[k] < 1e-12, "{worst:?}");
        }
        for k in [2, 4, 5] {
            assert!(worst[k] > 0.1, "{worst:?}");
        }
        // With 2Δα the printed z1 at the excitation design is -cos(3π/4), not 0.
        let report = final_state_report(&solve_excitation(0.2).unwrap());
        assert!((report[2].printed - FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn corrected_printed_forms() {
        for i in 0..100 {
            let d = RegSingDesign::new(0.05 + 0.009 * i as f64, -3.0 + 0.06 * ((i * 37) % 100) as f64, 0.04 * ((i * 71) % 100) as f64).unwrap();
            let c = corrected_printed_final_state(&d);
            assert!(c.max_abs_diff(&propagated_final_state(&d)) < 1e-12);
        }
    }

    #[test]
    fn minus_branch_is_slower() {
        let w = 0.3;
        let plus = solve_excitation_branch(w, true).unwrap();
        let minus = solve_excitation_branch(w, false).unwrap();
        assert!(minus.t_final > plus.t_final);
        assert!(figure_of_merit(&propagated_final_state(&minus), TransferTarget::Excitation) < 1e-9);
    }

    #[test]
    fn threshold_continuity() {
        for target in [TransferTarget::Excitation, TransferTarget::Inversion] {
            let w = threshold(target);
            let exact = propagated_final_state(&solve(target, w).unwrap());
            let limit = limiting_regular_final_state(target, w).unwrap();
            assert!(exact.max_abs_diff(&limit) < 1e-6, "{target}: {}", exact.max_abs_diff(&limit));
        }
    }

    #[test]
    fn dwell_decreases_with_offset() {
        for target in [TransferTarget::Excitation, TransferTarget::Inversion] {
            let top = threshold(target);
            let ts: Vec<f64> = (1..=100).map(|k| solve(target, top * k as f64 / 100.0).unwrap().t_singular).collect();
            assert!(ts.windows(2).all(|p| p[1] < p[0]));
        }
    }

    #[test]
    fn singular_verdicts() {
        let c = CostateState { lx: 0.0, ly: 0.0, lz: 0.0, mx: 0.0, my: 0.0, mz: 0.7 };
        match singular_field_check(&c, 0.4, 3.0) {
            SingularVerdict::Singular { field, mz_drift, .. } => {
                assert_eq!(field, (0.0, 0.0));
                assert!(mz_drift < 1e-15);
            }
            v => panic!("{v:?}"),
        }
        let c0 = CostateState { mz: 0.0, ..c };
        assert_eq!(singular_field_check(&c0, 0.4, 1.0), SingularVerdict::Exceptional);
        let reg = CostateState { lx: 0.5, ..c };
        assert_eq!(singular_field_check(&reg, 0.4, 1.0), SingularVerdict::NotSingular);
    }

    proptest! {
        #[test]
        fn designs_reach_target(f in 0.01f64..1.0, inversion in any::<bool>()) {
            let target = if inversion { TransferTarget::Inversion } else { TransferTarget::Excitation };
            let d = solve(target, f * threshold(target)).unwrap();
            prop_assert!(figure_of_merit(&propagated_final_state(&d), target) < 1e-9);
        }
    }
}
