//! Spin-pair state types, exact and integrated Bloch propagation, and the
//! transfer figures of merit.
//!
//! Spin 1 carries offset `-omega`, spin 2 carries `+omega`. In the rotating
//! frame each Bloch vector obeys `dM/dt = M x n` with `n = (ux, uy, offset)`,
//! i.e. a rotation of angle `-|n| t` about `n`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the field bound `ux^2 + uy^2 <= 1`.
pub const AMPLITUDE_SLACK: f64 = 1e-12;
/// Segments shorter than this are dropped when a pulse is built.
pub const MIN_SEGMENT: f64 = 1e-14;
/// Largest tolerated pre-normalization norm drift in one RK4 step.
pub const MAX_STEP_DRIFT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn north() -> Self {
        Self::new(0.0, 0.0, 1.0)
    }

    pub fn dot(&self, o: &Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(k * self.x, k * self.y, k * self.z)
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn normalized(&self) -> Self {
        self.scale(1.0 / self.norm())
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        (self.x - o.x)
            .abs()
            .max((self.y - o.y).abs())
            .max((self.z - o.z).abs())
    }

    /// Rotates by `angle` about the z axis.
    pub fn rotate_z(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }

    /// Exact solution of `dM/dt = M x n` over `dt` for a constant `n`.
    pub fn precess(&self, n: &Self, dt: f64) -> Self {
        let big_omega = n.norm();
        if big_omega == 0.0 || dt == 0.0 {
            return *self;
        }
        let k = n.scale(1.0 / big_omega);
        let (s, c) = (-big_omega * dt).sin_cos();
        let kv = k.dot(self);
        self.scale(c)
            .add(&k.cross(self).scale(s))
            .add(&k.scale(kv * (1.0 - c)))
    }
}

/// Offsets of the two spins for a half offset difference `omega`.
pub fn offsets(omega: f64) -> [f64; 2] {
    [-omega, omega]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinPairState {
    pub m1: BlochVector,
    pub m2: BlochVector,
    pub time: f64,
}

impl SpinPairState {
    /// Both spins at the north pole at `t = 0`.
    pub const fn thermal() -> Self {
        Self {
            m1: BlochVector::north(),
            m2: BlochVector::north(),
            time: 0.0,
        }
    }

    pub fn spin(&self, i: usize) -> &BlochVector {
        if i == 0 {
            &self.m1
        } else {
            &self.m2
        }
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        self.m1.max_abs_diff(&o.m1).max(self.m2.max_abs_diff(&o.m2))
    }

    pub fn max_norm_defect(&self) -> f64 {
        (self.m1.norm() - 1.0).abs().max((self.m2.norm() - 1.0).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferTarget {
    /// Spin 1 to the equator, spin 2 back to the north pole.
    #[serde(alias = "SelectiveExcitation")]
    Excitation,
    /// Spin 1 to the south pole, spin 2 back to the north pole.
    #[serde(alias = "SelectiveInversion")]
    Inversion,
}

impl TransferTarget {
    /// Target z-component of spin 1.
    pub fn z1_target(self) -> f64 {
        match self {
            Self::Excitation => 0.0,
            Self::Inversion => -1.0,
        }
    }
}

impl fmt::Display for TransferTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Excitation => "excitation",
            Self::Inversion => "inversion",
        })
    }
}

impl FromStr for TransferTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "excitation" | "selectiveexcitation" => Ok(Self::Excitation),
            "inversion" | "selectiveinversion" => Ok(Self::Inversion),
            other => Err(Error::Parse(format!("unknown target '{other}'"))),
        }
    }
}

/// `J = z1^2 + (1 - z2)^2` (excitation) or `(1 + z1)^2 + (1 - z2)^2` (inversion).
pub fn figure_of_merit(state: &SpinPairState, target: TransferTarget) -> f64 {
    let d1 = state.m1.z - target.z1_target();
    let d2 = 1.0 - state.m2.z;
    d1 * d1 + d2 * d2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub dt: f64,
    pub ux: f64,
    pub uy: f64,
}

impl Segment {
    pub fn amplitude(&self) -> f64 {
        self.ux.hypot(self.uy)
    }

    pub fn phase(&self) -> f64 {
        self.uy.atan2(self.ux)
    }
}

/// A bounded piecewise-constant control field.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PiecewisePulse {
    segments: Vec<Segment>,
    total_duration: f64,
}

impl PiecewisePulse {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut kept = Vec::with_capacity(segments.len());
        for (i, seg) in segments.into_iter().enumerate() {
            if !(seg.dt.is_finite() && seg.ux.is_finite() && seg.uy.is_finite()) {
                return Err(Error::NonFinite("pulse segment"));
            }
            if seg.dt < 0.0 {
                return Err(Error::NegativeDuration(seg.dt));
            }
            check_amplitude(i, seg.ux, seg.uy)?;
            if seg.dt >= MIN_SEGMENT {
                kept.push(seg);
            }
        }
        let total_duration = kept.iter().fold(0.0, |acc, s| acc + s.dt);
        Ok(Self {
            segments: kept,
            total_duration,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Equal-duration segments from parallel control arrays.
    pub fn uniform(duration: f64, ux: &[f64], uy: &[f64]) -> Result<Self> {
        assert_eq!(ux.len(), uy.len());
        let dt = duration / ux.len() as f64;
        Self::new(
            ux.iter()
                .zip(uy)
                .map(|(&ux, &uy)| Segment { dt, ux, uy })
                .collect(),
        )
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_duration(&self) -> f64 {
        self.total_duration
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Appends `other` after this pulse.
    pub fn concat(&self, other: &Self) -> Self {
        let mut segments = self.segments.clone();
        segments.extend_from_slice(&other.segments);
        Self {
            total_duration: self.total_duration + other.total_duration,
            segments,
        }
    }

    /// Field value at time `t` (right-continuous; zero outside the pulse).
    pub fn field_at(&self, t: f64) -> (f64, f64) {
        let mut t0 = 0.0;
        for seg in &self.segments {
            if t >= t0 && t < t0 + seg.dt {
                return (seg.ux, seg.uy);
            }
            t0 += seg.dt;
        }
        (0.0, 0.0)
    }
}

fn check_amplitude(segment: usize, ux: f64, uy: f64) -> Result<()> {
    let a2 = ux * ux + uy * uy;
    if a2 > 1.0 + AMPLITUDE_SLACK {
        return Err(Error::AmplitudeExceeded {
            segment,
            amplitude: a2.sqrt(),
        });
    }
    Ok(())
}

/// JSON exchange form `{"omega": .., "segments": [{"dt","ux","uy"}, ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseFile {
    pub omega: f64,
    pub segments: Vec<Segment>,
}

impl PulseFile {
    pub fn from_pulse(omega: f64, pulse: &PiecewisePulse) -> Self {
        Self {
            omega,
            segments: pulse.segments().to_vec(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pulse serialization")
    }

    pub fn pulse(&self) -> Result<PiecewisePulse> {
        PiecewisePulse::new(self.segments.clone())
    }
}

/// Exact propagation of both spins under a constant field for `dt`.
pub fn propagate_constant(
    state: &SpinPairState,
    omega: f64,
    ux: f64,
    uy: f64,
    dt: f64,
) -> Result<SpinPairState> {
    if !dt.is_finite() {
        return Err(Error::NonFinite("dt"));
    }
    if dt < 0.0 {
        return Err(Error::NegativeDuration(dt));
    }
    check_amplitude(0, ux, uy)?;
    let [w1, w2] = offsets(omega);
    Ok(SpinPairState {
        m1: state.m1.precess(&BlochVector::new(ux, uy, w1), dt),
        m2: state.m2.precess(&BlochVector::new(ux, uy, w2), dt),
        time: state.time + dt,
    })
}

/// Chains exact rotations over the pulse; the trajectory holds the input
/// state followed by the state at the end of each segment.
pub fn propagate_pulse(
    state: &SpinPairState,
    omega: f64,
    pulse: &PiecewisePulse,
) -> Result<Vec<SpinPairState>> {
    let mut out = Vec::with_capacity(pulse.segments().len() + 1);
    out.push(*state);
    let mut cur = *state;
    for (i, seg) in pulse.segments().iter().enumerate() {
        check_amplitude(i, seg.ux, seg.uy)?;
        cur = propagate_constant(&cur, omega, seg.ux, seg.uy, seg.dt)?;
        out.push(cur);
    }
    Ok(out)
}

/// Like [`propagate_pulse`] but subdivides segments so that consecutive
/// samples are at most `max_dt` apart.
pub fn propagate_pulse_dense(
    state: &SpinPairState,
    omega: f64,
    pulse: &PiecewisePulse,
    max_dt: f64,
) -> Result<Vec<SpinPairState>> {
    assert!(max_dt > 0.0);
    let mut out = vec![*state];
    let mut cur = *state;
    for (i, seg) in pulse.segments().iter().enumerate() {
        check_amplitude(i, seg.ux, seg.uy)?;
        let n = (seg.dt / max_dt).ceil().max(1.0) as usize;
        let start = cur;
        for k in 1..=n {
            // Each sample is rotated from the segment start to avoid
            // accumulating roundoff along long segments.
            let dt = seg.dt * k as f64 / n as f64;
            cur = propagate_constant(&start, omega, seg.ux, seg.uy, dt)?;
            out.push(cur);
        }
    }
    Ok(out)
}

/// Final state after the whole pulse.
pub fn final_state(state: &SpinPairState, omega: f64, pulse: &PiecewisePulse) -> Result<SpinPairState> {
    let mut cur = *state;
    for (i, seg) in pulse.segments().iter().enumerate() {
        check_amplitude(i, seg.ux, seg.uy)?;
        cur = propagate_constant(&cur, omega, seg.ux, seg.uy, seg.dt)?;
    }
    Ok(cur)
}

#[derive(Debug, Clone)]
pub struct BlochIntegration {
    pub trajectory: Vec<SpinPairState>,
    /// Largest pre-normalization norm defect over all steps.
    pub max_drift: f64,
}

fn bloch_rhs(m: &BlochVector, ux: f64, uy: f64, offset: f64) -> BlochVector {
    m.cross(&BlochVector::new(ux, uy, offset))
}

fn rk4_bloch(m: &BlochVector, offset: f64, f0: (f64, f64), fh: (f64, f64), f1: (f64, f64), h: f64) -> BlochVector {
    let k1 = bloch_rhs(m, f0.0, f0.1, offset);
    let k2 = bloch_rhs(&m.add(&k1.scale(h / 2.0)), fh.0, fh.1, offset);
    let k3 = bloch_rhs(&m.add(&k2.scale(h / 2.0)), fh.0, fh.1, offset);
    let k4 = bloch_rhs(&m.add(&k3.scale(h)), f1.0, f1.1, offset);
    m.add(&k1.add(&k2.scale(2.0)).add(&k3.scale(2.0)).add(&k4).scale(h / 6.0))
}

/// Fixed-step RK4 integration of the Bloch equations under a smooth field.
///
/// The step is shrunk so that an integer number of steps lands on `t_end`.
/// Bloch vectors are renormalized after every step; a pre-normalization
/// defect above [`MAX_STEP_DRIFT`] aborts the integration.
pub fn integrate_bloch<F>(
    state: &SpinPairState,
    omega: f64,
    field: F,
    t_end: f64,
    step: f64,
) -> Result<BlochIntegration>
where
    F: Fn(f64) -> (f64, f64),
{
    if !(step > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {step}")));
    }
    if t_end < 0.0 {
        return Err(Error::NegativeDuration(t_end));
    }
    let n = ((t_end / step) - 1e-9).ceil().max(0.0) as usize;
    let h = if n > 0 { t_end / n as f64 } else { 0.0 };
    let [w1, w2] = offsets(omega);
    let mut traj = Vec::with_capacity(n + 1);
    traj.push(*state);
    let mut cur = *state;
    let mut max_drift: f64 = 0.0;
    let t0 = state.time;
    for k in 0..n {
        let t = t0 + k as f64 * h;
        let f0 = field(t);
        let fh = field(t + h / 2.0);
        let f1 = field(t + h);
        for (i, f) in [f0, fh, f1].iter().enumerate() {
            if f.0 * f.0 + f.1 * f.1 > 1.0 + 1e-9 {
                return Err(Error::AmplitudeExceeded {
                    segment: 2 * k + i,
                    amplitude: f.0.hypot(f.1),
                });
            }
        }
        let m1 = rk4_bloch(&cur.m1, w1, f0, fh, f1, h);
        let m2 = rk4_bloch(&cur.m2, w2, f0, fh, f1, h);
        let drift = (m1.norm() - 1.0).abs().max((m2.norm() - 1.0).abs());
        if drift > MAX_STEP_DRIFT {
            return Err(Error::IntegrationDrift { t: t + h, drift });
        }
        max_drift = max_drift.max(drift);
        cur = SpinPairState {
            m1: m1.normalized(),
            m2: m2.normalized(),
            time: t0 + (k + 1) as f64 * h,
        };
        traj.push(cur);
    }
    Ok(BlochIntegration {
        trajectory: traj,
        max_drift,
    })
}

/// Writes `t,x1,y1,z1,x2,y2,z2` rows.
pub fn write_trajectory_csv<W: Write>(mut w: W, traj: &[SpinPairState]) -> std::io::Result<()> {
    writeln!(w, "t,x1,y1,z1,x2,y2,z2")?;
    for s in traj {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.time, s.m1.x, s.m1.y, s.m1.z, s.m2.x, s.m2.y, s.m2.z
        )?;
    }
    Ok(())
}
