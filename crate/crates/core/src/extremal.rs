//! Regular Pontryagin extremals in the reduced `(l, m)` coordinates.
//!
//! With `L_i = p_i x M_i` the costates obey the same precession as the Bloch
//! vectors. In terms of `l = L1 + L2` and `m = L1 - L2` (with `l_z = 0`):
//!
//! ```text
//! lx' = -w my            mx' = -(w + mz/r) ly
//! ly' =  w mx            my' =  (w + mz/r) lx
//!                        mz' =  (ly mx - lx my) / r
//! ```
//!
//! and the regular field is `u = (lx, ly) / r`, `r = |l|`.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::spin::BlochVector;

/// Radius below which the regular field is undefined.
pub const R_MIN: f64 = 1e-10;
/// Default fixed RK4 step for extremal integration.
pub const EXTREMAL_STEP: f64 = 1e-4;
/// Angle pairs with `hypot(sin phi1, sin phi2)` below this are degenerate.
pub const DEGENERATE_SINES: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremalParams {
    pub omega: f64,
    pub phi1: f64,
    pub phi2: f64,
}

impl ExtremalParams {
    pub fn new(omega: f64, phi1: f64, phi2: f64) -> Result<Self> {
        if !(omega.is_finite() && phi1.is_finite() && phi2.is_finite()) {
            return Err(Error::NonFinite("extremal parameters"));
        }
        if omega < 0.0 {
            return Err(Error::Domain(format!("omega must be non-negative, got {omega}")));
        }
        Ok(Self { omega, phi1, phi2 })
    }

    pub fn invariants(&self) -> Result<InvariantSet> {
        invariants_from_angles(self)
    }

    /// Sign of `dr/dt` at `t = 0` (`0.0` at a turning point).
    pub fn initial_radial_velocity(&self) -> Result<f64> {
        let c = initial_costates(self)?;
        Ok(c.radial_velocity(self.omega))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostateState {
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
}

impl CostateState {
    fn to_array(self) -> [f64; 5] {
        [self.lx, self.ly, self.mx, self.my, self.mz]
    }

    fn from_array(y: [f64; 5]) -> Self {
        Self { lx: y[0], ly: y[1], lz: 0.0, mx: y[2], my: y[3], mz: y[4] }
    }

    pub fn r(&self) -> f64 {
        self.lx.hypot(self.ly)
    }

    /// Control phase `atan2(ly, lx)` in (-pi, pi].
    pub fn alpha(&self) -> f64 {
        self.ly.atan2(self.lx)
    }

    /// Regular field `(lx, ly) / r`.
    pub fn field(&self) -> (f64, f64) {
        let r = self.r();
        (self.lx / r, self.ly / r)
    }

    pub fn kepler_constant(&self) -> f64 {
        self.lx * self.mx + self.ly * self.my + self.lz * self.mz
    }

    pub fn radial_constant(&self, omega: f64) -> f64 {
        self.r() - omega * self.mz
    }

    pub fn norm_constant(&self) -> f64 {
        let r = self.r();
        r * r + self.mx * self.mx + self.my * self.my + self.mz * self.mz
    }

    /// `dr/dt = w (ly mx - lx my) / r`.
    pub fn radial_velocity(&self, omega: f64) -> f64 {
        let r = self.r();
        if r == 0.0 {
            return 0.0;
        }
        omega * (self.ly * self.mx - self.lx * self.my) / r
    }

    /// Recovers `(L1, L2)`.
    pub fn angular_momenta(&self) -> (BlochVector, BlochVector) {
        (
            BlochVector::new(0.5 * (self.lx + self.mx), 0.5 * (self.ly + self.my), 0.5 * (self.lz + self.mz)),
            BlochVector::new(0.5 * (self.lx - self.mx), 0.5 * (self.ly - self.my), 0.5 * (self.lz - self.mz)),
        )
    }
}

/// Constants of motion `s = l.m`, `r0 = r - w mz` and the pseudo-energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvariantSet {
    pub s: f64,
    pub r0: f64,
    #[serde(rename = "E")]
    pub energy: f64,
}

impl InvariantSet {
    pub fn new(omega: f64, s: f64, r0: f64) -> Self {
        Self { s, r0, energy: omega * omega - 0.5 * r0 * r0 }
    }
}

/// Normalized initial `L1(0)`, `L2(0)` for the phase convention `u_y(0) = 0`.
pub fn initial_angular_momenta(params: &ExtremalParams) -> Result<(BlochVector, BlochVector)> {
    let (s1, c1) = params.phi1.sin_cos();
    let (s2, c2) = params.phi2.sin_cos();
    let d = s1.hypot(s2);
    if d < DEGENERATE_SINES {
        return Err(Error::DegenerateCostates("sin(phi1) = sin(phi2) = 0"));
    }
    // Written with sin(phi2) in the numerator so that sin(phi2) = 0 is the
    // regular limit L1 = 0 instead of a division by zero.
    let sgn = if s2 < 0.0 { -1.0 } else { 1.0 };
    let a1 = sgn * s2 / d;
    let a2 = -sgn * s1 / d;
    Ok((BlochVector::new(a1 * c1, a1 * s1, 0.0), BlochVector::new(a2 * c2, a2 * s2, 0.0)))
}

pub fn initial_costates(params: &ExtremalParams) -> Result<CostateState> {
    let (l1, l2) = initial_angular_momenta(params)?;
    let c = CostateState {
        lx: l1.x + l2.x,
        ly: 0.0,
        lz: 0.0,
        mx: l1.x - l2.x,
        my: l1.y - l2.y,
        mz: 0.0,
    };
    if c.r() == 0.0 {
        return Err(Error::DegenerateCostates("r(0) = 0"));
    }
    Ok(c)
}

/// `s` and `r0` from the angles through `phi2 - phi1` and `phi2 + phi1`.
pub fn invariants_from_angles(params: &ExtremalParams) -> Result<InvariantSet> {
    let diff = params.phi2 - params.phi1;
    let sum = params.phi2 + params.phi1;
    let denom = 1.0 - diff.cos() * sum.cos();
    if denom < DEGENERATE_SINES * DEGENERATE_SINES {
        return Err(Error::DegenerateCostates("sin(phi1) = sin(phi2) = 0"));
    }
    let sd = diff.sin();
    let s = sum.sin() * sd / denom;
    let r0 = sd.abs() / denom.sqrt();
    Ok(InvariantSet::new(params.omega, s, r0))
}

fn rhs_array(y: &[f64; 5], omega: f64, dir: (f64, f64), inv_r: f64) -> [f64; 5] {
    let [lx, ly, mx, my, mz] = *y;
    let (ux, uy) = dir;
    [
        -omega * my,
        omega * mx,
        -omega * ly - mz * uy,
        omega * lx + mz * ux,
        (ly * mx - lx * my) * inv_r,
    ]
}

/// Reduced right-hand side. Fails with [`Error::SingularHit`] (time unknown,
/// reported as NaN) when `r < r_min`.
pub fn extremal_rhs(state: &CostateState, omega: f64, r_min: f64) -> Result<CostateState> {
    let y = state.to_array();
    let r = state.r();
    if !(r >= r_min) {
        return Err(Error::SingularHit { t: f64::NAN });
    }
    let d = rhs_array(&y, omega, (y[0] / r, y[1] / r), 1.0 / r);
    Ok(CostateState::from_array(d))
}

fn axpy(y: &[f64; 5], k: &[f64; 5], h: f64) -> [f64; 5] {
    std::array::from_fn(|i| y[i] + h * k[i])
}

fn free_rhs(y: &[f64; 5], omega: f64, r_min: f64) -> Option<[f64; 5]> {
    let r = y[0].hypot(y[1]);
    if !(r >= r_min) {
        return None;
    }
    Some(rhs_array(y, omega, (y[0] / r, y[1] / r), 1.0 / r))
}

/// With the field direction frozen to `dir`, `(ly mx - lx my)/r` equals
/// `uy mx - ux my` whenever l is parallel to `dir`.
fn frozen_rhs(y: &[f64; 5], omega: f64, dir: (f64, f64)) -> [f64; 5] {
    let [lx, ly, mx, my, mz] = *y;
    let (ux, uy) = dir;
    let _ = (lx, ly);
    [
        -omega * my,
        omega * mx,
        -omega * ly - mz * uy,
        omega * lx + mz * ux,
        uy * mx - ux * my,
    ]
}

fn rk4<F: Fn(&[f64; 5]) -> Option<[f64; 5]>>(y: &[f64; 5], h: f64, f: F) -> Option<[f64; 5]> {
    let k1 = f(y)?;
    let k2 = f(&axpy(y, &k1, h / 2.0))?;
    let k3 = f(&axpy(y, &k2, h / 2.0))?;
    let k4 = f(&axpy(y, &k3, h))?;
    Some(std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])))
}

/// One step of length `h`, resolving a transversal passage of `l` through
/// the origin (possible only on `s = 0`, where the field flips by pi).
fn costate_step(y: &[f64; 5], omega: f64, h: f64, r_min: f64) -> Option<[f64; 5]> {
    let r = y[0].hypot(y[1]);
    let speed = omega * y[2].hypot(y[3]);
    if r > 0.0 && r < 2.0 * speed * h {
        let dir = (y[0] / r, y[1] / r);
        let frozen = |z: &[f64; 5]| Some(frozen_rhs(z, omega, dir));
        let along = |z: &[f64; 5]| z[0] * dir.0 + z[1] * dir.1;
        let end = rk4(y, h, frozen)?;
        if along(&end) < 0.0 {
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if along(&rk4(y, mid, frozen)?) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-17 {
                    break;
                }
            }
            let tau = 0.5 * (lo + hi);
            let at_origin = rk4(y, tau, frozen)?;
            let flipped = (-dir.0, -dir.1);
            return rk4(&at_origin, h - tau, |z| Some(frozen_rhs(z, omega, flipped)));
        }
    }
    rk4(y, h, |z| free_rhs(z, omega, r_min))
}

/// Largest phase or log-radius change per RK4 substep.
const MAX_TURN: f64 = 0.005;

/// Local rate `w|s|/r^2 + |r'|/r` of the field direction and radius.
fn local_rate(y: &[f64; 5], omega: f64) -> f64 {
    let r = y[0].hypot(y[1]);
    let s = y[0] * y[2] + y[1] * y[3];
    let rdot = omega * (y[1] * y[2] - y[0] * y[3]) / r;
    (omega * s).abs() / (r * r) + rdot.abs() / r
}

/// Advances by `h`, splitting the step where the field turns quickly.
/// Near-collisions (`r` small with `s != 0`) spin the phase at `w s / r^2`,
/// far beyond what a fixed step resolves.
fn costate_advance(y: &[f64; 5], omega: f64, h: f64, r_min: f64) -> Option<[f64; 5]> {
    let rate = local_rate(y, omega);
    let parts = if rate.is_finite() { ((h.abs() * rate / MAX_TURN).ceil() as usize).clamp(1, 1 << 16) } else { 1 };
    let sub = h / parts as f64;
    let mut z = *y;
    for _ in 0..parts {
        z = costate_step(&z, omega, sub, r_min)?;
    }
    Some(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremalSample {
    pub t: f64,
    pub costate: CostateState,
    /// Unwrapped control phase.
    pub alpha: f64,
}

impl ExtremalSample {
    pub fn r(&self) -> f64 {
        self.costate.r()
    }

    pub fn field(&self) -> (f64, f64) {
        self.costate.field()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    Completed,
    /// A stage evaluation found `r < r_min` during the step starting at `t`.
    SingularHit { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InvariantDrift {
    pub r0: f64,
    pub s: f64,
    pub norm: f64,
    pub lz: f64,
}

impl InvariantDrift {
    pub fn max(&self) -> f64 {
        self.r0.max(self.s).max(self.norm).max(self.lz)
    }
}

#[derive(Debug, Clone)]
pub struct ExtremalTrajectory {
    pub omega: f64,
    pub samples: Vec<ExtremalSample>,
    pub termination: Termination,
    /// Uniform sample spacing.
    pub step: f64,
}

fn unwrap_towards(prev: f64, wrapped: f64) -> f64 {
    let k = ((prev - wrapped) / (2.0 * PI)).round();
    wrapped + 2.0 * PI * k
}

/// Integrates the reduced system from an arbitrary costate with fixed-step
/// RK4, landing exactly on `t_end`.
pub fn integrate_costate(
    initial: CostateState,
    omega: f64,
    t_end: f64,
    step: f64,
    r_min: f64,
) -> Result<ExtremalTrajectory> {
    if !(step > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {step}")));
    }
    if !(t_end >= 0.0) {
        return Err(Error::NegativeDuration(t_end));
    }
    if initial.r() < r_min {
        return Err(Error::DegenerateCostates("r(0) below r_min"));
    }
    let n = ((t_end / step) - 1e-9).ceil().max(0.0) as usize;
    let h = if n > 0 { t_end / n as f64 } else { step };
    let mut samples = Vec::with_capacity(n + 1);
    let mut y = initial.to_array();
    let mut alpha = initial.alpha();
    samples.push(ExtremalSample { t: 0.0, costate: CostateState::from_array(y), alpha });
    let mut termination = Termination::Completed;
    for k in 0..n {
        match costate_advance(&y, omega, h, r_min) {
            Some(next) => {
                y = next;
                let c = CostateState::from_array(y);
                alpha = unwrap_towards(alpha, c.alpha());
                samples.push(ExtremalSample { t: (k + 1) as f64 * h, costate: c, alpha });
            }
            None => {
                termination = Termination::SingularHit { t: k as f64 * h };
                break;
            }
        }
    }
    Ok(ExtremalTrajectory { omega, samples, termination, step: h })
}

/// Integrates the extremal selected by `params` up to `t_end`.
pub fn integrate_extremal(params: &ExtremalParams, t_end: f64, step: f64) -> Result<ExtremalTrajectory> {
    let c0 = initial_costates(params)?;
    integrate_costate(c0, params.omega, t_end, step, R_MIN)
}

impl ExtremalTrajectory {
    pub fn initial(&self) -> &ExtremalSample {
        &self.samples[0]
    }

    pub fn last(&self) -> &ExtremalSample {
        self.samples.last().expect("trajectory holds the initial sample")
    }

    pub fn duration(&self) -> f64 {
        self.last().t
    }

    pub fn invariants(&self) -> InvariantSet {
        let c = &self.initial().costate;
        InvariantSet::new(self.omega, c.kepler_constant(), c.radial_constant(self.omega))
    }

    pub fn max_drift(&self) -> InvariantDrift {
        let c0 = self.initial().costate;
        let (s0, r00, n0) = (c0.kepler_constant(), c0.radial_constant(self.omega), c0.norm_constant());
        let mut d = InvariantDrift::default();
        for smp in &self.samples {
            let c = &smp.costate;
            d.s = d.s.max((c.kepler_constant() - s0).abs());
            d.r0 = d.r0.max((c.radial_constant(self.omega) - r00).abs());
            d.norm = d.norm.max((c.norm_constant() - n0).abs());
            d.lz = d.lz.max(c.lz.abs());
        }
        d
    }

    /// Field at an arbitrary time by cubic Hermite interpolation of `l`,
    /// with nodal derivatives from the exact right-hand side.
    pub fn field_at(&self, t: f64) -> (f64, f64) {
        let (lx, ly) = self.l_at(t);
        let r = lx.hypot(ly);
        if r == 0.0 {
            return (0.0, 0.0);
        }
        (lx / r, ly / r)
    }

    fn l_at(&self, t: f64) -> (f64, f64) {
        let n = self.samples.len();
        if n == 1 {
            let c = &self.samples[0].costate;
            return (c.lx, c.ly);
        }
        let idx = ((t / self.step).floor().max(0.0) as usize).min(n - 2);
        let a = &self.samples[idx];
        let b = &self.samples[idx + 1];
        let h = b.t - a.t;
        let x = ((t - a.t) / h).clamp(0.0, 1.0);
        let h00 = (1.0 + 2.0 * x) * (1.0 - x) * (1.0 - x);
        let h10 = x * (1.0 - x) * (1.0 - x);
        let h01 = x * x * (3.0 - 2.0 * x);
        let h11 = x * x * (x - 1.0);
        let w = self.omega;
        // l' = w (-my, mx) needs no division by r.
        let (da, db) = ((-w * a.costate.my, w * a.costate.mx), (-w * b.costate.my, w * b.costate.mx));
        let lx = h00 * a.costate.lx + h10 * h * da.0 + h01 * b.costate.lx + h11 * h * db.0;
        let ly = h00 * a.costate.ly + h10 * h * da.1 + h01 * b.costate.ly + h11 * h * db.1;
        (lx, ly)
    }

    /// Writes `t,lx,ly,mx,my,mz,r,alpha,ux,uy` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,lx,ly,mx,my,mz,r,alpha,ux,uy")?;
        for s in &self.samples {
            let c = &s.costate;
            let (ux, uy) = s.field();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                s.t, c.lx, c.ly, c.mx, c.my, c.mz, c.r(), s.alpha, ux, uy
            )?;
        }
        Ok(())
    }

    /// Largest `|1/2 r'^2 + U(r) - E|` with `r'` from five-point centered
    /// differences.
    pub fn energy_residual(&self) -> f64 {
        let inv = self.invariants();
        let pot = potential(&inv, self.omega);
        let h = self.step;
        self.samples
            .windows(5)
            .map(|w| {
                let rdot = centered_derivative([w[0].r(), w[1].r(), w[3].r(), w[4].r()], h);
                (0.5 * rdot * rdot + pot.u(w[2].r()) - pot.energy).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Fourth-order centered derivative from samples at `-2h, -h, h, 2h`.
fn centered_derivative(v: [f64; 4], h: f64) -> f64 {
    (v[0] - 8.0 * v[1] + 8.0 * v[2] - v[3]) / (12.0 * h)
}

/// Largest `|r^2 alpha' - w s|`, `alpha'` from five-point centered
/// differences of the unwrapped phase. Where the sample spacing does not
/// resolve the phase (near-collisions), the stencil is rebuilt around the
/// sample by re-integrating the flow with a spacing matched to the rate.
pub fn kepler_residual(traj: &ExtremalTrajectory) -> f64 {
    let ws = traj.omega * traj.invariants().s;
    let h = traj.step;
    traj.samples
        .windows(5)
        .map(|w| {
            let c = &w[2].costate;
            let y = c.to_array();
            let rate = local_rate(&y, traj.omega);
            let d = (0.02 / rate).min(h);
            let adot = if d >= h {
                centered_derivative([w[0].alpha, w[1].alpha, w[3].alpha, w[4].alpha], h)
            } else {
                let at = |k: f64| costate_advance(&y, traj.omega, k * d, 0.0).map(|z| z[1].atan2(z[0]));
                let a0 = c.alpha();
                match (at(-2.0), at(-1.0), at(1.0), at(2.0)) {
                    (Some(a), Some(b), Some(e), Some(f)) => {
                        let near = |x: f64| a0 + (x - a0 - TAU * ((x - a0) / TAU).round());
                        centered_derivative([near(a), near(b), near(e), near(f)], d)
                    }
                    // Only r = 0 exactly stops the flow, and there both sides vanish.
                    _ => return 0.0,
                }
            };
            let r = w[2].r();
            (r * r * adot - ws).abs()
        })
        .fold(0.0, f64::max)
}

/// Report for export: `{"s", "r0", "E", "max_drift": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantReport {
    pub s: f64,
    pub r0: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    pub max_drift: InvariantDrift,
}

impl InvariantReport {
    pub fn from_trajectory(traj: &ExtremalTrajectory) -> Self {
        let inv = traj.invariants();
        Self { s: inv.s, r0: inv.r0, energy: inv.energy, max_drift: traj.max_drift() }
    }
}

/// Effective potential `U(r) = (1+w^2) r^2/2 - r0 r + w^2 s^2 / (2 r^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialProfile {
    pub omega: f64,
    pub s: f64,
    pub r0: f64,
    pub energy: f64,
}

pub fn potential(inv: &InvariantSet, omega: f64) -> PotentialProfile {
    PotentialProfile { omega, s: inv.s, r0: inv.r0, energy: inv.energy }
}

impl PotentialProfile {
    pub fn u(&self, r: f64) -> f64 {
        let w2 = self.omega * self.omega;
        let mut v = 0.5 * (1.0 + w2) * r * r - self.r0 * r;
        if self.s != 0.0 {
            v += w2 * self.s * self.s / (2.0 * r * r);
        }
        v
    }

    /// `Q(r) = 2 r^2 (E - U(r))`, a quartic in `r`.
    pub fn q(&self, r: f64) -> f64 {
        let w2 = self.omega * self.omega;
        let r2 = r * r;
        -(1.0 + w2) * r2 * r2 + 2.0 * self.r0 * r2 * r + 2.0 * self.energy * r2 - w2 * self.s * self.s
    }

    /// Minimum of `U` on `r > 0`.
    pub fn equilibrium(&self) -> f64 {
        let a = 1.0 + self.omega * self.omega;
        let c = (self.omega * self.s).powi(2);
        if c == 0.0 {
            return self.r0 / a;
        }
        // U'(r) = a r - r0 - c / r^3 is increasing on r > 0.
        let du = |r: f64| a * r - self.r0 - c / (r * r * r);
        let mut lo = 0.0_f64;
        let mut hi = 1.0_f64;
        while du(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if du(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Signed turning points `(r_lo, r_hi)`. For `s = 0` the lower one is
    /// negative when `E > 0` (the radius passes through zero).
    pub fn turning_points(&self) -> Result<(f64, f64)> {
        let a = 1.0 + self.omega * self.omega;
        if self.s == 0.0 {
            let disc = 2.0 * a - self.r0 * self.r0;
            let w = self.omega * disc.max(0.0).sqrt();
            if w == 0.0 {
                return Err(Error::DegenerateWell);
            }
            return Ok(((self.r0 - w) / a, (self.r0 + w) / a));
        }
        let req = self.equilibrium();
        let depth = self.q(req);
        if !(depth > 1e-14 * (1.0 + (self.omega * self.s).powi(2))) {
            return Err(Error::DegenerateWell);
        }
        let bisect = |mut inside: f64, mut outside: f64| {
            for _ in 0..200 {
                let mid = 0.5 * (inside + outside);
                if mid == inside || mid == outside {
                    break;
                }
                if self.q(mid) > 0.0 {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            0.5 * (inside + outside)
        };
        let mut far = 2.0 * req.max(1.0);
        while self.q(far) > 0.0 {
            far *= 2.0;
        }
        Ok((bisect(req, 0.0), bisect(req, far)))
    }
}

/// Radial motion in the potential well, parameterized by
/// `r = c_m - c_h cos(theta)` between the turning points. The substitution
/// turns the improper turning-point integrals into smooth periodic ones.
#[derive(Debug, Clone, Copy)]
pub struct RadialMotion {
    pub omega: f64,
    pub s: f64,
    pub r0: f64,
    pub r_lo: f64,
    pub r_hi: f64,
    /// Angle of the initial point.
    pub theta0: f64,
    a: f64,
    p: f64,
    q0: f64,
    period: f64,
}

impl RadialMotion {
    /// `rdot0` only matters through its sign (the direction of motion).
    pub fn new(inv: &InvariantSet, omega: f64, rdot0: f64) -> Result<Self> {
        let pot = potential(inv, omega);
        let (r_lo, r_hi) = pot.turning_points()?;
        let a = 1.0 + omega * omega;
        let p = r_lo + r_hi - 2.0 * inv.r0 / a;
        let q0 = if inv.s == 0.0 { 0.0 } else { (omega * inv.s).powi(2) / (a * r_lo * r_hi) };
        let cm = 0.5 * (r_lo + r_hi);
        let ch = 0.5 * (r_hi - r_lo);
        let base = ((cm - inv.r0) / ch).clamp(-1.0, 1.0).acos();
        let theta0 = if rdot0 >= 0.0 { base } else { 2.0 * PI - base };
        let mut m = Self { omega, s: inv.s, r0: inv.r0, r_lo, r_hi, theta0, a, p, q0, period: 0.0 };
        // Periodic analytic integrand: the trapezoid rule converges
        // geometrically; the Gauss route is kept for uniform accuracy.
        m.period = quadrature::integrate_panels(&|th| m.dt_dtheta(th), 0.0, 2.0 * PI, PI / 4.0, 1e-15);
        Ok(m)
    }

    pub fn from_params(params: &ExtremalParams) -> Result<Self> {
        let inv = invariants_from_angles(params)?;
        Self::new(&inv, params.omega, params.initial_radial_velocity()?)
    }

    fn cm(&self) -> f64 {
        0.5 * (self.r_lo + self.r_hi)
    }

    fn ch(&self) -> f64 {
        0.5 * (self.r_hi - self.r_lo)
    }

    /// Signed radius at angle `theta`.
    pub fn radius_at_angle(&self, theta: f64) -> f64 {
        self.cm() - self.ch() * theta.cos()
    }

    fn quad_factor(&self, r: f64) -> f64 {
        r * r + self.p * r + self.q0
    }

    fn dt_dtheta(&self, theta: f64) -> f64 {
        if self.s == 0.0 {
            return 1.0 / self.a.sqrt();
        }
        let r = self.radius_at_angle(theta);
        r / (self.a * self.quad_factor(r)).sqrt()
    }

    fn dalpha_dtheta(&self, theta: f64) -> f64 {
        if self.s == 0.0 {
            return 0.0;
        }
        let r = self.radius_at_angle(theta);
        self.omega * self.s / (r * (self.a * self.quad_factor(r)).sqrt())
    }

    /// Duration of one full radial oscillation.
    pub fn period(&self) -> f64 {
        self.period
    }

    /// Time elapsed between `theta0` and `theta` (any real `theta`).
    pub fn time_at_angle(&self, theta: f64) -> f64 {
        let turns = ((theta - self.theta0) / (2.0 * PI)).floor();
        let rest = theta - turns * 2.0 * PI;
        turns * self.period + self.partial(|th| self.dt_dtheta(th), self.theta0, rest)
    }

    /// Unwrapped phase increment between `theta0` and `theta`.
    pub fn phase_at_angle(&self, theta: f64) -> f64 {
        if self.s == 0.0 {
            return 0.0;
        }
        let turns = ((theta - self.theta0) / (2.0 * PI)).floor();
        let rest = theta - turns * 2.0 * PI;
        let full = self.partial(|th| self.dalpha_dtheta(th), 0.0, 2.0 * PI);
        turns * full + self.partial(|th| self.dalpha_dtheta(th), self.theta0, rest)
    }

    fn partial<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        quadrature::integrate_panels(&f, a, b, PI / 4.0, 1e-15)
    }

    /// First time at which the signed radius reaches `r`.
    pub fn time_to_radius(&self, r: f64) -> Result<f64> {
        let span = self.r_hi - self.r_lo;
        let tol = 1e-12 * span.max(1.0);
        if r < self.r_lo - tol || r > self.r_hi + tol {
            return Err(Error::Domain(format!(
                "r = {r} outside the allowed region [{}, {}]",
                self.r_lo, self.r_hi
            )));
        }
        let base = ((self.cm() - r) / self.ch()).clamp(-1.0, 1.0).acos();
        let eps = 1e-14;
        let theta = [base, 2.0 * PI - base, base + 2.0 * PI]
            .into_iter()
            .filter(|th| *th >= self.theta0 - eps)
            .fold(f64::INFINITY, f64::min);
        Ok(self.time_at_angle(theta.max(self.theta0)))
    }

    /// Angle reached at time `t`, by Newton iteration safeguarded by bisection.
    pub fn angle_at_time(&self, t: f64) -> f64 {
        let turns = (t / self.period).floor();
        let rest = t - turns * self.period;
        let base = self.theta0 + turns * 2.0 * PI;
        let (mut lo, mut hi) = (self.theta0, self.theta0 + 2.0 * PI);
        let mut th = self.theta0 + 2.0 * PI * rest / self.period;
        for _ in 0..100 {
            let f = self.time_at_angle(th) - rest;
            if f.abs() < 1e-15 {
                break;
            }
            if f > 0.0 {
                hi = th;
            } else {
                lo = th;
            }
            let next = th - f / self.dt_dtheta(th);
            th = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-15 {
                break;
            }
        }
        base + (th - self.theta0)
    }

    /// Signed radius and unwrapped phase increment at time `t`.
    pub fn state_at_time(&self, t: f64) -> (f64, f64) {
        let th = self.angle_at_time(t);
        (self.radius_at_angle(th), self.phase_at_angle(th))
    }
}

/// Time for the radius to first reach `r` from `r0`, moving in the direction
/// given by the sign of `rdot0`.
pub fn radius_quadrature(inv: &InvariantSet, omega: f64, rdot0: f64, r: f64) -> Result<f64> {
    RadialMotion::new(inv, omega, rdot0)?.time_to_radius(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(omega: f64, p1: f64, p2: f64) -> ExtremalParams {
        ExtremalParams::new(omega, p1, p2).unwrap()
    }

    #[test]
    fn resonant_initial_costates() {
        let p = params(0.7, 0.0, PI / 2.0);
        let (l1, l2) = initial_angular_momenta(&p).unwrap();
        assert!((l1.x - 1.0).abs() < 1e-15 && l1.y.abs() < 1e-15);
        assert!(l2.norm() < 1e-15);
        let c = initial_costates(&p).unwrap();
        assert!((c.lx - 1.0).abs() < 1e-15 && (c.mx - 1.0).abs() < 1e-15);
        assert_eq!((c.lz, c.mz), (0.0, 0.0));
        let inv = invariants_from_angles(&p).unwrap();
        assert!((inv.s - 1.0).abs() < 1e-12 && (inv.r0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn excitation_optimum_invariants() {
        let inv = invariants_from_angles(&params(1.0, 0.1886 * PI, 0.7548 * PI)).unwrap();
        assert!((inv.s - 0.2172).abs() < 1e-3, "{}", inv.s);
        assert!((inv.r0 - 1.0961).abs() < 1e-3, "{}", inv.r0);
    }

    #[test]
    fn degenerate_angles() {
        assert!(initial_costates(&params(1.0, 0.0, PI)).is_err());
        assert!(invariants_from_angles(&params(1.0, PI, 0.0)).is_err());
        // sin(phi2) = 0 alone is regular.
        let c = initial_costates(&params(1.0, 0.4, 0.0)).unwrap();
        assert!(c.r() > 0.0);
        let inv = invariants_from_angles(&params(1.0, 0.4, 0.0)).unwrap();
        assert!((inv.s - c.kepler_constant()).abs() < 1e-12);
    }

    #[test]
    fn s_vanishes_on_the_diagonal() {
        for p in [0.3, 1.1, 2.5] {
            let inv = invariants_from_angles(&params(0.5, p, p)).unwrap();
            assert_eq!((inv.s, inv.r0), (0.0, 0.0));
            let inv = invariants_from_angles(&params(0.5, p, PI - p)).unwrap();
            assert!(inv.s.abs() < 1e-15);
        }
    }

    #[test]
    fn rhs_first_line() {
        let c = CostateState { lx: 0.8, ly: 0.0, lz: 0.0, mx: 0.3, my: 0.0, mz: -0.2 };
        let d = extremal_rhs(&c, 1.3, R_MIN).unwrap();
        assert_eq!(d.lx, 0.0);
        let near = CostateState { lx: 1e-12, ..c };
        assert!(matches!(extremal_rhs(&near, 1.0, R_MIN), Err(Error::SingularHit { .. })));
    }

    #[test]
    fn resonant_extremal_is_circular() {
        let w = 15f64.sqrt() / 2.0;
        let traj = integrate_extremal(&params(w, 0.0, PI / 2.0), PI / 2.0, 1e-3).unwrap();
        for s in &traj.samples {
            let (ux, uy) = s.field();
            assert!((ux - (w * s.t).cos()).abs() < 1e-9 && (uy - (w * s.t).sin()).abs() < 1e-9);
            assert!((s.r() - 1.0).abs() < 1e-12);
        }
        assert!(kepler_residual(&traj) < 1e-6);
    }

    #[test]
    fn constant_phase_for_bound_s0() {
        // s = 0 with E < 0: r0 > w sqrt(2).
        let w = 0.4;
        let p = params(w, 0.3, PI - 0.3);
        let inv = invariants_from_angles(&p).unwrap();
        assert!(inv.energy < 0.0);
        let traj = integrate_extremal(&p, 4.0 * PI, 1e-3).unwrap();
        assert_eq!(traj.termination, Termination::Completed);
        let a0 = traj.samples[0].alpha;
        assert!(traj.samples.iter().all(|s| (s.alpha - a0).abs() < 1e-12));
    }

    #[test]
    fn potential_examples() {
        let w = 0.9;
        let inv = InvariantSet::new(w, 0.0, w * 2f64.sqrt());
        assert!(inv.energy.abs() < 1e-15);
        let inv = InvariantSet::new(w, 1.0, 1.0);
        let pot = potential(&inv, w);
        assert!((pot.u(1.0) - pot.energy).abs() < 1e-15);
        assert!((pot.equilibrium() - 1.0).abs() < 1e-12);
        assert_eq!(pot.turning_points(), Err(Error::DegenerateWell));
    }

    #[test]
    fn energy_and_quadrature_agree_with_ode() {
        let p = params(1.3, 0.7, 2.1);
        let traj = integrate_extremal(&p, 6.0, EXTREMAL_STEP).unwrap();
        assert!(traj.energy_residual() < 1e-7, "{}", traj.energy_residual());
        let motion = RadialMotion::from_params(&p).unwrap();
        for s in traj.samples.iter().step_by(3000) {
            let (r, dalpha) = motion.state_at_time(s.t);
            assert!((r - s.r()).abs() < 1e-9, "t = {}: {r} vs {}", s.t, s.r());
            assert!((dalpha - (s.alpha - traj.samples[0].alpha)).abs() < 1e-8);
        }
    }

    #[test]
    fn quadrature_period_matches_ode() {
        let p = params(0.8, 0.3, 1.9);
        let motion = RadialMotion::from_params(&p).unwrap();
        let t_period = motion.period();
        let traj = integrate_extremal(&p, t_period, EXTREMAL_STEP).unwrap();
        let last = traj.last();
        assert!((last.r() - traj.samples[0].r()).abs() < 1e-8);
        let inv = p.invariants().unwrap();
        assert_eq!(radius_quadrature(&inv, 0.8, 1.0, inv.r0).unwrap(), 0.0);
        assert!(radius_quadrature(&inv, 0.8, 1.0, motion.r_hi + 1e-3).is_err());
    }

    #[test]
    fn s0_crossing_keeps_invariants() {
        // s = 0 and E > 0: l passes through the origin and the phase jumps by pi.
        let w = 0.5;
        let p = params(w, 1.2, PI - 1.2);
        let inv = invariants_from_angles(&p).unwrap();
        assert!(inv.energy > 0.0);
        let traj = integrate_extremal(&p, 4.0 * PI, EXTREMAL_STEP).unwrap();
        assert_eq!(traj.termination, Termination::Completed);
        assert!(traj.max_drift().max() < 1e-10, "{:?}", traj.max_drift());
        let jumps = traj
            .samples
            .windows(2)
            .filter(|w| (w[1].alpha - w[0].alpha).abs() > 1.0)
            .count();
        assert!(jumps >= 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn angle_invariants_match_costates(w in 0.0..5.0f64, p1 in 0.0..2.0 * PI, p2 in 0.0..2.0 * PI) {
            let p = params(w, p1, p2);
            prop_assume!(p1.sin().hypot(p2.sin()) > 1e-3);
            let c = initial_costates(&p).unwrap();
            let inv = invariants_from_angles(&p).unwrap();
            prop_assert!((inv.s - c.kepler_constant()).abs() < 1e-10);
            prop_assert!((inv.r0 - c.radial_constant(w)).abs() < 1e-10);
            prop_assert!(inv.r0 <= 2f64.sqrt() + 1e-12);
            prop_assert!(c.ly.abs() < 1e-12);
            let (l1, l2) = c.angular_momenta();
            prop_assert!((l1.dot(&l1) + l2.dot(&l2) - 1.0).abs() < 1e-12);
            let shifted = invariants_from_angles(&params(w, p1 + PI, p2 + PI)).unwrap();
            prop_assert!((shifted.s - inv.s).abs() < 1e-12 && (shifted.r0 - inv.r0).abs() < 1e-12);
        }

        #[test]
        fn rhs_conserves_invariants(
            w in 0.1..3.0f64, lx in -1.0..1.0f64, ly in -1.0..1.0f64,
            mx in -1.0..1.0f64, my in -1.0..1.0f64, mz in -1.0..1.0f64,
        ) {
            let c = CostateState { lx, ly, lz: 0.0, mx, my, mz };
            prop_assume!(c.r() > 1e-3);
            let d = extremal_rhs(&c, w, R_MIN).unwrap();
            let eps = 1e-6;
            let shift = |k: f64| CostateState {
                lx: lx + k * d.lx, ly: ly + k * d.ly, lz: 0.0,
                mx: mx + k * d.mx, my: my + k * d.my, mz: mz + k * d.mz,
            };
            let (plus, minus) = (shift(eps), shift(-eps));
            let fd = |f: &dyn Fn(&CostateState) -> f64| (f(&plus) - f(&minus)) / (2.0 * eps);
            prop_assert!(fd(&|c| c.kepler_constant()).abs() < 1e-6);
            prop_assert!(fd(&|c| c.radial_constant(w)).abs() < 1e-6);
            prop_assert!(fd(&|c| c.norm_constant()).abs() < 1e-6);
        }
    }
}
