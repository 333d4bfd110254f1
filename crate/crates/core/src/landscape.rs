//! Scans of the two-parameter extremal family over `(phi1, phi2)`.
//!
//! Each cell integrates the costates and both Bloch vectors together (the
//! regular field `u = l / r` feeds straight into the Bloch equations) and
//! records where the figure of merit first becomes small.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extremal::{initial_costates, invariants_from_angles, ExtremalParams, R_MIN};
use crate::par;
use crate::singular;
use crate::spin::{figure_of_merit, BlochVector, PiecewisePulse, Segment, SpinPairState, TransferTarget};

/// Default time step of the joint integration.
pub const SCAN_STEP: f64 = 1e-3;
/// Default first-hit threshold on `J`.
pub const J_THRESHOLD: f64 = 1e-4;
/// Grid sizes below this are rejected.
pub const MIN_GRID: usize = 32;
/// `J` the refinement must reach.
pub const REFINE_J: f64 = 1e-8;

/// Joint state: costates `(lx, ly, mx, my, mz)` then `M1`, `M2`.
type Joint = [f64; 11];

fn joint_rhs(y: &Joint, omega: f64) -> Option<Joint> {
    let [lx, ly, mx, my, mz, x1, y1, z1, x2, y2, z2] = *y;
    let r = lx.hypot(ly);
    if !(r >= R_MIN) {
        return None;
    }
    let (ux, uy) = (lx / r, ly / r);
    // dM/dt = M x (ux, uy, w_i), with w_1 = -w, w_2 = w.
    let (w1, w2) = (-omega, omega);
    Some([
        -omega * my,
        omega * mx,
        -omega * ly - mz * uy,
        omega * lx + mz * ux,
        uy * mx - ux * my,
        y1 * w1 - z1 * uy,
        z1 * ux - x1 * w1,
        x1 * uy - y1 * ux,
        y2 * w2 - z2 * uy,
        z2 * ux - x2 * w2,
        x2 * uy - y2 * ux,
    ])
}

fn joint_step(y: &Joint, omega: f64, h: f64) -> Option<Joint> {
    let ax = |k: &Joint, c: f64| -> Joint { std::array::from_fn(|i| y[i] + c * k[i]) };
    let k1 = joint_rhs(y, omega)?;
    let k2 = joint_rhs(&ax(&k1, h / 2.0), omega)?;
    let k3 = joint_rhs(&ax(&k2, h / 2.0), omega)?;
    let k4 = joint_rhs(&ax(&k3, h), omega)?;
    Some(std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])))
}

/// Largest phase advance per RK4 substep.
const MAX_TURN: f64 = 0.005;

/// Advances by `h`, splitting the step where the field turns quickly. Close
/// to the origin the phase rate `w s / r^2` and the radial rate `|r'|/r`
/// grow without bound, so a fixed step would not resolve near-collisions.
fn joint_advance(y: &Joint, omega: f64, h: f64) -> Option<Joint> {
    let r = y[0].hypot(y[1]);
    if !(r >= R_MIN) {
        return None;
    }
    let s = y[0] * y[2] + y[1] * y[3];
    let rdot = omega * (y[1] * y[2] - y[0] * y[3]) / r;
    let rate = (omega * s).abs() / (r * r) + rdot.abs() / r + omega + 1.0;
    let parts = ((h * rate / MAX_TURN).ceil() as usize).clamp(1, 1 << 16);
    if parts == 1 {
        return joint_step(y, omega, h);
    }
    let sub = h / parts as f64;
    let mut z = *y;
    for _ in 0..parts {
        z = joint_step(&z, omega, sub)?;
    }
    Some(z)
}

fn joint_initial(params: &ExtremalParams) -> Result<Joint> {
    let c = initial_costates(params)?;
    Ok([c.lx, c.ly, c.mx, c.my, c.mz, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0])
}

fn joint_j(y: &Joint, target: TransferTarget) -> f64 {
    let d1 = y[7] - target.z1_target();
    let d2 = 1.0 - y[10];
    d1 * d1 + d2 * d2
}

fn joint_state(y: &Joint, t: f64) -> SpinPairState {
    SpinPairState {
        m1: BlochVector::new(y[5], y[6], y[7]),
        m2: BlochVector::new(y[8], y[9], y[10]),
        time: t,
    }
}

/// Integrates steps of `step` and one final partial step, so that the end
/// state depends continuously on `t`.
fn joint_at(params: &ExtremalParams, t: f64, step: f64) -> Result<Joint> {
    if !(t >= 0.0) {
        return Err(Error::NegativeDuration(t));
    }
    let mut y = joint_initial(params)?;
    let n = (t / step).floor() as usize;
    let singular = |k: usize| Error::SingularHit { t: k as f64 * step };
    for k in 0..n {
        y = joint_advance(&y, params.omega, step).ok_or_else(|| singular(k))?;
    }
    let rest = t - n as f64 * step;
    if rest > 0.0 {
        y = joint_advance(&y, params.omega, rest).ok_or_else(|| singular(n))?;
    }
    Ok(y)
}

/// Both Bloch vectors at time `t` along the extremal selected by `params`.
pub fn extremal_bloch_state(params: &ExtremalParams, t: f64, step: f64) -> Result<SpinPairState> {
    Ok(joint_state(&joint_at(params, t, step)?, t))
}

/// `J(t)` along the extremal selected by `params`.
pub fn extremal_merit(params: &ExtremalParams, target: TransferTarget, t: f64, step: f64) -> Result<f64> {
    Ok(joint_j(&joint_at(params, t, step)?, target))
}

/// Piecewise-constant resampling of an extremal's field, one midpoint
/// sample per segment of length at most `max_dt`.
pub fn extremal_pulse(params: &ExtremalParams, duration: f64, max_dt: f64) -> Result<PiecewisePulse> {
    let n = (duration / max_dt).ceil().max(1.0) as usize;
    let dt = duration / n as f64;
    // Costate integration with a step that is an exact fraction of dt.
    let sub = 4;
    let h = dt / (2 * sub) as f64;
    let mut y = joint_initial(params)?;
    let mut segments = Vec::with_capacity(n);
    for k in 0..n {
        for half in 0..2 {
            for _ in 0..sub {
                y = joint_advance(&y, params.omega, h).ok_or(Error::SingularHit { t: k as f64 * dt })?;
            }
            if half == 0 {
                let r = y[0].hypot(y[1]);
                segments.push(Segment { dt, ux: y[0] / r, uy: y[1] / r });
            }
        }
    }
    PiecewisePulse::new(segments)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapeCell {
    pub phi1: f64,
    pub phi2: f64,
    pub r0: f64,
    pub s: f64,
    pub j_min: f64,
    pub t_hit: f64,
    pub converged: bool,
    /// The integration reached the singular set before `t_max`.
    pub singular: bool,
}

/// Scan settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub grid_n: usize,
    pub t_max: f64,
    pub step: f64,
    pub j_threshold: f64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl ScanConfig {
    pub fn new(grid_n: usize, t_max: f64) -> Self {
        Self { grid_n, t_max, step: SCAN_STEP, j_threshold: J_THRESHOLD, workers: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_n < MIN_GRID {
            return Err(Error::Domain(format!("grid must be at least {MIN_GRID}, got {}", self.grid_n)));
        }
        if !(self.t_max > 0.0 && self.step > 0.0 && self.j_threshold > 0.0) {
            return Err(Error::Domain("t_max, step and threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Default scan horizon: 1.3 times the singular design below the threshold.
/// Above it, 2.5 for excitation and 5 for inversion (whose resonant minimum
/// sits at π), raised to 1.3 times the threshold design so that optima just
/// above the threshold stay in range.
pub fn default_t_max(target: TransferTarget, omega: f64) -> f64 {
    let at = |w: f64| singular::solve(target, w).map(|d| 1.3 * d.t_final).unwrap_or(0.0);
    let top = singular::threshold(target);
    if omega <= top {
        return at(omega);
    }
    let base = match target {
        TransferTarget::Excitation => 2.5,
        TransferTarget::Inversion => 5.0,
    };
    f64::max(base, at(top))
}

/// Evaluates one cell: first time `J` drops below the threshold, followed
/// down to the bottom of that basin; otherwise the global minimum of the
/// sampled `J`.
pub fn evaluate_cell(omega: f64, target: TransferTarget, phi1: f64, phi2: f64, cfg: &ScanConfig) -> LandscapeCell {
    let params = ExtremalParams { omega, phi1, phi2 };
    let (r0, s) = match invariants_from_angles(&params) {
        Ok(inv) => (inv.r0, inv.s),
        Err(_) => (0.0, 0.0),
    };
    let mut cell = LandscapeCell { phi1, phi2, r0, s, j_min: f64::INFINITY, t_hit: 0.0, converged: false, singular: false };
    let Ok(mut y) = joint_initial(&params) else {
        cell.singular = true;
        return cell;
    };
    let n = (cfg.t_max / cfg.step).round() as usize;
    cell.j_min = joint_j(&y, target);
    let mut hit = false;
    for k in 1..=n {
        match joint_advance(&y, omega, cfg.step) {
            Some(next) => y = next,
            None => {
                cell.singular = true;
                break;
            }
        }
        let j = joint_j(&y, target);
        let t = k as f64 * cfg.step;
        if hit {
            if j < cell.j_min {
                cell.j_min = j;
                cell.t_hit = t;
            } else {
                break;
            }
        } else if j < cfg.j_threshold {
            hit = true;
            cell.j_min = j;
            cell.t_hit = t;
        } else if j < cell.j_min {
            cell.j_min = j;
            cell.t_hit = t;
        }
    }
    cell.converged = hit && !cell.singular;
    if cell.singular {
        cell.converged = false;
    }
    cell
}

/// Result of a scan; `cells[i * grid_n + j]` is `(phi1_i, phi2_j)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub omega: f64,
    pub target: TransferTarget,
    pub config: ScanConfig,
    pub cells: Vec<LandscapeCell>,
}

pub fn grid_angle(k: usize, grid_n: usize) -> f64 {
    PI * k as f64 / grid_n as f64
}

/// Evaluates every cell of the `grid_n x grid_n` grid over `[0, π)^2`.
/// Output order is by grid index, independent of scheduling.
pub fn scan(omega: f64, target: TransferTarget, cfg: &ScanConfig) -> Result<LandscapeGrid> {
    cfg.validate()?;
    if !(omega >= 0.0) {
        return Err(Error::Domain(format!("omega must be non-negative, got {omega}")));
    }
    let n = cfg.grid_n;
    let cells = par::map_indexed(n * n, cfg.workers, |idx| {
        evaluate_cell(omega, target, grid_angle(idx / n, n), grid_angle(idx % n, n), cfg)
    });
    Ok(LandscapeGrid { omega, target, config: *cfg, cells })
}

impl LandscapeGrid {
    pub fn cell(&self, i: usize, j: usize) -> &LandscapeCell {
        &self.cells[i * self.config.grid_n + j]
    }

    /// Converged cell with the smallest `t_hit`, ties broken by `j_min`.
    pub fn best(&self) -> Option<&LandscapeCell> {
        self.cells
            .iter()
            .filter(|c| c.converged)
            .min_by(|a, b| a.t_hit.total_cmp(&b.t_hit).then(a.j_min.total_cmp(&b.j_min)))
    }

    /// Converged cells that beat all eight neighbours (periodic grid), sorted
    /// by `t_hit`.
    pub fn local_optima(&self) -> Vec<&LandscapeCell> {
        let n = self.config.grid_n;
        let key = |c: &LandscapeCell| if c.converged { c.t_hit } else { f64::INFINITY };
        let mut out: Vec<&LandscapeCell> = (0..n * n)
            .filter(|&idx| {
                let (i, j) = (idx / n, idx % n);
                let c = &self.cells[idx];
                c.converged
                    && (-1i64..=1).all(|di| {
                        (-1i64..=1).all(|dj| {
                            if di == 0 && dj == 0 {
                                return true;
                            }
                            let ni = (i as i64 + di).rem_euclid(n as i64) as usize;
                            let nj = (j as i64 + dj).rem_euclid(n as i64) as usize;
                            key(c) <= key(&self.cells[ni * n + nj])
                        })
                    })
            })
            .map(|idx| &self.cells[idx])
            .collect();
        out.sort_by(|a, b| a.t_hit.total_cmp(&b.t_hit));
        out
    }

    /// Writes `phi1,phi2,r0,s,j_min,t_hit,converged`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "phi1,phi2,r0,s,j_min,t_hit,converged")?;
        for c in &self.cells {
            writeln!(w, "{},{},{},{},{},{},{}", c.phi1, c.phi2, c.r0, c.s, c.j_min, c.t_hit, c.converged as u8)?;
        }
        Ok(())
    }
}

/// Annotates every cell with `(r0, s)`; already filled in by the scan, this
/// recomputes the forward map for a bare list of angle pairs.
pub fn angles_to_invariants_map(angles: &[(f64, f64)]) -> Vec<(f64, f64)> {
    angles
        .iter()
        .map(|&(p1, p2)| match invariants_from_angles(&ExtremalParams { omega: 0.0, phi1: p1, phi2: p2 }) {
            Ok(inv) => (inv.r0, inv.s),
            Err(_) => (0.0, 0.0),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Regular,
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimumReport {
    pub omega: f64,
    pub target: TransferTarget,
    pub phi1_star: f64,
    pub phi2_star: f64,
    pub r0_star: f64,
    pub s_star: f64,
    pub t_f_star: f64,
    pub j_star: f64,
    pub regime: Regime,
    /// `j_star` reached the refinement tolerance.
    pub converged: bool,
}

impl OptimumReport {
    fn at(omega: f64, target: TransferTarget, x: [f64; 3], j: f64, converged: bool) -> Self {
        let inv = invariants_from_angles(&ExtremalParams { omega, phi1: x[0], phi2: x[1] });
        let (r0, s) = inv.map(|i| (i.r0, i.s)).unwrap_or((0.0, 0.0));
        let singular = s.abs() < 1e-4 && (r0 - omega * 2f64.sqrt()).abs() < 1e-4;
        Self {
            omega,
            target,
            phi1_star: x[0],
            phi2_star: x[1],
            r0_star: r0,
            s_star: s,
            t_f_star: x[2],
            j_star: j,
            regime: if singular { Regime::Singular } else { Regime::Regular },
            converged,
        }
    }
}

/// Residual `(z1 - z1*, z2 - 1)` at `x = (phi1, phi2, t)`.
fn residual(omega: f64, target: TransferTarget, x: &[f64; 3], step: f64) -> Result<[f64; 2]> {
    let y = joint_at(&ExtremalParams { omega, phi1: x[0], phi2: x[1] }, x[2], step)?;
    Ok([y[7] - target.z1_target(), y[10] - 1.0])
}

fn jacobian(omega: f64, target: TransferTarget, x: &[f64; 3], step: f64) -> Result<[[f64; 3]; 2]> {
    let mut jac = [[0.0; 3]; 2];
    for k in 0..3 {
        let eps = 1e-6;
        let (mut xp, mut xm) = (*x, *x);
        xp[k] += eps;
        xm[k] -= eps;
        let (rp, rm) = (residual(omega, target, &xp, step)?, residual(omega, target, &xm, step)?);
        for i in 0..2 {
            jac[i][k] = (rp[i] - rm[i]) / (2.0 * eps);
        }
    }
    Ok(jac)
}

fn sq(r: &[f64; 2]) -> f64 {
    r[0] * r[0] + r[1] * r[1]
}

/// Levenberg–Marquardt onto `J = 0` with minimum-norm steps (the residual
/// has two components and three unknowns).
fn project(omega: f64, target: TransferTarget, x0: [f64; 3], step: f64) -> Result<([f64; 3], f64)> {
    let mut x = x0;
    let mut r = residual(omega, target, &x, step)?;
    let mut mu = 1e-6;
    for _ in 0..60 {
        if sq(&r) < 1e-24 {
            break;
        }
        let a = jacobian(omega, target, &x, step)?;
        // dx = -A^T (A A^T + mu I)^{-1} r
        let g = [
            [a[0].iter().zip(&a[0]).map(|(p, q)| p * q).sum::<f64>(), a[0].iter().zip(&a[1]).map(|(p, q)| p * q).sum::<f64>()],
            [0.0, a[1].iter().zip(&a[1]).map(|(p, q)| p * q).sum::<f64>()],
        ];
        let mut improved = false;
        for _ in 0..20 {
            let (g00, g01, g11) = (g[0][0] + mu, g[0][1], g[1][1] + mu);
            let det = g00 * g11 - g01 * g01;
            let v = [(g11 * r[0] - g01 * r[1]) / det, (g00 * r[1] - g01 * r[0]) / det];
            let dx: [f64; 3] = std::array::from_fn(|k| -(a[0][k] * v[0] + a[1][k] * v[1]));
            let trial: [f64; 3] = std::array::from_fn(|k| x[k] + dx[k]);
            if trial[2] > 0.0 {
                if let Ok(rt) = residual(omega, target, &trial, step) {
                    if sq(&rt) < sq(&r) {
                        x = trial;
                        r = rt;
                        mu = (mu * 0.3).max(1e-12);
                        improved = true;
                        break;
                    }
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok((x, sq(&r)))
}

/// Unit tangent of the curve `J = 0` (null vector of the 2x3 Jacobian),
/// oriented towards decreasing `t`.
fn tangent(a: &[[f64; 3]; 2]) -> [f64; 3] {
    let c = [
        a[0][1] * a[1][2] - a[0][2] * a[1][1],
        a[0][2] * a[1][0] - a[0][0] * a[1][2],
        a[0][0] * a[1][1] - a[0][1] * a[1][0],
    ];
    let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    let sign = if c[2] > 0.0 { -1.0 } else { 1.0 };
    std::array::from_fn(|k| sign * c[k] / n)
}

/// Local minimum of `t` on the solution curve `J(phi1, phi2, t) = 0`
/// through the seed: project the seed onto the curve, then follow the
/// curve downhill in `t` with predictor–corrector steps until the tangent
/// becomes orthogonal to the time axis.
pub fn refine(omega: f64, target: TransferTarget, seed: &LandscapeCell, step: f64) -> Result<OptimumReport> {
    let (mut x, mut j) = project(omega, target, [seed.phi1, seed.phi2, seed.t_hit], step)?;
    if j > REFINE_J {
        return Ok(OptimumReport::at(omega, target, x, j, false));
    }
    let mut h = 0.05;
    for _ in 0..200 {
        let a = jacobian(omega, target, &x, step)?;
        let tan = tangent(&a);
        // Nothing left to gain once the curve is flat in t.
        if tan[2].abs() < 1e-7 || h < 1e-9 {
            break;
        }
        let pred: [f64; 3] = std::array::from_fn(|k| x[k] + h * tan[k]);
        match project(omega, target, pred, step) {
            Ok((xn, jn)) if jn <= REFINE_J && xn[2] < x[2] => {
                x = xn;
                j = jn;
                h = (h * 1.5).min(0.2);
            }
            _ => h *= 0.3,
        }
    }
    Ok(OptimumReport::at(omega, target, x, j, j <= REFINE_J))
}

/// Seeds next to the singular point `s = 0, r0 = omega sqrt(2)`, slightly
/// off the line `phi2 = pi - phi1`. Just above the threshold the optimum is
/// a near-collision extremal whose basin is too thin for the grid.
fn singular_point_seeds(omega: f64, t: f64) -> Vec<LandscapeCell> {
    if !(omega > 0.0 && omega < 1.0) {
        return Vec::new();
    }
    let a = omega.acos();
    [(-1e-3, 0.0), (0.0, 1e-3)]
        .into_iter()
        .map(|(d1, d2)| LandscapeCell {
            phi1: a + d1,
            phi2: PI - a + d2,
            r0: 0.0,
            s: 0.0,
            j_min: f64::INFINITY,
            t_hit: t,
            converged: false,
            singular: false,
        })
        .collect()
}

/// Scan, then refine the best few basins and keep the fastest result. The
/// seeds are the four best converged local optima, the four lowest-`J`
/// cells, and, above the singular threshold, two seeds at the singular
/// point. A converged refinement always beats an unconverged one; if none
/// converges the best attempt is returned with `converged = false`.
pub fn find_optimum(omega: f64, target: TransferTarget, cfg: &ScanConfig) -> Result<(LandscapeGrid, OptimumReport)> {
    let grid = scan(omega, target, cfg)?;
    let mut seeds: Vec<LandscapeCell> = grid.local_optima().into_iter().take(4).copied().collect();
    let mut by_j: Vec<&LandscapeCell> = grid.cells.iter().filter(|c| c.j_min.is_finite()).collect();
    by_j.sort_by(|a, b| a.j_min.total_cmp(&b.j_min));
    seeds.extend(by_j.into_iter().take(4).copied());
    if omega > singular::threshold(target) {
        if let Ok(d) = singular::solve(target, singular::threshold(target)) {
            seeds.extend(singular_point_seeds(omega, d.t_final));
        }
    }
    let mut best: Option<OptimumReport> = None;
    for seed in &seeds {
        let Ok(rep) = refine(omega, target, seed, cfg.step) else { continue };
        let better = match &best {
            None => true,
            Some(b) => {
                (rep.converged && !b.converged)
                    || (rep.converged && b.converged && rep.t_f_star < b.t_f_star)
                    || (!rep.converged && !b.converged && rep.j_star < b.j_star)
            }
        };
        if better {
            best = Some(rep);
        }
    }
    let best = best.ok_or_else(|| Error::NotConverged("refinement failed for every seed".into()))?;
    Ok((grid, best))
}

/// Minimum-time solution for one offset. Below the singular threshold the
/// optimum is the regular-singular-regular design, reported at the singular
/// point of the angle chart; the grid is still scanned for export.
pub fn minimum_time(omega: f64, target: TransferTarget, cfg: &ScanConfig) -> Result<(LandscapeGrid, OptimumReport)> {
    if omega > 0.0 && omega <= singular::threshold(target) {
        if let Ok(d) = singular::solve(target, omega) {
            let grid = scan(omega, target, cfg)?;
            let j = figure_of_merit(&singular::propagated_final_state(&d), target);
            let rep = OptimumReport {
                omega,
                target,
                phi1_star: omega.acos(),
                phi2_star: PI - omega.acos(),
                r0_star: omega * 2f64.sqrt(),
                s_star: 0.0,
                t_f_star: d.t_final,
                j_star: j,
                regime: Regime::Singular,
                converged: j < REFINE_J,
            };
            return Ok((grid, rep));
        }
    }
    find_optimum(omega, target, cfg)
}

/// Transfer time of the limiting regular solution at the threshold: the
/// `s = 0`, `r0 = omega sqrt(2)` extremal integrated until it reaches the
/// origin, plus the mirrored arc back out. The singular design at the
/// threshold has no dwell, so the two routes must give the same time.
pub fn threshold_regular_time(target: TransferTarget) -> Result<f64> {
    let omega = singular::threshold(target);
    let params = ExtremalParams::new(omega, omega.acos(), PI - omega.acos())?;
    let traj = crate::extremal::integrate_extremal(&params, 3.0, 1e-5)?;
    match traj.termination {
        crate::extremal::Termination::SingularHit { t } => Ok(2.0 * t),
        crate::extremal::Termination::Completed => {
            // Rounding kept r above r_min: take the closest approach.
            let closest = traj
                .samples
                .iter()
                .min_by(|a, b| a.r().total_cmp(&b.r()))
                .ok_or_else(|| Error::NotConverged("empty trajectory".into()))?;
            Ok(2.0 * closest.t)
        }
    }
}

/// One point of an offset sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub omega: f64,
    pub t_f: f64,
    pub regime: Regime,
    pub optimum: Option<OptimumReport>,
    pub error: Option<&'static str>,
}

/// Minimum time per offset: the singular design below the threshold, the
/// refined regular optimum above it. Failures are recorded per point.
pub fn sweep_offsets(target: TransferTarget, omegas: &[f64], grid_n: usize) -> Vec<SweepPoint> {
    omegas
        .iter()
        .map(|&omega| {
            if omega <= singular::threshold(target) {
                if let Ok(d) = singular::solve(target, omega) {
                    return SweepPoint { omega, t_f: d.t_final, regime: Regime::Singular, optimum: None, error: None };
                }
            }
            let cfg = ScanConfig::new(grid_n, default_t_max(target, omega));
            match find_optimum(omega, target, &cfg) {
                Ok((_, rep)) => SweepPoint {
                    omega,
                    t_f: rep.t_f_star,
                    regime: rep.regime,
                    optimum: Some(rep),
                    error: (!rep.converged).then_some("refinement stopped above the J tolerance"),
                },
                Err(_) => SweepPoint {
                    omega,
                    t_f: f64::NAN,
                    regime: Regime::Regular,
                    optimum: None,
                    error: Some("no converged optimum"),
                },
            }
        })
        .collect()
}

/// Writes `omega,t_f,inv_tf,regime,phi1_star,phi2_star,r0_star,s_star`.
pub fn write_sweep_csv<W: Write>(mut w: W, points: &[SweepPoint]) -> std::io::Result<()> {
    writeln!(w, "omega,t_f,inv_tf,regime,phi1_star,phi2_star,r0_star,s_star")?;
    for p in points {
        let (a, b, c, d) = match &p.optimum {
            Some(o) => (o.phi1_star, o.phi2_star, o.r0_star, o.s_star),
            None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
        };
        let regime = match p.regime {
            Regime::Regular => "regular",
            Regime::Singular => "singular",
        };
        writeln!(w, "{},{},{},{},{},{},{},{}", p.omega, p.t_f, 1.0 / p.t_f, regime, a, b, c, d)?;
    }
    Ok(())
}
