//! Piecewise-constant gradient pulse optimization, used as an independent
//! numerical cross-check of the analytic minimum times.
//!
//! Each segment acts on the Bloch vectors through the exact rotation of
//! [`BlochVector::precess`]; gradients come from one forward and one
//! backward sweep with the analytic derivative of that rotation.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::spin::{offsets, BlochVector, PiecewisePulse, Segment, SpinPairState, TransferTarget};

pub const DEFAULT_SEGMENTS: usize = 64;
pub const DEFAULT_RESTARTS: usize = 20;
pub const DEFAULT_ITERATIONS: usize = 3000;
pub const MIN_SEGMENTS: usize = 8;
/// Onset level of the `J(t_f)` cliff.
pub const CLIFF_J: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrapeProblem {
    pub omega: f64,
    pub target: TransferTarget,
    pub t_final: f64,
    pub n_segments: usize,
    pub max_iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Optimization stops once `J` falls below this.
    pub j_tol: f64,
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl GrapeProblem {
    pub fn new(omega: f64, target: TransferTarget, t_final: f64) -> Self {
        Self {
            omega,
            target,
            t_final,
            n_segments: DEFAULT_SEGMENTS,
            max_iterations: DEFAULT_ITERATIONS,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            j_tol: 1e-14,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_segments < MIN_SEGMENTS {
            return Err(Error::Domain(format!("at least {MIN_SEGMENTS} segments required, got {}", self.n_segments)));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::Domain(format!("t_final must be positive, got {}", self.t_final)));
        }
        if !(self.omega >= 0.0) {
            return Err(Error::Domain(format!("omega must be non-negative, got {}", self.omega)));
        }
        if self.restarts == 0 {
            return Err(Error::Domain("at least one restart required".into()));
        }
        Ok(())
    }

    fn dt(&self) -> f64 {
        self.t_final / self.n_segments as f64
    }
}

/// Controls as `(ux, uy)` per segment.
pub type Controls = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq)]
pub struct GrapeResult {
    pub pulse: PiecewisePulse,
    pub j_final: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub restart_index: usize,
}

fn merit(m1: &BlochVector, m2: &BlochVector, target: TransferTarget) -> f64 {
    let d1 = m1.z - target.z1_target();
    let d2 = 1.0 - m2.z;
    d1 * d1 + d2 * d2
}

/// Derivatives of `precess(m, n, dt)` with respect to `n.x` and `n.y`.
fn precess_jacobian(m: &BlochVector, n: &BlochVector, dt: f64) -> [BlochVector; 2] {
    let big = n.norm();
    let e = [BlochVector::new(1.0, 0.0, 0.0), BlochVector::new(0.0, 1.0, 0.0)];
    if big < 1e-300 {
        // First order in n: m + dt m x n.
        return e.map(|ej| m.cross(&ej).scale(dt));
    }
    let k = n.scale(1.0 / big);
    let (sn, cs) = (big * dt).sin_cos();
    // precess = c m + s (k x m) + (1 - c)(k.m) k with c = cos, s = -sin.
    let (c, s) = (cs, -sn);
    let km = k.dot(m);
    let kxm = k.cross(m);
    let comp = [k.x, k.y];
    std::array::from_fn(|j| {
        let kj = comp[j];
        let dc = -sn * dt * kj;
        let ds = -cs * dt * kj;
        let dk = e[j].add(&k.scale(-kj)).scale(1.0 / big);
        m.scale(dc)
            .add(&kxm.scale(ds))
            .add(&dk.cross(m).scale(s))
            .add(&k.scale(-dc * km))
            .add(&k.scale(dk.dot(m)).add(&dk.scale(km)).scale(1.0 - c))
    })
}

/// Final state of both spins under the controls.
pub fn forward(problem: &GrapeProblem, controls: &[[f64; 2]]) -> SpinPairState {
    let dt = problem.dt();
    let [w1, w2] = offsets(problem.omega);
    let (mut m1, mut m2) = (BlochVector::north(), BlochVector::north());
    for u in controls {
        m1 = m1.precess(&BlochVector::new(u[0], u[1], w1), dt);
        m2 = m2.precess(&BlochVector::new(u[0], u[1], w2), dt);
    }
    SpinPairState { m1, m2, time: problem.t_final }
}

pub fn objective(problem: &GrapeProblem, controls: &[[f64; 2]]) -> f64 {
    let s = forward(problem, controls);
    merit(&s.m1, &s.m2, problem.target)
}

/// `J` and its gradient with respect to every `(ux, uy)`.
pub fn gradient(problem: &GrapeProblem, controls: &[[f64; 2]]) -> (f64, Controls) {
    let dt = problem.dt();
    let w = offsets(problem.omega);
    let n = controls.len();
    let mut states = vec![[BlochVector::north(); 2]; n + 1];
    for (k, u) in controls.iter().enumerate() {
        for i in 0..2 {
            states[k + 1][i] = states[k][i].precess(&BlochVector::new(u[0], u[1], w[i]), dt);
        }
    }
    let [f1, f2] = states[n];
    let j = merit(&f1, &f2, problem.target);
    // Adjoints dJ/dM_i, carried backwards by the transposed rotations.
    let mut lam = [
        BlochVector::new(0.0, 0.0, 2.0 * (f1.z - problem.target.z1_target())),
        BlochVector::new(0.0, 0.0, -2.0 * (1.0 - f2.z)),
    ];
    let mut grad = vec![[0.0; 2]; n];
    for k in (0..n).rev() {
        let u = controls[k];
        for i in 0..2 {
            let nv = BlochVector::new(u[0], u[1], w[i]);
            let d = precess_jacobian(&states[k][i], &nv, dt);
            grad[k][0] += lam[i].dot(&d[0]);
            grad[k][1] += lam[i].dot(&d[1]);
            // The transpose of a rotation by angle a about n is the rotation by -a.
            lam[i] = lam[i].precess(&nv, -dt);
        }
    }
    (j, grad)
}

fn project_disk(u: [f64; 2]) -> [f64; 2] {
    let a = u[0].hypot(u[1]);
    if a > 1.0 {
        [u[0] / a, u[1] / a]
    } else {
        u
    }
}

fn dot(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p[0] * q[0] + p[1] * q[1]).sum()
}

struct Descent {
    controls: Controls,
    j: f64,
    iterations: usize,
    gradient_norm: f64,
}

/// Norm of the projected-gradient step `x - P(x - g)`.
fn stationarity(x: &[[f64; 2]], g: &[[f64; 2]]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(u, d)| {
            let p = project_disk([u[0] - d[0], u[1] - d[1]]);
            (u[0] - p[0]).powi(2) + (u[1] - p[1]).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Projected gradient descent with Barzilai–Borwein trial steps and Armijo
/// backtracking. Accepted steps never increase `J`.
fn descend(problem: &GrapeProblem, start: Controls) -> Descent {
    let mut x: Controls = start.into_iter().map(project_disk).collect();
    let (mut j, mut g) = gradient(problem, &x);
    let mut alpha = 1.0;
    let mut iterations = 0;
    while iterations < problem.max_iterations && j > problem.j_tol {
        iterations += 1;
        let mut accepted = None;
        let mut a = alpha;
        for _ in 0..40 {
            let trial: Controls = x.iter().zip(&g).map(|(u, d)| project_disk([u[0] - a * d[0], u[1] - a * d[1]])).collect();
            let step: Controls = x.iter().zip(&trial).map(|(u, v)| [u[0] - v[0], u[1] - v[1]]).collect();
            let decrease = dot(&g, &step);
            let jt = objective(problem, &trial);
            if jt <= j - 1e-4 * decrease {
                accepted = Some(trial);
                break;
            }
            a *= 0.5;
        }
        let Some(next) = accepted else { break };
        let (jn, gn) = gradient(problem, &next);
        let s: Controls = next.iter().zip(&x).map(|(p, q)| [p[0] - q[0], p[1] - q[1]]).collect();
        let y: Controls = gn.iter().zip(&g).map(|(p, q)| [p[0] - q[0], p[1] - q[1]]).collect();
        let sy = dot(&s, &y);
        alpha = if sy > 0.0 { (dot(&s, &s) / sy).clamp(1e-6, 1e3) } else { (a * 2.0).min(1e3) };
        let moved = dot(&s, &s).sqrt();
        x = next;
        j = jn;
        g = gn;
        if moved < 1e-15 {
            break;
        }
    }
    let gradient_norm = stationarity(&x, &g);
    Descent { controls: x, j, iterations, gradient_norm }
}

/// Constant-amplitude field whose phase follows the precession of spin 1,
/// `alpha(t) = omega t`, sampled at segment midpoints. Spin 1 then sees a
/// resonant field while spin 2 is driven off resonance.
pub fn resonant_controls(problem: &GrapeProblem) -> Controls {
    let dt = problem.dt();
    (0..problem.n_segments)
        .map(|k| {
            let a = problem.omega * (k as f64 + 0.5) * dt;
            [a.cos(), a.sin()]
        })
        .collect()
}

/// Uniform samples in the unit disk; restart `k` draws from its own stream.
pub fn random_controls(problem: &GrapeProblem, restart: usize) -> Controls {
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    rng.set_stream(restart as u64);
    (0..problem.n_segments)
        .map(|_| {
            let r = rng.gen::<f64>().sqrt();
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            [r * a.cos(), r * a.sin()]
        })
        .collect()
}

pub fn controls_to_pulse(problem: &GrapeProblem, controls: &[[f64; 2]]) -> Result<PiecewisePulse> {
    let dt = problem.dt();
    PiecewisePulse::new(controls.iter().map(|u| Segment { dt, ux: u[0], uy: u[1] }).collect())
}

/// Best result over all restarts. Restart 0 starts from the resonant pulse,
/// the others from random controls. Ties go to the lower restart index.
pub fn optimize(problem: &GrapeProblem) -> Result<GrapeResult> {
    problem.validate()?;
    let runs = par::map_indexed(problem.restarts, problem.workers, |k| {
        let start = if k == 0 { resonant_controls(problem) } else { random_controls(problem, k) };
        descend(problem, start)
    });
    let (idx, best) = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.j.total_cmp(&b.1.j).then(a.0.cmp(&b.0)))
        .ok_or_else(|| Error::NotConverged("no restart ran".into()))?;
    Ok(GrapeResult {
        pulse: controls_to_pulse(problem, &best.controls)?,
        j_final: best.j,
        iterations: best.iterations,
        gradient_norm: best.gradient_norm,
        restart_index: idx,
    })
}

/// One point of a final-time sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub t_final: f64,
    /// Best `J` found at this `t_final` by optimization.
    pub raw_j: f64,
    /// Running minimum over shorter times: a shorter pulse padded with zero
    /// field leaves both `z` components unchanged, so longer times can only
    /// do as well.
    pub best_j: f64,
    pub iterations: usize,
    pub restart_index: usize,
    /// `t_final` of the run that produced `best_j`.
    pub source_t: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSweep {
    pub points: Vec<SweepPoint>,
    /// Best result at the cliff point, or at the lowest `J` if none converged.
    pub best: Option<GrapeResult>,
}

impl TimeSweep {
    /// First swept time whose best `J` is below [`CLIFF_J`].
    pub fn cliff(&self) -> Option<f64> {
        self.points.iter().find(|p| p.best_j < CLIFF_J).map(|p| p.t_final)
    }

    /// Fits `J = c (T - t)^p` to the points with `1e-6 < J < 1e-2` (above the
    /// optimizer floor, below the far-from-target regime) and returns
    /// `(T, p)`: the time where the fitted curve reaches zero.
    pub fn extrapolated_zero(&self) -> Option<(f64, f64)> {
        let pts: Vec<(f64, f64)> =
            self.points.iter().filter(|p| p.raw_j > 1e-6 && p.raw_j < 1e-2).map(|p| (p.t_final, p.raw_j.ln())).collect();
        if pts.len() < 3 {
            return None;
        }
        let last = pts.iter().map(|p| p.0).fold(f64::MIN, f64::max);
        let fit = |big_t: f64| {
            let xs: Vec<f64> = pts.iter().map(|p| (big_t - p.0).ln()).collect();
            let n = xs.len() as f64;
            let (mx, my) = (xs.iter().sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
            let sxy: f64 = xs.iter().zip(&pts).map(|(x, p)| (x - mx) * (p.1 - my)).sum();
            let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
            let slope = sxy / sxx;
            let ssr: f64 = xs.iter().zip(&pts).map(|(x, p)| (p.1 - my - slope * (x - mx)).powi(2)).sum();
            (ssr, slope)
        };
        // Golden-section search on the residual over T.
        let (mut a, mut b) = (last + 1e-4, last + 2.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let (c, d) = (b - g * (b - a), a + g * (b - a));
            if fit(c).0 < fit(d).0 {
                b = d;
            } else {
                a = c;
            }
        }
        let t = 0.5 * (a + b);
        Some((t, fit(t).1))
    }

    /// Writes `t_final,best_J,iterations,restart_index`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_final,best_J,iterations,restart_index")?;
        for p in &self.points {
            writeln!(w, "{},{:e},{},{}", p.t_final, p.best_j, p.iterations, p.restart_index)?;
        }
        Ok(())
    }
}

pub fn time_sweep(template: &GrapeProblem, times: &[f64]) -> Result<TimeSweep> {
    if times.is_empty() || times.iter().any(|t| !(*t > 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("time grid must be positive and strictly increasing".into()));
    }
    let mut points: Vec<SweepPoint> = Vec::with_capacity(times.len());
    let mut results: Vec<Option<GrapeResult>> = Vec::with_capacity(times.len());
    for &t in times {
        let problem = GrapeProblem { t_final: t, ..*template };
        let prev = points.last().cloned();
        let mut point = SweepPoint {
            t_final: t,
            raw_j: f64::NAN,
            best_j: f64::INFINITY,
            iterations: 0,
            restart_index: 0,
            source_t: t,
            error: None,
        };
        match optimize(&problem) {
            Ok(res) => {
                point.raw_j = res.j_final;
                point.best_j = res.j_final;
                point.iterations = res.iterations;
                point.restart_index = res.restart_index;
                results.push(Some(res));
            }
            Err(e) => {
                point.error = Some(e.to_string());
                results.push(None);
            }
        }
        if let Some(p) = prev {
            if p.best_j < point.best_j {
                point.best_j = p.best_j;
                point.iterations = p.iterations;
                point.restart_index = p.restart_index;
                point.source_t = p.source_t;
            }
        }
        points.push(point);
    }
    let sweep = TimeSweep { points, best: None };
    let pick = match sweep.cliff() {
        Some(t) => sweep.points.iter().position(|p| p.t_final == t),
        None => sweep.points.iter().enumerate().min_by(|a, b| a.1.raw_j.total_cmp(&b.1.raw_j)).map(|(i, _)| i),
    };
    let best = pick.and_then(|i| {
        let src = sweep.points[i].source_t;
        times.iter().position(|&t| t == src).and_then(|k| results[k].clone())
    });
    Ok(TimeSweep { best, ..sweep })
}
