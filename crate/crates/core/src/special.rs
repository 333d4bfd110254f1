//! Incomplete elliptic integrals (through Carlson's symmetric forms) and the
//! quartic solver used by the closed-form regular extremals.
//!
//! Conventions follow the parameter form:
//!
//! ```text
//! F(phi | m)     = ∫_0^phi dθ / sqrt(1 - m sin²θ)
//! Π(n; phi | m)  = ∫_0^phi dθ / ((1 - n sin²θ) sqrt(1 - m sin²θ))
//! ```

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

// Duplication stops once all relative deviations fall below this; the
// truncation error of the fifth-order series then scales as TOL^6.
const CARLSON_TOL: f64 = 1.5e-3;

/// Carlson's `R_C(x, y)` for `x >= 0`, `y > 0`.
pub fn carlson_rc(mut x: f64, mut y: f64) -> f64 {
    debug_assert!(x >= 0.0 && y > 0.0);
    loop {
        let lambda = 2.0 * x.sqrt() * y.sqrt() + y;
        x = 0.25 * (x + lambda);
        y = 0.25 * (y + lambda);
        let a = (x + 2.0 * y) / 3.0;
        let s = (y - a) / a;
        if s.abs() < CARLSON_TOL {
            return (1.0 + s * s * (0.3 + s * (1.0 / 7.0 + s * (0.375 + s * 9.0 / 22.0)))) / a.sqrt();
        }
    }
}

/// Carlson's `R_F(x, y, z)`; at most one argument may vanish.
pub fn carlson_rf(mut x: f64, mut y: f64, mut z: f64) -> f64 {
    debug_assert!(x >= 0.0 && y >= 0.0 && z >= 0.0);
    loop {
        let (sx, sy, sz) = (x.sqrt(), y.sqrt(), z.sqrt());
        let lambda = sx * (sy + sz) + sy * sz;
        x = 0.25 * (x + lambda);
        y = 0.25 * (y + lambda);
        z = 0.25 * (z + lambda);
        let a = (x + y + z) / 3.0;
        let dx = (a - x) / a;
        let dy = (a - y) / a;
        let dz = (a - z) / a;
        if dx.abs().max(dy.abs()).max(dz.abs()) < CARLSON_TOL {
            let e2 = dx * dy - dz * dz;
            let e3 = dx * dy * dz;
            return (1.0 - e2 / 10.0 + e3 / 14.0 + e2 * e2 / 24.0 - 3.0 * e2 * e3 / 44.0) / a.sqrt();
        }
    }
}

/// Carlson's `R_J(x, y, z, p)` for `p > 0`.
pub fn carlson_rj(mut x: f64, mut y: f64, mut z: f64, mut p: f64) -> f64 {
    debug_assert!(p > 0.0);
    let mut sum = 0.0;
    let mut fac = 1.0;
    loop {
        let (sx, sy, sz) = (x.sqrt(), y.sqrt(), z.sqrt());
        let lambda = sx * (sy + sz) + sy * sz;
        let alpha = (p * (sx + sy + sz) + sx * sy * sz).powi(2);
        let beta = p * (p + lambda).powi(2);
        sum += fac * carlson_rc(alpha, beta);
        fac *= 0.25;
        x = 0.25 * (x + lambda);
        y = 0.25 * (y + lambda);
        z = 0.25 * (z + lambda);
        p = 0.25 * (p + lambda);
        let a = 0.2 * (x + y + z + 2.0 * p);
        let dx = (a - x) / a;
        let dy = (a - y) / a;
        let dz = (a - z) / a;
        let dp = (a - p) / a;
        if dx.abs().max(dy.abs()).max(dz.abs()).max(dp.abs()) < CARLSON_TOL {
            const C1: f64 = 3.0 / 14.0;
            const C2: f64 = 1.0 / 3.0;
            const C3: f64 = 3.0 / 22.0;
            const C4: f64 = 3.0 / 26.0;
            const C5: f64 = 0.75 * C3;
            const C6: f64 = 1.5 * C4;
            const C7: f64 = 0.5 * C2;
            const C8: f64 = 2.0 * C3;
            let ea = dx * (dy + dz) + dy * dz;
            let eb = dx * dy * dz;
            let ec = dp * dp;
            let ed = ea - 3.0 * ec;
            let ee = eb + 2.0 * dp * (ea - ec);
            let series = 1.0
                + ed * (-C1 + C5 * ed - C6 * ee)
                + eb * (C7 + dp * (-C8 + dp * C4))
                + dp * ea * (C2 - dp * C3)
                - C2 * dp * ec;
            return 3.0 * sum + fac * series / (a * a.sqrt());
        }
    }
}

fn check_parameter(m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Domain(format!("elliptic parameter m = {m} outside [0, 1]")));
    }
    Ok(())
}

/// Splits `phi = k*pi + rest` with `rest` in [-pi/2, pi/2].
fn reduce_amplitude(phi: f64) -> (f64, f64) {
    let k = (phi / PI).round();
    (k, phi - k * PI)
}

/// Complete integral `K(m)`.
pub fn ellip_k(m: f64) -> Result<f64> {
    check_parameter(m)?;
    if m == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(carlson_rf(0.0, 1.0 - m, 1.0))
}

/// Incomplete integral of the first kind `F(phi | m)`, any real `phi`.
pub fn ellip_f(phi: f64, m: f64) -> Result<f64> {
    check_parameter(m)?;
    ellip_f_any(phi, m)
}

/// `F(phi | m)` for any parameter `m <= 1`, including negative values (used
/// when checking printed formulas whose parameter leaves [0, 1]).
pub fn ellip_f_any(phi: f64, m: f64) -> Result<f64> {
    if !(m <= 1.0) {
        return Err(Error::Domain(format!("elliptic parameter m = {m} above 1")));
    }
    if !phi.is_finite() {
        return Err(Error::NonFinite("phi"));
    }
    let (k, rest) = reduce_amplitude(phi);
    let (s, c) = rest.sin_cos();
    let principal = if s == 0.0 { 0.0 } else { s * carlson_rf(c * c, 1.0 - m * s * s, 1.0) };
    if k == 0.0 {
        return Ok(principal);
    }
    if m == 1.0 {
        return Err(Error::Domain("F(phi | 1) diverges beyond pi/2".into()));
    }
    Ok(2.0 * k * carlson_rf(0.0, 1.0 - m, 1.0) + principal)
}

/// Incomplete integral of the third kind `Π(n; phi | m)`, any real `phi`
/// whose path avoids the pole `n sin²θ = 1`.
pub fn ellip_pi(n: f64, phi: f64, m: f64) -> Result<f64> {
    check_parameter(m)?;
    ellip_pi_any(n, phi, m)
}

/// `Π(n; phi | m)` for any `m <= 1`.
pub fn ellip_pi_any(n: f64, phi: f64, m: f64) -> Result<f64> {
    if !(m <= 1.0) {
        return Err(Error::Domain(format!("elliptic parameter m = {m} above 1")));
    }
    if !(phi.is_finite() && n.is_finite()) {
        return Err(Error::NonFinite("elliptic argument"));
    }
    let (k, rest) = reduce_amplitude(phi);
    let max_sin2 = if k != 0.0 { 1.0 } else { rest.sin().powi(2) };
    if 1.0 - n * max_sin2 <= 0.0 {
        return Err(Error::Unsupported(format!(
            "Π(n = {n}; phi = {phi}) crosses the pole; Cauchy principal value not supported"
        )));
    }
    let principal = pi_principal(n, rest, m);
    if k == 0.0 {
        return Ok(principal);
    }
    if m == 1.0 {
        return Err(Error::Domain("Π(n; phi | 1) diverges beyond pi/2".into()));
    }
    let complete = carlson_rf(0.0, 1.0 - m, 1.0) + n / 3.0 * carlson_rj(0.0, 1.0 - m, 1.0, 1.0 - n);
    Ok(2.0 * k * complete + principal)
}

fn pi_principal(n: f64, phi: f64, m: f64) -> f64 {
    let (s, c) = phi.sin_cos();
    if s == 0.0 {
        return 0.0;
    }
    let s2 = s * s;
    let (x, y) = (c * c, 1.0 - m * s2);
    let mut v = s * carlson_rf(x, y, 1.0);
    if n != 0.0 {
        v += n / 3.0 * s * s2 * carlson_rj(x, y, 1.0, 1.0 - n * s2);
    }
    v
}

/// Roots of `P(u) = -u^4 + A u^2 + B u - C`, split into the real pair
/// `beta1 < beta2` that brackets the physical motion and the remaining pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticRoots {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma1: Complex64,
    pub gamma2: Complex64,
    /// True when the gamma pair is real (discriminant of
    /// `u^2 + (beta1 + beta2) u + C / (beta1 beta2)` is positive).
    pub real_gamma: bool,
}

impl QuarticRoots {
    pub fn eval(&self, u: Complex64) -> Complex64 {
        -u.powi(4) + self.a * u * u + self.b * u - self.c
    }

    pub fn all(&self) -> [Complex64; 4] {
        [self.beta1.into(), self.beta2.into(), self.gamma1, self.gamma2]
    }
}

/// Solves the depressed quartic through Ferrari's resolvent and polishes each
/// root with Newton steps.
pub fn quartic_roots(a: f64, b: f64, c: f64) -> Result<QuarticRoots> {
    if !(a.is_finite() && b.is_finite() && c.is_finite()) {
        return Err(Error::NonFinite("quartic coefficients"));
    }
    // Monic form u^4 + p u^2 + q u + r.
    let (p, q, r) = (-a, -b, c);
    let mut roots = depressed_quartic(p, q, r);
    for z in roots.iter_mut() {
        *z = polish(*z, p, q, r);
    }
    let scale = 1.0 + a.abs().max(b.abs()).max(c.abs());
    let mut real: Vec<f64> = roots
        .iter()
        .filter(|z| z.im.abs() <= 1e-7 * (1.0 + z.norm()))
        .map(|z| z.re)
        .collect();
    real.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (beta1, beta2, gamma1, gamma2) = match real.len() {
        4 => (real[2], real[3], Complex64::from(real[0]), Complex64::from(real[1])),
        2 => {
            let mut cplx = roots.iter().filter(|z| z.im.abs() > 1e-7 * (1.0 + z.norm()));
            let g1 = *cplx.next().unwrap();
            let g2 = *cplx.next().unwrap();
            let (g1, g2) = if g1.im > 0.0 { (g1, g2) } else { (g2, g1) };
            (real[0], real[1], g1, g2)
        }
        _ => {
            return Err(Error::Domain(format!(
                "quartic (A={a}, B={b}, C={c}) has no real root pair"
            )))
        }
    };
    if (beta2 - beta1).abs() < 1e-8 * scale.sqrt() {
        return Err(Error::DegenerateWell);
    }
    let sum = beta1 + beta2;
    let prod_gamma = c / (beta1 * beta2);
    Ok(QuarticRoots {
        a,
        b,
        c,
        beta1,
        beta2,
        gamma1,
        gamma2,
        real_gamma: sum * sum - 4.0 * prod_gamma > 0.0,
    })
}

fn depressed_quartic(p: f64, q: f64, r: f64) -> [Complex64; 4] {
    let scale = p.abs().max(q.abs()).max(r.abs()).max(1e-300);
    if q.abs() <= 1e-14 * scale {
        // Biquadratic.
        let disc = Complex64::from(p * p - 4.0 * r).sqrt();
        let w1 = (-p + disc) / 2.0;
        let w2 = (-p - disc) / 2.0;
        let (s1, s2) = (w1.sqrt(), w2.sqrt());
        return [s1, -s1, s2, -s2];
    }
    let y = resolvent_root(p, q, r);
    let k = (2.0 * y - p).max(0.0).sqrt();
    let shift = q / (2.0 * k);
    // u^2 + y = ±(k u - shift)
    let quad = |sign: f64| {
        let bq = -sign * k;
        let cq = y + sign * shift;
        let d = Complex64::from(bq * bq - 4.0 * cq).sqrt();
        [(-bq + d) / 2.0, (-bq - d) / 2.0]
    };
    let [u1, u2] = quad(1.0);
    let [u3, u4] = quad(-1.0);
    [u1, u2, u3, u4]
}

/// Largest root of `g(y) = 4 (2y - p)(y^2 - r) - q^2`, which lies above p/2.
fn resolvent_root(p: f64, q: f64, r: f64) -> f64 {
    let g = |y: f64| 4.0 * (2.0 * y - p) * (y * y - r) - q * q;
    let dg = |y: f64| 8.0 * (y * y - r) + 8.0 * y * (2.0 * y - p);
    let mut lo = 0.5 * p;
    let mut hi = lo.abs().max(1.0) + r.abs().sqrt() + q.abs().cbrt() + 1.0;
    while g(hi) <= 0.0 {
        hi = 2.0 * hi + 1.0;
    }
    // g(lo) = -q^2 < 0; g is increasing on the bracket's last crossing.
    let mut y = hi;
    for _ in 0..200 {
        let gy = g(y);
        if gy > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let d = dg(y);
        let newton = y - gy / d;
        y = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (hi - lo) <= 4.0 * f64::EPSILON * hi.abs().max(1.0) || gy == 0.0 {
            break;
        }
    }
    y
}

fn polish(mut z: Complex64, p: f64, q: f64, r: f64) -> Complex64 {
    for _ in 0..8 {
        let z2 = z * z;
        let f = z2 * z2 + p * z2 + q * z + r;
        let df = 4.0 * z2 * z + 2.0 * p * z + q;
        if df.norm() == 0.0 {
            break;
        }
        let step = f / df;
        let next = z - step;
        let fnext = {
            let n2 = next * next;
            n2 * n2 + p * n2 + q * next + r
        };
        if fnext.norm() >= f.norm() {
            break;
        }
        z = next;
    }
    z
}
