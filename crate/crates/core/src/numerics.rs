//! Small numerical kernels shared by the physics modules: Gauss–Legendre
//! rules, Legendre projections, complex spherical Bessel functions, uniform
//! grid quadrature and bracketed root refinement.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrate a real function over [a, b].
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let c = 0.5 * (a + b);
        let m = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(c + m * x))
            .sum::<f64>()
            * m
    }
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Values P_0(x) ..= P_n(x).
pub fn legendre_all(n: usize, x: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if n == 0 {
        return;
    }
    out[1] = x;
    for k in 2..=n {
        let kf = k as f64;
        out[k] = ((2.0 * kf - 1.0) * x * out[k - 1] - (kf - 1.0) * out[k - 2]) / kf;
    }
}

/// Spherical Bessel functions j_0(z) ..= j_{nmax}(z) for complex argument.
///
/// Power series for small |z|, upward recurrence when every order is below
/// |z|, Miller's downward recurrence otherwise.
pub fn spherical_bessel_j(z: Complex64, nmax: usize, out: &mut [Complex64]) {
    debug_assert!(out.len() > nmax);
    let az = z.norm();
    if az < 1.0 {
        bessel_series(z, nmax, out);
    } else if az > (nmax + 1) as f64 {
        bessel_upward(z, nmax, out);
    } else {
        bessel_miller(z, nmax, out);
    }
}

fn bessel_series(z: Complex64, nmax: usize, out: &mut [Complex64]) {
    let w = -0.5 * z * z;
    let mut lead = Complex64::new(1.0, 0.0);
    let mut dfact = 1.0;
    for (n, slot) in out.iter_mut().enumerate().take(nmax + 1) {
        if n > 0 {
            lead *= z;
            dfact *= (2 * n + 1) as f64;
        }
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = term;
        for m in 1..80 {
            term *= w / (m as f64 * (2 * n + 2 * m + 1) as f64);
            sum += term;
            if term.norm() < 1e-18 * sum.norm() {
                break;
            }
        }
        *slot = lead / dfact * sum;
    }
}

fn bessel_low_orders(z: Complex64) -> (Complex64, Complex64) {
    let (s, c) = (z.sin(), z.cos());
    (s / z, s / (z * z) - c / z)
}

fn bessel_upward(z: Complex64, nmax: usize, out: &mut [Complex64]) {
    let (j0, j1) = bessel_low_orders(z);
    let inv = z.inv();
    out[0] = j0;
    if nmax >= 1 {
        out[1] = j1;
    }
    for n in 1..nmax {
        out[n + 1] = (2 * n + 1) as f64 * inv * out[n] - out[n - 1];
    }
}

fn bessel_miller(z: Complex64, nmax: usize, out: &mut [Complex64]) {
    let start = nmax + 24 + z.norm().ceil() as usize;
    let inv = z.inv();
    let mut f_next = Complex64::new(0.0, 0.0);
    let mut f_cur = Complex64::new(1e-30, 0.0);
    for n in (1..=start).rev() {
        let f_prev = (2 * n + 1) as f64 * inv * f_cur - f_next;
        f_next = f_cur;
        f_cur = f_prev;
        if n - 1 <= nmax {
            out[n - 1] = f_cur;
        }
        if f_cur.norm() > 1e250 {
            f_cur *= 1e-250;
            f_next *= 1e-250;
            for v in out.iter_mut().take(nmax + 1).skip(n - 1) {
                *v *= 1e-250;
            }
        }
    }
    let (j0, j1) = bessel_low_orders(z);
    let factor = if nmax == 0 || j0.norm() >= j1.norm() {
        j0 / out[0]
    } else {
        j1 / out[1]
    };
    for v in out.iter_mut().take(nmax + 1) {
        *v *= factor;
    }
}

/// Composite Simpson rule on uniformly spaced samples; the last three
/// intervals use the 3/8 rule when the interval count is odd.
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    match n {
        0 | 1 => 0.0,
        2 => 0.5 * h * (values[0] + values[1]),
        3 => h / 3.0 * (values[0] + 4.0 * values[1] + values[2]),
        _ => {
            let intervals = n - 1;
            let (even_end, tail) = if intervals.is_multiple_of(2) {
                (n - 1, 0.0)
            } else {
                let k = n - 4;
                let t = 3.0 * h / 8.0
                    * (values[k] + 3.0 * values[k + 1] + 3.0 * values[k + 2] + values[k + 3]);
                (k, t)
            };
            let mut s = values[0] + values[even_end];
            for (i, v) in values.iter().enumerate().take(even_end).skip(1) {
                s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
            }
            h / 3.0 * s + tail
        }
    }
}

/// Brent's method on a sign-changing bracket.
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, ftol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return Err(Error::NotBracketed {
            lo,
            hi,
            f_lo: fa,
            f_hi: fb,
        });
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut bisected = true;
    for _ in 0..300 {
        if fb.abs() <= ftol || (b - a).abs() <= 4.0 * f64::EPSILON * b.abs().max(1e-300) {
            return Ok(b);
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo_s = (3.0 * a + b) / 4.0;
        let between = (s > lo_s.min(b)) && (s < lo_s.max(b));
        let cond = !between
            || (bisected && (s - b).abs() >= (b - c).abs() / 2.0)
            || (!bisected && (s - b).abs() >= (c - d).abs() / 2.0)
            || (bisected && (b - c).abs() < 1e-300)
            || (!bisected && (c - d).abs() < 1e-300);
        if cond {
            s = 0.5 * (a + b);
            bisected = true;
        } else {
            bisected = false;
        }
        let fs = f(s);
        d = c;
        c = b;
        fc = fb;
        if fa.signum() != fs.signum() {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(12);
        let v = rule.integrate(0.0, 2.0, |x| x.powi(23));
        assert!((v - 2f64.powi(24) / 24.0).abs() < 1e-9 * v);
        let s: f64 = rule.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn spherical_bessel_matches_closed_forms() {
        let mut out = vec![Complex64::new(0.0, 0.0); 8];
        for &z in &[
            Complex64::new(0.3, 0.0),
            Complex64::new(2.5, 0.1),
            Complex64::new(7.0, -0.4),
            Complex64::new(40.0, 0.2),
            Complex64::new(0.5, 3.0),
        ] {
            spherical_bessel_j(z, 7, &mut out);
            let j0 = z.sin() / z;
            let j1 = z.sin() / (z * z) - z.cos() / z;
            let j2 = (3.0 / (z * z) - 1.0) * z.sin() / z - 3.0 * z.cos() / (z * z);
            assert!(
                (out[0] - j0).norm() < 1e-14 * (1.0 + j0.norm()),
                "j0 at {z}"
            );
            assert!(
                (out[1] - j1).norm() < 1e-13 * (1.0 + j1.norm()),
                "j1 at {z}"
            );
            assert!(
                (out[2] - j2).norm() < 1e-12 * (1.0 + j2.norm()),
                "j2 at {z}"
            );
        }
    }

    #[test]
    fn spherical_bessel_regimes_agree() {
        let zero = Complex64::new(0.0, 0.0);
        let (mut a, mut b) = (vec![zero; 21], vec![zero; 21]);
        for &z in &[Complex64::new(21.5, 0.05), Complex64::new(30.0, -0.3)] {
            bessel_upward(z, 20, &mut a);
            bessel_miller(z, 20, &mut b);
            for n in 0..=20 {
                assert!(
                    (a[n] - b[n]).norm() < 1e-12 * (1e-3 + a[n].norm()),
                    "order {n} at {z}"
                );
            }
        }
        for &z in &[Complex64::new(0.95, 0.0), Complex64::new(0.6, 0.7)] {
            bessel_series(z, 20, &mut a);
            bessel_miller(z, 20, &mut b);
            for n in 0..=20 {
                assert!(
                    (a[n] - b[n]).norm() <= 1e-12 * a[n].norm(),
                    "order {n} at {z}"
                );
            }
        }
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        for n in [5usize, 6, 7, 10] {
            let h = 1.0 / (n - 1) as f64;
            let v: Vec<f64> = (0..n).map(|i| (i as f64 * h).powi(3)).collect();
            assert!((simpson(&v, h) - 0.25).abs() < 1e-14, "n = {n}");
        }
    }

    #[test]
    fn brent_finds_root_and_reports_missing_bracket() {
        let r = brent(|x| x * x - 2.0, 0.0, 2.0, 1e-15).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
        assert!(matches!(
            brent(|x| x * x + 1.0, 0.0, 2.0, 1e-15),
            Err(Error::NotBracketed { .. })
        ));
    }
}
