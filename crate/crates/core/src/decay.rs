use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{
    decompose, propagate_grid_series, Engine, KGridSpec, SpectralDecomposition, StateProfile,
    WaveFunction, LEGENDRE_DEGREE,
};
use crate::model::{InitialState, Potential, PotentialFamily};
use crate::numerics::simpson;
use crate::scattering::{default_kappa_max, find_bound_states, project_out_bound_states, Regular};

/// Relative change of `P(t)` allowed when the momentum panels are halved.
pub const HALVING_TOLERANCE: f64 = 1e-8;

/// Spread of local exponents above which a fit is flagged unstable.
pub const INSTABILITY_SPREAD: f64 = 0.3;

/// Decades of reliable samples used by the default fit window.
pub const DEFAULT_WINDOW_DECADES: f64 = 1.5;

/// `P = ∫₀^R |Ψ|² dr`: Simpson over whole cells plus a quadratic fit on the
/// partial cell ending at `R`.
pub fn nonescape(wf: &WaveFunction, region_radius: f64) -> Result<f64> {
    let grid = &wf.grid;
    let r_top = grid.r(wf.samples.len() - 1);
    if !(region_radius >= 0.0) || region_radius > r_top * (1.0 + 1e-12) {
        return Err(Error::domain(format!(
            "region radius {region_radius} exceeds the sampled range [0, {r_top}]"
        )));
    }
    let h = grid.spacing();
    let density = wf.density();
    let n = grid
        .last_index_at_or_below(region_radius)
        .min(density.len() - 1);
    let mut p = if n == 1 && density.len() > 2 {
        h / 12.0 * (5.0 * density[0] + 8.0 * density[1] - density[2])
    } else {
        simpson(&density[..=n], h)
    };
    let rest = region_radius - grid.r(n);
    if rest > 1e-12 * h && n + 1 < density.len() {
        let (a, b) = if n == 0 { (0, 1) } else { (n - 1, n + 1) };
        let (x0, f0) = (grid.r(a), density[a]);
        let (x1, f1) = (grid.r(a + 1), density[a + 1]);
        let (x2, f2) = (grid.r(b), density[b]);
        let q = |x: f64| {
            f0 * (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
                + f1 * (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
                + f2 * (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1))
        };
        let (lo, hi) = (grid.r(n), region_radius);
        let (c, m) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let g = 1.0 / 3.0_f64.sqrt();
        p += m * (q(c - m * g) + q(c + m * g));
    }
    Ok(p.max(0.0))
}

/// Log-spaced sample times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub per_decade: usize,
}

impl Default for TimeSpec {
    fn default() -> Self {
        Self {
            t_min: 0.1,
            t_max: 1e5,
            per_decade: 8,
        }
    }
}

impl TimeSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Err(Error::config(field, message));
        if !(self.t_min > 0.0) || !self.t_min.is_finite() {
            return bad("t_min", "must be positive and finite");
        }
        if !(self.t_max >= self.t_min) || !self.t_max.is_finite() {
            return bad("t_max", "must be finite and at least t_min");
        }
        if self.per_decade == 0 {
            return bad("per_decade", "must be positive");
        }
        Ok(())
    }

    /// `t_min · 10^{i/n}` up to `t_max`; the end point is always included.
    pub fn times(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let decades = (self.t_max / self.t_min).log10();
        let steps = (decades * self.per_decade as f64 - 1e-9).ceil().max(0.0) as usize;
        let mut out: Vec<f64> = (0..=steps)
            .map(|i| {
                let u = (i as f64 / self.per_decade as f64).min(decades);
                self.t_min * 10f64.powf(u)
            })
            .collect();
        if let Some(last) = out.last_mut() {
            *last = self.t_max;
        }
        out.dedup();
        Ok(out)
    }
}

/// Nonescape probability sampled in time, with the quadrature data that
/// backs each value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub region_radius: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub engine: Engine,
    /// Relative change of each value under panel halving.
    pub halving_change: Vec<f64>,
    /// Largest time whose value passed every reliability check.
    pub max_reliable_t: f64,
    /// Whether requested times beyond `max_reliable_t` were dropped.
    pub truncated: bool,
    pub truncation_reason: Option<String>,
    pub k_max: Option<f64>,
    pub parseval: Option<f64>,
    pub tail_estimate: Option<f64>,
}

impl DecayCurve {
    /// Curve from externally supplied samples.
    pub fn from_samples(region_radius: f64, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::domain("times and values differ in length"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("times must be strictly increasing"));
        }
        Ok(Self {
            region_radius,
            max_reliable_t: times.last().copied().unwrap_or(0.0),
            halving_change: vec![0.0; times.len()],
            times,
            values,
            engine: Engine::Spectral,
            truncated: false,
            truncation_reason: None,
            k_max: None,
            parseval: None,
            tail_estimate: None,
        })
    }

    /// `d ln P / d ln t` between neighbouring samples.
    pub fn local_exponents(&self) -> Vec<f64> {
        local_exponents(&self.times, &self.values)
    }
}

fn local_exponents(times: &[f64], values: &[f64]) -> Vec<f64> {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, p)| (p[1] / p[0]).ln() / (t[1] / t[0]).ln())
        .collect()
}

/// `P(t)` at the requested times from the spectral engine. Every value is
/// checked against a run with halved momentum panels; the curve stops at the
/// first time that fails the check or exceeds the panel budget.
pub fn decay_curve(
    state: &InitialState,
    potential: &Potential,
    region_radius: f64,
    times: &TimeSpec,
    spec: KGridSpec,
) -> Result<DecayCurve> {
    let decomp = decompose(state, potential, spec)?;
    decay_curve_from(&decomp, region_radius, &times.times()?)
}

/// Spectral decay curve of an existing decomposition.
pub fn decay_curve_from(
    decomp: &SpectralDecomposition,
    region_radius: f64,
    times: &[f64],
) -> Result<DecayCurve> {
    let grid = decomp.state().grid();
    if !(region_radius > 0.0) || region_radius > grid.r_max() {
        return Err(Error::domain(format!(
            "region radius {region_radius} must lie in (0, {}]",
            grid.r_max()
        )));
    }
    let fine = decomp.refined(2);
    let samples: Vec<Result<(f64, f64)>> = times
        .par_iter()
        .map(|&t| {
            let p = nonescape(&decomp.propagate_to(t, region_radius)?, region_radius)?;
            let q = nonescape(&fine.propagate_to(t, region_radius)?, region_radius)?;
            let change = if q == p { 0.0 } else { ((p - q) / q).abs() };
            Ok((q, change))
        })
        .collect();
    let mut curve = DecayCurve {
        region_radius,
        times: Vec::new(),
        values: Vec::new(),
        engine: Engine::Spectral,
        halving_change: Vec::new(),
        max_reliable_t: 0.0,
        truncated: false,
        truncation_reason: None,
        k_max: Some(decomp.k_max()),
        parseval: Some(decomp.parseval()),
        tail_estimate: Some(decomp.tail_estimate()).filter(|v| v.is_finite()),
    };
    for (&t, sample) in times.iter().zip(samples) {
        let reason = match sample {
            Ok((p, change)) if change < HALVING_TOLERANCE && p.is_finite() => {
                curve.times.push(t);
                curve.values.push(p);
                curve.halving_change.push(change);
                curve.max_reliable_t = t;
                continue;
            }
            Ok((_, change)) => format!(
                "panel halving changes P({t:e}) by {change:.3e} relative, above {HALVING_TOLERANCE:e}"
            ),
            Err(e @ Error::QuadratureBudget { .. }) => e.to_string(),
            Err(e) => return Err(e),
        };
        curve.truncated = true;
        curve.truncation_reason = Some(reason);
        break;
    }
    Ok(curve)
}

/// `P(t)` from the grid engine, stepping once through all requested times.
/// Times past the boundary-safe window truncate the curve.
pub fn decay_curve_grid(
    state: &InitialState,
    potential: &Potential,
    region_radius: f64,
    times: &[f64],
    dt: f64,
) -> Result<DecayCurve> {
    let safe = crate::evolve::grid_safe_time(state)?;
    let kept: Vec<f64> = times.iter().copied().filter(|&t| t <= safe).collect();
    let snapshots = propagate_grid_series(state, potential, &kept, dt)?;
    let values = snapshots
        .iter()
        .map(|w| nonescape(w, region_radius))
        .collect::<Result<Vec<f64>>>()?;
    let truncated = kept.len() < times.len();
    Ok(DecayCurve {
        region_radius,
        max_reliable_t: kept.last().copied().unwrap_or(0.0),
        halving_change: vec![0.0; kept.len()],
        times: kept,
        values,
        engine: Engine::Grid,
        truncated,
        truncation_reason: truncated.then(|| {
            Error::BoundaryContamination {
                t: times[times.len() - 1],
                t_safe: safe,
            }
            .to_string()
        }),
        k_max: None,
        parseval: None,
        tail_estimate: None,
    })
}

/// Least-squares power law `P ≈ e^b t^s` over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub window: (f64, f64),
    pub exponent: f64,
    pub intercept: f64,
    /// RMS residual of `ln P` about the fitted line.
    pub residual: f64,
    pub local_exponents: Vec<f64>,
    pub unstable: bool,
    pub samples: usize,
}

/// Default window: the last `1.5` decades of the curve.
pub fn default_window(curve: &DecayCurve) -> Option<(f64, f64)> {
    let hi = *curve.times.last()?;
    Some((hi / 10f64.powf(DEFAULT_WINDOW_DECADES) * (1.0 - 1e-12), hi))
}

/// Slope of `ln P` against `ln t` over `window` (default: last 1.5 decades).
pub fn fit_exponent(curve: &DecayCurve, window: Option<(f64, f64)>) -> Result<ExponentFit> {
    let window = match window {
        Some(w) => w,
        None => default_window(curve).ok_or_else(|| Error::domain("empty decay curve"))?,
    };
    if !(window.0 < window.1) {
        return Err(Error::domain(format!(
            "fit window ({}, {}) is empty",
            window.0, window.1
        )));
    }
    let (ts, ps): (Vec<f64>, Vec<f64>) = curve
        .times
        .iter()
        .zip(&curve.values)
        .filter(|(&t, _)| t >= window.0 && t <= window.1)
        .map(|(&t, &p)| (t, p))
        .unzip();
    if ts.len() < 8 {
        return Err(Error::domain(format!(
            "fit window ({}, {}) holds {} samples, at least 8 are needed",
            window.0,
            window.1,
            ts.len()
        )));
    }
    if let Some((t, p)) = ts.iter().zip(&ps).find(|(_, &p)| !(p > 0.0)) {
        return Err(Error::domain(format!(
            "P({t:e}) = {p:e} is not positive; the quadrature noise floor has been reached"
        )));
    }
    let x: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = ps.iter().map(|p| p.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let residual = (x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - intercept - exponent * a).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let local = local_exponents(&ts, &ps);
    let spread = local.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - local.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ExponentFit {
        window,
        exponent,
        intercept,
        residual,
        local_exponents: local,
        unstable: spread > INSTABILITY_SPREAD,
        samples: ts.len(),
    })
}

/// Outcome of one coupling in a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub coupling: f64,
    pub fit: Option<ExponentFit>,
    pub bound_states_removed: usize,
    pub max_reliable_t: Option<f64>,
    pub truncated: bool,
    pub error: Option<String>,
}

/// Decay exponent for each coupling of a family. Bound components are
/// projected out first; failures are recorded per point.
pub fn scan_coupling(
    family: &PotentialFamily,
    couplings: &[f64],
    state: &InitialState,
    region_radius: f64,
    times: &TimeSpec,
    window: Option<(f64, f64)>,
    spec: KGridSpec,
) -> Result<Vec<ScanPoint>> {
    let ts = times.times()?;
    Ok(couplings
        .par_iter()
        .map(|&coupling| {
            let mut point = ScanPoint {
                coupling,
                fit: None,
                bound_states_removed: 0,
                max_reliable_t: None,
                truncated: false,
                error: None,
            };
            let run = |point: &mut ScanPoint| -> Result<ExponentFit> {
                let potential = family.at(coupling)?;
                let bound = find_bound_states(&potential, default_kappa_max(&potential))?;
                point.bound_states_removed = bound.len();
                let projected;
                let s = if bound.is_empty() {
                    state
                } else {
                    projected = project_out_bound_states(state, &bound)?;
                    &projected
                };
                let decomp = decompose(s, &potential, spec)?;
                let curve = decay_curve_from(&decomp, region_radius, &ts)?;
                point.max_reliable_t = Some(curve.max_reliable_t);
                point.truncated = curve.truncated;
                fit_exponent(&curve, window)
            };
            match run(&mut point) {
                Ok(fit) => point.fit = Some(fit),
                Err(e) => point.error = Some(e.to_string()),
            }
            point
        })
        .collect())
}

/// `lim_{k→0} c(k)/k` with `c(k) = k C(k)/|f(k)|`, by Richardson
/// extrapolation in `k²` from a halving sequence of small momenta.
pub fn small_k_slope(state: &InitialState, potential: &Potential) -> Result<f64> {
    let profile = StateProfile::new(state, potential);
    let mut bessel = vec![Complex64::new(0.0, 0.0); LEGENDRE_DEGREE + 1];
    let k0 = 0.25 / profile.support().max(potential.range()).max(1e-3);
    const LEVELS: usize = 6;
    let mut table: Vec<f64> = (0..LEVELS)
        .map(|j| {
            let k = k0 / (1u64 << j) as f64;
            let reg = Regular::new(potential, Complex64::new(k, 0.0));
            profile.overlap(&reg, &mut bessel).re / reg.jost_product().re.sqrt()
        })
        .collect();
    if table.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(
            "small-momentum coefficients are singular (zero-energy resonance)",
        ));
    }
    for level in 1..LEVELS {
        let factor = 4f64.powi(level as i32);
        for j in (level..LEVELS).rev() {
            table[j] = (factor * table[j] - table[j - 1]) / (factor - 1.0);
        }
    }
    Ok(table[LEVELS - 1])
}

/// Normalized `state_a − α state_b` whose coefficient has vanishing slope at
/// `k = 0`, so the leading small-momentum term of `c(k)` is cubic.
pub fn engineer_vanishing_moment(
    state_a: &InitialState,
    state_b: &InitialState,
    potential: &Potential,
) -> Result<InitialState> {
    let sa = small_k_slope(state_a, potential)?;
    let sb = small_k_slope(state_b, potential)?;
    let scale = sa.abs().max(sb.abs());
    if !(scale > 0.0) {
        return Err(Error::DegenerateCombination(
            "both states already have vanishing slope at k = 0".into(),
        ));
    }
    if sb.abs() < 1e-12 * scale {
        return Err(Error::DegenerateCombination(
            "the second state has no slope at k = 0 to cancel with".into(),
        ));
    }
    let alpha = sa / sb;
    let residual = {
        let diff = state_a
            .samples()
            .iter()
            .zip(state_b.samples())
            .map(|(a, b)| (a - alpha * b).powi(2))
            .collect::<Vec<f64>>();
        state_a.grid().integrate(&diff).max(0.0).sqrt()
    };
    if residual < 1e-8 {
        return Err(Error::DegenerateCombination(format!(
            "the states are proportional (α = {alpha}, residual norm {residual:e})"
        )));
    }
    state_a.combine(1.0, state_b, -alpha)
}
