//! Time evolution of initial states.
//!
//! The spectral engine writes
//! `Ψ(r,t) = (2/π) ∫₀^∞ e^{-ik²t} k² C(k) φ(k,r) / (f(k) f(-k)) dk + Σ_b β_b e^{iκ_b² t} u_b(r)`
//! with `C(k) = ∫ φ(k,r) Ψ(r,0) dr`. The integrand is analytic in `k`, so for
//! `t > 0` the real half-line is deformed into the fourth quadrant along a
//! path `k = x - iY(x)` that stays clear of every zero of `f` (checked by the
//! argument principle). Along the path `|e^{-ik²t}| = e^{-2xYt}`, so each
//! fixed `t` is an absolutely convergent, cancellation-free quadrature. Near
//! the origin the path follows the ray `arg k = -π/4`, where `e^{-ik²t}` is a
//! real Gaussian; this is what keeps very large times accurate.
//!
//! The grid engine is a Crank–Nicolson scheme on the uniform radial grid with
//! hard walls at both ends.

use std::f64::consts::{FRAC_2_PI, PI};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InitialState, Potential, RadialGrid};
use crate::numerics::{legendre_all, simpson, spherical_bessel_j, GaussLegendre};
use crate::scattering::{
    bound_overlap, default_kappa_max, find_bound_states, trig_pair, winding_number, BoundState,
    Regular,
};

pub(crate) const LEGENDRE_DEGREE: usize = 24;
const PROFILE_NODES: usize = 40;
const PARALLEL_BLOCKS: usize = 64;

/// Quadrature settings for the momentum integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KGridSpec {
    /// Upper momentum cutoff; chosen from the Parseval tail when absent.
    pub k_max: Option<f64>,
    /// Parseval mass allowed beyond the automatic cutoff.
    pub tail_tolerance: f64,
    /// Largest panel width along the momentum path.
    pub panel_width: f64,
    /// Gauss–Legendre nodes per panel.
    pub order: usize,
    /// Every panel width is divided by this factor; 2 halves the spacing.
    pub refinement: usize,
    /// Maximum number of panels for a single time.
    pub panel_budget: usize,
    /// The path ends once `|e^{-ik²t}|` drops below `e^{-damping}`.
    pub damping: f64,
    /// Hard ceiling for the automatic cutoff.
    pub k_ceiling: f64,
}

impl Default for KGridSpec {
    fn default() -> Self {
        Self {
            k_max: None,
            tail_tolerance: 1e-12,
            panel_width: 1.0,
            order: 12,
            refinement: 1,
            panel_budget: 4_000_000,
            damping: 80.0,
            k_ceiling: 2e5,
        }
    }
}

impl KGridSpec {
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            refinement: self.refinement * factor,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::config(format!("tolerances.{f}"), m));
        if let Some(k) = self.k_max {
            if !(k > 0.0) {
                return bad("k_max", "must be positive");
            }
        }
        if !(self.tail_tolerance > 0.0) {
            return bad("tail_tolerance", "must be positive");
        }
        if !(self.panel_width > 0.0) {
            return bad("panel_width", "must be positive");
        }
        if self.order < 2 {
            return bad("order", "needs at least 2 nodes");
        }
        if self.refinement == 0 {
            return bad("refinement", "must be at least 1");
        }
        if !(self.damping > 0.0) || !(self.k_ceiling > 0.0) {
            return bad("damping", "damping and k_ceiling must be positive");
        }
        Ok(())
    }
}

/// Piecewise Legendre expansion of the compact part of a state, with panels
/// aligned to the potential pieces so that `φ` is a single trigonometric
/// pair on each panel.
#[derive(Debug, Clone)]
pub(crate) struct StateProfile {
    panels: Vec<ProfilePanel>,
    rule: GaussLegendre,
    support: f64,
}

#[derive(Debug, Clone)]
struct ProfilePanel {
    lo: f64,
    hi: f64,
    piece: usize,
    coeffs: Vec<f64>,
    values: Vec<f64>,
}

impl StateProfile {
    pub(crate) fn new(state: &InitialState, potential: &Potential) -> Self {
        let rule = GaussLegendre::new(PROFILE_NODES);
        let support = state.support();
        let mut panels = Vec::new();
        if support > 0.0 {
            let mut cuts: Vec<f64> = potential
                .breakpoints()
                .into_iter()
                .chain(state.compact_breakpoints())
                .filter(|&r| r > 0.0 && r < support)
                .collect();
            cuts.push(0.0);
            cuts.push(support);
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let scale = (0..=200)
                .map(|i| state.compact_value(support * i as f64 / 200.0).abs())
                .fold(1e-300, f64::max);
            let pieces = potential.pieces();
            for w in cuts.windows(2) {
                let n = ((w[1] - w[0]) / 0.5).ceil().max(1.0) as usize;
                let h = (w[1] - w[0]) / n as f64;
                let piece = if w[0] >= potential.range() {
                    pieces.len()
                } else {
                    pieces.partition_point(|p| p.end <= w[0])
                };
                for i in 0..n {
                    let lo = w[0] + i as f64 * h;
                    let hi = if i + 1 == n { w[1] } else { lo + h };
                    Self::fit(state, &rule, lo, hi, piece, scale, 0, &mut panels);
                }
            }
        }
        Self {
            panels,
            rule,
            support,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn fit(
        state: &InitialState,
        rule: &GaussLegendre,
        lo: f64,
        hi: f64,
        piece: usize,
        scale: f64,
        depth: usize,
        out: &mut Vec<ProfilePanel>,
    ) {
        let c = 0.5 * (lo + hi);
        let m = 0.5 * (hi - lo);
        let values: Vec<f64> = rule
            .nodes
            .iter()
            .map(|&x| state.compact_value(c + m * x))
            .collect();
        let mut coeffs = vec![0.0; LEGENDRE_DEGREE + 1];
        let mut p = vec![0.0; LEGENDRE_DEGREE + 1];
        for ((&x, &w), &v) in rule.nodes.iter().zip(&rule.weights).zip(&values) {
            legendre_all(LEGENDRE_DEGREE, x, &mut p);
            for (a, pn) in coeffs.iter_mut().zip(&p) {
                *a += w * v * pn;
            }
        }
        for (n, a) in coeffs.iter_mut().enumerate() {
            *a *= (2 * n + 1) as f64 / 2.0;
        }
        let tail = coeffs[LEGENDRE_DEGREE - 2..]
            .iter()
            .fold(0.0_f64, |acc, a| acc.max(a.abs()));
        if tail > 1e-13 * scale && depth < 8 {
            Self::fit(state, rule, lo, c, piece, scale, depth + 1, out);
            Self::fit(state, rule, c, hi, piece, scale, depth + 1, out);
        } else {
            out.push(ProfilePanel {
                lo,
                hi,
                piece,
                coeffs,
                values,
            });
        }
    }

    pub(crate) fn support(&self) -> f64 {
        self.support
    }

    /// `C(k) = ∫ φ(k,r) Ψ_compact(r) dr`.
    pub(crate) fn overlap(&self, reg: &Regular, bessel: &mut [Complex64]) -> Complex64 {
        let mut total = Complex64::new(0.0, 0.0);
        for p in &self.panels {
            let (start, u, du, z) = reg.piece_data(p.piece);
            let q = z.sqrt();
            let m = 0.5 * (p.hi - p.lo);
            let c = 0.5 * (p.hi + p.lo);
            let omega = q * m;
            if omega.norm() < 2.0 {
                let (cc, sc) = trig_pair(z, c - start);
                let uc = u * cc + du * sc;
                let duc = -z * sc * u + cc * du;
                let n = self.rule.len();
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..n / 2 {
                    let x = self.rule.nodes[n - 1 - i];
                    let (cx, sx) = trig_pair(z, m * x);
                    let plus = uc * cx + duc * sx;
                    let minus = uc * cx - duc * sx;
                    acc +=
                        self.rule.weights[i] * (p.values[n - 1 - i] * plus + p.values[i] * minus);
                }
                if n % 2 == 1 {
                    acc += self.rule.weights[n / 2] * p.values[n / 2] * uc;
                }
                total += acc * m;
            } else {
                spherical_bessel_j(omega, LEGENDRE_DEGREE, bessel);
                let mut even = Complex64::new(0.0, 0.0);
                let mut odd = Complex64::new(0.0, 0.0);
                for (n, a) in p.coeffs.iter().enumerate() {
                    let sign = if (n / 2) % 2 == 0 { 1.0 } else { -1.0 };
                    if n % 2 == 0 {
                        even += sign * a * bessel[n];
                    } else {
                        odd += sign * a * bessel[n];
                    }
                }
                let theta = q * (c - start);
                let (ct, st) = (theta.cos(), theta.sin());
                let icos = 2.0 * m * (ct * even - st * odd);
                let isin = 2.0 * m * (st * even + ct * odd);
                total += u * icos + du * isin / q;
            }
        }
        total
    }
}

/// Depth profile of the deformed momentum path. The momentum axis is split
/// into blocks `[0, 4/a], [4/a, 8/a], ...`; on block `j` zeros of `f` are
/// excluded from `0 < Im(-k) < min(2x, s_j p(x))` with
/// `p(x) = (1 + ln(1 + a x))/(2a)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PathShape {
    range: f64,
    edges: Vec<f64>,
    scales: Vec<f64>,
}

impl PathShape {
    fn new(range: f64) -> Self {
        Self {
            range,
            edges: vec![0.0],
            scales: Vec::new(),
        }
    }

    fn profile(&self, x: f64) -> f64 {
        0.5 * (1.0 + (1.0 + self.range * x).ln()) / self.range
    }

    fn block(&self, x: f64) -> usize {
        let j = self.edges.partition_point(|&e| e <= x);
        j.saturating_sub(1).min(self.scales.len().saturating_sub(1))
    }

    /// Certified scale of the block holding `x`.
    fn scale_at(&self, x: f64) -> f64 {
        self.scales[self.block(x)]
    }

    /// Continuous scale below `scale_at`, linear across each block.
    fn smooth_scale(&self, x: f64) -> f64 {
        let j = self.block(x);
        let s = &self.scales;
        let left = if j > 0 { s[j - 1].min(s[j]) } else { s[j] };
        let right = if j + 1 < s.len() {
            s[j].min(s[j + 1])
        } else {
            s[j]
        };
        let (lo, hi) = (self.edges[j], self.edges[j + 1]);
        let u = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        left + (right - left) * u
    }

    /// Depth of the region certified free of zeros.
    fn free_depth(&self, x: f64) -> f64 {
        (2.0 * x).min(self.scale_at(x) * self.profile(x))
    }

    /// End of the block holding `x`.
    fn block_end(&self, x: f64) -> f64 {
        let end = self.edges[self.block(x) + 1];
        if end > x {
            end
        } else {
            f64::INFINITY
        }
    }

    fn boundary(&self, lo: f64, hi: f64, scale: f64, step: f64) -> Vec<Complex64> {
        let lo = lo.max(1e-7 / self.range);
        let depth = |x: f64| (2.0 * x).min(scale * self.profile(x));
        let mut v = vec![Complex64::new(lo, 0.0), Complex64::new(hi, 0.0)];
        let n = ((hi - lo) / step).ceil().max(1.0) as usize;
        for i in (0..=n).rev() {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            v.push(Complex64::new(x, -depth(x)));
        }
        v
    }

    /// Adds blocks until `x_hi` is covered, each with the largest scale in
    /// `2^{-j/2}` whose region has no zeros.
    fn extend(&mut self, potential: &Potential, x_hi: f64) -> Result<()> {
        let f = |k: Complex64| crate::scattering::jost(potential, k);
        let step = (0.05 / self.range).min(0.1);
        while self.scales.is_empty() || *self.edges.last().unwrap_or(&0.0) < x_hi {
            let lo = *self.edges.last().unwrap_or(&0.0);
            let hi = if lo == 0.0 {
                4.0 / self.range
            } else {
                2.0 * lo
            };
            let mut scale = 1.0;
            loop {
                if winding_number(&f, &self.boundary(lo, hi, scale, step), step) == Some(0) {
                    break;
                }
                scale /= std::f64::consts::SQRT_2;
                if scale < 1e-9 {
                    return Err(Error::domain(
                        "a zero of the Jost function lies too close to the real momentum axis",
                    ));
                }
            }
            self.edges.push(hi);
            self.scales.push(scale);
        }
        Ok(())
    }
}

/// Spectral representation of an initial state in the continuum basis of a
/// potential plus its bound-state components.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    potential: Potential,
    state: InitialState,
    profile: StateProfile,
    spec: KGridSpec,
    shape: PathShape,
    k_max: f64,
    tail_estimate: f64,
    bound: Vec<(f64, BoundState)>,
    k_nodes: Vec<f64>,
    k_weights: Vec<f64>,
    coefficients: Vec<f64>,
    parseval: f64,
}

/// Engine that produced a wavefunction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Spectral,
    Grid,
}

/// `Ψ(r, t)` sampled on a radial grid.
#[derive(Debug, Clone)]
pub struct WaveFunction {
    pub t: f64,
    pub grid: RadialGrid,
    pub samples: Vec<Complex64>,
    pub engine: Engine,
}

impl WaveFunction {
    /// `∫ |Ψ|² dr` over the grid by Simpson's rule.
    pub fn norm(&self) -> f64 {
        self.grid.integrate(&self.density())
    }

    /// `h Σ |Ψ_i|²`, the quantity conserved exactly by the grid engine.
    pub fn discrete_norm(&self) -> f64 {
        self.grid.spacing() * self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    pub fn density(&self) -> Vec<f64> {
        self.samples.iter().map(|z| z.norm_sqr()).collect()
    }

    /// L² distance over the nodes both grids share, which must coincide.
    pub fn l2_distance(&self, other: &WaveFunction) -> Result<f64> {
        let h = self.grid.spacing();
        if (h - other.grid.spacing()).abs() > 1e-12 * h {
            return Err(Error::domain("wavefunctions live on different grids"));
        }
        let n = self.samples.len().min(other.samples.len());
        let d: Vec<f64> = self.samples[..n]
            .iter()
            .zip(&other.samples[..n])
            .map(|(a, b)| (a - b).norm_sqr())
            .collect();
        Ok(simpson(&d, h).max(0.0).sqrt())
    }
}

/// Automatic cutoff from geometric tail extrapolation of block masses over
/// `[K/2, K]`.
fn tail_cutoff<F: FnMut(f64, f64) -> Result<f64>>(
    mut block_mass: F,
    k0: f64,
    tol: f64,
    ceiling: f64,
) -> Result<(f64, f64)> {
    let mut hi = k0;
    let mut prev = block_mass(0.0, hi)?;
    loop {
        let next_hi = (2.0 * hi).min(ceiling);
        let m = block_mass(hi, next_hi)?;
        let ratio = if prev > 0.0 { m / prev } else { 0.0 };
        hi = next_hi;
        let tail = if ratio < 0.9 {
            m * ratio / (1.0 - ratio)
        } else {
            f64::INFINITY
        };
        if tail < tol || hi >= ceiling {
            return Ok((hi, tail));
        }
        prev = m;
    }
}

/// Largest momentum carried by the free-space spectrum of the compact part,
/// in the sense that less than `1e-10` of the norm lies beyond it.
pub fn resolvable_momentum(state: &InitialState) -> Result<f64> {
    let free = Potential::free(state.support().max(1e-3))?;
    let profile = StateProfile::new(state, &free);
    let width = (0.25_f64).min(3.0 / profile.support().max(1e-3));
    let rule = GaussLegendre::new(12);
    let mass = |lo: f64, hi: f64| -> Result<f64> {
        let n = ((hi - lo) / width).ceil().max(1.0) as usize;
        let h = (hi - lo) / n as f64;
        let mut bessel = vec![Complex64::new(0.0, 0.0); LEGENDRE_DEGREE + 1];
        let mut s = 0.0;
        for i in 0..n {
            let a = lo + i as f64 * h;
            s += rule.integrate(a, a + h, |k| {
                let reg = Regular::new(&free, Complex64::new(k, 0.0));
                let c = k * profile.overlap(&reg, &mut bessel).re;
                FRAC_2_PI * c * c
            });
        }
        Ok(s)
    };
    let (k, _) = tail_cutoff(mass, 4.0 / profile.support().max(1e-3), 1e-10, 1e6)?;
    Ok(k)
}

impl SpectralDecomposition {
    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn state(&self) -> &InitialState {
        &self.state
    }

    pub fn spec(&self) -> &KGridSpec {
        &self.spec
    }

    /// Real-axis quadrature nodes and weights.
    pub fn k_grid(&self) -> (&[f64], &[f64]) {
        (&self.k_nodes, &self.k_weights)
    }

    /// `c(k) = ∫ ψ_k(r) Ψ(r,0) dr` at the k-grid nodes.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// `(2/π) Σ w_k c(k)²`.
    pub fn parseval(&self) -> f64 {
        self.parseval
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    /// Extrapolated Parseval mass beyond `k_max`.
    pub fn tail_estimate(&self) -> f64 {
        self.tail_estimate
    }

    /// Bound states of the potential with their overlaps `⟨u_b, Ψ⟩`.
    pub fn bound_components(&self) -> &[(f64, BoundState)] {
        &self.bound
    }

    /// Continuum eigenfunction `ψ_k` of node `i` sampled on a grid.
    pub fn basis_function(&self, i: usize, grid: &RadialGrid) -> Vec<f64> {
        let k = self.k_nodes[i];
        let reg = Regular::new(&self.potential, Complex64::new(k, 0.0));
        let scale = k / reg.jost_product().re.sqrt();
        grid.nodes().map(|r| scale * reg.value(r).re).collect()
    }

    /// Coefficient `c(k)` at an arbitrary real momentum.
    pub fn coefficient_at(&self, k: f64) -> f64 {
        let mut bessel = vec![Complex64::new(0.0, 0.0); LEGENDRE_DEGREE + 1];
        let reg = Regular::new(&self.potential, Complex64::new(k, 0.0));
        let c = self.profile.overlap(&reg, &mut bessel);
        k * c.re / reg.jost_product().re.sqrt()
    }

    /// Total norm at time `t`: continuum Parseval sum of `e^{-ik²t} c(k)` plus
    /// bound-state weights.
    pub fn norm_at(&self, t: f64) -> f64 {
        let cont: f64 = self
            .k_nodes
            .iter()
            .zip(&self.k_weights)
            .zip(&self.coefficients)
            .map(|((&k, &w), &c)| {
                let phase = Complex64::new(0.0, -k * k * t).exp();
                FRAC_2_PI * w * (phase * c).norm_sqr()
            })
            .sum();
        let bound: f64 = self
            .bound
            .iter()
            .map(|(beta, b)| {
                (Complex64::new(0.0, b.kappa() * b.kappa() * t).exp() * beta).norm_sqr()
            })
            .sum();
        (cont + bound).sqrt()
    }

    fn length_scale(&self, r_hi: f64) -> f64 {
        (r_hi + self.profile.support()).max(1e-3)
    }

    fn path_depth(&self, x: f64, t: f64, r_hi: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let l = self.length_scale(r_hi);
        let x_g = l / (2.0 * t);
        let cap = 1.0 / l + (x - x_g).max(0.0);
        x.min(0.5 * self.shape.smooth_scale(x) * self.shape.profile(x))
            .min(cap)
    }

    /// Panel end points `x_j` along the path for time `t`, resolving the
    /// solution on `[0, r_hi]`.
    fn x_edges(&self, t: f64, r_hi: f64, freq: f64, refinement: usize) -> Result<Vec<f64>> {
        let spec = &self.spec;
        let x_end = if t == 0.0 {
            self.k_max
        } else {
            let damp = |x: f64| 2.0 * x * self.path_depth(x, t, r_hi) * t;
            let mut hi = 1e-6;
            while damp(hi) < spec.damping && hi < self.k_max {
                hi *= 2.0;
            }
            if hi >= self.k_max {
                self.k_max
            } else {
                let mut lo = 0.5 * hi;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if damp(mid) < spec.damping {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        };
        march(
            &self.shape,
            spec,
            |x| self.path_depth(x, t, r_hi),
            0.0,
            x_end,
            t,
            freq,
            refinement,
        )
    }

    /// Quadrature nodes `(k, w)` along the path for time `t`.
    fn path_nodes(
        &self,
        t: f64,
        r_hi: f64,
        refinement: usize,
    ) -> Result<Vec<(Complex64, Complex64)>> {
        let freq = self.length_scale(r_hi) + 2.0 * self.potential.range();
        let edges = self.x_edges(t, r_hi, freq, refinement)?;
        let rule = GaussLegendre::new(self.spec.order);
        let point = |x: f64| Complex64::new(x, -self.path_depth(x, t, r_hi));
        let mut nodes = Vec::with_capacity((edges.len() - 1) * rule.len());
        for w in edges.windows(2) {
            let (a, b) = (point(w[0]), point(w[1]));
            let c = 0.5 * (a + b);
            let m = 0.5 * (b - a);
            for (&x, &wt) in rule.nodes.iter().zip(&rule.weights) {
                nodes.push((c + m * x, m * wt));
            }
        }
        Ok(nodes)
    }

    fn propagate(&self, t: f64, r_hi: f64, refinement: usize) -> Result<WaveFunction> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::domain(format!(
                "time must be finite and non-negative, got {t}"
            )));
        }
        let grid = if r_hi >= self.state.grid().r_max() {
            *self.state.grid()
        } else {
            let g = self.state.grid();
            let idx = (g.last_index_at_or_below(r_hi) + 1).min(g.n_points() - 1);
            RadialGrid::new(g.r(idx), idx + 1)?
        };
        let nodes = self.path_nodes(t, grid.r_max(), refinement)?;
        let n_r = grid.n_points();
        let chunk = nodes.len().div_ceil(PARALLEL_BLOCKS).max(1);
        let partials: Vec<Vec<Complex64>> = nodes
            .par_chunks(chunk)
            .map(|block| {
                let mut acc = vec![Complex64::new(0.0, 0.0); n_r];
                let mut bessel = vec![Complex64::new(0.0, 0.0); LEGENDRE_DEGREE + 1];
                for &(k, w) in block {
                    let reg = Regular::new(&self.potential, k);
                    let c = self.profile.overlap(&reg, &mut bessel);
                    let phase = (Complex64::new(0.0, -1.0) * k * k * t).exp();
                    let factor = FRAC_2_PI * w * phase * k * k * c / reg.jost_product();
                    if factor.norm() == 0.0 || !factor.is_finite() {
                        continue;
                    }
                    accumulate_regular(&reg, &self.potential, &grid, factor, &mut acc);
                }
                acc
            })
            .collect();
        let mut samples = vec![Complex64::new(0.0, 0.0); n_r];
        for part in &partials {
            for (s, p) in samples.iter_mut().zip(part) {
                *s += p;
            }
        }
        for (beta, b) in &self.bound {
            let phase = Complex64::new(0.0, b.kappa() * b.kappa() * t).exp() * beta;
            for (s, r) in samples.iter_mut().zip(grid.nodes()) {
                *s += phase * b.value(r);
            }
        }
        Ok(WaveFunction {
            t,
            grid,
            samples,
            engine: Engine::Spectral,
        })
    }

    /// `Ψ(r, t)` on the leading grid nodes covering `[0, r_hi]`.
    pub fn propagate_to(&self, t: f64, r_hi: f64) -> Result<WaveFunction> {
        self.propagate(t, r_hi, self.spec.refinement)
    }

    /// Number of momentum panels used at time `t` for `[0, r_hi]`.
    pub fn panel_count(&self, t: f64, r_hi: f64) -> Result<usize> {
        let freq = self.length_scale(r_hi) + 2.0 * self.potential.range();
        Ok(self.x_edges(t, r_hi, freq, self.spec.refinement)?.len() - 1)
    }

    /// Same decomposition with every momentum panel split `factor` times.
    pub fn refined(&self, factor: usize) -> Self {
        let mut d = self.clone();
        d.spec = self.spec.refined(factor);
        d
    }
}

/// Panel edges from `lo` to `hi`; starting at zero adds the threshold
/// panel `[0, x_min]` and grows geometrically from there.
#[allow(clippy::too_many_arguments)]
fn march(
    shape: &PathShape,
    spec: &KGridSpec,
    depth: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    t: f64,
    freq: f64,
    refinement: usize,
) -> Result<Vec<f64>> {
    let refine = refinement as f64;
    let mut edges = vec![lo];
    if lo == 0.0 {
        let x_min = 1e-10 / (shape.range * (1.0 + t.sqrt()));
        edges.push(x_min.min(0.5 * hi));
    }
    let mut x = *edges.last().unwrap_or(&lo);
    while x < hi {
        let y = depth(x);
        let clearance = (shape.free_depth(x) - y).max(1e-300);
        let mut dx = spec.panel_width.min(6.0 / freq).min(clearance).min(0.5 * x);
        if t > 0.0 {
            dx = dx.min(PI / (8.0 * std::f64::consts::SQRT_2 * x * t));
        }
        dx /= refine;
        x = (x + dx).min(hi).min(shape.block_end(x));
        if hi - x < 1e-3 * dx {
            x = hi;
        }
        edges.push(x);
        if edges.len() > spec.panel_budget + 2 {
            return Err(Error::QuadratureBudget {
                t,
                panels: estimate_panels(x, hi, edges.len()),
                budget: spec.panel_budget,
            });
        }
    }
    Ok(edges)
}

fn estimate_panels(x: f64, x_end: f64, so_far: usize) -> usize {
    if x <= 0.0 {
        return so_far;
    }
    let ratio = (x_end / x).max(1.0);
    (so_far as f64 * ratio * ratio).min(usize::MAX as f64 / 2.0) as usize
}

/// Adds `factor · φ(k, r_i)` at every grid node, stepping through each piece
/// with the one-step transfer matrix and resynchronizing periodically.
fn accumulate_regular(
    reg: &Regular,
    potential: &Potential,
    grid: &RadialGrid,
    factor: Complex64,
    out: &mut [Complex64],
) {
    let pieces = potential.pieces();
    let h = grid.spacing();
    let n = grid.n_points();
    let mut i = 0;
    for j in 0..=pieces.len() {
        if i >= n {
            break;
        }
        let (start, u0, du0, z) = reg.piece_data(j);
        let end = if j < pieces.len() {
            pieces[j].end
        } else {
            f64::INFINITY
        };
        let (ch, sh) = trig_pair(z, h);
        let (mut u, mut du) = (u0, du0);
        let mut count = 0usize;
        while i < n && grid.r(i) < end {
            let r = grid.r(i);
            if count.is_multiple_of(64) {
                let (c, s) = trig_pair(z, r - start);
                u = u0 * c + du0 * s;
                du = -z * s * u0 + c * du0;
            }
            out[i] += factor * u;
            let nu = u * ch + du * sh;
            du = -z * sh * u + ch * du;
            u = nu;
            i += 1;
            count += 1;
        }
    }
}

/// Spectral decomposition of `state` in the eigenbasis of `potential`.
pub fn decompose(
    state: &InitialState,
    potential: &Potential,
    spec: KGridSpec,
) -> Result<SpectralDecomposition> {
    spec.validate()?;
    let bound_states = find_bound_states(potential, default_kappa_max(potential))?;
    let bound: Vec<(f64, BoundState)> = bound_states
        .into_iter()
        .map(|b| (bound_overlap(state, &b), b))
        .collect();
    let profile = StateProfile::new(state, potential);
    let a = potential.range();
    let mut shape = PathShape::new(a);
    let freq = (2.0 * profile.support() + 2.0 * a).max(1e-3);
    let rule = GaussLegendre::new(spec.order);
    let mut nodes: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut coeffs: Vec<f64> = Vec::new();
    let mut block = |lo: f64, hi: f64| -> Result<f64> {
        shape.extend(potential, hi)?;
        let edges = march(&shape, &spec, |_| 0.0, lo, hi, 0.0, freq, spec.refinement)?;
        let first = nodes.len();
        for w in edges.windows(2) {
            let c = 0.5 * (w[0] + w[1]);
            let m = 0.5 * (w[1] - w[0]);
            for (&x, &wt) in rule.nodes.iter().zip(&rule.weights) {
                nodes.push(c + m * x);
                weights.push(m * wt);
            }
        }
        let fresh: Vec<f64> = nodes[first..]
            .par_chunks(256)
            .flat_map_iter(|ks| {
                let mut bessel = vec![Complex64::new(0.0, 0.0); LEGENDRE_DEGREE + 1];
                ks.iter()
                    .map(|&k| {
                        let reg = Regular::new(potential, Complex64::new(k, 0.0));
                        let c = profile.overlap(&reg, &mut bessel).re;
                        k * c / reg.jost_product().re.sqrt()
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let mass = FRAC_2_PI
            * weights[first..]
                .iter()
                .zip(&fresh)
                .map(|(w, c)| w * c * c)
                .sum::<f64>();
        coeffs.extend(fresh);
        Ok(mass)
    };
    let (k_max, tail_estimate) = match spec.k_max {
        Some(k) => (k, block(0.0, k).map(|_| f64::NAN)?),
        None => {
            let support = profile.support().max(1e-3);
            tail_cutoff(
                &mut block,
                16.0 / support.min(a),
                spec.tail_tolerance,
                spec.k_ceiling,
            )?
        }
    };
    let mut decomp = SpectralDecomposition {
        potential: potential.clone(),
        state: state.clone(),
        profile,
        spec,
        shape,
        k_max,
        tail_estimate,
        bound,
        k_nodes: nodes,
        k_weights: weights,
        coefficients: coeffs,
        parseval: 0.0,
    };
    let parseval = FRAC_2_PI
        * decomp
            .k_weights
            .iter()
            .zip(&decomp.coefficients)
            .map(|(w, c)| w * c * c)
            .sum::<f64>();
    decomp.parseval = parseval;
    let deficit = 1.0 - parseval;
    const LIMIT: f64 = 1e-3;
    if deficit > LIMIT {
        return Err(Error::IncompleteBasis {
            deficit,
            limit: LIMIT,
        });
    }
    Ok(decomp)
}

/// `Ψ(r, t)` on the full grid of the decomposed state.
pub fn propagate_spectral(decomp: &SpectralDecomposition, t: f64) -> Result<WaveFunction> {
    decomp.propagate_to(t, decomp.state.grid().r_max())
}

/// Crank–Nicolson propagation on the state's grid with hard walls at `0`
/// and `r_max`; shells act as on-site terms `λ/h` at the nearest node.
pub fn propagate_grid(
    state: &InitialState,
    potential: &Potential,
    t: f64,
    dt: f64,
) -> Result<WaveFunction> {
    let mut out = propagate_grid_series(state, potential, &[t], dt)?;
    Ok(out.remove(0))
}

/// Grid propagation through increasing `times` in one sweep. Each interval
/// is split into `ceil(Δt/dt)` equal steps.
pub fn propagate_grid_series(
    state: &InitialState,
    potential: &Potential,
    times: &[f64],
    dt: f64,
) -> Result<Vec<WaveFunction>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::domain(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let mut prev = 0.0;
    for &t in times {
        if !(t >= prev) || !t.is_finite() {
            return Err(Error::domain(format!(
                "times must be finite, non-negative and non-decreasing, got {t}"
            )));
        }
        prev = t;
    }
    let t_safe = grid_safe_time(state)?;
    if let Some(&t) = times.iter().find(|&&t| t > t_safe) {
        return Err(Error::BoundaryContamination { t, t_safe });
    }
    let grid = *state.grid();
    let n = grid.n_points();
    let mut psi: Vec<Complex64> = state
        .samples()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    psi[0] = Complex64::new(0.0, 0.0);
    psi[n - 1] = Complex64::new(0.0, 0.0);
    let mut stepper: Option<CrankNicolson> = None;
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let span = t - now;
        let steps = (span / dt - 1e-9).ceil().max(0.0) as usize;
        if steps > 0 && n > 2 {
            let step = span / steps as f64;
            if stepper.as_ref().map(|s| s.dt) != Some(step) {
                stepper = Some(CrankNicolson::new(&grid, potential, step));
            }
            if let Some(s) = stepper.as_mut() {
                for _ in 0..steps {
                    s.step(&mut psi);
                }
            }
        }
        now = t;
        out.push(WaveFunction {
            t,
            grid,
            samples: psi.clone(),
            engine: Engine::Grid,
        });
    }
    Ok(out)
}

/// Latest time before flux reflected from the far wall can return to the
/// support of the state, using the discrete group-velocity bound `2/h` and
/// the state's resolvable momentum.
pub fn grid_safe_time(state: &InitialState) -> Result<f64> {
    let grid = state.grid();
    let support = state.support().max(grid.spacing());
    let k_res = resolvable_momentum(state)?;
    let v_max = (2.0 * k_res).min(2.0 / grid.spacing());
    Ok((2.0 * (grid.r_max() - support) / v_max).max(0.0))
}

struct CrankNicolson {
    dt: f64,
    diag: Vec<Complex64>,
    off: Complex64,
    rhs_diag: Vec<Complex64>,
    rhs_off: Complex64,
    c_prime: Vec<Complex64>,
    /// Reciprocal pivots of the forward sweep.
    denom: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl CrankNicolson {
    fn new(grid: &RadialGrid, potential: &Potential, dt: f64) -> Self {
        let n = grid.n_points();
        let h = grid.spacing();
        let m = n - 2;
        let mut h_diag: Vec<f64> = (1..n - 1)
            .map(|i| 2.0 / (h * h) + potential.value(grid.r(i)))
            .collect();
        for s in potential.shells() {
            let i = grid.nearest_index(s.radius);
            if i >= 1 && i <= m {
                h_diag[i - 1] += s.strength / h;
            }
        }
        let h_off = -1.0 / (h * h);
        let half = Complex64::new(0.0, 0.5 * dt);
        let diag: Vec<Complex64> = h_diag.iter().map(|&d| 1.0 + half * d).collect();
        let rhs_diag: Vec<Complex64> = h_diag.iter().map(|&d| 1.0 - half * d).collect();
        let off = half * h_off;
        let rhs_off = -half * h_off;
        let mut c_prime = vec![Complex64::new(0.0, 0.0); m];
        let mut denom = vec![Complex64::new(0.0, 0.0); m];
        for i in 0..m {
            denom[i] = if i == 0 {
                diag[0]
            } else {
                diag[i] - off * c_prime[i - 1]
            };
            c_prime[i] = off / denom[i];
        }
        for d in denom.iter_mut() {
            *d = d.inv();
        }
        Self {
            dt,
            diag,
            off,
            rhs_diag,
            rhs_off,
            c_prime,
            denom,
            scratch: vec![Complex64::new(0.0, 0.0); m],
        }
    }

    fn step(&mut self, psi: &mut [Complex64]) {
        let m = self.diag.len();
        let inner = &psi[1..m + 1];
        for i in 0..m {
            let left = if i > 0 {
                inner[i - 1]
            } else {
                Complex64::new(0.0, 0.0)
            };
            let right = if i + 1 < m {
                inner[i + 1]
            } else {
                Complex64::new(0.0, 0.0)
            };
            self.scratch[i] = self.rhs_diag[i] * inner[i] + self.rhs_off * (left + right);
        }
        for i in 0..m {
            let prev = if i > 0 {
                self.scratch[i - 1]
            } else {
                Complex64::new(0.0, 0.0)
            };
            self.scratch[i] = (self.scratch[i] - self.off * prev) * self.denom[i];
        }
        for i in (0..m.saturating_sub(1)).rev() {
            let next = self.scratch[i + 1];
            self.scratch[i] -= self.c_prime[i] * next;
        }
        psi[1..m + 1].copy_from_slice(&self.scratch);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_initial_state, StateFamily};

    /// `∫₀^R sin(kr) √(2/R) sin(nπr/R) dr` in closed form.
    fn sine_box_transform(n: u32, radius: f64, k: f64) -> f64 {
        let kn = n as f64 * PI / radius;
        let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
        (2.0 / radius).sqrt() * kn * sign * (k * radius).sin() / (k * k - kn * kn)
    }

    #[test]
    fn free_sine_box_coefficients_match_closed_form() {
        let grid = RadialGrid::new(2.0, 401).unwrap();
        let state = build_initial_state(
            StateFamily::SineBox {
                mode: 1,
                radius: 1.0,
            },
            grid,
        )
        .unwrap();
        let free = Potential::free(1.0).unwrap();
        let d = decompose(&state, &free, KGridSpec::default()).unwrap();
        for k in [1e-4, 0.3, 2.0, PI + 1e-3, 7.5, 40.0, 900.0] {
            let exact = sine_box_transform(1, 1.0, k);
            assert!((d.coefficient_at(k) - exact).abs() < 1e-13, "k = {k}");
        }
        assert!((d.parseval() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn filon_and_direct_overlaps_agree() {
        // The same panel evaluated both ways around |ω| = 2.
        let grid = RadialGrid::new(1.0, 101).unwrap();
        let state = build_initial_state(
            StateFamily::GaussianBump {
                center: 0.5,
                width: 0.1,
                radius: 1.0,
            },
            grid,
        )
        .unwrap();
        let p = Potential::delta_shell(3.0, 0.7).unwrap();
        let profile = StateProfile::new(&state, &p);
        let mut bessel = vec![Complex64::new(0.0, 0.0); LEGENDRE_DEGREE + 1];
        for k in [
            Complex64::new(39.0, -0.3),
            Complex64::new(41.0, -0.3),
            Complex64::new(80.0, -2.0),
        ] {
            let reg = Regular::new(&p, k);
            let fast = profile.overlap(&reg, &mut bessel);
            let rule = GaussLegendre::new(60);
            let mut slow = Complex64::new(0.0, 0.0);
            let cuts = [0.0, 0.25, 0.5, 0.7, 0.85, 1.0];
            for w in cuts.windows(2) {
                let sub = 20;
                let h = (w[1] - w[0]) / sub as f64;
                for s in 0..sub {
                    let lo = w[0] + s as f64 * h;
                    let re =
                        rule.integrate(lo, lo + h, |r| (reg.value(r) * state.compact_value(r)).re);
                    let im =
                        rule.integrate(lo, lo + h, |r| (reg.value(r) * state.compact_value(r)).im);
                    slow += Complex64::new(re, im);
                }
            }
            assert!(
                (fast - slow).norm() < 1e-12 * (1.0 + slow.norm()),
                "{fast} vs {slow}"
            );
        }
    }

    #[test]
    fn crank_nicolson_is_unitary() {
        let grid = RadialGrid::new(20.0, 2001).unwrap();
        let state = build_initial_state(
            StateFamily::GaussianBump {
                center: 1.5,
                width: 0.25,
                radius: 3.0,
            },
            grid,
        )
        .unwrap();
        let p = Potential::delta_shell(6.0, 1.0).unwrap();
        let mut psi: Vec<Complex64> = state
            .samples()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        let n0: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        let mut cn = CrankNicolson::new(&grid, &p, 1e-4);
        let mut prev = n0;
        for _ in 0..10_000 {
            cn.step(&mut psi);
            let now: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
            assert!(((now - prev) / n0).abs() < 1e-10);
            prev = now;
        }
        assert!(((prev - n0) / n0).abs() < 1e-8);
    }

    #[test]
    fn grid_engine_rejects_contaminated_times() {
        let grid = RadialGrid::new(4.0, 801).unwrap();
        let state = build_initial_state(
            StateFamily::GaussianBump {
                center: 0.5,
                width: 0.1,
                radius: 1.0,
            },
            grid,
        )
        .unwrap();
        let p = Potential::free(1.0).unwrap();
        let safe = grid_safe_time(&state).unwrap();
        assert!(safe > 0.0);
        match propagate_grid(&state, &p, 2.0 * safe, 1e-3) {
            Err(Error::BoundaryContamination { t_safe, .. }) => assert_eq!(t_safe, safe),
            other => panic!("expected contamination error, got {other:?}"),
        }
        let w = propagate_grid(&state, &p, 0.0, 1e-3).unwrap();
        assert!(w
            .samples
            .iter()
            .zip(state.samples())
            .all(|(a, &b)| a.re == b && a.im == 0.0));
    }
}
