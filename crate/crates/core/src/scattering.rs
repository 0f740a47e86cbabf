//! Regular solutions, Jost functions, bound states and resonance poles of
//! the s-wave radial equation.
//!
//! The regular solution `φ(k, r)` (`φ(0) = 0`, `φ'(0) = 1`) is propagated
//! exactly across each constant piece of the potential with the transfer
//! matrix built from `cos(q h)` and `sin(q h)/q`, `q² = k² - V`; both are
//! entire in `q²`, so the same code serves real, imaginary and complex `k`.
//! Delta shells enter as exact derivative jumps. The Jost function is
//! `f(k) = e^{ika} (φ'(a) - ik φ(a))` with `a` the range, so `f ≡ 1` for the
//! free potential.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{integrate_panels, Piece, Potential, PotentialFamily, RadialGrid};
use crate::numerics::brent;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `(cos(√z d), sin(√z d)/√z)`, by series when `|z| d²` is small.
pub(crate) fn trig_pair(z: Complex64, d: f64) -> (Complex64, Complex64) {
    let x = z * (d * d);
    if x.norm() < 0.25 {
        let one = Complex64::new(1.0, 0.0);
        let (mut c, mut s) = (one, one);
        let (mut tc, mut ts) = (one, one);
        for n in 1..20 {
            let nf = n as f64;
            tc = -tc * x / ((2.0 * nf - 1.0) * (2.0 * nf));
            ts = -ts * x / ((2.0 * nf) * (2.0 * nf + 1.0));
            c += tc;
            s += ts;
            if tc.norm() < 1e-18 && ts.norm() < 1e-18 {
                break;
            }
        }
        (c, s * d)
    } else {
        let q = z.sqrt();
        let qd = q * d;
        (qd.cos(), qd.sin() / q)
    }
}

/// Regular solution at one complex momentum, stored as `(φ, φ')` at the
/// start of every piece (just past any shell there) and at `range⁺`.
#[derive(Debug, Clone)]
pub(crate) struct Regular<'p> {
    pieces: &'p [Piece],
    range: f64,
    k: Complex64,
    k2: Complex64,
    starts: Vec<(Complex64, Complex64)>,
    exterior: (Complex64, Complex64),
}

impl<'p> Regular<'p> {
    pub(crate) fn new(potential: &'p Potential, k: Complex64) -> Self {
        let pieces = potential.pieces();
        let k2 = k * k;
        let mut u = Complex64::new(0.0, 0.0);
        let mut du = Complex64::new(1.0, 0.0);
        let mut starts = Vec::with_capacity(pieces.len());
        for p in pieces {
            starts.push((u, du));
            let z = k2 - p.value;
            let (c, s) = trig_pair(z, p.end - p.start);
            let nu = u * c + du * s;
            let ndu = -z * s * u + c * du;
            u = nu;
            du = ndu + p.jump_at_end * nu;
        }
        Self {
            pieces,
            range: potential.range(),
            k,
            k2,
            starts,
            exterior: (u, du),
        }
    }

    pub(crate) fn exterior(&self) -> (Complex64, Complex64) {
        self.exterior
    }

    /// `f(k)`.
    pub(crate) fn jost(&self) -> Complex64 {
        let (u, du) = self.exterior;
        (I * self.k * self.range).exp() * (du - I * self.k * u)
    }

    /// `f(k) f(-k) = φ'(a)² + k² φ(a)²`, equal to `|f(k)|²` for real `k`.
    pub(crate) fn jost_product(&self) -> Complex64 {
        let (u, du) = self.exterior;
        du * du + self.k2 * u * u
    }

    /// Start radius, initial data and `z = k² - V` of piece `j`; index
    /// `pieces.len()` denotes the exterior.
    pub(crate) fn piece_data(&self, j: usize) -> (f64, Complex64, Complex64, Complex64) {
        if j == self.pieces.len() {
            (self.range, self.exterior.0, self.exterior.1, self.k2)
        } else {
            let (u, du) = self.starts[j];
            (self.pieces[j].start, u, du, self.k2 - self.pieces[j].value)
        }
    }

    pub(crate) fn piece_index(&self, r: f64) -> usize {
        if r >= self.range {
            return self.pieces.len();
        }
        self.pieces.partition_point(|p| p.end <= r)
    }

    /// `φ(k, r)`.
    pub(crate) fn value(&self, r: f64) -> Complex64 {
        let (start, u, du, z) = self.piece_data(self.piece_index(r));
        let (c, s) = trig_pair(z, r - start);
        u * c + du * s
    }
}

/// Complex Jost function `f(k)`.
pub fn jost(potential: &Potential, k: Complex64) -> Complex64 {
    Regular::new(potential, k).jost()
}

/// Scattering data at one real momentum.
#[derive(Debug, Clone)]
pub struct JostData {
    pub k: f64,
    /// Jost function `f(k)`.
    pub f0: Complex64,
    /// `δ(k) = -arg f(k)`, in `(-π, π]`.
    pub phase_shift: f64,
    /// `k φ(k, r) / |f(k)|` on the grid; behaves as `sin(kr + δ)` beyond the
    /// range, so that `(2/π) ∫ ψ_k ψ_k' dr = δ(k - k')`.
    pub regular_solution: Vec<f64>,
}

impl JostData {
    /// `S(k) = f(-k)/f(k)`; for real `k`, `f(-k) = f(k)*`.
    pub fn s_matrix(&self) -> Complex64 {
        self.f0.conj() / self.f0
    }
}

/// Regular solution, Jost function and phase shift at real `k > 0`.
pub fn regular_solution(potential: &Potential, k: f64, grid: &RadialGrid) -> Result<JostData> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::domain(format!(
            "regular_solution needs k > 0 (got {k}); use jost_at_zero at threshold"
        )));
    }
    let reg = Regular::new(potential, Complex64::new(k, 0.0));
    let f0 = reg.jost();
    let scale = k / f0.norm();
    let regular_solution = grid.nodes().map(|r| scale * reg.value(r).re).collect();
    Ok(JostData {
        k,
        f0,
        phase_shift: -f0.arg(),
        regular_solution,
    })
}

/// `f(0)`, the slope of the zero-energy regular solution beyond the range.
pub fn jost_at_zero(potential: &Potential) -> f64 {
    Regular::new(potential, Complex64::new(0.0, 0.0))
        .exterior()
        .1
        .re
}

/// Coupling in `bracket` at which the family has a zero-energy resonance.
pub fn find_zero_energy_coupling(family: &PotentialFamily, bracket: (f64, f64)) -> Result<f64> {
    let (lo, hi) = bracket;
    if !(lo < hi) {
        return Err(Error::domain(format!("bracket [{lo}, {hi}] is empty")));
    }
    family.at(lo)?;
    family.at(hi)?;
    let f = |lambda: f64| family.at(lambda).map_or(f64::NAN, |p| jost_at_zero(&p));
    let root = brent(f, lo, hi, 1e-14)?;
    Ok(root)
}

/// Normalized bound state `u_b` with energy `-κ²`.
#[derive(Debug, Clone)]
pub struct BoundState {
    kappa: f64,
    potential: Potential,
    scale: f64,
    starts: Vec<(f64, f64)>,
    edge: f64,
}

impl BoundState {
    fn new(potential: &Potential, kappa: f64) -> Self {
        let reg = Regular::new(potential, Complex64::new(0.0, kappa));
        let starts: Vec<(f64, f64)> = reg.starts.iter().map(|(u, du)| (u.re, du.re)).collect();
        let edge = reg.exterior.0.re;
        let mut b = Self {
            kappa,
            potential: potential.clone(),
            scale: 1.0,
            starts,
            edge,
        };
        let interior: f64 = potential
            .pieces()
            .iter()
            .map(|p| integrate_panels(p.start, p.end, 16, |r| b.raw(r).powi(2)))
            .sum();
        let norm2 = interior + edge * edge / (2.0 * kappa);
        b.scale = 1.0 / norm2.sqrt();
        b
    }

    fn raw(&self, r: f64) -> f64 {
        let range = self.potential.range();
        if r >= range {
            return self.edge * (-self.kappa * (r - range)).exp();
        }
        let pieces = self.potential.pieces();
        let j = pieces.partition_point(|p| p.end <= r).min(pieces.len() - 1);
        let p = &pieces[j];
        let (u, du) = self.starts[j];
        let z = Complex64::new(-self.kappa * self.kappa - p.value, 0.0);
        let (c, s) = trig_pair(z, r - p.start);
        u * c.re + du * s.re
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn energy(&self) -> f64 {
        -self.kappa * self.kappa
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    /// Normalized wavefunction `u_b(r)`.
    pub fn value(&self, r: f64) -> f64 {
        self.scale * self.raw(r)
    }

    /// Normalized wavefunction sampled on a grid.
    pub fn wavefunction(&self, grid: &RadialGrid) -> Vec<f64> {
        grid.nodes().map(|r| self.value(r)).collect()
    }

    pub(crate) fn same_state(&self, other: &BoundState) -> bool {
        self.potential == other.potential
            && (self.kappa - other.kappa).abs() <= 1e-12 * self.kappa.max(other.kappa)
    }
}

/// Default upper limit of the imaginary-axis search.
pub fn default_kappa_max(potential: &Potential) -> f64 {
    50.0 / potential.range()
}

/// All zeros of `f(iκ)` with `0 < κ ≤ kappa_max`, deepest first.
pub fn find_bound_states(potential: &Potential, kappa_max: f64) -> Result<Vec<BoundState>> {
    if !(kappa_max > 0.0) {
        return Err(Error::domain("kappa_max must be positive"));
    }
    let g = |kappa: f64| jost(potential, Complex64::new(0.0, kappa)).re;
    let a = potential.range();
    let step = (0.01 / a).min(kappa_max / 4000.0);
    let mut nodes = Vec::new();
    let mut x = 1e-8 * step;
    while x < step {
        nodes.push(x);
        x *= 2.0;
    }
    let n = (kappa_max / step).ceil() as usize;
    nodes.extend((1..=n).map(|i| (i as f64 * step).min(kappa_max)));
    nodes.dedup();
    let mut found = Vec::new();
    let mut prev = (nodes[0], g(nodes[0]));
    for &x in &nodes[1..] {
        let cur = (x, g(x));
        if cur.1 == 0.0 {
            found.push(x);
        } else if prev.1 != 0.0 && prev.1.signum() != cur.1.signum() {
            found.push(brent(g, prev.0, cur.0, 1e-15)?);
        }
        prev = cur;
    }
    found.sort_by(|a, b| b.total_cmp(a));
    Ok(found
        .into_iter()
        .map(|k| BoundState::new(potential, k))
        .collect())
}

/// `⟨u_b, Ψ⟩` evaluated on the analytic representations.
pub fn bound_overlap(state: &crate::model::InitialState, bound: &BoundState) -> f64 {
    let mut total = state.compact_overlap(&bound.potential.breakpoints(), |r| bound.value(r));
    for (d, b) in state.bound_terms() {
        if b.same_state(bound) {
            total += d;
        } else if b.potential != bound.potential {
            let cuts: Vec<f64> = b
                .potential
                .breakpoints()
                .into_iter()
                .chain(bound.potential.breakpoints())
                .collect();
            let reach =
                b.potential.range().max(bound.potential.range()) + 40.0 / b.kappa.min(bound.kappa);
            let mut edges = cuts;
            edges.push(0.0);
            edges.push(reach);
            edges.sort_by(f64::total_cmp);
            edges.dedup();
            total += d * edges
                .windows(2)
                .map(|w| integrate_panels(w[0], w[1], 64, |r| b.value(r) * bound.value(r)))
                .sum::<f64>();
        }
    }
    total
}

/// Removes the components along `bound` and renormalizes.
pub fn project_out_bound_states(
    state: &crate::model::InitialState,
    bound: &[BoundState],
) -> Result<crate::model::InitialState> {
    if bound.is_empty() {
        return Ok(state.clone());
    }
    for (i, a) in bound.iter().enumerate() {
        for b in &bound[..i] {
            if a.potential != b.potential {
                return Err(Error::domain("bound states must belong to one potential"));
            }
        }
    }
    let betas: Vec<f64> = bound.iter().map(|b| bound_overlap(state, b)).collect();
    let residual = (1.0 - betas.iter().map(|b| b * b).sum::<f64>())
        .max(0.0)
        .sqrt();
    if residual < 1e-8 {
        return Err(Error::DegenerateState { residual });
    }
    let mut terms: Vec<(f64, BoundState)> = state.bound_terms().to_vec();
    for (beta, b) in betas.iter().zip(bound) {
        match terms.iter_mut().find(|(_, x)| x.same_state(b)) {
            Some((d, _)) => *d -= beta,
            None => terms.push((-beta, b.clone())),
        }
    }
    terms.retain(|(d, _)| d.abs() > 1e-300);
    state.with_bound_terms(terms, 1.0)
}

/// Axis-aligned rectangle in the complex momentum plane.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBox {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

/// Zero of the continued Jost function in the lower half plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonancePole {
    pub k_pole: Complex64,
    pub order: usize,
    /// `|f(k_pole)|` after refinement.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoleSearch {
    pub poles: Vec<ResonancePole>,
    /// Zero count of `f` inside the box by the argument principle.
    pub zero_count: i64,
    /// Set when some counted zeros could not be refined by Newton iteration.
    pub newton_failed: bool,
}

/// Winding number of `f` along a closed polygon, sampled adaptively so that
/// consecutive phase increments stay small. `None` if `f` nearly vanishes on
/// the boundary.
pub(crate) fn winding_number<F: Fn(Complex64) -> Complex64>(
    f: &F,
    vertices: &[Complex64],
    max_step: f64,
) -> Option<i64> {
    let mut total = 0.0;
    for (i, &a) in vertices.iter().enumerate() {
        let b = vertices[(i + 1) % vertices.len()];
        let n = ((b - a).norm() / max_step).ceil().max(1.0) as usize;
        let mut pa = a;
        let mut fa = f(pa);
        for j in 1..=n {
            let pb = a + (b - a) * (j as f64 / n as f64);
            let fb = f(pb);
            total += edge_phase(f, pa, pb, fa, fb, 0)?;
            pa = pb;
            fa = fb;
        }
    }
    Some((total / std::f64::consts::TAU).round() as i64)
}

fn edge_phase<F: Fn(Complex64) -> Complex64>(
    f: &F,
    a: Complex64,
    b: Complex64,
    fa: Complex64,
    fb: Complex64,
    depth: usize,
) -> Option<f64> {
    if fa.norm() < 1e-14 || fb.norm() < 1e-14 || !fa.is_finite() || !fb.is_finite() {
        return None;
    }
    let ratio = fb / fa;
    let d = ratio.arg();
    if d.abs() < 0.25 && ratio.norm() < 4.0 && ratio.norm() > 0.25 {
        return Some(d);
    }
    if depth > 40 {
        return None;
    }
    let m = 0.5 * (a + b);
    let fm = f(m);
    Some(edge_phase(f, a, m, fa, fm, depth + 1)? + edge_phase(f, m, b, fm, fb, depth + 1)?)
}

fn newton<F: Fn(Complex64) -> Complex64>(f: &F, k0: Complex64) -> Option<(Complex64, f64)> {
    let mut k = k0;
    for _ in 0..80 {
        let fk = f(k);
        let h = 1e-6 * (1.0 + k.norm());
        let d = (f(k + h) - f(k - h)) / (2.0 * h);
        if d.norm() == 0.0 || !d.is_finite() {
            return None;
        }
        let step = fk / d;
        k -= step;
        if !k.is_finite() || k.norm() > 1e8 {
            return None;
        }
        if step.norm() < 1e-14 * (1.0 + k.norm()) {
            break;
        }
    }
    let r = f(k).norm();
    (r < 1e-10).then_some((k, r))
}

struct Rect {
    lo: Complex64,
    hi: Complex64,
}

impl Rect {
    fn vertices(&self) -> [Complex64; 4] {
        [
            self.lo,
            Complex64::new(self.hi.re, self.lo.im),
            self.hi,
            Complex64::new(self.lo.re, self.hi.im),
        ]
    }

    fn contains(&self, k: Complex64, slack: f64) -> bool {
        k.re >= self.lo.re - slack
            && k.re <= self.hi.re + slack
            && k.im >= self.lo.im - slack
            && k.im <= self.hi.im + slack
    }

    fn size(&self) -> f64 {
        (self.hi.re - self.lo.re).max(self.hi.im - self.lo.im)
    }
}

/// Zeros of `f(k)` inside `search_box` (which must lie in `Im k < 0`), at
/// most `n_max`, ordered by `|Re k|` then `Re k`.
pub fn find_resonance_poles(
    potential: &Potential,
    search_box: SearchBox,
    n_max: usize,
) -> Result<PoleSearch> {
    let SearchBox {
        re_min,
        re_max,
        im_min,
        im_max,
    } = search_box;
    if !(re_min < re_max && im_min < im_max) {
        return Err(Error::domain("search box is empty"));
    }
    if !(im_max < 0.0) {
        return Err(Error::domain(
            "search box must lie in the lower half plane (im_max < 0)",
        ));
    }
    let f = |k: Complex64| jost(potential, k);
    let step = (0.05 / potential.range()).min(0.1);
    let mut rect = Rect {
        lo: Complex64::new(re_min, im_min),
        hi: Complex64::new(re_max, im_max),
    };
    let mut total = None;
    for nudge in 0..8 {
        total = winding_number(&f, &rect.vertices(), step);
        if total.is_some() {
            break;
        }
        let eps = 1e-7 * (nudge + 1) as f64;
        rect.lo -= Complex64::new(eps, eps);
    }
    let zero_count =
        total.ok_or_else(|| Error::domain("Jost function vanishes on the search-box boundary"))?;
    let mut found: Vec<ResonancePole> = Vec::new();
    let mut failed = false;
    subdivide(&f, rect, zero_count, 0, step, &mut found, &mut failed);
    found.sort_by(|a, b| a.residual.total_cmp(&b.residual));
    let mut poles: Vec<ResonancePole> = Vec::new();
    for p in found {
        if !poles.iter().any(|q| (q.k_pole - p.k_pole).norm() < 1e-8) {
            poles.push(p);
        }
    }
    poles.retain(|p| p.k_pole.im < 0.0);
    poles.sort_by(|a, b| {
        a.k_pole
            .re
            .abs()
            .total_cmp(&b.k_pole.re.abs())
            .then(a.k_pole.re.total_cmp(&b.k_pole.re))
    });
    poles.truncate(n_max);
    Ok(PoleSearch {
        poles,
        zero_count,
        newton_failed: failed,
    })
}

fn subdivide<F: Fn(Complex64) -> Complex64>(
    f: &F,
    rect: Rect,
    count: i64,
    depth: usize,
    step: f64,
    out: &mut Vec<ResonancePole>,
    failed: &mut bool,
) {
    if count <= 0 {
        return;
    }
    let size = rect.size();
    if count == 1 || size < 1e-7 || depth > 45 {
        let mid = 0.5 * (rect.lo + rect.hi);
        let q = 0.25 * (rect.hi - rect.lo);
        let seeds = [mid, mid + q, mid - q, mid + q.conj(), mid - q.conj()];
        for s in seeds {
            if let Some((k, r)) = newton(f, s) {
                if rect.contains(k, 1e-9 + 1e-6 * size) {
                    out.push(ResonancePole {
                        k_pole: k,
                        order: if size < 1e-7 { count as usize } else { 1 },
                        residual: r,
                    });
                    return;
                }
            }
        }
        if size < 1e-7 || depth > 45 {
            *failed = true;
            return;
        }
    }
    // Split slightly off-center so that zeros on the midlines are unlikely.
    let split = Complex64::new(
        rect.lo.re + 0.5004 * (rect.hi.re - rect.lo.re),
        rect.lo.im + 0.4997 * (rect.hi.im - rect.lo.im),
    );
    let quads = [
        Rect {
            lo: rect.lo,
            hi: split,
        },
        Rect {
            lo: Complex64::new(split.re, rect.lo.im),
            hi: Complex64::new(rect.hi.re, split.im),
        },
        Rect {
            lo: Complex64::new(rect.lo.re, split.im),
            hi: Complex64::new(split.re, rect.hi.im),
        },
        Rect {
            lo: split,
            hi: rect.hi,
        },
    ];
    let sub_step = step.min(0.25 * size);
    for quad in quads {
        match winding_number(f, &quad.vertices(), sub_step) {
            Some(c) => subdivide(f, quad, c, depth + 1, step, out, failed),
            None => {
                let mid = 0.5 * (quad.lo + quad.hi);
                match newton(f, mid) {
                    Some((k, r)) => out.push(ResonancePole {
                        k_pole: k,
                        order: 1,
                        residual: r,
                    }),
                    None => *failed = true,
                }
            }
        }
    }
}
