//! Finite-range radial potentials, uniform radial grids and normalized
//! s-wave initial states.
//!
//! Units are ħ = 2m = 1 throughout, so the radial equation reads
//! `-u'' + V(r) u = k² u` and energies are `k²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{simpson, GaussLegendre};
use crate::scattering::BoundState;

/// Constant-value piece `V(r) = value` on `[r_lo, r_hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub r_lo: f64,
    pub r_hi: f64,
    pub value: f64,
}

/// Delta shell `strength · δ(r - radius)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shell {
    pub radius: f64,
    pub strength: f64,
}

/// Finite-range potential made of piecewise-constant segments and delta
/// shells. Vanishes identically beyond `range`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    segments: Vec<Segment>,
    shells: Vec<Shell>,
    range: f64,
    pieces: Vec<Piece>,
}

/// Interval of constant potential between consecutive breakpoints. The
/// shell strength sitting at `end` is applied when crossing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Piece {
    pub start: f64,
    pub end: f64,
    pub value: f64,
    pub jump_at_end: f64,
}

impl Potential {
    pub fn new(mut segments: Vec<Segment>, mut shells: Vec<Shell>, range: f64) -> Result<Self> {
        if !(range > 0.0) || !range.is_finite() {
            return Err(Error::domain(format!(
                "potential range must be positive, got {range}"
            )));
        }
        segments.sort_by(|a, b| a.r_lo.total_cmp(&b.r_lo));
        for s in &segments {
            if !(s.r_lo >= 0.0 && s.r_lo < s.r_hi && s.r_hi <= range) || !s.value.is_finite() {
                return Err(Error::domain(format!(
                    "segment [{}, {}) must satisfy 0 <= r_lo < r_hi <= range = {range}",
                    s.r_lo, s.r_hi
                )));
            }
        }
        for w in segments.windows(2) {
            if w[0].r_hi != w[1].r_lo {
                return Err(Error::domain(format!(
                    "segments must be contiguous: [{}, {}) is followed by [{}, {})",
                    w[0].r_lo, w[0].r_hi, w[1].r_lo, w[1].r_hi
                )));
            }
        }
        shells.sort_by(|a, b| a.radius.total_cmp(&b.radius));
        for s in &shells {
            if !(s.radius > 0.0 && s.radius <= range) || !s.strength.is_finite() {
                return Err(Error::domain(format!(
                    "shell radius {} must lie in (0, range = {range}]",
                    s.radius
                )));
            }
        }
        let pieces = build_pieces(&segments, &shells, range);
        Ok(Self {
            segments,
            shells,
            range,
            pieces,
        })
    }

    /// Single shell `lambda · δ(r - a)`: the canonical one-coupling family.
    pub fn delta_shell(lambda: f64, a: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::domain(format!(
                "shell radius must be positive, got {a}"
            )));
        }
        Self::new(
            Vec::new(),
            vec![Shell {
                radius: a,
                strength: lambda,
            }],
            a,
        )
    }

    /// Potential that vanishes everywhere, nominally of range `range`.
    pub fn free(range: f64) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), range)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn shells(&self) -> &[Shell] {
        &self.shells
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub(crate) fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Value of the regular (non-delta) part at `r`; exactly zero beyond range.
    pub fn value(&self, r: f64) -> f64 {
        if r > self.range || r < 0.0 {
            return 0.0;
        }
        self.segments
            .iter()
            .find(|s| r >= s.r_lo && r < s.r_hi)
            .map_or(0.0, |s| s.value)
    }

    pub fn is_free(&self) -> bool {
        self.segments.iter().all(|s| s.value == 0.0)
            && self.shells.iter().all(|s| s.strength == 0.0)
    }

    /// Every segment value and shell strength multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment {
                value: s.value * factor,
                ..*s
            })
            .collect();
        let shells = self
            .shells
            .iter()
            .map(|s| Shell {
                strength: s.strength * factor,
                ..*s
            })
            .collect();
        Self::new(segments, shells, self.range)
    }

    /// Interior radii where the potential or its delta part changes.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces.iter().map(|p| p.end).collect()
    }
}

fn build_pieces(segments: &[Segment], shells: &[Shell], range: f64) -> Vec<Piece> {
    let mut cuts = vec![0.0, range];
    cuts.extend(segments.iter().flat_map(|s| [s.r_lo, s.r_hi]));
    cuts.extend(shells.iter().map(|s| s.radius));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let value = segments
                .iter()
                .find(|s| mid >= s.r_lo && mid < s.r_hi)
                .map_or(0.0, |s| s.value);
            let jump_at_end = shells
                .iter()
                .filter(|s| s.radius == w[1])
                .map(|s| s.strength)
                .sum();
            Piece {
                start: w[0],
                end: w[1],
                value,
                jump_at_end,
            }
        })
        .collect()
}

/// One-parameter family of potentials indexed by a coupling constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialFamily {
    /// `lambda · δ(r - radius)`.
    DeltaShell { radius: f64 },
    /// `lambda · base`, with the coupling scaling every segment and shell.
    Scaled {
        segments: Vec<Segment>,
        shells: Vec<Shell>,
        range: f64,
    },
}

impl PotentialFamily {
    pub fn at(&self, coupling: f64) -> Result<Potential> {
        match self {
            PotentialFamily::DeltaShell { radius } => Potential::delta_shell(coupling, *radius),
            PotentialFamily::Scaled {
                segments,
                shells,
                range,
            } => Potential::new(segments.clone(), shells.clone(), *range)?.scaled(coupling),
        }
    }
}

/// Uniform grid `r_i = i · spacing`, `i = 0 .. n_points`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    r_max: f64,
    n_points: usize,
}

impl RadialGrid {
    pub fn new(r_max: f64, n_points: usize) -> Result<Self> {
        if !(r_max > 0.0) || !r_max.is_finite() {
            return Err(Error::domain(format!(
                "grid r_max must be positive, got {r_max}"
            )));
        }
        if n_points < 2 {
            return Err(Error::domain(format!(
                "grid needs at least 2 points, got {n_points}"
            )));
        }
        Ok(Self { r_max, n_points })
    }

    /// Grid with the given spacing, rounded so that `r_max` is a node.
    pub fn with_spacing(r_max: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::domain("grid spacing must be positive"));
        }
        Self::new(r_max, (r_max / spacing).round() as usize + 1)
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        self.r_max / (self.n_points - 1) as f64
    }

    pub fn r(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.r_max
        } else {
            i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.r(i))
    }

    /// Index of the last node with `r_i <= r` (within rounding).
    pub fn last_index_at_or_below(&self, r: f64) -> usize {
        let x = r / self.spacing();
        let i = (x + 1e-9).floor() as usize;
        i.min(self.n_points - 1)
    }

    pub fn nearest_index(&self, r: f64) -> usize {
        ((r / self.spacing()).round() as usize).min(self.n_points - 1)
    }

    /// Leading nodes `r <= r_hi` as a grid of their own.
    pub fn prefix(&self, r_hi: f64) -> Result<Self> {
        let last = self.last_index_at_or_below(r_hi).max(1);
        Self::new(self.r(last), last + 1)
    }

    /// Simpson quadrature of sampled values over the whole grid.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        simpson(values, self.spacing())
    }
}

/// Analytic initial-state families, each compactly supported in `[0, radius]`
/// and vanishing at `r = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateFamily {
    /// `sqrt(2/R) sin(n π r / R)`: the n-th mode of a closed box.
    SineBox { mode: u32, radius: f64 },
    /// Gaussian of the given center and width, minus the straight line
    /// through its values at `0` and `R`, normalized.
    GaussianBump {
        center: f64,
        width: f64,
        radius: f64,
    },
}

impl StateFamily {
    pub fn support(&self) -> f64 {
        match *self {
            StateFamily::SineBox { radius, .. } | StateFamily::GaussianBump { radius, .. } => {
                radius
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StateFamily::SineBox { mode, radius } => {
                if mode == 0 {
                    return Err(Error::domain("sine box mode index starts at 1"));
                }
                if !(radius > 0.0) {
                    return Err(Error::domain("sine box radius must be positive"));
                }
            }
            StateFamily::GaussianBump {
                center,
                width,
                radius,
            } => {
                if !(radius > 0.0) || !(width > 0.0) {
                    return Err(Error::domain(
                        "gaussian bump radius and width must be positive",
                    ));
                }
                if !(center > 0.0 && center < radius) {
                    return Err(Error::domain(format!(
                        "gaussian bump center {center} must lie inside (0, {radius})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Unnormalized profile on `[0, R]`; zero outside.
    fn raw(&self, r: f64) -> f64 {
        match *self {
            StateFamily::SineBox { mode, radius } => {
                if !(0.0..=radius).contains(&r) {
                    return 0.0;
                }
                (mode as f64 * std::f64::consts::PI * r / radius).sin()
            }
            StateFamily::GaussianBump {
                center,
                width,
                radius,
            } => {
                if !(0.0..=radius).contains(&r) {
                    return 0.0;
                }
                let g = |x: f64| (-(x - center).powi(2) / (2.0 * width * width)).exp();
                let (g0, g1) = (g(0.0), g(radius));
                g(r) - (g0 * (1.0 - r / radius) + g1 * r / radius)
            }
        }
    }

    fn raw_norm(&self) -> f64 {
        match *self {
            StateFamily::SineBox { radius, .. } => (0.5 * radius).sqrt(),
            StateFamily::GaussianBump { radius, .. } => {
                integrate_panels(0.0, radius, 64, |r| self.raw(r).powi(2)).sqrt()
            }
        }
    }
}

/// Composite Gauss–Legendre over `[a, b]` with `panels` equal panels.
pub(crate) fn integrate_panels<F: FnMut(f64) -> f64>(
    a: f64,
    b: f64,
    panels: usize,
    mut f: F,
) -> f64 {
    thread_local! {
        static RULE: GaussLegendre = GaussLegendre::new(24);
    }
    if b <= a {
        return 0.0;
    }
    RULE.with(|rule| {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|i| {
                let lo = a + i as f64 * h;
                rule.integrate(lo, lo + h, &mut f)
            })
            .sum()
    })
}

/// A normalized family member, `weight · raw(r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Component {
    pub weight: f64,
    pub family: StateFamily,
}

/// Normalized s-wave initial state: a combination of compact family members
/// and (optionally) bound-state wavefunctions, sampled on a radial grid.
#[derive(Debug, Clone)]
pub struct InitialState {
    grid: RadialGrid,
    compact: Vec<Component>,
    bound: Vec<(f64, BoundState)>,
    samples: Vec<f64>,
}

impl InitialState {
    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Radius beyond which the compact part vanishes.
    pub fn support(&self) -> f64 {
        self.compact
            .iter()
            .map(|c| c.family.support())
            .fold(0.0, f64::max)
    }

    /// The family this state was built from, when it is a single member.
    pub fn family(&self) -> Option<StateFamily> {
        match (self.compact.as_slice(), self.bound.is_empty()) {
            ([c], true) => Some(c.family),
            _ => None,
        }
    }

    pub(crate) fn bound_terms(&self) -> &[(f64, BoundState)] {
        &self.bound
    }

    /// Compact part of the wavefunction at `r`.
    pub fn compact_value(&self, r: f64) -> f64 {
        self.compact
            .iter()
            .map(|c| c.weight * c.family.raw(r))
            .sum()
    }

    /// Full wavefunction `Ψ(r, 0)`.
    pub fn value(&self, r: f64) -> f64 {
        self.compact_value(r) + self.bound.iter().map(|(d, b)| d * b.value(r)).sum::<f64>()
    }

    /// Radii where the compact part has kinks; used to split quadrature panels.
    pub(crate) fn compact_breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.compact.iter().map(|c| c.family.support()).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// `∫ u(r) Ψ_compact(r) dr` for a function `u` whose kinks lie in `cuts`.
    pub(crate) fn compact_overlap<F: Fn(f64) -> f64>(&self, cuts: &[f64], u: F) -> f64 {
        let support = self.support();
        let mut edges: Vec<f64> = cuts
            .iter()
            .chain(self.compact_breakpoints().iter())
            .copied()
            .filter(|&r| r > 0.0 && r < support)
            .collect();
        edges.push(0.0);
        edges.push(support);
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        edges
            .windows(2)
            .map(|w| integrate_panels(w[0], w[1], 32, |r| u(r) * self.compact_value(r)))
            .sum()
    }

    /// Analytic L² norm of the state.
    pub fn analytic_norm(&self) -> f64 {
        let compact_sq = {
            let mut edges = self.compact_breakpoints();
            edges.insert(0, 0.0);
            edges
                .windows(2)
                .map(|w| integrate_panels(w[0], w[1], 32, |r| self.compact_value(r).powi(2)))
                .sum::<f64>()
        };
        let mut total = compact_sq;
        for (d, b) in &self.bound {
            let cross = self.compact_overlap(&b.potential().breakpoints(), |r| b.value(r));
            total += 2.0 * d * cross + d * d;
        }
        total.max(0.0).sqrt()
    }

    /// Norm of the stored samples by grid quadrature.
    pub fn grid_norm(&self) -> f64 {
        let sq: Vec<f64> = self.samples.iter().map(|v| v * v).collect();
        self.grid.integrate(&sq).sqrt()
    }

    /// Grid quadrature of the overlap with another sampled function.
    pub fn grid_overlap(&self, other: &[f64]) -> f64 {
        let prod: Vec<f64> = self.samples.iter().zip(other).map(|(a, b)| a * b).collect();
        self.grid.integrate(&prod)
    }

    pub(crate) fn from_parts(
        grid: RadialGrid,
        compact: Vec<Component>,
        bound: Vec<(f64, BoundState)>,
    ) -> Result<Self> {
        let mut state = Self {
            grid,
            compact,
            bound,
            samples: Vec::new(),
        };
        let norm = state.analytic_norm();
        if !(norm > 1e-150) || !norm.is_finite() {
            return Err(Error::domain("initial state has zero norm"));
        }
        for c in &mut state.compact {
            c.weight /= norm;
        }
        for (d, _) in &mut state.bound {
            *d /= norm;
        }
        state.samples = state.grid.nodes().map(|r| state.value(r)).collect();
        Ok(state)
    }

    /// Normalized bound-state wavefunction as an initial state.
    pub fn from_bound_state(bound: &BoundState, grid: RadialGrid) -> Result<Self> {
        Self::from_parts(grid, Vec::new(), vec![(1.0, bound.clone())])
    }

    /// Normalized `a · self + b · other`.
    pub fn combine(&self, a: f64, other: &InitialState, b: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::domain("states must be sampled on the same grid"));
        }
        let mut compact: Vec<Component> = self
            .compact
            .iter()
            .map(|c| Component {
                weight: a * c.weight,
                ..*c
            })
            .collect();
        for c in &other.compact {
            match compact.iter_mut().find(|x| x.family == c.family) {
                Some(x) => x.weight += b * c.weight,
                None => compact.push(Component {
                    weight: b * c.weight,
                    ..*c
                }),
            }
        }
        let mut bound: Vec<(f64, BoundState)> =
            self.bound.iter().map(|(d, s)| (a * d, s.clone())).collect();
        for (d, s) in &other.bound {
            match bound.iter_mut().find(|(_, x)| x.same_state(s)) {
                Some((x, _)) => *x += b * d,
                None => bound.push((b * d, s.clone())),
            }
        }
        compact.retain(|c| c.weight != 0.0);
        bound.retain(|(d, _)| *d != 0.0);
        Self::from_parts(self.grid, compact, bound)
    }

    pub(crate) fn with_bound_terms(
        &self,
        bound: Vec<(f64, BoundState)>,
        scale: f64,
    ) -> Result<Self> {
        let compact = self
            .compact
            .iter()
            .map(|c| Component {
                weight: c.weight * scale,
                ..*c
            })
            .collect();
        Self::from_parts(self.grid, compact, bound)
    }
}

/// Construct a normalized member of `family` sampled on `grid`.
pub fn build_initial_state(family: StateFamily, grid: RadialGrid) -> Result<InitialState> {
    family.validate()?;
    if family.support() > grid.r_max() {
        return Err(Error::domain(format!(
            "state support {} exceeds grid r_max {}",
            family.support(),
            grid.r_max()
        )));
    }
    let norm = family.raw_norm();
    if !(norm > 1e-150) {
        return Err(Error::domain("initial state has zero norm"));
    }
    InitialState::from_parts(
        grid,
        vec![Component {
            weight: 1.0 / norm,
            family,
        }],
        Vec::new(),
    )
}

/// Single delta shell `lambda · δ(r - a)`.
pub fn build_delta_shell(lambda: f64, a: f64) -> Result<Potential> {
    Potential::delta_shell(lambda, a)
}
