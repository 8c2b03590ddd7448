//! Finite nonnegative measures on the positive half-line with an atomic part
//! and a piecewise-linear density part.
//!
//! Densities live on strictly increasing grids and may carry a singularity
//! exponent `s ∈ (−1, 0]` at either support endpoint, modeling
//! `C·(distance to endpoint)^s` behavior there; cell integrals then use the
//! closed-form power weight. Each cell additionally caches its mass so that
//! assembly code can pin quadrature-exact masses onto cells whose pointwise
//! sampled values would under-count an integrable singularity.

use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::numeric::integrate_gl;

/// Total masses below this are treated as zero.
pub const MASS_EPSILON: f64 = 1e-15;

const FORMAT_VERSION: &str = "conesphere.measure/1";

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("invalid measure data: {0}")]
    Invalid(String),
    #[error("moment diverges for exponent {exponent}")]
    DivergentMoment { exponent: f64 },
    #[error("branch map is not monotone on its domain")]
    NonMonotoneBranch,
    #[error("branch derivative vanishes in the interior of its domain")]
    ZeroDerivativeInInterior,
    #[error("measure has support outside every supplied branch domain")]
    UnmappedSupport,
    #[error("measure not normalized: total mass {mass} differs from 1 beyond 1e-9")]
    NotNormalized { mass: f64 },
    #[error("JSON error: {0}")]
    Json(String),
}

/// One point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub position: f64,
    pub mass: f64,
}

/// Piecewise-linear density on a strictly increasing positive grid, with
/// optional power-law endpoint singularities.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseDensity {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    left_exponent: Option<f64>,
    right_exponent: Option<f64>,
    cell_masses: Vec<f64>,
}

impl PiecewiseDensity {
    /// Build from samples; cell masses default to the closed-form integrals
    /// of the interpolant (with power weights in exponent cells).
    pub fn from_samples(
        breakpoints: Vec<f64>,
        values: Vec<f64>,
        left_exponent: Option<f64>,
        right_exponent: Option<f64>,
    ) -> Result<Self, MeasureError> {
        let mut d = Self {
            breakpoints,
            values,
            left_exponent,
            right_exponent,
            cell_masses: Vec::new(),
        };
        d.validate_shape()?;
        d.cell_masses = d.default_cell_masses();
        Ok(d)
    }

    /// Build with externally computed (e.g. quadrature-exact) cell masses.
    pub fn from_samples_with_masses(
        breakpoints: Vec<f64>,
        values: Vec<f64>,
        left_exponent: Option<f64>,
        right_exponent: Option<f64>,
        cell_masses: Vec<f64>,
    ) -> Result<Self, MeasureError> {
        let d = Self {
            breakpoints,
            values,
            left_exponent,
            right_exponent,
            cell_masses,
        };
        d.validate_shape()?;
        if d.cell_masses.len() + 1 != d.breakpoints.len() {
            return Err(MeasureError::Invalid(
                "cell_masses length must be breakpoints length - 1".into(),
            ));
        }
        if d.cell_masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(MeasureError::Invalid("cell masses must be >= 0".into()));
        }
        Ok(d)
    }

    fn validate_shape(&self) -> Result<(), MeasureError> {
        if self.breakpoints.len() < 2 {
            return Err(MeasureError::Invalid(
                "density needs at least two breakpoints".into(),
            ));
        }
        if self.breakpoints.len() != self.values.len() {
            return Err(MeasureError::Invalid(
                "breakpoints and values length mismatch".into(),
            ));
        }
        if self.breakpoints[0] <= 0.0 {
            return Err(MeasureError::Invalid(
                "support must lie in the positive half-line".into(),
            ));
        }
        for w in self.breakpoints.windows(2) {
            if !(w[1] > w[0]) {
                return Err(MeasureError::Invalid(
                    "breakpoints must be strictly increasing".into(),
                ));
            }
        }
        for v in &self.values {
            if !v.is_finite() || *v < 0.0 {
                return Err(MeasureError::Invalid(
                    "density values must be finite and nonnegative".into(),
                ));
            }
        }
        for e in [self.left_exponent, self.right_exponent].into_iter().flatten() {
            if !(e > -1.0 && e <= 0.0) {
                return Err(MeasureError::Invalid(format!(
                    "singularity exponent {e} outside (-1, 0]"
                )));
            }
        }
        Ok(())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn left_exponent(&self) -> Option<f64> {
        self.left_exponent
    }

    pub fn right_exponent(&self) -> Option<f64> {
        self.right_exponent
    }

    pub fn cell_masses(&self) -> &[f64] {
        &self.cell_masses
    }

    pub fn support(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    fn ncells(&self) -> usize {
        self.breakpoints.len() - 1
    }

    fn is_left_exp_cell(&self, i: usize) -> bool {
        i == 0 && self.left_exponent.is_some()
    }

    fn is_right_exp_cell(&self, i: usize) -> bool {
        i + 1 == self.ncells() && self.right_exponent.is_some()
    }

    /// Pointwise evaluation. In exponent cells the stored boundary sample is
    /// ignored and the power form anchored at the inner breakpoint is used.
    pub fn eval(&self, t: f64) -> f64 {
        let (lo, hi) = self.support();
        if t < lo || t > hi {
            return 0.0;
        }
        let i = match self
            .breakpoints
            .binary_search_by(|b| b.partial_cmp(&t).unwrap())
        {
            Ok(k) => k.min(self.ncells() - 1),
            Err(k) => (k - 1).min(self.ncells() - 1),
        };
        let i = if t >= self.breakpoints[i + 1] && i + 1 < self.ncells() {
            i + 1
        } else {
            i
        };
        self.eval_in_cell(i, t)
    }

    fn eval_in_cell(&self, i: usize, t: f64) -> f64 {
        let b0 = self.breakpoints[i];
        let b1 = self.breakpoints[i + 1];
        let h = b1 - b0;
        if self.is_left_exp_cell(i) {
            let s = self.left_exponent.unwrap();
            let u = ((t - b0) / h).max(0.0);
            if u == 0.0 && s < 0.0 {
                return f64::INFINITY;
            }
            return self.values[1] * u.powf(s);
        }
        if self.is_right_exp_cell(i) {
            let s = self.right_exponent.unwrap();
            let u = ((b1 - t) / h).max(0.0);
            if u == 0.0 && s < 0.0 {
                return f64::INFINITY;
            }
            return self.values[self.values.len() - 2] * u.powf(s);
        }
        let w = (t - b0) / h;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Closed-form integral of the interpolant over cell `i`.
    fn interpolant_cell_mass(&self, i: usize) -> f64 {
        let h = self.breakpoints[i + 1] - self.breakpoints[i];
        if self.is_left_exp_cell(i) {
            let s = self.left_exponent.unwrap();
            return self.values[1] * h / (s + 1.0);
        }
        if self.is_right_exp_cell(i) {
            let s = self.right_exponent.unwrap();
            return self.values[self.values.len() - 2] * h / (s + 1.0);
        }
        0.5 * (self.values[i] + self.values[i + 1]) * h
    }

    fn default_cell_masses(&self) -> Vec<f64> {
        (0..self.ncells())
            .map(|i| self.interpolant_cell_mass(i))
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.cell_masses.iter().sum()
    }

    /// Mass of `[support.0, t]`, consistent with the cached cell masses
    /// (interpolant partials rescaled per cell).
    pub fn mass_below(&self, t: f64) -> f64 {
        let (lo, hi) = self.support();
        if t <= lo {
            return 0.0;
        }
        if t >= hi {
            return self.total_mass();
        }
        let mut acc = 0.0;
        for i in 0..self.ncells() {
            let b1 = self.breakpoints[i + 1];
            if t >= b1 {
                acc += self.cell_masses[i];
            } else {
                acc += self.partial_cell_mass(i, t);
                break;
            }
        }
        acc
    }

    /// Mass of cell `i` restricted to `[breakpoints[i], t]`.
    fn partial_cell_mass(&self, i: usize, t: f64) -> f64 {
        let b0 = self.breakpoints[i];
        let b1 = self.breakpoints[i + 1];
        let h = b1 - b0;
        let t = t.clamp(b0, b1);
        let frac = if self.is_left_exp_cell(i) {
            let s = self.left_exponent.unwrap();
            ((t - b0) / h).powf(s + 1.0)
        } else if self.is_right_exp_cell(i) {
            let s = self.right_exponent.unwrap();
            1.0 - ((b1 - t) / h).powf(s + 1.0)
        } else {
            let pl = self.interpolant_cell_mass(i);
            if pl <= 0.0 {
                (t - b0) / h
            } else {
                let w = t - b0;
                let vt = self.eval_in_cell(i, t);
                (0.5 * (self.values[i] + vt) * w / pl).clamp(0.0, 1.0)
            }
        };
        self.cell_masses[i] * frac
    }

    pub fn density_mass_between(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        (self.mass_below(b) - self.mass_below(a)).max(0.0)
    }

    /// ∫ f dμ over cell `i`: cached mass times the mass-weighted average of
    /// `f`, the average taken against the interpolant shape.
    fn integrate_cell_against(&self, i: usize, f: &dyn Fn(f64) -> f64, gl: usize) -> f64 {
        let m = self.cell_masses[i];
        if m == 0.0 {
            return 0.0;
        }
        let b0 = self.breakpoints[i];
        let b1 = self.breakpoints[i + 1];
        let h = b1 - b0;
        if self.is_left_exp_cell(i) {
            let s = self.left_exponent.unwrap();
            // substitute u = (t-b0)/h = w^{1/(1+s)}: mass-uniform in w
            let avg = integrate_gl(|w| f(b0 + h * w.powf(1.0 / (1.0 + s))), 0.0, 1.0, gl);
            return m * avg;
        }
        if self.is_right_exp_cell(i) {
            let s = self.right_exponent.unwrap();
            let avg = integrate_gl(|w| f(b1 - h * w.powf(1.0 / (1.0 + s))), 0.0, 1.0, gl);
            return m * avg;
        }
        let pl = self.interpolant_cell_mass(i);
        if pl <= MASS_EPSILON * m.max(1.0) {
            return m * f(0.5 * (b0 + b1));
        }
        let raw = integrate_gl(|t| f(t) * self.eval_in_cell(i, t), b0, b1, gl);
        raw * (m / pl)
    }

    /// ∫ f dμ over the whole density part.
    pub fn integrate_against(&self, f: impl Fn(f64) -> f64, gl: usize) -> f64 {
        let f_ref: &dyn Fn(f64) -> f64 = &f;
        (0..self.ncells())
            .map(|i| self.integrate_cell_against(i, f_ref, gl))
            .sum()
    }

    /// ∫ f dμ restricted to `[lo, hi]`.
    pub fn integrate_window(&self, lo: f64, hi: f64, f: impl Fn(f64) -> f64, gl: usize) -> f64 {
        let (slo, shi) = self.support();
        let lo = lo.max(slo);
        let hi = hi.min(shi);
        if hi <= lo {
            return 0.0;
        }
        let f_ref: &dyn Fn(f64) -> f64 = &f;
        let mut acc = 0.0;
        let i0 = self.cell_index_of(lo);
        let i1 = self.cell_index_of(hi);
        for i in i0..=i1 {
            let b0 = self.breakpoints[i].max(lo);
            let b1 = self.breakpoints[i + 1].min(hi);
            if b1 <= b0 {
                continue;
            }
            if b0 == self.breakpoints[i] && b1 == self.breakpoints[i + 1] {
                acc += self.integrate_cell_against(i, f_ref, gl);
            } else {
                // clipped: integrate against the interpolant and rescale by
                // the cached-vs-interpolant cell ratio
                let pl = self.interpolant_cell_mass(i);
                let ratio = if pl > 0.0 { self.cell_masses[i] / pl } else { 0.0 };
                if self.is_left_exp_cell(i) || self.is_right_exp_cell(i) {
                    let mpart = self.partial_cell_mass(i, b1) - self.partial_cell_mass(i, b0);
                    acc += mpart * f(0.5 * (b0 + b1));
                } else {
                    acc += ratio * integrate_gl(|t| f(t) * self.eval_in_cell(i, t), b0, b1, gl);
                }
            }
        }
        acc
    }

    fn cell_index_of(&self, t: f64) -> usize {
        match self
            .breakpoints
            .binary_search_by(|b| b.partial_cmp(&t).unwrap())
        {
            Ok(k) => k.min(self.ncells() - 1),
            Err(0) => 0,
            Err(k) => (k - 1).min(self.ncells() - 1),
        }
    }
}

/// A finite nonnegative measure on `(0, ∞)`: atoms plus an optional density.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Measure1D {
    atoms: Vec<Atom>,
    density: Option<PiecewiseDensity>,
}

impl Measure1D {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(mut atoms: Vec<Atom>, density: Option<PiecewiseDensity>) -> Result<Self, MeasureError> {
        for a in &atoms {
            if !(a.position > 0.0) || !a.position.is_finite() {
                return Err(MeasureError::Invalid(format!(
                    "atom position {} must be strictly positive",
                    a.position
                )));
            }
            if !(a.mass > 0.0) || !a.mass.is_finite() {
                return Err(MeasureError::Invalid(format!(
                    "atom mass {} must be strictly positive",
                    a.mass
                )));
            }
        }
        atoms.sort_by(|a, b| a.position.partial_cmp(&b.position).unwrap());
        // merge coincident positions to keep the list strictly increasing
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if a.position <= last.position * (1.0 + 1e-15) => last.mass += a.mass,
                _ => merged.push(a),
            }
        }
        Ok(Self {
            atoms: merged,
            density,
        })
    }

    pub fn from_atom(position: f64, mass: f64) -> Result<Self, MeasureError> {
        Self::new(vec![Atom { position, mass }], None)
    }

    pub fn from_density(density: PiecewiseDensity) -> Self {
        Self {
            atoms: Vec::new(),
            density: Some(density),
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> Option<&PiecewiseDensity> {
        self.density.as_ref()
    }

    pub fn total_mass(&self) -> f64 {
        let m: f64 = self.atoms.iter().map(|a| a.mass).sum::<f64>()
            + self.density.as_ref().map_or(0.0, |d| d.total_mass());
        m
    }

    /// Measures below the mass floor are treated as zero.
    pub fn is_effectively_zero(&self) -> bool {
        self.total_mass() < MASS_EPSILON
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        if let Some(a) = self.atoms.first() {
            lo = lo.min(a.position);
        }
        if let Some(a) = self.atoms.last() {
            hi = hi.max(a.position);
        }
        if let Some(d) = &self.density {
            let (a, b) = d.support();
            lo = lo.min(a);
            hi = hi.max(b);
        }
        if lo.is_finite() {
            Some((lo, hi))
        } else {
            None
        }
    }

    /// ∫ f dμ.
    pub fn integrate_against(&self, f: impl Fn(f64) -> f64, gl: usize) -> f64 {
        let mut acc: f64 = self.atoms.iter().map(|a| a.mass * f(a.position)).sum();
        if let Some(d) = &self.density {
            acc += d.integrate_against(f, gl);
        }
        acc
    }

    /// ∫ t^e dμ(t). The represented measure always has a strictly positive,
    /// bounded support, so every moment of the representation is finite; the
    /// divergence error is raised only for non-finite exponents.
    pub fn moment(&self, exponent: f64) -> Result<f64, MeasureError> {
        if !exponent.is_finite() {
            return Err(MeasureError::DivergentMoment { exponent });
        }
        Ok(self.integrate_against(|t| t.powf(exponent), 12))
    }

    /// Right-continuous CDF value μ((0, t]).
    pub fn cdf(&self, t: f64) -> f64 {
        let mut acc: f64 = self
            .atoms
            .iter()
            .filter(|a| a.position <= t)
            .map(|a| a.mass)
            .sum();
        if let Some(d) = &self.density {
            acc += d.mass_below(t);
        }
        acc
    }

    /// Left limit μ((0, t)).
    pub fn cdf_left(&self, t: f64) -> f64 {
        let mut acc: f64 = self
            .atoms
            .iter()
            .filter(|a| a.position < t)
            .map(|a| a.mass)
            .sum();
        if let Some(d) = &self.density {
            acc += d.mass_below(t);
        }
        acc
    }

    /// Smallest `a` with μ((0, a]) ≥ p · total mass. Bisection to 1e-12
    /// absolute inside the located cell.
    pub fn quantile(&self, p: f64) -> f64 {
        assert!((0.0..1.0).contains(&p) || p == 0.0 || p < 1.0, "p in (0,1)");
        let total = self.total_mass();
        assert!(total > 0.0, "quantile of a zero measure");
        let target = p * total;
        // candidate jump points first
        let mut lo = match self.support() {
            Some((a, _)) => a,
            None => return 0.0,
        };
        if self.cdf(lo) >= target {
            return lo;
        }
        let (_, hi_all) = self.support().unwrap();
        let mut hi = hi_all;
        // atoms create jumps; check each
        for a in &self.atoms {
            if self.cdf(a.position) >= target && self.cdf_left(a.position) < target {
                return a.position;
            }
        }
        // bisection on the continuous part
        for _ in 0..200 {
            if hi - lo < 1e-12 * (1.0 + hi.abs()) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Rescale total mass by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Measure1D {
        assert!(c >= 0.0 && c.is_finite());
        if c == 0.0 {
            return Measure1D::zero();
        }
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                position: a.position,
                mass: a.mass * c,
            })
            .collect();
        let density = self.density.as_ref().map(|d| {
            PiecewiseDensity::from_samples_with_masses(
                d.breakpoints.clone(),
                d.values.iter().map(|v| v * c).collect(),
                d.left_exponent,
                d.right_exponent,
                d.cell_masses.iter().map(|m| m * c).collect(),
            )
            .expect("scaling preserves validity")
        });
        Measure1D {
            atoms,
            density,
        }
    }

    pub fn normalized(&self) -> Measure1D {
        let m = self.total_mass();
        assert!(m > 0.0);
        self.scaled(1.0 / m)
    }

    /// Nonnegative linear combination on the union grid. Exponents are not
    /// carried through; intended for exponent-free summands.
    pub fn linear_combination(parts: &[(f64, &Measure1D)]) -> Result<Measure1D, MeasureError> {
        let mut atoms: Vec<Atom> = Vec::new();
        for (c, mu) in parts {
            if *c < 0.0 {
                return Err(MeasureError::Invalid(
                    "combination coefficients must be >= 0".into(),
                ));
            }
            for a in &mu.atoms {
                atoms.push(Atom {
                    position: a.position,
                    mass: a.mass * c,
                });
            }
        }
        let mut grid: Vec<f64> = Vec::new();
        for (_, mu) in parts {
            if let Some(d) = &mu.density {
                grid.extend_from_slice(d.breakpoints());
            }
        }
        if grid.is_empty() {
            return Measure1D::new(atoms, None);
        }
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs());
        let values: Vec<f64> = grid
            .iter()
            .map(|&t| {
                parts
                    .iter()
                    .map(|(c, mu)| c * mu.density.as_ref().map_or(0.0, |d| d.eval(t)))
                    .sum()
            })
            .collect();
        let masses: Vec<f64> = grid
            .windows(2)
            .map(|w| {
                parts
                    .iter()
                    .map(|(c, mu)| {
                        c * mu
                            .density
                            .as_ref()
                            .map_or(0.0, |d| d.density_mass_between(w[0], w[1]))
                    })
                    .sum()
            })
            .collect();
        let density = PiecewiseDensity::from_samples_with_masses(grid, values, None, None, masses)?;
        Measure1D::new(atoms, Some(density))
    }
}

/// One monotone branch of a piecewise-monotone map, with inverse and
/// derivative supplied by the caller.
pub struct MonotoneBranch<'a> {
    pub domain: (f64, f64),
    pub map: Box<dyn Fn(f64) -> f64 + 'a>,
    pub inverse: Box<dyn Fn(f64) -> f64 + 'a>,
    pub derivative: Box<dyn Fn(f64) -> f64 + 'a>,
}

/// Distributional pushforward along a piecewise-monotone map.
///
/// Atoms move to their image positions with unchanged mass; density cells
/// transfer their exact cached masses to image cells (breakpoints map to
/// breakpoints per branch), and values transform with the inverse-derivative
/// Jacobian.
pub fn pushforward(mu: &Measure1D, branches: &[MonotoneBranch]) -> Result<Measure1D, MeasureError> {
    for br in branches {
        validate_branch(br)?;
    }
    let mut atoms = Vec::new();
    'atom: for a in mu.atoms() {
        for br in branches {
            if a.position >= br.domain.0 && a.position <= br.domain.1 {
                atoms.push(Atom {
                    position: (br.map)(a.position),
                    mass: a.mass,
                });
                continue 'atom;
            }
        }
        return Err(MeasureError::UnmappedSupport);
    }

    let density = match mu.density() {
        None => None,
        Some(d) => {
            let (slo, shi) = d.support();
            // per-branch image grids with exact mass transfer
            struct BranchImage {
                grid: Vec<f64>,
                values: Vec<f64>,
                masses: Vec<f64>,
            }
            let mut images: Vec<BranchImage> = Vec::new();
            let mut covered = 0.0f64;
            for br in branches {
                let lo = br.domain.0.max(slo);
                let hi = br.domain.1.min(shi);
                if hi <= lo {
                    continue;
                }
                covered += hi - lo;
                let mut xs: Vec<f64> = d
                    .breakpoints()
                    .iter()
                    .copied()
                    .filter(|&x| x > lo && x < hi)
                    .collect();
                xs.insert(0, lo);
                xs.push(hi);
                let increasing = (br.map)(hi) > (br.map)(lo);
                // keep only grid points whose images are strictly ordered;
                // cells squashed below floating resolution merge into their
                // neighbor's mass window
                let mut kept: Vec<(f64, f64)> = vec![(xs[0], (br.map)(xs[0]))];
                for &x in &xs[1..] {
                    let y = (br.map)(x);
                    let last = kept.last().unwrap().1;
                    let distinct = (y - last).abs() > 1e-15 * y.abs().max(last.abs());
                    if distinct && ((y > last) == increasing) {
                        kept.push((x, y));
                    }
                }
                if kept.len() < 2 {
                    continue;
                }
                let x_final = *xs.last().unwrap();
                let mut grid: Vec<f64> = kept.iter().map(|&(_, y)| y).collect();
                let mut values: Vec<f64> = kept
                    .iter()
                    .map(|&(x, _)| {
                        let dm = (br.derivative)(x).abs();
                        if dm > 0.0 {
                            d.eval(x) / dm
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let mut masses: Vec<f64> = (0..kept.len() - 1)
                    .map(|i| {
                        let x_end = if i + 2 == kept.len() {
                            x_final
                        } else {
                            kept[i + 1].0
                        };
                        d.density_mass_between(kept[i].0, x_end)
                    })
                    .collect();
                if !increasing {
                    grid.reverse();
                    values.reverse();
                    masses.reverse();
                }
                images.push(BranchImage {
                    grid,
                    values,
                    masses,
                });
            }
            if images.is_empty() {
                None
            } else {
                if covered < (shi - slo) * (1.0 - 1e-9) {
                    return Err(MeasureError::UnmappedSupport);
                }
                // merge branch images on the union grid
                let mut union: Vec<f64> = images.iter().flat_map(|im| im.grid.clone()).collect();
                union.sort_by(|a, b| a.partial_cmp(b).unwrap());
                union.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1e-300));
                // guard against residual near-ties after tolerance dedup
                {
                    let mut strict = Vec::with_capacity(union.len());
                    for y in union {
                        if strict.last().is_none_or(|&p| y > p) {
                            strict.push(y);
                        }
                    }
                    union = strict;
                }
                let mut values = vec![0.0; union.len()];
                let mut masses = vec![0.0; union.len() - 1];
                for im in &images {
                    let (glo, ghi) = (im.grid[0], *im.grid.last().unwrap());
                    let pd = PiecewiseDensity::from_samples_with_masses(
                        im.grid.clone(),
                        im.values.clone(),
                        None,
                        None,
                        im.masses.clone(),
                    )?;
                    for (k, &y) in union.iter().enumerate() {
                        if y >= glo && y <= ghi {
                            values[k] += pd.eval(y);
                        }
                    }
                    for k in 0..union.len() - 1 {
                        masses[k] += pd.density_mass_between(union[k], union[k + 1]);
                    }
                }
                // carry endpoint exponents when a support endpoint maps to an
                // image extremity under a single covering branch
                let mut left_exp = None;
                let mut right_exp = None;
                if images.len() == 1 {
                    let increasing = images[0].grid[0] < *images[0].grid.last().unwrap();
                    // value at mapped endpoint is junk when the source had an
                    // exponent there; reuse the power model on the image side
                    if increasing {
                        left_exp = d.left_exponent();
                        right_exp = d.right_exponent();
                    } else {
                        left_exp = d.right_exponent();
                        right_exp = d.left_exponent();
                    }
                }
                Some(PiecewiseDensity::from_samples_with_masses(
                    union, values, left_exp, right_exp, masses,
                )?)
            }
        }
    };
    Measure1D::new(atoms, density)
}

fn validate_branch(br: &MonotoneBranch) -> Result<(), MeasureError> {
    let (lo, hi) = br.domain;
    if !(hi > lo) {
        return Err(MeasureError::Invalid("branch domain empty".into()));
    }
    let n = 65;
    let mut sign = 0.0f64;
    for k in 1..n {
        let x = lo + (hi - lo) * k as f64 / n as f64;
        let dv = (br.derivative)(x);
        if dv == 0.0 || !dv.is_finite() {
            return Err(MeasureError::ZeroDerivativeInInterior);
        }
        if sign == 0.0 {
            sign = dv.signum();
        } else if dv.signum() != sign {
            return Err(MeasureError::NonMonotoneBranch);
        }
    }
    // map direction must agree with the derivative sign
    let dir = ((br.map)(hi) - (br.map)(lo)).signum();
    if dir != sign {
        return Err(MeasureError::NonMonotoneBranch);
    }
    Ok(())
}

/// Change of variables from the area variable `a` to the length `l = a^{−1/2}`:
/// `ρ(l) = 2 l^{−3} f(l^{−2})`, atoms at `a` move to `1/√a`. Mass preserving.
pub fn to_length_density(mu_area: &Measure1D) -> Measure1D {
    let sup = mu_area.support();
    let (lo, hi) = match sup {
        Some(s) => s,
        None => return Measure1D::zero(),
    };
    let branch = MonotoneBranch {
        domain: (lo * 0.5, hi * 2.0),
        map: Box::new(|a: f64| 1.0 / a.sqrt()),
        inverse: Box::new(|l: f64| 1.0 / (l * l)),
        derivative: Box::new(|a: f64| -0.5 * a.powf(-1.5)),
    };
    pushforward(mu_area, std::slice::from_ref(&branch)).expect("length map is monotone")
}

/// Inverse of [`to_length_density`].
pub fn from_length_density(mu_len: &Measure1D) -> Measure1D {
    let (lo, hi) = match mu_len.support() {
        Some(s) => s,
        None => return Measure1D::zero(),
    };
    let branch = MonotoneBranch {
        domain: (lo * 0.5, hi * 2.0),
        map: Box::new(|l: f64| 1.0 / (l * l)),
        inverse: Box::new(|a: f64| 1.0 / a.sqrt()),
        derivative: Box::new(|l: f64| -2.0 / (l * l * l)),
    };
    pushforward(mu_len, std::slice::from_ref(&branch)).expect("length map is monotone")
}

/// Kolmogorov–Smirnov distance between two unit-mass measures, evaluated on
/// the merged breakpoint set plus atom positions (left and right limits).
pub fn ks_distance(mu: &Measure1D, nu: &Measure1D) -> Result<f64, MeasureError> {
    for m in [mu, nu] {
        let mass = m.total_mass();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(MeasureError::NotNormalized { mass });
        }
    }
    let mut pts: Vec<f64> = Vec::new();
    for m in [mu, nu] {
        pts.extend(m.atoms().iter().map(|a| a.position));
        if let Some(d) = m.density() {
            pts.extend_from_slice(d.breakpoints());
        }
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let mut sup: f64 = 0.0;
    for &t in &pts {
        sup = sup
            .max((mu.cdf(t) - nu.cdf(t)).abs())
            .max((mu.cdf_left(t) - nu.cdf_left(t)).abs());
    }
    Ok(sup)
}

/// KS distance between a sorted empirical sample and a unit-mass measure.
pub fn ks_distance_empirical(sorted_samples: &[f64], model: &Measure1D) -> Result<f64, MeasureError> {
    let mass = model.total_mass();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(MeasureError::NotNormalized { mass });
    }
    let n = sorted_samples.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in sorted_samples.iter().enumerate() {
        let fm = model.cdf(x);
        sup = sup
            .max(((i + 1) as f64 / n - fm).abs())
            .max((i as f64 / n - fm).abs());
    }
    Ok(sup)
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MeasureJson {
    format_version: String,
    atoms: Vec<[f64; 2]>,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    left_exponent: Option<f64>,
    right_exponent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

impl Measure1D {
    pub fn to_json(&self, provenance: Option<serde_json::Value>) -> String {
        let (breakpoints, values, left_exponent, right_exponent) = match self.density() {
            Some(d) => (
                d.breakpoints().to_vec(),
                d.values().to_vec(),
                d.left_exponent(),
                d.right_exponent(),
            ),
            None => (Vec::new(), Vec::new(), None, None),
        };
        let doc = MeasureJson {
            format_version: FORMAT_VERSION.to_string(),
            atoms: self.atoms().iter().map(|a| [a.position, a.mass]).collect(),
            breakpoints,
            values,
            left_exponent,
            right_exponent,
            provenance,
        };
        serde_json::to_string_pretty(&doc).expect("measure serialization")
    }

    pub fn from_json(text: &str) -> Result<(Measure1D, Option<serde_json::Value>), MeasureError> {
        let doc: MeasureJson =
            serde_json::from_str(text).map_err(|e| MeasureError::Json(e.to_string()))?;
        if doc.format_version != FORMAT_VERSION {
            return Err(MeasureError::Json(format!(
                "unsupported format version {}",
                doc.format_version
            )));
        }
        let atoms = doc
            .atoms
            .iter()
            .map(|[p, m]| Atom {
                position: *p,
                mass: *m,
            })
            .collect();
        let density = if doc.breakpoints.is_empty() {
            None
        } else {
            Some(PiecewiseDensity::from_samples(
                doc.breakpoints,
                doc.values,
                doc.left_exponent,
                doc.right_exponent,
            )?)
        };
        Ok((Measure1D::new(atoms, density)?, doc.provenance))
    }

    /// CSV export of the density samples (`a,f` header). Atoms are never
    /// interpolated into the CSV; they belong in the JSON sidecar.
    pub fn write_density_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "a,f")?;
        if let Some(d) = self.density() {
            for (b, v) in d.breakpoints().iter().zip(d.values().iter()) {
                writeln!(w, "{b},{v}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_density(lo: f64, hi: f64, value: f64, cells: usize) -> PiecewiseDensity {
        let bp: Vec<f64> = (0..=cells)
            .map(|i| lo + (hi - lo) * i as f64 / cells as f64)
            .collect();
        let vals = vec![value; cells + 1];
        PiecewiseDensity::from_samples(bp, vals, None, None).unwrap()
    }

    #[test]
    fn total_mass_examples() {
        let m = Measure1D::from_atom(0.5, 1.0).unwrap();
        assert_eq!(m.total_mass(), 1.0);
        assert_eq!(Measure1D::zero().total_mass(), 0.0);
        assert!(Measure1D::zero().is_effectively_zero());
        let d = uniform_density(1.0, 3.0, 0.5, 10);
        let m = Measure1D::from_density(d);
        assert!((m.total_mass() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn moment_examples() {
        let m = Measure1D::from_atom(0.5, 1.0).unwrap();
        let v = m.moment(-0.5).unwrap();
        assert!((v - 2.0_f64.sqrt()).abs() < 1e-14);
        assert!((m.moment(0.0).unwrap() - m.total_mass()).abs() < 1e-14);
    }

    #[test]
    fn quantile_examples() {
        let m = Measure1D::from_atom(0.5, 1.0).unwrap();
        assert!((m.quantile(0.5) - 0.5).abs() < 1e-12);
        let m = Measure1D::from_density(uniform_density(1.0, 3.0, 0.5, 16));
        assert!((m.quantile(0.25) - 1.5).abs() < 1e-9);
        // monotone in p
        let mut prev = 0.0;
        for k in 1..20 {
            let q = m.quantile(k as f64 / 20.0);
            assert!(q >= prev);
            prev = q;
        }
    }

    #[test]
    fn pushforward_atom_doubling() {
        let m = Measure1D::from_atom(0.5, 1.0).unwrap();
        let br = MonotoneBranch {
            domain: (0.0, 10.0),
            map: Box::new(|x| 2.0 * x),
            inverse: Box::new(|y| y / 2.0),
            derivative: Box::new(|_| 2.0),
        };
        let out = pushforward(&m, &[br]).unwrap();
        assert_eq!(out.atoms().len(), 1);
        assert!((out.atoms()[0].position - 1.0).abs() < 1e-15);
        assert!((out.atoms()[0].mass - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pushforward_square_map_density() {
        // uniform density on [eps, 1] under a -> a^2 gives 1/(2 sqrt y)
        let d = uniform_density(1e-4, 1.0, 1.0, 400);
        let m = Measure1D::from_density(d);
        let br = MonotoneBranch {
            domain: (0.0, 2.0),
            map: Box::new(|x: f64| x * x),
            inverse: Box::new(|y: f64| y.sqrt()),
            derivative: Box::new(|x| 2.0 * x),
        };
        let out = pushforward(&m, &[br]).unwrap();
        assert!((out.total_mass() - m.total_mass()).abs() < 1e-12);
        let od = out.density().unwrap();
        for &y in &[0.09f64, 0.25, 0.64, 0.9] {
            let expect = 0.5 / y.sqrt();
            let got = od.eval(y);
            assert!(
                (got - expect).abs() < 2e-3 * expect,
                "y={y} got {got} expect {expect}"
            );
        }
    }

    #[test]
    fn pushforward_two_branch_sine() {
        // d beta on (0, pi) under sin: density 2/sqrt(1-a^2) on (0,1)
        let d = uniform_density(1e-6, std::f64::consts::PI - 1e-6, 1.0, 2000);
        let m = Measure1D::from_density(d);
        let b1 = MonotoneBranch {
            domain: (0.0, std::f64::consts::FRAC_PI_2),
            map: Box::new(|x: f64| x.sin()),
            inverse: Box::new(|y: f64| y.asin()),
            derivative: Box::new(|x: f64| x.cos()),
        };
        let b2 = MonotoneBranch {
            domain: (std::f64::consts::FRAC_PI_2, std::f64::consts::PI),
            map: Box::new(|x: f64| x.sin()),
            inverse: Box::new(|y: f64| std::f64::consts::PI - y.asin()),
            derivative: Box::new(|x: f64| x.cos()),
        };
        let out = pushforward(&m, &[b1, b2]).unwrap();
        assert!((out.total_mass() - m.total_mass()).abs() < 1e-9 * m.total_mass());
        let od = out.density().unwrap();
        for &y in &[0.2f64, 0.5, 0.8] {
            let expect = 2.0 / (1.0 - y * y).sqrt();
            let got = od.eval(y);
            assert!(
                (got - expect).abs() < 5e-3 * expect,
                "y={y} got {got} expect {expect}"
            );
        }
        // Monte Carlo cross-check of the CDF at a few points
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 200_000;
        let mut count_half = 0usize;
        for _ in 0..n {
            let b: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            if b.sin() <= 0.5 {
                count_half += 1;
            }
        }
        let emp = count_half as f64 / n as f64 * m.total_mass();
        let model = out.cdf(0.5);
        assert!(
            (emp - model).abs() < 0.02 * m.total_mass(),
            "emp {emp} model {model}"
        );
    }

    #[test]
    fn length_density_examples() {
        let m = Measure1D::from_atom(4.0, 1.0).unwrap();
        let l = to_length_density(&m);
        assert!((l.atoms()[0].position - 0.5).abs() < 1e-15);
        assert!((l.atoms()[0].mass - 1.0).abs() < 1e-15);

        // round trip preserves cell masses to 1e-9
        let d = uniform_density(0.5, 2.5, 0.7, 64);
        let m = Measure1D::from_density(d);
        let back = from_length_density(&to_length_density(&m));
        assert!((back.total_mass() - m.total_mass()).abs() < 1e-9);
        let bd = back.density().unwrap();
        let od = m.density().unwrap();
        for w in od.breakpoints().windows(2) {
            let m0 = od.density_mass_between(w[0], w[1]);
            let m1 = bd.density_mass_between(w[0], w[1]);
            assert!((m0 - m1).abs() < 1e-9, "cell [{},{}]: {m0} vs {m1}", w[0], w[1]);
        }
    }

    #[test]
    fn pushforward_rejects_bad_branches() {
        let m = Measure1D::from_density(uniform_density(0.5, 2.0, 1.0, 8));
        // non-monotone map over the support
        let bad = MonotoneBranch {
            domain: (0.0, 3.0),
            map: Box::new(|x: f64| (x - 1.2) * (x - 1.2)),
            inverse: Box::new(|y: f64| 1.2 + y.sqrt()),
            derivative: Box::new(|x: f64| 2.0 * (x - 1.2)),
        };
        assert!(matches!(
            pushforward(&m, &[bad]),
            Err(MeasureError::NonMonotoneBranch) | Err(MeasureError::ZeroDerivativeInInterior)
        ));
        // derivative pinned to zero inside the domain
        let flat = MonotoneBranch {
            domain: (0.0, 3.0),
            map: Box::new(|x: f64| x),
            inverse: Box::new(|y: f64| y),
            derivative: Box::new(|x: f64| if (x - 1.0).abs() < 0.2 { 0.0 } else { 1.0 }),
        };
        assert!(matches!(
            pushforward(&m, &[flat]),
            Err(MeasureError::ZeroDerivativeInInterior)
        ));
        // support not covered by any branch
        let partial = MonotoneBranch {
            domain: (0.0, 1.0),
            map: Box::new(|x: f64| x),
            inverse: Box::new(|y: f64| y),
            derivative: Box::new(|_| 1.0),
        };
        assert!(matches!(
            pushforward(&m, &[partial]),
            Err(MeasureError::UnmappedSupport)
        ));
    }

    #[test]
    fn divergent_moment_rejected() {
        let m = Measure1D::from_atom(1.0, 1.0).unwrap();
        assert!(matches!(
            m.moment(f64::INFINITY),
            Err(MeasureError::DivergentMoment { .. })
        ));
    }

    #[test]
    fn ks_examples() {
        let a = Measure1D::from_atom(1.0, 1.0).unwrap();
        let b = Measure1D::from_atom(2.0, 1.0).unwrap();
        assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
        assert!((ks_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let heavy = Measure1D::from_atom(1.0, 2.0).unwrap();
        assert!(matches!(
            ks_distance(&heavy, &a),
            Err(MeasureError::NotNormalized { .. })
        ));
    }

    #[test]
    fn linearity_of_total_mass() {
        let m1 = Measure1D::from_density(uniform_density(1.0, 2.0, 1.0, 8));
        let m2 = Measure1D::from_density(uniform_density(1.5, 3.0, 2.0, 8));
        let c = Measure1D::linear_combination(&[(2.0, &m1), (0.5, &m2)]).unwrap();
        let expect = 2.0 * m1.total_mass() + 0.5 * m2.total_mass();
        assert!((c.total_mass() - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn exponent_cell_mass_and_eval() {
        // density ~ (t-1)^(-1/2) on [1, 2] scaled so value at t=2 is 3
        let bp = vec![1.0, 2.0];
        let vals = vec![0.0, 3.0];
        let d = PiecewiseDensity::from_samples(bp, vals, Some(-0.5), None).unwrap();
        // mass = 3 * 1 / (1 - 0.5) = 6
        assert!((d.total_mass() - 6.0).abs() < 1e-12);
        // eval halfway: 3 * (0.5)^(-1/2)
        assert!((d.eval(1.5) - 3.0 * 0.5_f64.powf(-0.5)).abs() < 1e-12);
        // integrate t dmu = 3 * int_0^1 (1+u) u^{-1/2} du = 3*(2 + 2/3) = 8
        let v = Measure1D::from_density(d).moment(1.0).unwrap();
        assert!((v - 8.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn json_round_trip() {
        let d = PiecewiseDensity::from_samples(
            vec![0.5, 1.0, 2.0],
            vec![0.25, 1.0, 0.125],
            None,
            Some(-0.5),
        )
        .unwrap();
        let m = Measure1D::new(
            vec![Atom {
                position: 3.0,
                mass: 0.75,
            }],
            Some(d),
        )
        .unwrap();
        let text = m.to_json(Some(serde_json::json!({"k": 1})));
        let (back, prov) = Measure1D::from_json(&text).unwrap();
        assert_eq!(back.atoms().len(), 1);
        assert!(prov.is_some());
        assert_eq!(
            back.density().unwrap().breakpoints(),
            m.density().unwrap().breakpoints()
        );
        assert_eq!(back.density().unwrap().right_exponent(), Some(-0.5));
        assert!((back.total_mass() - m.total_mass()).abs() < 1e-12);
    }

    #[test]
    fn csv_has_no_atoms() {
        let d = uniform_density(1.0, 2.0, 1.0, 2);
        let m = Measure1D::new(
            vec![Atom {
                position: 9.0,
                mass: 1.0,
            }],
            Some(d),
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_density_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("a,f\n"));
        assert!(!text.contains('9'), "atom leaked into CSV: {text}");
    }
}
