//! The area-density recurrence: base atoms for one-cone-point signatures,
//! assembly of the shuffle-sum source term, and the integrating-factor solve
//! of the governing first-order ODE.
//!
//! Governing strong form (for `q = q(φ)`, `n = #α`):
//!
//! ```text
//! (1 − q a) f′(a) + (n/a − 2 q) f(a) = S(a)
//! ```
//!
//! with integrating factor `μ(a) = aⁿ (1 − q a)^{2−n}` and `f ≡ 0` below the
//! source support. The source is `c₀` times the ordered-shuffle sum of the
//! splitting integrals; `c₀ = 1/4` is pinned by the closed-form solution of
//! the four-π-cone anchor and re-derived by [`calibrate`]. For
//! `φ₁ + φ₂ < 2π` the solution is supported in `(0, 1/q]`; otherwise the
//! support is unbounded and the density decays like `a⁻²`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::measure::{Measure1D, MeasureError, PiecewiseDensity};
use crate::numeric::{fnv1a, gauss_legendre, run_indexed, Bump, TestFunction};
use crate::signature::{
    beta_interval, enumerate_splits, q_factor, sub_signatures, AngleSignature, SignatureError,
    Split,
};

/// Range of the Gauss–Legendre rule in the tanh-transformed β variable.
const TANH_RANGE: f64 = 8.0;
/// Geometric ratio of the tail extension cells.
const TAIL_RATIO: f64 = 1.02;
/// Hard cap on the tail extension in units of the source support top.
const TAIL_CAP_FACTOR: f64 = 3.0e4;

#[derive(Debug, Error)]
pub enum RecurrenceError {
    #[error(transparent)]
    Signature(#[from] SignatureError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("operation requires #alpha = {expected}, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("arity {arity} exceeds the configured maximum {max}")]
    ArityLimitExceeded { arity: usize, max: usize },
    #[error("missing child density for {0}")]
    MissingChild(String),
    #[error("quadrature failed to converge: {0}")]
    QuadratureNotConverged(String),
    #[error("singularity unresolved near the support bound: {0}")]
    SingularityUnresolved(String),
    #[error("negative density {value} at a = {at}")]
    NegativeDensity { at: f64, value: f64 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("cache I/O: {0}")]
    Cache(String),
}

/// Numerical knobs of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Quadrature nodes per split in the β variable.
    pub beta_nodes: usize,
    /// Density grid resolution (base geometric grid point count).
    pub grid_cells: usize,
    /// Geometric refinement factor toward support endpoints and singular
    /// points.
    pub grading_ratio: f64,
    /// Overall constant applied to the ordered-shuffle sum.
    pub calibration_constant: f64,
    /// Relative tolerance target of the integrating-factor quadrature.
    pub ode_tolerance: f64,
    /// Largest admissible #alpha.
    pub max_arity: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta_nodes: 256,
            grid_cells: 2048,
            grading_ratio: 1.15,
            calibration_constant: 0.25,
            ode_tolerance: 1e-9,
            max_arity: 4,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), RecurrenceError> {
        if self.beta_nodes < 8 || self.grid_cells < 8 {
            return Err(RecurrenceError::InvalidConfig(
                "beta_nodes and grid_cells must be at least 8".into(),
            ));
        }
        if !(self.ode_tolerance > 0.0 && self.ode_tolerance < 1e-3) {
            return Err(RecurrenceError::InvalidConfig(
                "ode_tolerance must lie in (0, 1e-3)".into(),
            ));
        }
        if !(self.calibration_constant > 0.0) {
            return Err(RecurrenceError::InvalidConfig(
                "calibration constant must be positive".into(),
            ));
        }
        if !(self.grading_ratio > 1.0 && self.grading_ratio < 4.0) {
            return Err(RecurrenceError::InvalidConfig(
                "grading ratio must lie in (1, 4)".into(),
            ));
        }
        if self.max_arity < 1 {
            return Err(RecurrenceError::InvalidConfig("max_arity must be >= 1".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        format!(
            "b{}g{}r{:.6e}c{:.12e}t{:.3e}m{}",
            self.beta_nodes,
            self.grid_cells,
            self.grading_ratio,
            self.calibration_constant,
            self.ode_tolerance,
            self.max_arity
        )
    }
}

/// Upper bound of the support of `f(φ, α, ·)`: `+∞` if `φ₁ + φ₂ ≥ 2π`,
/// else `1/q(φ)`.
pub fn upper_support(phi1: f64, phi2: f64) -> f64 {
    if phi1 + phi2 >= 2.0 * std::f64::consts::PI {
        f64::INFINITY
    } else {
        // both angles below 2π here, so q is finite and positive
        1.0 / q_factor(phi1, phi2).expect("no pole below 2*pi")
    }
}

/// Base case: a unit atom at `1/q(φ)` for single-defect signatures.
pub fn base_density(sig: &AngleSignature) -> Result<Measure1D, RecurrenceError> {
    if sig.arity() != 1 {
        return Err(RecurrenceError::WrongArity {
            expected: 1,
            got: sig.arity(),
        });
    }
    let q = q_factor(sig.phi1(), sig.phi2())?;
    debug_assert!(q > 0.0, "n = 1 forces phi1 + phi2 = alpha1 < 2*pi");
    Ok(Measure1D::from_atom(1.0 / q, 1.0)?)
}

/// Assembled right-hand side of the recurrence for one signature.
#[derive(Debug, Clone)]
pub struct SourceTerm {
    pub signature: AngleSignature,
    pub measure: Measure1D,
    pub per_split_breakdown: Vec<(Split, Measure1D)>,
}

// ---------------------------------------------------------------------------
// cotangent curve of an atom-atom split
// ---------------------------------------------------------------------------

/// cot(x/2); ±∞ at poles of the half-angle.
fn hc(x: f64) -> f64 {
    let h = x / 2.0;
    h.cos() / h.sin()
}

/// d/dx cot(x/2).
fn dhc(x: f64) -> f64 {
    let s = (x / 2.0).sin();
    -0.5 / (s * s)
}

/// The two atom positions and the integrand of an atom-atom split as
/// functions of β.
struct AtomCurve {
    phi1: f64,
    sum_hat: f64,
    sum_tilde: f64,
    lo: f64,
    hi: f64,
    c0: f64,
}

#[derive(Clone, Copy)]
struct CurvePoint {
    a: f64,
    lambda: f64,
    dadb: f64,
}

impl AtomCurve {
    fn new(sig: &AngleSignature, split: &Split, c0: f64) -> Self {
        let (lo, hi) = beta_interval(sig, split);
        Self {
            phi1: sig.phi1(),
            sum_hat: split.sum_hat(sig),
            sum_tilde: split.sum_tilde(sig),
            lo,
            hi,
            c0,
        }
    }

    fn eval(&self, beta: f64) -> CurvePoint {
        let (x1, y1) = (beta, self.sum_hat - beta);
        let (x2, y2) = (self.phi1 - beta, self.sum_tilde - self.phi1 + beta);
        let qh = hc(x1) + hc(y1);
        let qt = hc(x2) + hc(y2);
        let p1 = if qh.is_finite() { 1.0 / qh } else { 0.0 };
        let p2 = if qt.is_finite() { 1.0 / qt } else { 0.0 };
        let a = p1 + p2;
        // kappa * weight with n1 = n2 = 1, n = 2 simplifies to c0 (p1+p2)/a^2
        let lambda = if a > 0.0 { self.c0 / a } else { f64::INFINITY };
        let dq_h = dhc(x1) - dhc(y1);
        let dq_t = -dhc(x2) + dhc(y2);
        let dp1 = if qh.is_finite() { -dq_h / (qh * qh) } else { 0.0 };
        let dp2 = if qt.is_finite() { -dq_t / (qt * qt) } else { 0.0 };
        CurvePoint {
            a,
            lambda,
            dadb: dp1 + dp2,
        }
    }

    /// β samples dense toward both endpoints (tanh-spaced), endpoints
    /// included.
    fn sample_betas(&self, count: usize) -> Vec<f64> {
        let mid = 0.5 * (self.lo + self.hi);
        let half = 0.5 * (self.hi - self.lo);
        let range = 14.0;
        (0..=count)
            .map(|k| {
                let u = -range + 2.0 * range * k as f64 / count as f64;
                mid + half * u.tanh()
            })
            .collect()
    }

    /// Interior critical points of a(β), by sign changes of the derivative.
    fn critical_points(&self) -> Vec<f64> {
        let betas = self.sample_betas(4096);
        let mut crits = Vec::new();
        let mut prev_b = betas[0];
        let mut prev_d = self.eval(prev_b).dadb;
        for &b in &betas[1..] {
            let d = self.eval(b).dadb;
            if prev_d == 0.0 {
                crits.push(prev_b);
            } else if prev_d * d < 0.0 {
                let root = crate::numeric::brent(|x| self.eval(x).dadb, prev_b, b, 1e-15);
                crits.push(root);
            }
            prev_b = b;
            prev_d = d;
        }
        crits
    }
}

/// A monotone β-branch with its image interval.
struct CurveBranch {
    b0: f64,
    b1: f64,
    a0: f64,
    a1: f64,
    increasing: bool,
}

fn curve_branches(curve: &AtomCurve) -> Vec<CurveBranch> {
    let mut cuts = vec![curve.lo];
    cuts.extend(curve.critical_points());
    cuts.push(curve.hi);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * (curve.hi - curve.lo));
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (b0, b1) = (w[0], w[1]);
        let a0 = curve.eval(b0).a;
        let a1 = curve.eval(b1).a;
        if (a1 - a0).abs() <= 0.0 {
            continue;
        }
        out.push(CurveBranch {
            b0,
            b1,
            a0,
            a1,
            increasing: a1 > a0,
        });
    }
    out
}

/// Invert a(β) = target on a monotone branch by safeguarded Newton.
fn invert_on_branch(curve: &AtomCurve, br: &CurveBranch, target: f64) -> f64 {
    let (mut lo, mut hi) = (br.b0, br.b1);
    let (alo, ahi) = if br.increasing {
        (br.a0, br.a1)
    } else {
        (br.a1, br.a0)
    };
    if target <= alo.min(ahi) || target >= alo.max(ahi) {
        // clamp to the nearer endpoint
        let d0 = (curve.eval(br.b0).a - target).abs();
        let d1 = (curve.eval(br.b1).a - target).abs();
        return if d0 <= d1 { br.b0 } else { br.b1 };
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..100 {
        let p = curve.eval(x);
        let err = p.a - target;
        if err.abs() <= 1e-14 * target.abs().max(1e-300) {
            return x;
        }
        let sign_up = err > 0.0;
        if sign_up == br.increasing {
            hi = x;
        } else {
            lo = x;
        }
        let mut next = if p.dadb != 0.0 { x - err / p.dadb } else { x };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
            return next;
        }
        x = next;
    }
    x
}

// ---------------------------------------------------------------------------
// grid construction
// ---------------------------------------------------------------------------

/// Geometric base grid over `[lo, hi]` with ladders graded toward each
/// special point from both sides.
fn build_grid(lo: f64, hi: f64, specials: &[f64], config: &SolverConfig) -> Vec<f64> {
    assert!(hi > lo && lo > 0.0);
    let mut pts = Vec::with_capacity(config.grid_cells + specials.len() * 140 + 8);
    let n = config.grid_cells;
    let ratio = (hi / lo).powf(1.0 / n as f64);
    let mut x = lo;
    for _ in 0..=n {
        pts.push(x.min(hi));
        x *= ratio;
    }
    let span = hi - lo;
    let log_ratio = (hi / lo).ln() / n as f64;
    for &p in specials {
        let mut step = span * 1e-9;
        // run the ladder out until it meets the local base-grid spacing
        let ambient = (span * 4.0 / n as f64).max(8.0 * p * log_ratio);
        while step < ambient {
            for cand in [p - step, p + step] {
                if cand > lo && cand < hi {
                    pts.push(cand);
                }
            }
            step *= config.grading_ratio;
        }
        if p > lo && p < hi {
            pts.push(p);
        }
    }
    strictify_grid(pts, lo, hi)
}

/// Sort, merge near-ties, and pin the exact endpoints.
fn strictify_grid(mut pts: Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
    let tol = 1e-13;
    pts.retain(|&p| p > lo + tol * lo.abs() && p < hi - tol * hi.abs());
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = Vec::with_capacity(pts.len() + 2);
    out.push(lo);
    for p in pts {
        if p - out.last().unwrap() > tol * p.abs() {
            out.push(p);
        }
    }
    out.push(hi);
    out
}

// ---------------------------------------------------------------------------
// the solver
// ---------------------------------------------------------------------------

type MemoKey = (i64, i64, Vec<i64>);

fn memo_key(sig: &AngleSignature) -> MemoKey {
    let r = |x: f64| (x / 1e-10).round() as i64;
    (
        r(sig.phi1()),
        r(sig.phi2()),
        sig.alpha().iter().map(|&a| r(a)).collect(),
    )
}

/// Recurrence driver with memoization and an optional on-disk result cache.
pub struct Solver {
    config: SolverConfig,
    workers: usize,
    cache_dir: Option<PathBuf>,
    memo: Mutex<HashMap<MemoKey, Arc<Measure1D>>>,
}

impl Solver {
    pub fn new(config: SolverConfig) -> Result<Self, RecurrenceError> {
        config.validate()?;
        Ok(Self {
            config,
            workers: 1,
            cache_dir: None,
            memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_cache_dir(mut self, dir: impl AsRef<Path>) -> Self {
        self.cache_dir = Some(dir.as_ref().to_path_buf());
        self
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// The area density `f(φ, α, ·)`, with on-disk caching when configured.
    pub fn density(&self, sig: &AngleSignature) -> Result<Arc<Measure1D>, RecurrenceError> {
        if let Some(path) = self.cache_path(sig) {
            if let Some(hit) = self.try_read_cache(&path) {
                return Ok(Arc::new(hit));
            }
            let result = self.density_rec(sig)?;
            self.write_cache(&path, sig, &result)?;
            return Ok(result);
        }
        self.density_rec(sig)
    }

    fn density_rec(&self, sig: &AngleSignature) -> Result<Arc<Measure1D>, RecurrenceError> {
        let n = sig.arity();
        if n > self.config.max_arity {
            return Err(RecurrenceError::ArityLimitExceeded {
                arity: n,
                max: self.config.max_arity,
            });
        }
        let key = memo_key(sig);
        if let Some(hit) = self.memo.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let result = if n == 1 {
            base_density(sig)?
        } else {
            let st = self.source_term(sig)?;
            let q = q_factor(sig.phi1(), sig.phi2())?;
            solve_ode(
                q,
                n,
                &st.measure,
                upper_support(sig.phi1(), sig.phi2()),
                &self.config,
            )?
        };
        let arc = Arc::new(result);
        self.memo
            .lock()
            .unwrap()
            .entry(key)
            .or_insert_with(|| arc.clone());
        Ok(arc)
    }

    /// Total mass of the density: the moduli volume.
    pub fn volume(&self, sig: &AngleSignature) -> Result<f64, RecurrenceError> {
        Ok(self.density(sig)?.total_mass())
    }

    /// Mean and median of the length function `l = a^{−1/2}`.
    pub fn length_stats(&self, sig: &AngleSignature) -> Result<(f64, f64), RecurrenceError> {
        let f = self.density(sig)?;
        let vol = f.total_mass();
        if vol <= 0.0 {
            return Err(RecurrenceError::QuadratureNotConverged(
                "zero-mass density".into(),
            ));
        }
        let mean = f.moment(-0.5)? / vol;
        let length = crate::measure::to_length_density(&f);
        let median = length.quantile(0.5);
        Ok((mean, median))
    }

    /// Assemble the shuffle-sum source for an `n ≥ 2` signature. Children are
    /// computed recursively (and in parallel across β nodes when workers are
    /// configured).
    pub fn source_term(&self, sig: &AngleSignature) -> Result<SourceTerm, RecurrenceError> {
        let n = sig.arity();
        if n < 2 {
            // no splits: the right-hand side vanishes
            return Ok(SourceTerm {
                signature: sig.clone(),
                measure: Measure1D::zero(),
                per_split_breakdown: Vec::new(),
            });
        }
        let c0 = self.config.calibration_constant;
        let splits = enumerate_splits(sig);

        enum Plan {
            AtomAtom {
                curve: AtomCurve,
                branches: Vec<CurveBranch>,
            },
            Nodes {
                weights: Vec<f64>,
                kappas: Vec<f64>,
                hats: Vec<Arc<Measure1D>>,
                tildes: Vec<Arc<Measure1D>>,
                n1: usize,
                n2: usize,
            },
        }

        // Pass 1: per-split plans and support metadata
        let mut plans: Vec<Plan> = Vec::with_capacity(splits.len());
        let mut s_lo = f64::INFINITY;
        let mut s_hi: f64 = 0.0;
        let mut specials: Vec<f64> = Vec::new();
        let (gl_u, gl_w) = gauss_legendre(self.config.beta_nodes);

        for split in &splits {
            let n1 = split.hat_indices().len();
            let n2 = split.tilde_indices().len();
            if n1 == 1 && n2 == 1 {
                let curve = AtomCurve::new(sig, split, c0);
                let branches = curve_branches(&curve);
                for br in &branches {
                    for a in [br.a0, br.a1] {
                        if a > 0.0 {
                            specials.push(a);
                            s_lo = s_lo.min(a);
                            s_hi = s_hi.max(a);
                        } else {
                            s_lo = 0.0;
                        }
                    }
                }
                plans.push(Plan::AtomAtom { curve, branches });
            } else {
                let (lo, hi) = beta_interval(sig, split);
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo);
                let betas: Vec<f64> = gl_u
                    .iter()
                    .map(|&u| mid + half * (TANH_RANGE * u).tanh())
                    .collect();
                let weights: Vec<f64> = gl_u
                    .iter()
                    .zip(gl_w.iter())
                    .map(|(&u, &w)| {
                        let t = (TANH_RANGE * u).cosh();
                        w * TANH_RANGE * half / (t * t)
                    })
                    .collect();
                // children, deduplicated through the memo and computed in
                // parallel when configured
                let pairs: Vec<_> = betas
                    .iter()
                    .map(|&b| sub_signatures(sig, split, b))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut jobs = Vec::new();
                let mut seen = std::collections::HashSet::new();
                for p in &pairs {
                    for child in [&p.hat, &p.tilde] {
                        if seen.insert(memo_key(child)) {
                            let c = child.clone();
                            jobs.push(c);
                        }
                    }
                }
                let results = run_indexed(
                    jobs.iter()
                        .map(|c| {
                            let solver = &*self;
                            let c = c.clone();
                            move || solver.density_rec(&c).map(|_| ())
                        })
                        .collect(),
                    self.workers,
                );
                for r in results {
                    r?;
                }
                let mut kappas = Vec::with_capacity(pairs.len());
                let mut hats = Vec::with_capacity(pairs.len());
                let mut tildes = Vec::with_capacity(pairs.len());
                for p in &pairs {
                    let qh = q_factor(p.hat.phi1(), p.hat.phi2())?;
                    let qt = q_factor(p.tilde.phi1(), p.tilde.phi2())?;
                    kappas.push(qh + qt);
                    let h = self.density_rec(&p.hat)?;
                    let t = self.density_rec(&p.tilde)?;
                    let (hlo, hhi) = h.support().ok_or_else(|| {
                        RecurrenceError::MissingChild("empty hat child".into())
                    })?;
                    let (tlo, thi) = t.support().ok_or_else(|| {
                        RecurrenceError::MissingChild("empty tilde child".into())
                    })?;
                    s_lo = s_lo.min(hlo + tlo);
                    s_hi = s_hi.max(hhi + thi);
                    hats.push(h);
                    tildes.push(t);
                }
                plans.push(Plan::Nodes {
                    weights,
                    kappas,
                    hats,
                    tildes,
                    n1,
                    n2,
                });
            }
        }

        if !(s_hi > 0.0) || !s_hi.is_finite() {
            return Err(RecurrenceError::QuadratureNotConverged(
                "source support could not be determined".into(),
            ));
        }
        // grid floor keeps the 1/a-type divergence truncation error tiny
        let floor = s_hi * 1e-6;
        let grid_lo = if s_lo < floor { floor } else { s_lo };
        specials.retain(|&p| p > grid_lo * (1.0 + 1e-12) && p < s_hi * (1.0 - 1e-12));
        specials.push(s_hi);
        specials.sort_by(|a, b| a.partial_cmp(b).unwrap());
        specials.dedup_by(|a, b| (*a - *b) <= 1e-12 * b.abs());
        let grid = build_grid(grid_lo, s_hi, &specials, &self.config);
        let ncells = grid.len() - 1;

        let nw = n as f64;
        let mut total_masses = vec![0.0f64; ncells];
        let mut total_values = vec![0.0f64; grid.len()];
        let mut breakdown = Vec::with_capacity(splits.len());

        for (split, plan) in splits.iter().zip(plans.iter()) {
            let mut masses = vec![0.0f64; ncells];
            let mut values = vec![0.0f64; grid.len()];
            match plan {
                Plan::AtomAtom { curve, branches } => {
                    let scale = grid[ncells] - grid[0];
                    for br in branches {
                        let (ylo, yhi) = if br.increasing {
                            (br.a0, br.a1)
                        } else {
                            (br.a1, br.a0)
                        };
                        // beta preimage of a clipped grid value on this branch
                        let beta_of = |t: f64| -> f64 {
                            if t <= ylo {
                                if br.increasing {
                                    br.b0
                                } else {
                                    br.b1
                                }
                            } else if t >= yhi {
                                if br.increasing {
                                    br.b1
                                } else {
                                    br.b0
                                }
                            } else {
                                invert_on_branch(curve, br, t)
                            }
                        };
                        // pointwise pushforward values at covered breakpoints;
                        // critical points (vanishing derivative) stay silent
                        // and are later mass-matched
                        let j0 = grid.partition_point(|&g| g < ylo);
                        for (j, &t) in grid.iter().enumerate().skip(j0) {
                            if t > yhi {
                                break;
                            }
                            let p = curve.eval(beta_of(t));
                            if p.dadb.abs() > 1e-9 * scale {
                                let v = p.lambda / p.dadb.abs();
                                if v.is_finite() {
                                    values[j] += v;
                                }
                            }
                        }
                        // exact cell masses by beta-integration between the
                        // inverted cell boundaries
                        let i_start = grid.partition_point(|&g| g <= ylo).saturating_sub(1);
                        let mut beta_prev: Option<f64> = None;
                        for i in i_start..ncells {
                            if grid[i] >= yhi {
                                break;
                            }
                            let t0 = grid[i].max(ylo);
                            let t1 = grid[i + 1].min(yhi);
                            if t1 <= t0 {
                                continue;
                            }
                            let bl = beta_prev.unwrap_or_else(|| beta_of(t0));
                            let bu = beta_of(t1);
                            let (ba, bb) = if bl <= bu { (bl, bu) } else { (bu, bl) };
                            if bb > ba {
                                let mass = crate::numeric::integrate_gl(
                                    |b| curve.eval(b).lambda,
                                    ba,
                                    bb,
                                    8,
                                );
                                if mass.is_finite() {
                                    masses[i] += mass.max(0.0);
                                }
                            }
                            beta_prev = Some(bu);
                        }
                    }
                }
                Plan::Nodes {
                    weights,
                    kappas,
                    hats,
                    tildes,
                    n1,
                    n2,
                } => {
                    let (n1f, n2f) = (*n1 as f64, *n2 as f64);
                    let weight = move |x: f64, y: f64| -> f64 {
                        let a = x + y;
                        if a <= 0.0 {
                            return 0.0;
                        }
                        x.powf(n1f) * y.powf(n2f) / a.powf(nw)
                    };
                    for k in 0..weights.len() {
                        let scale = c0 * kappas[k] * weights[k];
                        if !(scale.is_finite()) || scale == 0.0 {
                            continue;
                        }
                        let hat = &hats[k];
                        let tilde = &tildes[k];
                        // dispatch on atom vs density children
                        let hat_atom = hat.density().is_none();
                        let tilde_atom = tilde.density().is_none();
                        match (hat_atom, tilde_atom) {
                            (true, true) => {
                                // possible only if a node-based plan received
                                // two atoms; fold as a point mass
                                let pa = hat.atoms()[0];
                                let pb = tilde.atoms()[0];
                                let a = pa.position + pb.position;
                                let m = scale
                                    * pa.mass
                                    * pb.mass
                                    * weight(pa.position, pb.position);
                                if let Some(i) = cell_of(&grid, a) {
                                    masses[i] += m;
                                }
                            }
                            (true, false) => {
                                let atom = hat.atoms()[0];
                                let d = tilde.density().unwrap();
                                accumulate_shifted(
                                    &grid,
                                    &mut masses,
                                    &mut values,
                                    d,
                                    atom.position,
                                    scale * atom.mass,
                                    &|y| weight(atom.position, y),
                                );
                            }
                            (false, true) => {
                                let atom = tilde.atoms()[0];
                                let d = hat.density().unwrap();
                                accumulate_shifted(
                                    &grid,
                                    &mut masses,
                                    &mut values,
                                    d,
                                    atom.position,
                                    scale * atom.mass,
                                    &|x| weight(x, atom.position),
                                );
                            }
                            (false, false) => {
                                // pseudo-atomize the hat side cell by cell
                                let dh = hat.density().unwrap();
                                let dt = tilde.density().unwrap();
                                let bp = dh.breakpoints();
                                for ci in 0..bp.len() - 1 {
                                    let m_c = dh.cell_masses()[ci];
                                    if m_c <= 0.0 {
                                        continue;
                                    }
                                    let x_c = 0.5 * (bp[ci] + bp[ci + 1]);
                                    accumulate_shifted(
                                        &grid,
                                        &mut masses,
                                        &mut values,
                                        dt,
                                        x_c,
                                        scale * m_c,
                                        &|y| weight(x_c, y),
                                    );
                                }
                            }
                        }
                    }
                }
            }
            for i in 0..ncells {
                total_masses[i] += masses[i];
            }
            for j in 0..grid.len() {
                total_values[j] += values[j];
            }
            breakdown.push((
                split.clone(),
                finalize_source(&grid, values, masses)?,
            ));
        }

        let measure = finalize_source(&grid, total_values, total_masses)?;
        Ok(SourceTerm {
            signature: sig.clone(),
            measure,
            per_split_breakdown: breakdown,
        })
    }

    fn cache_path(&self, sig: &AngleSignature) -> Option<PathBuf> {
        let dir = self.cache_dir.as_ref()?;
        let mut key = format!("{:.12e}|{:.12e}", sig.phi1(), sig.phi2());
        for a in sig.alpha() {
            key.push_str(&format!("|{a:.12e}"));
        }
        key.push_str(&format!(
            "|{}|{}",
            self.config.fingerprint(),
            env!("CARGO_PKG_VERSION")
        ));
        Some(dir.join(format!("{:016x}.measure.json", fnv1a(key.as_bytes()))))
    }

    fn try_read_cache(&self, path: &Path) -> Option<Measure1D> {
        let text = std::fs::read_to_string(path).ok()?;
        let (measure, prov) = Measure1D::from_json(&text).ok()?;
        let recorded = prov.as_ref()?.get("total_mass")?.as_f64()?;
        let actual = measure.total_mass();
        // loaded cell masses regenerate from the stored samples; validate
        if (actual - recorded).abs() <= 1e-4 * recorded.abs().max(1e-12) {
            Some(measure)
        } else {
            None
        }
    }

    fn write_cache(
        &self,
        path: &Path,
        sig: &AngleSignature,
        measure: &Measure1D,
    ) -> Result<(), RecurrenceError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| RecurrenceError::Cache(e.to_string()))?;
        }
        let prov = serde_json::json!({
            "total_mass": measure.total_mass(),
            "phi": [sig.phi1(), sig.phi2()],
            "alpha": sig.alpha(),
            "config": self.config.fingerprint(),
            "c0": self.config.calibration_constant,
            "code_version": env!("CARGO_PKG_VERSION"),
        });
        std::fs::write(path, measure.to_json(Some(prov)))
            .map_err(|e| RecurrenceError::Cache(e.to_string()))?;
        Ok(())
    }
}

fn cell_of(grid: &[f64], a: f64) -> Option<usize> {
    if a < grid[0] || a > *grid.last().unwrap() {
        return None;
    }
    let i = grid.partition_point(|&g| g <= a);
    Some(i.saturating_sub(1).min(grid.len() - 2))
}

/// Add `scale · w(y) f̃(y) dy` shifted by `p` (so living at `a = p + y`) onto
/// the target grid, cell masses and breakpoint values both.
fn accumulate_shifted(
    grid: &[f64],
    masses: &mut [f64],
    values: &mut [f64],
    child: &PiecewiseDensity,
    p: f64,
    scale: f64,
    w: &dyn Fn(f64) -> f64,
) {
    let (clo, chi) = child.support();
    let lo = p + clo;
    let hi = p + chi;
    let start = grid.partition_point(|&g| g <= lo).saturating_sub(1);
    for i in start..grid.len() - 1 {
        if grid[i] >= hi {
            break;
        }
        let t0 = grid[i].max(lo);
        let t1 = grid[i + 1].min(hi);
        if t1 > t0 {
            masses[i] += scale * child.integrate_window(t0 - p, t1 - p, w, 4);
        }
    }
    let jstart = grid.partition_point(|&g| g < lo);
    for j in jstart..grid.len() {
        if grid[j] > hi {
            break;
        }
        let y = grid[j] - p;
        let v = child.eval(y);
        if v.is_finite() {
            values[j] += scale * v * w(y);
        }
    }
}

/// Wrap accumulated grid data into a measure: mass-matched values at silent
/// breakpoints, an inverse-square-root exponent at a singular support top,
/// nonnegativity checks.
fn finalize_source(
    grid: &[f64],
    mut values: Vec<f64>,
    masses: Vec<f64>,
) -> Result<Measure1D, RecurrenceError> {
    let ncells = masses.len();
    let last = values.len() - 1;
    // a silent top breakpoint over a massive last cell is an inverse-sqrt
    // singularity at the support bound (a critical value of the area curve)
    let top_singular = values[last] == 0.0 && masses[ncells - 1] > 0.0 && values[last - 1] > 0.0;
    // other silent breakpoints adjacent to massive cells get the
    // mass-matched estimate (integrable singularities sampled at the apex)
    for j in 0..values.len() {
        if values[j] > 0.0 || (top_singular && j == last) {
            continue;
        }
        let left = if j > 0 { masses[j - 1] } else { 0.0 };
        let right = if j < ncells { masses[j] } else { 0.0 };
        if left > 0.0 || right > 0.0 {
            let mut v: f64 = 0.0;
            if j > 0 && left > 0.0 {
                let h = grid[j] - grid[j - 1];
                v = v.max(2.0 * left / h - values[j - 1]);
            }
            if j < ncells && right > 0.0 {
                let h = grid[j + 1] - grid[j];
                v = v.max(2.0 * right / h - values[j + 1]);
            }
            values[j] = v.max(0.0);
        }
    }
    for (j, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(RecurrenceError::QuadratureNotConverged(format!(
                "non-finite source value at grid point {j}"
            )));
        }
    }
    let right_exp = if top_singular { Some(-0.5) } else { None };
    let density =
        PiecewiseDensity::from_samples_with_masses(grid.to_vec(), values, None, right_exp, masses)?;
    Ok(Measure1D::from_density(density))
}

/// Solve `(1 − q a) f′ + (n/a − 2q) f = S` with `f ≡ 0` below the source
/// support, marching the scaled cumulative `F(a)/μ(a)` cell by cell with the
/// integrating factor `μ(a) = aⁿ (1 − q a)^{2−n}`.
pub fn solve_ode(
    q: f64,
    n: usize,
    source: &Measure1D,
    support_hint: f64,
    config: &SolverConfig,
) -> Result<Measure1D, RecurrenceError> {
    config.validate()?;
    if source.is_effectively_zero() {
        return Ok(Measure1D::zero());
    }
    let (s_lo, s_hi) = source.support().expect("nonzero source has support");
    let upper = support_hint;
    if upper.is_finite() && s_hi > upper * (1.0 + 1e-9) {
        return Err(RecurrenceError::SingularityUnresolved(format!(
            "source support top {s_hi} exceeds the bound {upper}"
        )));
    }

    // output grid: source breakpoints, ladders above the source top, then
    // either a graded approach to the finite bound or a geometric tail
    let mut grid: Vec<f64> = Vec::new();
    if let Some(d) = source.density() {
        grid.extend_from_slice(d.breakpoints());
    }
    for a in source.atoms() {
        grid.push(a.position);
        // resolve the jump
        let h0 = a.position * 1e-9;
        let mut step = h0;
        while step < a.position * 0.05 {
            grid.push(a.position + step);
            if a.position - step > s_lo {
                grid.push(a.position - step);
            }
            step *= config.grading_ratio;
        }
    }
    let top = if upper.is_finite() {
        // stay a hair inside the bound so 1 - q*top cannot round negative
        let top = upper * (1.0 - 1e-12);
        if s_hi > top {
            return Err(RecurrenceError::SingularityUnresolved(format!(
                "source support top {s_hi} touches the bound {upper}"
            )));
        }
        let gap = top - s_hi;
        // cusp ladder leaving s_hi, graded approach into the bound
        let mut step = gap * 1e-9;
        while step < gap {
            grid.push(s_hi + step);
            grid.push(top - step);
            step *= config.grading_ratio;
        }
        let mid_cells = 64;
        for k in 0..=mid_cells {
            grid.push(s_hi + gap * k as f64 / mid_cells as f64);
        }
        top
    } else {
        let cap = s_hi * TAIL_CAP_FACTOR;
        let mut step = s_hi * 1e-9;
        while step < s_hi * 0.05 {
            grid.push(s_hi + step);
            step *= config.grading_ratio;
        }
        let mut x = s_hi * 1.05;
        while x < cap {
            grid.push(x);
            x *= TAIL_RATIO;
        }
        cap
    };
    let grid = strictify_grid(grid, s_lo, top);
    if grid.len() < 2 {
        return Ok(Measure1D::zero());
    }

    // kernel K(t; t1) = mu(t)/(mu(t1) (1 - q t)); ratios stay finite on (0, U)
    let nn = n as i32;
    let mu_ratio = |t_num: f64, t_den: f64| -> f64 {
        let base = (t_num / t_den).powi(nn);
        let lin = (1.0 - q * t_num) / (1.0 - q * t_den);
        base * lin.powi(2 - nn)
    };

    let source_density = source.density();
    let atoms = source.atoms();
    let gl_order = ((-config.ode_tolerance.log10()).ceil() as usize + 2).clamp(6, 24);

    // half-step march for Simpson cell masses
    let m = grid.len();
    let mut f = vec![0.0f64; m];
    let mut f_mid = vec![0.0f64; m - 1];
    let mut running = 0.0f64; // F(a)/mu(a) at the current point
    let mut cursor = grid[0];
    let mut atom_idx = 0usize;
    // atoms exactly at the support bottom jump immediately
    while atom_idx < atoms.len() && atoms[atom_idx].position <= cursor {
        running += atoms[atom_idx].mass / (1.0 - q * atoms[atom_idx].position);
        atom_idx += 1;
    }
    f[0] = running;
    let advance = |from: f64, to: f64, running: &mut f64, atom_idx: &mut usize| {
        // rescale the accumulated state, add the density increment, then jumps
        let mut next = *running * mu_ratio(from, to);
        if let Some(d) = source_density {
            if to > from {
                next += d.integrate_window(from, to, |t| mu_ratio(t, to) / (1.0 - q * t), gl_order);
            }
        }
        while *atom_idx < atoms.len() && atoms[*atom_idx].position <= to {
            let p = atoms[*atom_idx].position;
            if p > from {
                next += atoms[*atom_idx].mass * mu_ratio(p, to) / (1.0 - q * p);
            }
            *atom_idx += 1;
        }
        *running = next;
    };
    for i in 0..m - 1 {
        let mid = 0.5 * (grid[i] + grid[i + 1]);
        advance(cursor, mid, &mut running, &mut atom_idx);
        f_mid[i] = running;
        advance(mid, grid[i + 1], &mut running, &mut atom_idx);
        f[i + 1] = running;
        cursor = grid[i + 1];
    }

    let fmax = f.iter().cloned().fold(0.0f64, f64::max);
    for (i, &v) in f.iter().enumerate() {
        if !v.is_finite() {
            return Err(RecurrenceError::SingularityUnresolved(format!(
                "non-finite density at a = {}",
                grid[i]
            )));
        }
        if v < -1e-9 * fmax {
            return Err(RecurrenceError::NegativeDensity {
                at: grid[i],
                value: v,
            });
        }
    }
    let cell_masses: Vec<f64> = (0..m - 1)
        .map(|i| {
            let h = grid[i + 1] - grid[i];
            (h / 6.0 * (f[i] + 4.0 * f_mid[i] + f[i + 1])).max(0.0)
        })
        .collect();
    let values: Vec<f64> = f.iter().map(|&v| v.max(0.0)).collect();
    let density = PiecewiseDensity::from_samples_with_masses(grid, values, None, None, cell_masses)?;
    Ok(Measure1D::from_density(density))
}

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

/// Weak-form residual `|∫((n/a − q) g + (q a − 1) g′) dμ_f − ∫ g dS|`; near
/// zero certifies the internal consistency of the source and the solve.
pub fn weak_form_residual(
    sig: &AngleSignature,
    f: &Measure1D,
    source: &Measure1D,
    g: &dyn TestFunction,
) -> Result<f64, RecurrenceError> {
    let q = q_factor(sig.phi1(), sig.phi2())?;
    let n = sig.arity() as f64;
    let lhs = f.integrate_against(
        |a| (n / a - q) * g.value(a) + (q * a - 1.0) * g.derivative(a),
        12,
    );
    let rhs = source.integrate_against(|a| g.value(a), 12);
    Ok((lhs - rhs).abs())
}

/// L¹ mismatch of the variant operator `(2q − n/a) f′ + (1 − q a) f`
/// against the assembled source. Purely diagnostic: this alternative form of
/// the recurrence is inconsistent with the adopted one and the residual is
/// expected not to vanish. Returns NaN for atomic densities.
pub fn theorem1_residual(sig: &AngleSignature, f: &Measure1D, source: &Measure1D) -> f64 {
    let Ok(q) = q_factor(sig.phi1(), sig.phi2()) else {
        return f64::NAN;
    };
    let n = sig.arity() as f64;
    if !f.atoms().is_empty() {
        return f64::NAN;
    }
    let Some(d) = f.density() else {
        return if source.is_effectively_zero() { 0.0 } else { f64::NAN };
    };
    let bp = d.breakpoints();
    let vals = d.values();
    let sdens = source.density();
    let mut l1 = 0.0;
    for i in 0..bp.len() - 1 {
        let h = bp[i + 1] - bp[i];
        let mid = 0.5 * (bp[i] + bp[i + 1]);
        let fp = (vals[i + 1] - vals[i]) / h;
        let fv = 0.5 * (vals[i] + vals[i + 1]);
        let t = (2.0 * q - n / mid) * fp + (1.0 - q * mid) * fv;
        let s = sdens.map_or(0.0, |sd| {
            let v = sd.eval(mid);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        });
        l1 += (t - s).abs() * h;
    }
    l1
}

/// Five bump test functions spread over the bulk of `f`.
pub fn bump_battery(f: &Measure1D) -> Vec<Bump> {
    let lo = f.quantile(0.02);
    let hi = f.quantile(0.98);
    let span = (hi - lo).max(lo * 1e-3);
    (0..5)
        .map(|k| {
            let center = lo + span * (0.1 + 0.2 * k as f64);
            let halfwidth = (span / 6.0).min(0.9 * center);
            Bump { center, halfwidth }
        })
        .collect()
}

/// Re-derive the calibration constant from the four-π-cone anchor: a
/// least-squares fit of the uncalibrated assembled source against the source
/// reconstructed from the closed-form density. Returns the constant and a
/// coarse-grid warning flag.
pub fn calibrate(config: &SolverConfig) -> Result<(f64, bool), RecurrenceError> {
    let pi = std::f64::consts::PI;
    let sig = AngleSignature::new(pi, pi, vec![pi, pi])?;
    let mut raw = config.clone();
    raw.calibration_constant = 1.0;
    let solver = Solver::new(raw)?;
    let st = solver.source_term(&sig)?;
    let d = st
        .measure
        .density()
        .ok_or_else(|| RecurrenceError::QuadratureNotConverged("anchor source empty".into()))?;
    // closed form f = (1 - sqrt(1-a^2))/a^2 gives f' + 2f/a = 1/(a sqrt(1-a^2))
    let target = |a: f64| 1.0 / (a * (1.0 - a * a).sqrt());
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, &a) in d.breakpoints().iter().enumerate() {
        if !(0.05..=0.95).contains(&a) {
            continue;
        }
        let s_unc = d.values()[j];
        let s_true = target(a);
        num += s_unc * s_true;
        den += s_unc * s_unc;
    }
    if den == 0.0 {
        return Err(RecurrenceError::QuadratureNotConverged(
            "calibration window contains no source samples".into(),
        ));
    }
    Ok((num / den, config.beta_nodes < 32))
}
