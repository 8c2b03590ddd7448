//! The torus-quotient (pillowcase) model of the moduli space of flat spheres
//! with four cone points of angle π: quotients of `C/(Z + Zτ)` by the point
//! reflection, cone points at the half-lattice points, distinguished pair
//! `(0, 1/2)`. The hyperbolic measure `dx dy / y²` on the level-2 fundamental
//! domain realizes the moduli volume up to one global constant, which is all
//! the distribution-shape comparison needs.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use super::GeometryError;
use crate::numeric::run_indexed;

/// A point of the fundamental domain `|Re τ| ≤ 1, |2τ ± 1| ≥ 1`.
#[derive(Debug, Clone, Copy)]
pub struct TorusQuotient {
    tau: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuotientInvariants {
    /// Distance between the distinguished pair on the unit-area representative
    /// times the area normalization; reported at the raw torus scale this is
    /// the lattice minimum of |1/2 + λ|.
    pub l: f64,
    /// Area of the quotient, Im τ / 2.
    pub area: f64,
    /// Scale-invariant area function a = area / l².
    pub a: f64,
}

impl TorusQuotient {
    pub fn new(tau: Complex64) -> Result<Self, GeometryError> {
        if !(tau.im > 0.0) {
            return Err(GeometryError::BadSurface(
                "tau must lie in the upper half plane".into(),
            ));
        }
        if !Self::in_fundamental_domain(tau) {
            return Err(GeometryError::BadSurface(format!(
                "tau = {tau} outside the fundamental domain |Re| <= 1, |2tau +- 1| >= 1"
            )));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> Complex64 {
        self.tau
    }

    pub fn in_fundamental_domain(tau: Complex64) -> bool {
        tau.im > 0.0
            && tau.re.abs() <= 1.0 + 1e-14
            && (2.0 * tau + 1.0).norm() >= 1.0 - 1e-14
            && (2.0 * tau - 1.0).norm() >= 1.0 - 1e-14
    }

    /// Shortest lattice translate of the half-period: `min |1/2 + m + nτ|`
    /// over a provably sufficient window.
    pub fn lattice_min(&self) -> f64 {
        lattice_min_of(self.tau)
    }

    pub fn invariants(&self) -> QuotientInvariants {
        invariants_of(self.tau)
    }
}

fn lattice_min_of(tau: Complex64) -> f64 {
    // n window from the shortest-vector estimate on the domain; the best m
    // for fixed n is the nearest-integer reduction of the real part
    let w = (2.0 / (3.0_f64.sqrt() * tau.im.min(1.0))).ceil() as i64 + 1;
    let mut best = f64::INFINITY;
    for n in -w..=w {
        let r = 0.5 + n as f64 * tau.re;
        let re = r - r.round();
        let im = n as f64 * tau.im;
        best = best.min((re * re + im * im).sqrt());
    }
    best
}

/// Invariants of an arbitrary upper-half-plane point (no fundamental-domain
/// membership required); used by the group-invariance checks.
pub fn quotient_invariants(tau: Complex64) -> QuotientInvariants {
    invariants_of(tau)
}

fn invariants_of(tau: Complex64) -> QuotientInvariants {
    let l = lattice_min_of(tau);
    let area = tau.im / 2.0;
    QuotientInvariants {
        l,
        area,
        a: area / (l * l),
    }
}

/// One Monte Carlo record.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SampleRecord {
    pub l: f64,
    pub area: f64,
    pub a: f64,
}

/// A reproducible batch of hyperbolic-measure samples.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub samples: Vec<SampleRecord>,
    pub seed: u64,
    pub epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct SidecarJson {
    format_version: String,
    seed: u64,
    epsilon: f64,
    n: usize,
}

impl SampleBatch {
    /// CSV export with header `l,area,a`; batch metadata goes to the sidecar.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "l,area,a")?;
        for s in &self.samples {
            writeln!(w, "{},{},{}", s.l, s.area, s.a)?;
        }
        Ok(())
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&SidecarJson {
            format_version: "conesphere.samples/1".into(),
            seed: self.seed,
            epsilon: self.epsilon,
            n: self.samples.len(),
        })
        .unwrap()
    }

    /// Relative mass excised by the cusp truncation: the three neighborhoods
    /// below height ε carry ≈ 4ε of the total 2π.
    pub fn truncation_bias_bound(&self) -> f64 {
        4.0 * self.epsilon / (2.0 * std::f64::consts::PI)
    }

    pub fn sorted_a(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.samples.iter().map(|s| s.a).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    pub fn sorted_l(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.samples.iter().map(|s| s.l).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }
}

/// Draw `n` independent samples of τ from the density ∝ 1/y² on the
/// fundamental domain with the low cusps below height ε excised, by rejection
/// from `x ~ U[−1,1]`, `y ~ ε/U(0,1]` (density ∝ 1/y² on [ε, ∞)).
///
/// Deterministic: worker `w` gets stream seed `seed + w` and the per-worker
/// outputs are concatenated in worker order.
pub fn sample_torus_quotient(
    n: usize,
    seed: u64,
    epsilon: f64,
    workers: usize,
) -> Result<SampleBatch, GeometryError> {
    if n == 0 {
        return Err(GeometryError::BadSurface("need at least one sample".into()));
    }
    if !(epsilon > 0.0 && epsilon <= 0.05) {
        return Err(GeometryError::BadSurface(format!(
            "epsilon {epsilon} outside (0, 0.05]"
        )));
    }
    let workers = workers.max(1);
    let per = n.div_ceil(workers);
    let mut counts = Vec::new();
    let mut left = n;
    for _ in 0..workers {
        let c = per.min(left);
        counts.push(c);
        left -= c;
        if left == 0 {
            break;
        }
    }
    let jobs: Vec<_> = counts
        .iter()
        .enumerate()
        .map(|(w, &count)| {
            let stream_seed = seed.wrapping_add(w as u64);
            move || {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
                let mut out = Vec::with_capacity(count);
                while out.len() < count {
                    let x: f64 = rng.gen_range(-1.0..1.0);
                    let u: f64 = rng.gen::<f64>();
                    if u == 0.0 {
                        continue;
                    }
                    let y = epsilon / u;
                    let tau = Complex64::new(x, y);
                    if TorusQuotient::in_fundamental_domain(tau) {
                        let inv = invariants_of(tau);
                        out.push(SampleRecord {
                            l: inv.l / inv.area.sqrt(),
                            area: inv.area,
                            a: inv.a,
                        });
                    }
                }
                out
            }
        })
        .collect();
    let chunks = run_indexed(jobs, workers);
    let samples: Vec<SampleRecord> = chunks.into_iter().flatten().collect();
    Ok(SampleBatch {
        samples,
        seed,
        epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_examples() {
        let q = TorusQuotient::new(Complex64::new(0.0, 1.0)).unwrap();
        let inv = q.invariants();
        assert!((inv.l - 0.5).abs() < 1e-15);
        assert!((inv.area - 0.5).abs() < 1e-15);
        assert!((inv.a - 2.0).abs() < 1e-14);

        let q = TorusQuotient::new(Complex64::new(0.0, 2.0)).unwrap();
        let inv = q.invariants();
        assert!((inv.l - 0.5).abs() < 1e-15);
        assert!((inv.area - 1.0).abs() < 1e-15);
        assert!((inv.a - 4.0).abs() < 1e-14);
    }

    #[test]
    fn lattice_min_matches_brute_force() {
        let tau = Complex64::new(0.3, 1.7);
        let q = TorusQuotient::new(tau).unwrap();
        let mut brute = f64::INFINITY;
        for m in -3i64..=3 {
            for n in -3i64..=3 {
                brute = brute.min((Complex64::new(0.5 + m as f64, 0.0) + tau * n as f64).norm());
            }
        }
        assert!((q.lattice_min() - brute).abs() < 1e-15);
        // a thin domain point needs a wide window
        let tau = Complex64::new(0.001, 0.02);
        let lm = lattice_min_of(tau);
        let mut brute = f64::INFINITY;
        for m in -200i64..=200 {
            for n in -200i64..=200 {
                brute = brute.min((Complex64::new(0.5 + m as f64, 0.0) + tau * n as f64).norm());
            }
        }
        assert!((lm - brute).abs() < 1e-15, "{lm} vs {brute}");
    }

    #[test]
    fn domain_membership() {
        assert!(TorusQuotient::new(Complex64::new(0.3, 0.1)).is_err()); // inside a circle
        assert!(TorusQuotient::new(Complex64::new(1.2, 1.0)).is_err());
        assert!(TorusQuotient::new(Complex64::new(0.0, 0.6)).is_ok());
        assert!(TorusQuotient::new(Complex64::new(1.0, 0.05)).is_ok()); // between circles
        assert!(TorusQuotient::new(Complex64::new(0.9, 0.05)).is_err());
        assert!(TorusQuotient::new(Complex64::new(0.0, -1.0)).is_err());
    }

    #[test]
    fn sampler_is_deterministic() {
        let b1 = sample_torus_quotient(500, 42, 0.01, 3).unwrap();
        let b2 = sample_torus_quotient(500, 42, 0.01, 3).unwrap();
        assert_eq!(b1.samples.len(), 500);
        for (x, y) in b1.samples.iter().zip(b2.samples.iter()) {
            assert_eq!(x.a.to_bits(), y.a.to_bits());
            assert_eq!(x.l.to_bits(), y.l.to_bits());
        }
        // single worker stream differs only in concatenation, same as 1 chunk
        let b3 = sample_torus_quotient(500, 43, 0.01, 3).unwrap();
        assert_ne!(b1.samples[0].a.to_bits(), b3.samples[0].a.to_bits());
    }

    #[test]
    fn record_consistency_a_equals_area_over_l_squared() {
        let b = sample_torus_quotient(2000, 7, 0.01, 2).unwrap();
        for s in &b.samples {
            // l is reported at unit area, so a = 1/l^2 as well
            assert!((s.a - s.area / (s.l * s.l * s.area)).abs() <= 1e-12 * s.a);
            assert!((s.a - 1.0 / (s.l * s.l)).abs() <= 1e-12 * s.a);
        }
    }

    #[test]
    fn level_two_invariance_of_a() {
        // gamma in the group preserving the marked pair: tau -> tau + 2 and
        // tau -> tau / (2 tau + 1); a(tau) must be invariant
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut tested = 0;
        while tested < 50 {
            let x: f64 = rng.gen_range(-1.0..1.0);
            let y: f64 = rng.gen_range(0.05..3.0);
            let tau = Complex64::new(x, y);
            if !TorusQuotient::in_fundamental_domain(tau) {
                continue;
            }
            let a0 = invariants_of(tau).a;
            let t1 = tau + 2.0;
            let a1 = invariants_of(t1).a;
            let t2 = tau / (2.0 * tau + 1.0);
            if t2.im <= 1e-4 {
                continue;
            }
            let a2 = invariants_of(t2).a;
            assert!((a0 - a1).abs() < 1e-10 * a0, "shift: {a0} vs {a1}");
            assert!((a0 - a2).abs() < 1e-8 * a0, "inversion: {a0} vs {a2}");
            tested += 1;
        }
    }
}
