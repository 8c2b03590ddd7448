//! Angle data of flat cone spheres with two distinguished cone points.
//!
//! A signature holds the cone angles `φ = (φ₁, φ₂)` of the distinguished
//! points and the angle defects `α = (α₁, …, αₙ)` of the remaining cone
//! points, subject to Gauss–Bonnet: `φ₁ + φ₂ = Σα` (the full defect list
//! `(2π−φ₁, 2π−φ₂, α…)` then sums to `4π`). Splits enumerate the ways a
//! sphere with two shortest geodesics between the distinguished points cuts
//! into two sub-spheres; `β` parametrizes how `φ₁` divides between them.

use std::f64::consts::PI;
use thiserror::Error;

/// Absolute tolerance for the Gauss–Bonnet constraint.
pub const GAUSS_BONNET_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignatureError {
    #[error("angle defect alpha[{index}] = {value} out of range (0, 2*pi)")]
    DefectOutOfRange { index: usize, value: f64 },
    #[error("Gauss-Bonnet violation: phi1 + phi2 = {phi_sum} but sum(alpha) = {alpha_sum}")]
    GaussBonnetViolation { phi_sum: f64, alpha_sum: f64 },
    #[error("alpha list must be nonempty")]
    EmptyAlpha,
    #[error("cone angle {value} is at a pole of cot(angle/2) (multiple of 2*pi)")]
    PoleAtMultipleOf2Pi { value: f64 },
    #[error("cone angle {value} out of range (0, 4*pi)")]
    AngleOutOfRange { value: f64 },
    #[error("beta = {beta} outside the open interval ({lo}, {hi})")]
    BetaOutOfInterval { beta: f64, lo: f64, hi: f64 },
}

/// Validated angle signature `(φ₁, φ₂, α)` of the moduli space `M_{φ,α}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSignature {
    phi1: f64,
    phi2: f64,
    alpha: Vec<f64>,
}

impl AngleSignature {
    /// Validate raw angle data. Defects must lie strictly in `(0, 2π)`,
    /// `α` must be nonempty and `φ₁ + φ₂ = Σα` within `1e-12` absolute.
    pub fn new(phi1: f64, phi2: f64, alpha: Vec<f64>) -> Result<Self, SignatureError> {
        if alpha.is_empty() {
            return Err(SignatureError::EmptyAlpha);
        }
        for (index, &value) in alpha.iter().enumerate() {
            if !(value > 0.0 && value < 2.0 * PI) || !value.is_finite() {
                return Err(SignatureError::DefectOutOfRange { index, value });
            }
        }
        for &phi in &[phi1, phi2] {
            if !(phi > 0.0) || !phi.is_finite() {
                return Err(SignatureError::AngleOutOfRange { value: phi });
            }
        }
        let alpha_sum = stable_sum(&alpha);
        let phi_sum = phi1 + phi2;
        if (phi_sum - alpha_sum).abs() > GAUSS_BONNET_TOL {
            return Err(SignatureError::GaussBonnetViolation { phi_sum, alpha_sum });
        }
        Ok(Self { phi1, phi2, alpha })
    }

    pub fn phi1(&self) -> f64 {
        self.phi1
    }

    pub fn phi2(&self) -> f64 {
        self.phi2
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Number of non-distinguished cone points.
    pub fn arity(&self) -> usize {
        self.alpha.len()
    }

    pub fn sum_alpha(&self) -> f64 {
        stable_sum(&self.alpha)
    }

    /// Signature with the distinguished labels swapped.
    pub fn swapped(&self) -> Self {
        Self {
            phi1: self.phi2,
            phi2: self.phi1,
            alpha: self.alpha.clone(),
        }
    }
}

/// Sum in ascending magnitude order, for a reproducible Gauss–Bonnet check.
fn stable_sum(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
    v.iter().sum()
}

/// Checked construction of an [`AngleSignature`].
pub fn validate_signature(
    phi1: f64,
    phi2: f64,
    alpha: &[f64],
) -> Result<AngleSignature, SignatureError> {
    AngleSignature::new(phi1, phi2, alpha.to_vec())
}

/// `q(φ) = cot(φ₁/2) + cot(φ₂/2)`.
///
/// Finite for angles in `(0, 4π)` away from multiples of `2π`; its reciprocal
/// is the base-case atom position and, when positive, the support bound.
pub fn q_factor(phi1: f64, phi2: f64) -> Result<f64, SignatureError> {
    Ok(half_cot(phi1)? + half_cot(phi2)?)
}

fn half_cot(phi: f64) -> Result<f64, SignatureError> {
    if !(phi > 0.0 && phi < 4.0 * PI) || !phi.is_finite() {
        return Err(SignatureError::AngleOutOfRange { value: phi });
    }
    let s = (phi / 2.0).sin();
    if s.abs() < 1e-12 {
        return Err(SignatureError::PoleAtMultipleOf2Pi { value: phi });
    }
    Ok((phi / 2.0).cos() / s)
}

/// An ordered partition of the `α` indices into two complementary nonempty,
/// order-preserving sublists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    hat_indices: Vec<usize>,
    tilde_indices: Vec<usize>,
}

impl Split {
    pub fn hat_indices(&self) -> &[usize] {
        &self.hat_indices
    }

    pub fn tilde_indices(&self) -> &[usize] {
        &self.tilde_indices
    }

    pub fn hat_alpha(&self, sig: &AngleSignature) -> Vec<f64> {
        self.hat_indices.iter().map(|&i| sig.alpha()[i]).collect()
    }

    pub fn tilde_alpha(&self, sig: &AngleSignature) -> Vec<f64> {
        self.tilde_indices.iter().map(|&i| sig.alpha()[i]).collect()
    }

    pub fn sum_hat(&self, sig: &AngleSignature) -> f64 {
        stable_sum(&self.hat_alpha(sig))
    }

    pub fn sum_tilde(&self, sig: &AngleSignature) -> f64 {
        stable_sum(&self.tilde_alpha(sig))
    }

    /// The split with hat and tilde parts exchanged.
    pub fn reversed(&self) -> Split {
        Split {
            hat_indices: self.tilde_indices.clone(),
            tilde_indices: self.hat_indices.clone(),
        }
    }
}

/// All `2ⁿ − 2` ordered partitions of the index set, in a deterministic order
/// (hat set = bits of a mask counting up from 1).
pub fn enumerate_splits(sig: &AngleSignature) -> Vec<Split> {
    let n = sig.arity();
    let mut out = Vec::new();
    if n < 2 {
        return out;
    }
    assert!(n < 32, "split enumeration limited to n < 32");
    for mask in 1u32..((1u32 << n) - 1) {
        let mut hat = Vec::new();
        let mut tilde = Vec::new();
        for i in 0..n {
            if mask & (1 << i) != 0 {
                hat.push(i);
            } else {
                tilde.push(i);
            }
        }
        out.push(Split {
            hat_indices: hat,
            tilde_indices: tilde,
        });
    }
    out
}

/// The open `β` interval on which all four sub-angles are positive:
/// `(max(0, φ₁ − Σα̃), min(φ₁, Σα̂))`. Nonempty for every valid signature
/// and split.
pub fn beta_interval(sig: &AngleSignature, split: &Split) -> (f64, f64) {
    let lo = (sig.phi1() - split.sum_tilde(sig)).max(0.0);
    let hi = sig.phi1().min(split.sum_hat(sig));
    (lo, hi)
}

/// The pair of sub-signatures carved out by a split at parameter `β`:
/// hat gets angles `(β, Σα̂ − β)`, tilde gets `(φ₁ − β, Σα̃ − φ₁ + β)`.
#[derive(Debug, Clone)]
pub struct SubSignaturePair {
    pub hat: AngleSignature,
    pub tilde: AngleSignature,
    pub beta: f64,
}

pub fn sub_signatures(
    sig: &AngleSignature,
    split: &Split,
    beta: f64,
) -> Result<SubSignaturePair, SignatureError> {
    let (lo, hi) = beta_interval(sig, split);
    if !(beta > lo && beta < hi) {
        return Err(SignatureError::BetaOutOfInterval { beta, lo, hi });
    }
    let hat = AngleSignature::new(beta, split.sum_hat(sig) - beta, split.hat_alpha(sig))?;
    let tilde = AngleSignature::new(
        sig.phi1() - beta,
        split.sum_tilde(sig) - sig.phi1() + beta,
        split.tilde_alpha(sig),
    )?;
    Ok(SubSignaturePair { hat, tilde, beta })
}

/// The cotangent kernel weighting the splitting integral:
/// `κ = q(φ̂) + q(φ̃)` on the sub-signature pair at `β`. Diverges to `+∞`
/// as `β` approaches either end of the interval.
pub fn kappa(sig: &AngleSignature, split: &Split, beta: f64) -> Result<f64, SignatureError> {
    let pair = sub_signatures(sig, split, beta)?;
    Ok(q_factor(pair.hat.phi1(), pair.hat.phi2())?
        + q_factor(pair.tilde.phi1(), pair.tilde.phi2())?)
}

/// Parse an angle given either as a decimal radian value or in pi-fraction
/// form: `pi`, `2pi`, `pi/3`, `6pi/5`.
pub fn parse_angle(text: &str) -> Result<f64, ParseAngleError> {
    let s = text.trim();
    if s.is_empty() {
        return Err(ParseAngleError::Empty);
    }
    if let Some(pos) = s.find("pi") {
        let (num_s, rest) = s.split_at(pos);
        let rest = &rest[2..];
        let num: f64 = if num_s.is_empty() {
            1.0
        } else {
            num_s
                .parse::<i64>()
                .map_err(|_| ParseAngleError::Malformed(s.to_string()))? as f64
        };
        let den: f64 = if rest.is_empty() {
            1.0
        } else if let Some(d) = rest.strip_prefix('/') {
            let d = d
                .parse::<i64>()
                .map_err(|_| ParseAngleError::Malformed(s.to_string()))?;
            if d == 0 {
                return Err(ParseAngleError::Malformed(s.to_string()));
            }
            d as f64
        } else {
            return Err(ParseAngleError::Malformed(s.to_string()));
        };
        Ok(num * PI / den)
    } else {
        s.parse::<f64>()
            .map_err(|_| ParseAngleError::Malformed(s.to_string()))
    }
}

/// Parse a comma-separated list of angles.
pub fn parse_angle_list(text: &str) -> Result<Vec<f64>, ParseAngleError> {
    text.split(',').map(parse_angle).collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseAngleError {
    #[error("empty angle")]
    Empty,
    #[error("malformed angle `{0}` (expected radians or `<int>pi/<int>`)")]
    Malformed(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_examples() {
        assert!(validate_signature(PI, PI, &[PI, PI]).is_ok());
        assert!(validate_signature(PI / 2.0, PI / 2.0, &[PI]).is_ok());
        match validate_signature(PI, PI, &[PI, PI / 2.0]) {
            Err(SignatureError::GaussBonnetViolation { .. }) => {}
            other => panic!("expected GaussBonnetViolation, got {other:?}"),
        }
        match validate_signature(PI, PI, &[]) {
            Err(SignatureError::EmptyAlpha) => {}
            other => panic!("expected EmptyAlpha, got {other:?}"),
        }
        match validate_signature(2.0 * PI + 0.5, 0.5, &[PI, PI + 1.0 - PI + 0.0]) {
            // defect out of range triggers before Gauss-Bonnet here
            Err(_) => {}
            Ok(_) => panic!("expected error"),
        }
        match validate_signature(3.0, 3.0, &[6.5]) {
            Err(SignatureError::DefectOutOfRange { index: 0, .. }) => {}
            other => panic!("expected DefectOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn q_factor_examples() {
        assert!(q_factor(PI, PI).unwrap().abs() < 1e-15);
        assert!((q_factor(PI / 2.0, PI / 2.0).unwrap() - 2.0).abs() < 1e-15);
        let v = q_factor(2.0 * PI / 3.0, 2.0 * PI / 3.0).unwrap();
        assert!((v - 2.0 / 3.0_f64.sqrt()).abs() < 1e-14);
        match q_factor(2.0 * PI, PI) {
            Err(SignatureError::PoleAtMultipleOf2Pi { .. }) => {}
            other => panic!("expected pole error, got {other:?}"),
        }
    }

    #[test]
    fn q_factor_positive_iff_sum_below_2pi() {
        // grid over (0, 2pi)^2
        for i in 1..40 {
            for j in 1..40 {
                let p1 = 2.0 * PI * i as f64 / 40.0;
                let p2 = 2.0 * PI * j as f64 / 40.0;
                if (p1 + p2 - 2.0 * PI).abs() < 1e-9 {
                    continue;
                }
                let q = q_factor(p1, p2).unwrap();
                assert_eq!(q > 0.0, p1 + p2 < 2.0 * PI, "p1={p1} p2={p2} q={q}");
            }
        }
    }

    #[test]
    fn split_counts() {
        for n in 1..=10 {
            let alpha = vec![1.0; n];
            let tot = n as f64;
            let sig = validate_signature(tot / 2.0, tot / 2.0, &alpha).unwrap();
            let splits = enumerate_splits(&sig);
            let expect = if n == 1 { 0 } else { (1usize << n) - 2 };
            assert_eq!(splits.len(), expect);
            // no duplicates, all complementary
            let mut seen = std::collections::HashSet::new();
            for s in &splits {
                assert!(!s.hat_indices().is_empty());
                assert!(!s.tilde_indices().is_empty());
                let mut all: Vec<usize> = s
                    .hat_indices()
                    .iter()
                    .chain(s.tilde_indices().iter())
                    .copied()
                    .collect();
                all.sort_unstable();
                assert_eq!(all, (0..n).collect::<Vec<_>>());
                assert!(seen.insert(s.hat_indices().to_vec()));
            }
        }
    }

    #[test]
    fn beta_interval_examples() {
        let sig = validate_signature(PI, PI, &[PI, PI]).unwrap();
        let splits = enumerate_splits(&sig);
        let (lo, hi) = beta_interval(&sig, &splits[0]);
        assert!((lo - 0.0).abs() < 1e-15 && (hi - PI).abs() < 1e-15);

        let sig = validate_signature(6.0 * PI / 5.0, 6.0 * PI / 5.0, &[4.0 * PI / 5.0; 3]).unwrap();
        let splits = enumerate_splits(&sig);
        // first split has hat = {0}
        let (lo, hi) = beta_interval(&sig, &splits[0]);
        assert!(lo.abs() < 1e-12);
        assert!((hi - 4.0 * PI / 5.0).abs() < 1e-12);

        let sig = validate_signature(3.9, 0.1, &[2.0, 2.0]).unwrap();
        let (lo, hi) = beta_interval(&sig, &enumerate_splits(&sig)[0]);
        assert!((lo - 1.9).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
    }

    #[test]
    fn beta_interval_nonempty_for_random_signatures() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(2..=6);
            let alpha: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(0.05..2.0 * PI - 0.05))
                .collect();
            let tot: f64 = alpha.iter().sum();
            let phi1 = rng.gen_range(0.01 * tot..0.99 * tot);
            let sig = match validate_signature(phi1, tot - phi1, &alpha) {
                Ok(s) => s,
                Err(_) => continue,
            };
            for split in enumerate_splits(&sig) {
                let (lo, hi) = beta_interval(&sig, &split);
                assert!(lo < hi, "empty interval for {sig:?} {split:?}");
            }
        }
    }

    #[test]
    fn sub_signature_examples() {
        let sig = validate_signature(PI, PI, &[PI, PI]).unwrap();
        let split = &enumerate_splits(&sig)[0];
        let pair = sub_signatures(&sig, split, PI / 2.0).unwrap();
        assert!((pair.hat.phi1() - PI / 2.0).abs() < 1e-15);
        assert!((pair.hat.phi2() - PI / 2.0).abs() < 1e-15);
        assert!((pair.tilde.phi1() - PI / 2.0).abs() < 1e-15);
        assert!((pair.tilde.phi2() - PI / 2.0).abs() < 1e-15);

        let pair = sub_signatures(&sig, split, PI / 4.0).unwrap();
        assert!((pair.hat.phi1() - PI / 4.0).abs() < 1e-15);
        assert!((pair.hat.phi2() - 3.0 * PI / 4.0).abs() < 1e-15);
        assert!((pair.tilde.phi1() - 3.0 * PI / 4.0).abs() < 1e-15);
        assert!((pair.tilde.phi2() - PI / 4.0).abs() < 1e-15);

        let sig = validate_signature(6.0 * PI / 5.0, 6.0 * PI / 5.0, &[4.0 * PI / 5.0; 3]).unwrap();
        let split = &enumerate_splits(&sig)[0]; // hat = {0}
        let pair = sub_signatures(&sig, split, 2.0 * PI / 5.0).unwrap();
        assert!((pair.hat.phi1() - 2.0 * PI / 5.0).abs() < 1e-12);
        assert!((pair.hat.phi2() - 2.0 * PI / 5.0).abs() < 1e-12);
        assert!((pair.tilde.phi1() - 4.0 * PI / 5.0).abs() < 1e-12);
        assert!((pair.tilde.phi2() - 4.0 * PI / 5.0).abs() < 1e-12);

        // conservation of the distinguished angles
        assert!((pair.hat.phi1() + pair.tilde.phi1() - sig.phi1()).abs() < 1e-12);
        assert!((pair.hat.phi2() + pair.tilde.phi2() - sig.phi2()).abs() < 1e-12);

        match sub_signatures(&sig, split, 4.0 * PI / 5.0) {
            Err(SignatureError::BetaOutOfInterval { .. }) => {}
            other => panic!("expected BetaOutOfInterval, got {other:?}"),
        }
    }

    #[test]
    fn kappa_examples_and_identity() {
        let sig = validate_signature(PI, PI, &[PI, PI]).unwrap();
        let split = &enumerate_splits(&sig)[0];
        assert!((kappa(&sig, split, PI / 2.0).unwrap() - 4.0).abs() < 1e-14);
        // kappa = 4 / sin(beta) on this signature
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let b = rng.gen_range(0.01..PI - 0.01);
            let k = kappa(&sig, split, b).unwrap();
            assert!((k - 4.0 / b.sin()).abs() < 1e-10 * (1.0 + k.abs()), "b={b}");
        }
        // monotone divergence toward the endpoint
        let mut prev = kappa(&sig, split, 0.3).unwrap();
        for &b in &[0.1, 0.03, 0.01, 1e-4, 1e-8] {
            let k = kappa(&sig, split, b).unwrap();
            assert!(k > prev);
            prev = k;
        }
    }

    #[test]
    fn kappa_reversal_symmetry_quantified() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut tested = 0;
        while tested < 100 {
            let n = rng.gen_range(2..=5);
            let alpha: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(0.05..2.0 * PI - 0.05))
                .collect();
            let tot: f64 = alpha.iter().sum();
            let phi1 = rng.gen_range(0.05 * tot..0.95 * tot);
            let sig = match validate_signature(phi1, tot - phi1, &alpha) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let splits = enumerate_splits(&sig);
            let split = &splits[rng.gen_range(0..splits.len())];
            let (lo, hi) = beta_interval(&sig, split);
            let beta = lo + (hi - lo) * rng.gen_range(0.01..0.99);
            let k1 = match kappa(&sig, split, beta) {
                Ok(k) => k,
                Err(_) => continue,
            };
            let k2 = kappa(&sig, &split.reversed(), sig.phi1() - beta).unwrap();
            assert!(
                (k1 - k2).abs() <= 1e-9 * (1.0 + k1.abs()),
                "k1={k1} k2={k2}"
            );
            tested += 1;
        }
    }

    #[test]
    fn sub_signatures_always_valid_inside_interval() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let n = rng.gen_range(2..=5);
            let alpha: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(0.05..2.0 * PI - 0.05))
                .collect();
            let tot: f64 = alpha.iter().sum();
            let phi1 = rng.gen_range(0.05 * tot..0.95 * tot);
            let sig = match validate_signature(phi1, tot - phi1, &alpha) {
                Ok(s) => s,
                Err(_) => continue,
            };
            for split in enumerate_splits(&sig) {
                let (lo, hi) = beta_interval(&sig, &split);
                let beta = lo + (hi - lo) * rng.gen_range(0.001..0.999);
                let pair = sub_signatures(&sig, &split, beta).unwrap();
                assert!(pair.hat.phi1() > 0.0 && pair.hat.phi2() > 0.0);
                assert!(pair.tilde.phi1() > 0.0 && pair.tilde.phi2() > 0.0);
            }
        }
    }

    #[test]
    fn pi_fraction_parsing() {
        assert!((parse_angle("pi").unwrap() - PI).abs() < 1e-15);
        assert!((parse_angle("2pi").unwrap() - 2.0 * PI).abs() < 1e-15);
        assert!((parse_angle("pi/3").unwrap() - PI / 3.0).abs() < 1e-15);
        assert!((parse_angle("6pi/5").unwrap() - 6.0 * PI / 5.0).abs() < 1e-15);
        assert!((parse_angle("1.5").unwrap() - 1.5).abs() < 1e-15);
        assert!(parse_angle("pi/0").is_err());
        assert!(parse_angle("2x").is_err());
        assert!(parse_angle("").is_err());
        let v = parse_angle_list("pi,pi/2,0.5").unwrap();
        assert_eq!(v.len(), 3);
        assert!((v[1] - PI / 2.0).abs() < 1e-15);
    }
}
