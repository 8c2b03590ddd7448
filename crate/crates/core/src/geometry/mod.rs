//! Ground-truth flat cone spheres with exactly computable lengths and areas:
//! doubled convex polygons, convex polyhedron boundaries (geodesics by
//! unfolding search), and the torus-quotient model of the four-π-defect
//! sphere with its hyperbolic-measure sampler.

mod polygon;
mod polyhedron;
mod torus;

pub use polygon::DoubledPolygon;
pub use polyhedron::ConvexPolyhedron;
pub use torus::{
    quotient_invariants, sample_torus_quotient, QuotientInvariants, SampleBatch, SampleRecord,
    TorusQuotient,
};

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid surface: {0}")]
    BadSurface(String),
    #[error("mesh is not a closed connected 2-manifold: {0}")]
    NotConnected(String),
    #[error("unfolding search exceeded the face-sequence cap of {0}")]
    UnfoldingCapExceeded(usize),
    #[error("degenerate triangle: phi1/2 + phi2/2 must be less than pi")]
    DegenerateTriangle,
    #[error("JSON error: {0}")]
    Json(String),
}

/// Area of the double of a triangle with angles `φ₁/2`, `φ₂/2` at the ends of
/// a unit side, built from explicit vertices and a shoelace evaluation.
/// Equals `1/(cot(φ₁/2) + cot(φ₂/2))`, the base-case atom position.
pub fn doubled_triangle_area(phi1: f64, phi2: f64) -> Result<f64, GeometryError> {
    let a1 = phi1 / 2.0;
    let a2 = phi2 / 2.0;
    if !(a1 > 0.0 && a2 > 0.0 && a1 + a2 < std::f64::consts::PI) {
        return Err(GeometryError::DegenerateTriangle);
    }
    // vertices A = (0,0), B = (1,0), apex C at the ray intersection
    let t1 = a1.tan();
    let t2 = a2.tan();
    let (ax, ay) = (0.0, 0.0);
    let (bx, by) = (1.0, 0.0);
    let cx = t2 / (t1 + t2);
    let cy = t1 * t2 / (t1 + t2);
    let shoelace = 0.5 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
    Ok(2.0 * shoelace.abs())
}

/// Area of a developed polygon from period data: the fan over the base point
/// minus the isoceles ear at each cone point with apex angle equal to the
/// defect. Independent oracle for the Hermitian area form.
///
/// `points` are the images of the base-vertex preimages `P₁ … P_{n−2}`
/// (with `P_{n−1}` at the origin) and `defects` is the full defect list
/// `α₁ … α_{n−1}, αₙ` of which only the first `n−1` enter.
pub fn developed_polygon_area(points: &[Complex64], defects: &[f64]) -> f64 {
    let mut p: Vec<Complex64> = points.to_vec();
    p.push(Complex64::new(0.0, 0.0));
    let c: Vec<f64> = defects.iter().map(|d| 1.0 / (d / 2.0).tan()).collect();
    let mut fan = 0.0;
    for i in 0..p.len().saturating_sub(2) {
        fan += (p[i].conj() * p[i + 1]).im / 2.0;
    }
    let mut ears = c[0] / 4.0 * p[0].norm_sqr();
    for i in 1..p.len() {
        ears += c[i] / 4.0 * (p[i] - p[i - 1]).norm_sqr();
    }
    fan - ears
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::q_factor;
    use std::f64::consts::PI;

    #[test]
    fn doubled_triangle_examples() {
        assert!((doubled_triangle_area(PI / 2.0, PI / 2.0).unwrap() - 0.5).abs() < 1e-15);
        let v = doubled_triangle_area(2.0 * PI / 3.0, 2.0 * PI / 3.0).unwrap();
        assert!((v - 3.0_f64.sqrt() / 2.0).abs() < 1e-14);
        assert!(matches!(
            doubled_triangle_area(PI, PI),
            Err(GeometryError::DegenerateTriangle)
        ));
    }

    #[test]
    fn doubled_triangle_times_q_is_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let p1: f64 = rng.gen_range(0.05..1.9 * PI);
            let p2: f64 = rng.gen_range(0.05..(2.0 * PI - p1 - 0.05).min(1.9 * PI));
            let area = doubled_triangle_area(p1, p2).unwrap();
            let q = q_factor(p1, p2).unwrap();
            assert!((area * q - 1.0).abs() < 1e-12, "p1={p1} p2={p2}");
        }
    }

    #[test]
    fn developed_area_matches_hermitian_form() {
        // alternating-conjugate coordinate change maps the period data onto
        // the tridiagonal form's coordinates
        use crate::thurston::{area_value, hermitian_matrix};
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let mut checked = 0;
        while checked < 40 {
            let n = rng.gen_range(4..=7);
            let mut d: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(0.3..2.0 * PI - 0.3)).collect();
            let last = 4.0 * PI - d.iter().sum::<f64>();
            if !(0.05 < last && last < 2.0 * PI - 0.05) {
                continue;
            }
            d.push(last);
            let form = hermitian_matrix(&d).unwrap();
            let z: Vec<Complex64> = (0..n - 2)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let w: Vec<Complex64> = z
                .iter()
                .enumerate()
                .map(|(i, v)| if i % 2 == 0 { v.conj() } else { -v.conj() })
                .collect();
            let lhs = developed_polygon_area(&z, &d);
            let rhs = area_value(&form, &w).unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()),
                "n={n} lhs={lhs} rhs={rhs}"
            );
            checked += 1;
        }
    }

    #[test]
    fn developed_area_positive_on_genuine_polygon() {
        // equifacial square data: defects all pi, ccw fan with no ears
        let z = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];
        let a = developed_polygon_area(&z, &[PI; 4]);
        assert!((a - 0.5).abs() < 1e-15);
    }
}
