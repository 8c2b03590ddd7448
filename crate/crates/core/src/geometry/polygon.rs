//! Doubled convex polygons: two copies of a strictly convex planar polygon
//! glued along the boundary. Cone points sit at the vertices with defect
//! `2(π − interior angle)`; between vertices the shortest geodesic is the
//! straight segment inside either face.

use serde::{Deserialize, Serialize};

use super::GeometryError;

#[derive(Debug, Clone)]
pub struct DoubledPolygon {
    vertices: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct PolygonJson {
    format_version: String,
    vertices: Vec<[f64; 2]>,
}

impl DoubledPolygon {
    /// Vertices counterclockwise, strictly convex, at least 3.
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::BadSurface(
                "polygon needs at least 3 vertices".into(),
            ));
        }
        let n = vertices.len();
        let mut area2 = 0.0;
        for i in 0..n {
            let [x0, y0] = vertices[i];
            let [x1, y1] = vertices[(i + 1) % n];
            area2 += x0 * y1 - x1 * y0;
        }
        if area2 <= 0.0 {
            return Err(GeometryError::BadSurface(
                "vertices must be counterclockwise with positive area".into(),
            ));
        }
        for i in 0..n {
            let p = vertices[i];
            let q = vertices[(i + 1) % n];
            let r = vertices[(i + 2) % n];
            let cross = (q[0] - p[0]) * (r[1] - q[1]) - (q[1] - p[1]) * (r[0] - q[0]);
            if cross <= 1e-12 * area2 {
                return Err(GeometryError::BadSurface(format!(
                    "polygon not strictly convex at vertex {}",
                    (i + 1) % n
                )));
            }
        }
        Ok(Self { vertices })
    }

    pub fn regular(sides: usize) -> Self {
        let vertices = (0..sides)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
                [t.cos(), t.sin()]
            })
            .collect();
        Self::new(vertices).expect("regular polygon is convex")
    }

    pub fn unit_square() -> Self {
        Self::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn polygon_area(&self) -> f64 {
        let n = self.vertices.len();
        let mut area2 = 0.0;
        for i in 0..n {
            let [x0, y0] = self.vertices[i];
            let [x1, y1] = self.vertices[(i + 1) % n];
            area2 += x0 * y1 - x1 * y0;
        }
        area2 / 2.0
    }

    /// Total area of the doubled surface.
    pub fn doubled_area(&self) -> f64 {
        2.0 * self.polygon_area()
    }

    /// Angle defect at each vertex of the doubled surface: `2(π − interior)`.
    /// Defects sum to 4π.
    pub fn cone_defects(&self) -> Vec<f64> {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let p = self.vertices[(i + n - 1) % n];
                let q = self.vertices[i];
                let r = self.vertices[(i + 1) % n];
                let u = [p[0] - q[0], p[1] - q[1]];
                let v = [r[0] - q[0], r[1] - q[1]];
                let dot = u[0] * v[0] + u[1] * v[1];
                let cross = u[0] * v[1] - u[1] * v[0];
                let interior = cross.abs().atan2(dot);
                2.0 * (std::f64::consts::PI - interior)
            })
            .collect()
    }

    /// Geodesic distance between vertices `i` and `j`, on the representative
    /// scaled to unit doubled area unless `normalize` is false.
    pub fn distance(&self, i: usize, j: usize, normalize: bool) -> Result<f64, GeometryError> {
        let n = self.vertices.len();
        if i >= n || j >= n || i == j {
            return Err(GeometryError::BadSurface(format!(
                "vertex indices {i}, {j} invalid for an {n}-gon"
            )));
        }
        let p = self.vertices[i];
        let q = self.vertices[j];
        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        let scale = if normalize {
            1.0 / self.doubled_area().sqrt()
        } else {
            1.0
        };
        Ok(d * scale)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&PolygonJson {
            format_version: "conesphere.polygon/1".into(),
            vertices: self.vertices.clone(),
        })
        .unwrap()
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let doc: PolygonJson =
            serde_json::from_str(text).map_err(|e| GeometryError::Json(e.to_string()))?;
        Self::new(doc.vertices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn square_defects_and_distances() {
        let sq = DoubledPolygon::unit_square();
        let defects = sq.cone_defects();
        assert_eq!(defects.len(), 4);
        for d in &defects {
            assert!((d - PI).abs() < 1e-12);
        }
        assert!((defects.iter().sum::<f64>() - 4.0 * PI).abs() < 1e-9);
        // unit doubled area: side = 1/sqrt(2), diagonal = 1
        let adj = sq.distance(0, 1, true).unwrap();
        let opp = sq.distance(0, 2, true).unwrap();
        assert!((adj - 1.0 / 2.0_f64.sqrt()).abs() < 1e-12);
        assert!((opp - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pentagon_side_and_diagonal() {
        let p = DoubledPolygon::regular(5);
        let side = p.distance(0, 1, true).unwrap();
        let diag = p.distance(0, 2, true).unwrap();
        let s_expect = (2.0 * (PI / 5.0).tan() / 5.0).sqrt();
        let d_expect = s_expect * (1.0 + 5.0_f64.sqrt()) / 2.0;
        assert!((side - s_expect).abs() < 1e-12, "{side} vs {s_expect}");
        assert!((diag - d_expect).abs() < 1e-12, "{diag} vs {d_expect}");
        // paper rounds these to 0.54 and 0.87
        assert!((side - 0.539).abs() < 1e-3);
        assert!((diag - 0.872).abs() < 1e-3);
    }

    #[test]
    fn defects_sum_for_random_polygons() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = rng.gen_range(3..9);
            // random convex polygon via sorted angles on a circle with jitter
            let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let verts: Vec<[f64; 2]> = angles
                .iter()
                .map(|t| [t.cos() * 2.0, t.sin() * 2.0])
                .collect();
            let poly = match DoubledPolygon::new(verts) {
                Ok(p) => p,
                Err(_) => continue, // degenerate draw
            };
            let sum: f64 = poly.cone_defects().iter().sum();
            assert!((sum - 4.0 * PI).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_invariance_of_normalized_distance() {
        let p = DoubledPolygon::new(vec![[0.0, 0.0], [3.0, 0.0], [2.0, 2.0], [0.5, 1.5]]).unwrap();
        let scaled = DoubledPolygon::new(
            p.vertices()
                .iter()
                .map(|[x, y]| [x * 7.5, y * 7.5])
                .collect(),
        )
        .unwrap();
        for (i, j) in [(0, 1), (1, 3), (0, 2)] {
            let a = p.distance(i, j, true).unwrap();
            let b = scaled.distance(i, j, true).unwrap();
            assert!((a - b).abs() < 1e-12);
            // unnormalized distances scale linearly
            let ua = p.distance(i, j, false).unwrap();
            let ub = scaled.distance(i, j, false).unwrap();
            assert!((ub - 7.5 * ua).abs() < 1e-9);
        }
    }

    #[test]
    fn json_round_trip() {
        let p = DoubledPolygon::regular(6);
        let back = DoubledPolygon::from_json(&p.to_json()).unwrap();
        assert_eq!(back.vertices().len(), 6);
    }
}
