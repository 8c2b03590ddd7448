//! Convex polyhedron boundaries with exact vertex-to-vertex geodesics.
//!
//! Distances come from a best-first enumeration of face-unfolding sequences.
//! Each state keeps the planar window chain it has crossed and the angular
//! funnel of directions (from the unfolded source) still feasible; states are
//! pruned by funnel emptiness and by the current best upper bound, which is
//! initialized from the edge-graph Dijkstra distance and shared-face chords.
//! A candidate geodesic is accepted only after an exact check that the
//! straight segment crosses every window of the chain in order, so funnel
//! clipping can never produce a wrong answer, only extra work.

use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::rc::Rc;

use super::GeometryError;

/// Hard cap on unfolding sequence length; hitting it is an error.
pub const MAX_UNFOLD_DEPTH: usize = 32;

#[derive(Debug, Clone)]
pub struct ConvexPolyhedron {
    vertices: Vec<[f64; 3]>,
    faces: Vec<Vec<usize>>,
    charts: Vec<Vec<[f64; 2]>>,
    edge_faces: HashMap<(usize, usize), Vec<usize>>,
    diameter: f64,
}

#[derive(Serialize, Deserialize)]
struct MeshJson {
    format_version: String,
    vertices: Vec<[f64; 3]>,
    faces: Vec<Vec<usize>>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

impl ConvexPolyhedron {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<Vec<usize>>) -> Result<Self, GeometryError> {
        if vertices.len() < 4 || faces.len() < 4 {
            return Err(GeometryError::BadSurface(
                "need at least 4 vertices and 4 faces".into(),
            ));
        }
        let mut diameter = 0.0f64;
        for a in &vertices {
            for b in &vertices {
                diameter = diameter.max(norm3(sub(*a, *b)));
            }
        }
        if diameter <= 0.0 {
            return Err(GeometryError::BadSurface("degenerate vertex set".into()));
        }
        // directed edges must each appear exactly once (closed, oriented)
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, loop_) in faces.iter().enumerate() {
            if loop_.len() < 3 {
                return Err(GeometryError::BadSurface(format!(
                    "face {fi} has fewer than 3 vertices"
                )));
            }
            for k in 0..loop_.len() {
                let a = loop_[k];
                let b = loop_[(k + 1) % loop_.len()];
                if a >= vertices.len() || b >= vertices.len() || a == b {
                    return Err(GeometryError::BadSurface(format!(
                        "face {fi} references invalid vertex pair ({a}, {b})"
                    )));
                }
                if directed.insert((a, b), fi).is_some() {
                    return Err(GeometryError::NotConnected(format!(
                        "directed edge ({a}, {b}) appears twice"
                    )));
                }
            }
        }
        let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (&(a, b), &fi) in &directed {
            if !directed.contains_key(&(b, a)) {
                return Err(GeometryError::NotConnected(format!(
                    "edge ({a}, {b}) has no partner; surface not closed"
                )));
            }
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
        }
        for (e, fs) in &edge_faces {
            if fs.len() != 2 {
                return Err(GeometryError::NotConnected(format!(
                    "edge {e:?} shared by {} faces",
                    fs.len()
                )));
            }
        }
        // face connectivity
        {
            let mut seen = vec![false; faces.len()];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            let mut count = 1;
            while let Some(f) = queue.pop_front() {
                for k in 0..faces[f].len() {
                    let a = faces[f][k];
                    let b = faces[f][(k + 1) % faces[f].len()];
                    for &g in &edge_faces[&(a.min(b), a.max(b))] {
                        if !seen[g] {
                            seen[g] = true;
                            count += 1;
                            queue.push_back(g);
                        }
                    }
                }
            }
            if count != faces.len() {
                return Err(GeometryError::NotConnected(format!(
                    "only {count} of {} faces reachable",
                    faces.len()
                )));
            }
        }
        // planarity, convexity of faces, charts
        let mut charts = Vec::with_capacity(faces.len());
        for (fi, loop_) in faces.iter().enumerate() {
            // Newell normal: outward for ccw-from-outside loops
            let mut n = [0.0f64; 3];
            for k in 0..loop_.len() {
                let p = vertices[loop_[k]];
                let q = vertices[loop_[(k + 1) % loop_.len()]];
                n[0] += (p[1] - q[1]) * (p[2] + q[2]);
                n[1] += (p[2] - q[2]) * (p[0] + q[0]);
                n[2] += (p[0] - q[0]) * (p[1] + q[1]);
            }
            let nn = norm3(n);
            if nn <= 0.0 {
                return Err(GeometryError::BadSurface(format!("face {fi} degenerate")));
            }
            let n_hat = scale3(n, 1.0 / nn);
            let v0 = vertices[loop_[0]];
            for &vi in loop_ {
                let d = dot3(sub(vertices[vi], v0), n_hat).abs();
                if d > 1e-10 * diameter {
                    return Err(GeometryError::BadSurface(format!(
                        "face {fi} not planar (deviation {d:.3e})"
                    )));
                }
            }
            // global convexity: every vertex on the inner side of the face plane
            for (vi, v) in vertices.iter().enumerate() {
                let d = dot3(sub(*v, v0), n_hat);
                if d > 1e-9 * diameter {
                    return Err(GeometryError::BadSurface(format!(
                        "vertex {vi} lies outside the plane of face {fi}; not convex"
                    )));
                }
            }
            // chart: e1 along the first edge, e2 = n x e1 (ccw in the chart)
            let e1 = {
                let d = sub(vertices[loop_[1]], v0);
                scale3(d, 1.0 / norm3(d))
            };
            let e2 = cross3(n_hat, e1);
            let chart: Vec<[f64; 2]> = loop_
                .iter()
                .map(|&vi| {
                    let d = sub(vertices[vi], v0);
                    [dot3(d, e1), dot3(d, e2)]
                })
                .collect();
            // face convexity in the chart
            let m = chart.len();
            for k in 0..m {
                let p = chart[k];
                let q = chart[(k + 1) % m];
                let r = chart[(k + 2) % m];
                let c = (q[0] - p[0]) * (r[1] - q[1]) - (q[1] - p[1]) * (r[0] - q[0]);
                if c < -1e-9 * diameter * diameter {
                    return Err(GeometryError::BadSurface(format!(
                        "face {fi} is not convex"
                    )));
                }
            }
            charts.push(chart);
        }
        let poly = Self {
            vertices,
            faces,
            charts,
            edge_faces,
            diameter,
        };
        if poly.signed_volume() <= 0.0 {
            return Err(GeometryError::BadSurface(
                "faces are not outward-oriented (nonpositive volume)".into(),
            ));
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Vec<usize>] {
        &self.faces
    }

    fn signed_volume(&self) -> f64 {
        let mut six_v = 0.0;
        for loop_ in &self.faces {
            let a = self.vertices[loop_[0]];
            for k in 1..loop_.len() - 1 {
                let b = self.vertices[loop_[k]];
                let c = self.vertices[loop_[k + 1]];
                six_v += dot3(a, cross3(b, c));
            }
        }
        six_v / 6.0
    }

    pub fn total_area(&self) -> f64 {
        self.charts
            .iter()
            .map(|chart| {
                let m = chart.len();
                let mut a2 = 0.0;
                for k in 0..m {
                    let p = chart[k];
                    let q = chart[(k + 1) % m];
                    a2 += p[0] * q[1] - q[0] * p[1];
                }
                a2.abs() / 2.0
            })
            .sum()
    }

    /// Angle defect `2π − Σ incident face angles` per vertex; sums to 4π.
    pub fn cone_defects(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.vertices.len()];
        for (fi, loop_) in self.faces.iter().enumerate() {
            let m = loop_.len();
            for k in 0..m {
                let p = self.charts[fi][(k + m - 1) % m];
                let q = self.charts[fi][k];
                let r = self.charts[fi][(k + 1) % m];
                let u = [p[0] - q[0], p[1] - q[1]];
                let v = [r[0] - q[0], r[1] - q[1]];
                let ang = (u[0] * v[1] - u[1] * v[0])
                    .abs()
                    .atan2(u[0] * v[0] + u[1] * v[1]);
                sums[loop_[k]] += ang;
            }
        }
        sums.iter()
            .map(|s| 2.0 * std::f64::consts::PI - s)
            .collect()
    }

    /// Exact shortest geodesic between vertices `i` and `j` on the boundary
    /// surface, normalized to unit total area unless `normalize` is false.
    pub fn distance(&self, i: usize, j: usize, normalize: bool) -> Result<f64, GeometryError> {
        if i >= self.vertices.len() || j >= self.vertices.len() || i == j {
            return Err(GeometryError::BadSurface(format!(
                "vertex indices {i}, {j} invalid"
            )));
        }
        let raw = self.unfold_distance(i, j)?;
        let scale = if normalize {
            1.0 / self.total_area().sqrt()
        } else {
            1.0
        };
        Ok(raw * scale)
    }


    fn edge_graph_distance(&self, s: usize, t: usize) -> f64 {
        let mut adj: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
        for &(a, b) in self.edge_faces.keys() {
            let w = norm3(sub(self.vertices[a], self.vertices[b]));
            adj.entry(a).or_default().push((b, w));
            adj.entry(b).or_default().push((a, w));
        }
        let mut dist: HashMap<usize, f64> = HashMap::new();
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((TotalF64(0.0), s)));
        while let Some(Reverse((TotalF64(d), v))) = heap.pop() {
            if dist.contains_key(&v) {
                continue;
            }
            dist.insert(v, d);
            if v == t {
                return d;
            }
            for &(u, w) in adj.get(&v).into_iter().flatten() {
                if !dist.contains_key(&u) {
                    heap.push(Reverse((TotalF64(d + w), u)));
                }
            }
        }
        f64::INFINITY
    }

    fn unfold_distance(&self, s: usize, t: usize) -> Result<f64, GeometryError> {
        let mut best = self.edge_graph_distance(s, t);
        // shared-face chords are realized inside the (convex) face
        for loop_ in &self.faces {
            if loop_.contains(&s) && loop_.contains(&t) {
                best = best.min(norm3(sub(self.vertices[s], self.vertices[t])));
            }
        }

        let eps = 1e-9 * self.diameter;
        let mut heap: BinaryHeap<Reverse<(TotalF64, usize)>> = BinaryHeap::new();
        let mut states: Vec<State> = Vec::new();

        // initial states: one per face incident to the source
        for (fi, loop_) in self.faces.iter().enumerate() {
            let Some(pos) = loop_.iter().position(|&v| v == s) else {
                continue;
            };
            let m = loop_.len();
            let c_s = self.charts[fi][pos];
            let place = Iso2::translation([-c_s[0], -c_s[1]]);
            let v_next = place.apply(self.charts[fi][(pos + 1) % m]);
            let v_prev = place.apply(self.charts[fi][(pos + m - 1) % m]);
            let funnel = (v_next, v_prev);
            for k in 0..m {
                let a = loop_[k];
                let b = loop_[(k + 1) % m];
                if a == s || b == s {
                    continue;
                }
                let w0 = place.apply(self.charts[fi][k]);
                let w1 = place.apply(self.charts[fi][(k + 1) % m]);
                let Some(funnel2) = clip_funnel(funnel, sector(w0, w1)) else {
                    continue;
                };
                let dmin = dist_point_segment([0.0, 0.0], w0, w1);
                if dmin >= best - eps {
                    continue;
                }
                let chain = Rc::new(WindowChain {
                    w0,
                    w1,
                    parent: None,
                });
                let state = State {
                    from_face: fi,
                    edge: (a, b),
                    window: (w0, w1),
                    funnel: funnel2,
                    chain,
                    depth: 1,
                };
                heap.push(Reverse((TotalF64(dmin), states.len())));
                states.push(state);
            }
        }

        while let Some(Reverse((TotalF64(dmin), idx))) = heap.pop() {
            if dmin >= best - eps {
                break;
            }
            let st = states[idx].clone();
            if st.depth >= MAX_UNFOLD_DEPTH {
                return Err(GeometryError::UnfoldingCapExceeded(MAX_UNFOLD_DEPTH));
            }
            // face across the window edge
            let key = (st.edge.0.min(st.edge.1), st.edge.0.max(st.edge.1));
            let fs = &self.edge_faces[&key];
            let g = if fs[0] == st.from_face { fs[1] } else { fs[0] };
            let loop_g = &self.faces[g];
            let m = loop_g.len();
            // orientation-preserving placement of g matching the shared edge
            let pa = loop_g.iter().position(|&v| v == st.edge.0).unwrap();
            let la = self.charts[g][pa];
            let pb = loop_g.iter().position(|&v| v == st.edge.1).unwrap();
            let lb = self.charts[g][pb];
            let place = Iso2::matching(la, lb, st.window.0, st.window.1);

            // target candidate in g
            if let Some(pt) = loop_g.iter().position(|&v| v == t) {
                let tt = place.apply(self.charts[g][pt]);
                let d = (tt[0] * tt[0] + tt[1] * tt[1]).sqrt();
                if d < best - 1e-15 && chain_crossed(&st.chain, tt, eps) {
                    best = d;
                }
            }
            // expand through the other edges of g
            for k in 0..m {
                let a = loop_g[k];
                let b = loop_g[(k + 1) % m];
                if (a, b) == (st.edge.1, st.edge.0) || (a, b) == st.edge {
                    continue;
                }
                let w0 = place.apply(self.charts[g][k]);
                let w1 = place.apply(self.charts[g][(k + 1) % m]);
                let Some(funnel2) = clip_funnel(st.funnel, sector(w0, w1)) else {
                    continue;
                };
                let dmin2 = dist_point_segment([0.0, 0.0], w0, w1);
                if dmin2 >= best - eps {
                    continue;
                }
                let chain = Rc::new(WindowChain {
                    w0,
                    w1,
                    parent: Some(st.chain.clone()),
                });
                let state = State {
                    from_face: g,
                    edge: (a, b),
                    window: (w0, w1),
                    funnel: funnel2,
                    chain,
                    depth: st.depth + 1,
                };
                heap.push(Reverse((TotalF64(dmin2), states.len())));
                states.push(state);
            }
        }
        Ok(best)
    }

    /// Regular tetrahedron with unit edge.
    pub fn regular_tetrahedron() -> Self {
        let s = 1.0 / 8.0_f64.sqrt();
        let v = vec![
            [s, s, s],
            [s, -s, -s],
            [-s, s, -s],
            [-s, -s, s],
        ];
        let f = vec![vec![0, 1, 2], vec![0, 3, 1], vec![0, 2, 3], vec![1, 3, 2]];
        Self::new(v, f).expect("tetrahedron is valid")
    }

    /// Right square pyramid with base side 1 and the given apex height.
    /// Vertex 0 is the apex, vertices 1..=4 the base loop.
    pub fn square_pyramid(height: f64) -> Result<Self, GeometryError> {
        let h = height;
        let v = vec![
            [0.0, 0.0, h],
            [-0.5, -0.5, 0.0],
            [0.5, -0.5, 0.0],
            [0.5, 0.5, 0.0],
            [-0.5, 0.5, 0.0],
        ];
        let f = vec![
            vec![1, 4, 3, 2], // base, outward = downward
            vec![0, 1, 2],
            vec![0, 2, 3],
            vec![0, 3, 4],
            vec![0, 4, 1],
        ];
        Self::new(v, f)
    }

    /// The unique square pyramid whose five angle defects all equal 4π/5:
    /// lateral apex angles 3π/10.
    pub fn equal_defect_square_pyramid() -> Self {
        // slant edge for base side 1: L = sin(63°)/sin(54°); h² = L² − 1/2
        let l = (63.0f64.to_radians()).sin() / (54.0f64.to_radians()).sin();
        let h = (l * l - 0.5).sqrt();
        Self::square_pyramid(h).expect("equal-defect pyramid is valid")
    }

    /// Axis-aligned box with the given edge lengths.
    pub fn bbox(a: f64, b: f64, c: f64) -> Self {
        let v = vec![
            [0.0, 0.0, 0.0],
            [a, 0.0, 0.0],
            [a, b, 0.0],
            [0.0, b, 0.0],
            [0.0, 0.0, c],
            [a, 0.0, c],
            [a, b, c],
            [0.0, b, c],
        ];
        let f = vec![
            vec![0, 3, 2, 1],
            vec![4, 5, 6, 7],
            vec![0, 1, 5, 4],
            vec![1, 2, 6, 5],
            vec![2, 3, 7, 6],
            vec![3, 0, 4, 7],
        ];
        Self::new(v, f).expect("box is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MeshJson {
            format_version: "conesphere.mesh/1".into(),
            vertices: self.vertices.clone(),
            faces: self.faces.clone(),
        })
        .unwrap()
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let doc: MeshJson =
            serde_json::from_str(text).map_err(|e| GeometryError::Json(e.to_string()))?;
        Self::new(doc.vertices, doc.faces)
    }
}

#[derive(Clone)]
struct State {
    from_face: usize,
    edge: (usize, usize),
    window: ([f64; 2], [f64; 2]),
    funnel: ([f64; 2], [f64; 2]),
    chain: Rc<WindowChain>,
    depth: usize,
}

struct WindowChain {
    w0: [f64; 2],
    w1: [f64; 2],
    parent: Option<Rc<WindowChain>>,
}

/// Validate that the segment from the origin to `target` crosses every window
/// in the chain, in order, within tolerance.
fn chain_crossed(chain: &Rc<WindowChain>, target: [f64; 2], eps: f64) -> bool {
    let mut windows = Vec::new();
    let mut cur = Some(chain.clone());
    while let Some(c) = cur {
        windows.push((c.w0, c.w1));
        cur = c.parent.clone();
    }
    windows.reverse();
    let t_len2 = target[0] * target[0] + target[1] * target[1];
    if t_len2 == 0.0 {
        return false;
    }
    let mut prev_s = 0.0f64;
    for (w0, w1) in windows {
        let d = [w1[0] - w0[0], w1[1] - w0[1]];
        let denom = target[0] * d[1] - target[1] * d[0];
        if denom.abs() < 1e-300 {
            return false;
        }
        // s*target = w0 + u*d
        let s = (w0[0] * d[1] - w0[1] * d[0]) / denom;
        let u = (w0[0] * target[1] - w0[1] * target[0]) / denom;
        let scale_u = 1.0 + eps / (norm2(d) + 1e-300);
        if !(-(scale_u - 1.0) <= u && u <= scale_u) {
            return false;
        }
        if s < prev_s - 1e-12 || s > 1.0 + 1e-9 {
            return false;
        }
        prev_s = s;
    }
    true
}

fn norm2(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Angular sector subtended by a segment from the origin, ordered ccw.
fn sector(w0: [f64; 2], w1: [f64; 2]) -> ([f64; 2], [f64; 2]) {
    if cross2(w0, w1) >= 0.0 {
        (w0, w1)
    } else {
        (w1, w0)
    }
}

/// Intersect two ccw sectors (each spanning < π). Zero-width intersections
/// are reported empty: a funnel collapsed to a single ray is a through-vertex
/// path, which is never strictly shortest on a strictly convex surface.
fn clip_funnel(
    f: ([f64; 2], [f64; 2]),
    s: ([f64; 2], [f64; 2]),
) -> Option<([f64; 2], [f64; 2])> {
    let lo = if cross2(f.0, s.0) > 0.0 { s.0 } else { f.0 };
    let hi = if cross2(s.1, f.1) > 0.0 { s.1 } else { f.1 };
    let c = cross2(lo, hi);
    if c > 1e-14 * norm2(lo) * norm2(hi) {
        Some((lo, hi))
    } else {
        None
    }
}

fn dist_point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    norm2([p[0] - q[0], p[1] - q[1]])
}

/// Total-order wrapper for f64 heap keys.
#[derive(PartialEq)]
struct TotalF64(f64);

impl Eq for TotalF64 {}

impl PartialOrd for TotalF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TotalF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Orientation-preserving planar isometry.
#[derive(Clone, Copy)]
struct Iso2 {
    c: f64,
    s: f64,
    t: [f64; 2],
}

impl Iso2 {
    fn translation(t: [f64; 2]) -> Self {
        Self { c: 1.0, s: 0.0, t }
    }

    /// The unique orientation-preserving isometry with `la → a`, `lb → b`.
    fn matching(la: [f64; 2], lb: [f64; 2], a: [f64; 2], b: [f64; 2]) -> Self {
        let u = [lb[0] - la[0], lb[1] - la[1]];
        let v = [b[0] - a[0], b[1] - a[1]];
        let nu = norm2(u);
        let nv = norm2(v);
        let c = (u[0] * v[0] + u[1] * v[1]) / (nu * nv);
        let s = (u[0] * v[1] - u[1] * v[0]) / (nu * nv);
        let t = [
            a[0] - (c * la[0] - s * la[1]),
            a[1] - (s * la[0] + c * la[1]),
        ];
        Self { c, s, t }
    }

    fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.c * p[0] - self.s * p[1] + self.t[0],
            self.s * p[0] + self.c * p[1] + self.t[1],
        ]
    }
}
