//! Random planar truss populations.
//!
//! Each member is a Delaunay triangulation of boundary points spread along a
//! trapezoid plus randomly placed interior points. Triangulations containing
//! slivers are rejected and the interior points are re-sampled.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

pub const DENSITY_KG_M3: f64 = 8015.0;
pub const AREA_M2: f64 = 0.5;
pub const YOUNGS_MODULUS_MIN_PA: f64 = 100e9;
pub const YOUNGS_MODULUS_MAX_PA: f64 = 300e9;

const MAX_MESH_ATTEMPTS: usize = 500;

/// Trapezoidal outline the trusses are meshed inside. The bottom edge is the
/// longer one and sits on `y = 0`, starting at `x = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrapezoidSpec {
    pub span_m: f64,
    pub top_span_m: f64,
    pub height_m: f64,
    /// Inclusive range the per-truss interior point count is drawn from.
    pub n_interior_points: [usize; 2],
    pub n_boundary_points: usize,
    /// Minimum spacing between any two mesh points.
    pub min_point_distance_m: f64,
    /// Minimum triangle angle accepted in the triangulation.
    pub min_angle_deg: f64,
}

impl Default for TrapezoidSpec {
    fn default() -> Self {
        Self {
            span_m: 100.0,
            top_span_m: 60.0,
            height_m: 15.0,
            n_interior_points: [10, 18],
            n_boundary_points: 14,
            min_point_distance_m: 4.0,
            min_angle_deg: 15.0,
        }
    }
}

impl TrapezoidSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_span_m > 0.0 && self.span_m > self.top_span_m) {
            return invalid("trapezoid requires span > top span > 0");
        }
        if !(self.height_m > 0.0) {
            return invalid("trapezoid height must be positive");
        }
        if self.n_interior_points[0] > self.n_interior_points[1] {
            return invalid("interior point range is empty");
        }
        if self.n_boundary_points < 4 {
            return invalid("at least the four corners are needed on the boundary");
        }
        if !(self.min_angle_deg >= 0.0 && self.min_angle_deg < 60.0) {
            return invalid("minimum angle must lie in [0, 60) degrees");
        }
        Ok(())
    }

    /// Corners in counter-clockwise order starting bottom-left.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let inset = 0.5 * (self.span_m - self.top_span_m);
        [(0.0, 0.0), (self.span_m, 0.0), (inset + self.top_span_m, self.height_m), (inset, self.height_m)]
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        let c = self.corners();
        (0..4).all(|i| {
            let a = c[i];
            let b = c[(i + 1) % 4];
            cross(a, b, p) >= 0.0
        })
    }

    /// Distance from `p` to the closest boundary edge (positive inside).
    fn edge_clearance(&self, p: (f64, f64)) -> f64 {
        let c = self.corners();
        (0..4).map(|i| segment_distance(p, c[i], c[(i + 1) % 4])).fold(f64::INFINITY, f64::min)
    }

    /// Boundary points, evenly spaced along each edge. Segment counts per edge
    /// are apportioned by edge length (largest remainder, at least one each).
    pub fn boundary_points(&self) -> Vec<(f64, f64)> {
        let c = self.corners();
        let lengths: Vec<f64> = (0..4).map(|i| dist(c[i], c[(i + 1) % 4])).collect();
        let total: f64 = lengths.iter().sum();
        let n = self.n_boundary_points;
        let quotas: Vec<f64> = lengths.iter().map(|l| l / total * n as f64).collect();
        let mut segs: Vec<usize> = quotas.iter().map(|q| (q.floor() as usize).max(1)).collect();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let mut k = 0;
        while segs.iter().sum::<usize>() < n {
            segs[order[k % 4]] += 1;
            k += 1;
        }
        while segs.iter().sum::<usize>() > n {
            let i = (0..4).max_by_key(|&i| (segs[i], std::cmp::Reverse(i))).unwrap();
            segs[i] -= 1;
        }
        let mut pts = Vec::with_capacity(n);
        for i in 0..4 {
            let (a, b) = (c[i], c[(i + 1) % 4]);
            for s in 0..segs[i] {
                let t = s as f64 / segs[i] as f64;
                pts.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
            }
        }
        pts
    }
}

/// Support condition at one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub node: usize,
    pub fixed_x: bool,
    pub fixed_y: bool,
}

/// One population member: geometry, connectivity, supports and material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrussSpec {
    pub node_coords: Vec<(f64, f64)>,
    pub edges: Vec<(usize, usize)>,
    pub supports: Vec<Support>,
    pub youngs_modulus_pa: f64,
    pub density_kg_m3: f64,
    pub area_m2: f64,
    pub population_id: usize,
}

impl TrussSpec {
    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    /// Neighbour lists built from the edge set.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes()];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_nodes();
        if n == 0 {
            return false;
        }
        let adj = self.neighbors();
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &self.edges {
            if i >= n || j >= n {
                return invalid(format!("edge ({i}, {j}) references a missing node"));
            }
            if i == j {
                return invalid(format!("self edge at node {i}"));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return invalid(format!("duplicate edge ({i}, {j})"));
            }
        }
        if !self.is_connected() {
            return invalid("truss graph is not connected");
        }
        let fx = self.supports.iter().filter(|s| s.fixed_x).count();
        let fy = self.supports.iter().filter(|s| s.fixed_y).count();
        if fx < 1 || fy < 2 {
            return invalid("supports must fix at least one x and two y displacements");
        }
        if self.supports.iter().any(|s| s.node >= n) {
            return invalid("support references a missing node");
        }
        if !(self.youngs_modulus_pa > 0.0 && self.density_kg_m3 > 0.0 && self.area_m2 > 0.0) {
            return invalid("material parameters must be positive");
        }
        Ok(())
    }

    /// Triangles of the mesh recovered from the edge set (3-cliques).
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        let adj = self.neighbors();
        let mut tris = Vec::new();
        for &(a, b) in &self.edges {
            let (a, b) = (a.min(b), a.max(b));
            for &c in &adj[a] {
                if c > b && adj[b].binary_search(&c).is_ok() {
                    tris.push([a, b, c]);
                }
            }
        }
        tris
    }
}

/// Smallest interior angle of a triangle, in degrees.
pub fn min_angle_deg(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let angle = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| {
        let u = (q.0 - p.0, q.1 - p.1);
        let v = (r.0 - p.0, r.1 - p.1);
        let cos = (u.0 * v.0 + u.1 * v.1) / ((u.0.hypot(u.1)) * (v.0.hypot(v.1)));
        cos.clamp(-1.0, 1.0).acos().to_degrees()
    };
    angle(a, b, c).min(angle(b, c, a)).min(angle(c, a, b))
}

fn cross(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let ab = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * ab.0 + (p.1 - a.1) * ab.1) / (ab.0 * ab.0 + ab.1 * ab.1)).clamp(0.0, 1.0);
    dist(p, (a.0 + t * ab.0, a.1 + t * ab.1))
}

/// Bowyer-Watson Delaunay triangulation. Returns counter-clockwise triangles;
/// near-degenerate triangles (collinear boundary points) are dropped.
pub fn triangulate(points: &[(f64, f64)]) -> Vec<[usize; 3]> {
    let n = points.len();
    if n < 3 {
        return Vec::new();
    }
    let (mut xmin, mut ymin, mut xmax, mut ymax) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in points {
        xmin = xmin.min(p.0);
        xmax = xmax.max(p.0);
        ymin = ymin.min(p.1);
        ymax = ymax.max(p.1);
    }
    let span = (xmax - xmin).max(ymax - ymin).max(1e-12);
    let (cx, cy) = (0.5 * (xmin + xmax), 0.5 * (ymin + ymax));
    let mut pts = points.to_vec();
    pts.push((cx - 20.0 * span, cy - 10.0 * span));
    pts.push((cx + 20.0 * span, cy - 10.0 * span));
    pts.push((cx, cy + 20.0 * span));

    let ccw = |t: [usize; 3], pts: &[(f64, f64)]| -> [usize; 3] {
        if cross(pts[t[0]], pts[t[1]], pts[t[2]]) < 0.0 {
            [t[0], t[2], t[1]]
        } else {
            t
        }
    };
    let in_circumcircle = |t: &[usize; 3], p: (f64, f64), pts: &[(f64, f64)]| -> bool {
        let (a, b, c) = (pts[t[0]], pts[t[1]], pts[t[2]]);
        let (ax, ay) = (a.0 - p.0, a.1 - p.1);
        let (bx, by) = (b.0 - p.0, b.1 - p.1);
        let (cx, cy) = (c.0 - p.0, c.1 - p.1);
        let det = (ax * ax + ay * ay) * (bx * cy - cx * by) - (bx * bx + by * by) * (ax * cy - cx * ay) + (cx * cx + cy * cy) * (ax * by - bx * ay);
        det > 0.0
    };

    let mut tris: Vec<[usize; 3]> = vec![[n, n + 1, n + 2]];
    for (i, &p) in points.iter().enumerate() {
        let (bad, keep): (Vec<[usize; 3]>, Vec<[usize; 3]>) = tris.iter().partition(|t| in_circumcircle(t, p, &pts));
        // Boundary of the cavity: edges belonging to exactly one bad triangle.
        let mut cavity: Vec<(usize, usize)> = Vec::new();
        for t in &bad {
            for k in 0..3 {
                let e = (t[k], t[(k + 1) % 3]);
                let shared = bad.iter().any(|o| o != t && (0..3).any(|m| (o[m], o[(m + 1) % 3]) == (e.1, e.0)));
                if !shared {
                    cavity.push(e);
                }
            }
        }
        tris = keep;
        for (a, b) in cavity {
            tris.push(ccw([a, b, i], &pts));
        }
    }

    let area_tol = 1e-9 * span * span;
    tris.into_iter().filter(|t| t.iter().all(|&v| v < n)).filter(|t| 0.5 * cross(pts[t[0]], pts[t[1]], pts[t[2]]) > area_tol).collect()
}

/// Unique undirected edges of a triangle list, sorted.
pub fn triangle_edges(tris: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = tris.iter().flat_map(|t| (0..3).map(move |k| (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3])))).collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

fn sample_interior(boundary: &TrapezoidSpec, fixed: &[(f64, f64)], count: usize, rng: &mut ChaCha8Rng) -> Option<Vec<(f64, f64)>> {
    let d = boundary.min_point_distance_m;
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(count);
    let mut tries = 0usize;
    while pts.len() < count {
        tries += 1;
        if tries > 10_000 {
            return None;
        }
        let p = (rng.random_range(0.0..boundary.span_m), rng.random_range(0.0..boundary.height_m));
        if !boundary.contains(p) || boundary.edge_clearance(p) < 0.5 * d {
            continue;
        }
        if fixed.iter().chain(pts.iter()).any(|&q| dist(p, q) < d) {
            continue;
        }
        pts.push(p);
    }
    Some(pts)
}

/// Geometry-only truss: sorted nodes and Delaunay edges. Material fields are
/// filled with the constant density/area and a placeholder modulus of 0.
pub fn delaunay_mesh(boundary: &TrapezoidSpec, seed: u64) -> Result<TrussSpec> {
    boundary.validate()?;
    let mut rng = seed::rng(seed);
    let boundary_pts = boundary.boundary_points();
    let [lo, hi] = boundary.n_interior_points;
    let count = rng.random_range(lo..=hi);

    for _ in 0..MAX_MESH_ATTEMPTS {
        let Some(interior) = sample_interior(boundary, &boundary_pts, count, &mut rng) else {
            continue;
        };
        let mut points: Vec<(f64, f64)> = boundary_pts.iter().copied().chain(interior).collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let tris = triangulate(&points);
        let ok = !tris.is_empty() && tris.iter().all(|t| min_angle_deg(points[t[0]], points[t[1]], points[t[2]]) >= boundary.min_angle_deg);
        if !ok {
            continue;
        }
        let truss = TrussSpec {
            edges: triangle_edges(&tris),
            node_coords: points,
            supports: Vec::new(),
            youngs_modulus_pa: 0.0,
            density_kg_m3: DENSITY_KG_M3,
            area_m2: AREA_M2,
            population_id: 0,
        };
        if truss.is_connected() {
            return Ok(truss);
        }
    }
    Err(Error::Meshing { attempts: MAX_MESH_ATTEMPTS, reason: format!("no triangulation met the {:.1} degree angle bound", boundary.min_angle_deg) })
}

/// Uniform Young's modulus draw in [100, 300] GPa.
pub fn sample_material(rng_seed: u64) -> f64 {
    let mut rng = seed::rng(rng_seed);
    rng.random_range(YOUNGS_MODULUS_MIN_PA..=YOUNGS_MODULUS_MAX_PA)
}

/// Pinned bottom-left corner and roller bottom-right corner.
pub fn simple_supports(truss: &TrussSpec) -> Vec<Support> {
    let coords = &truss.node_coords;
    let bottom = |i: &usize| coords[*i].1.abs() < 1e-9;
    let left = (0..coords.len()).filter(bottom).min_by(|&a, &b| coords[a].0.total_cmp(&coords[b].0));
    let right = (0..coords.len()).filter(bottom).max_by(|&a, &b| coords[a].0.total_cmp(&coords[b].0));
    match (left, right) {
        (Some(l), Some(r)) if l != r => vec![Support { node: l, fixed_x: true, fixed_y: true }, Support { node: r, fixed_x: false, fixed_y: true }],
        _ => Vec::new(),
    }
}

/// `count` independent simply-supported trusses. Member `i` draws its mesh
/// and its modulus from child seeds of `seed`.
pub fn generate_population(count: usize, boundary: &TrapezoidSpec, seed: u64) -> Result<Vec<TrussSpec>> {
    if count == 0 {
        return invalid("population count must be at least 1");
    }
    (0..count)
        .map(|i| {
            let member = seed::derive(seed, i as u64);
            let mut truss = delaunay_mesh(boundary, seed::derive(member, 0))?;
            truss.youngs_modulus_pa = sample_material(seed::derive(member, 1));
            truss.supports = simple_supports(&truss);
            truss.population_id = i;
            truss.validate()?;
            Ok(truss)
        })
        .collect()
}
