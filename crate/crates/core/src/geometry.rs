//! Convex triangle meshes: hull construction, mass properties, ray queries.

use std::collections::HashMap;

use nalgebra::{Matrix3, Point3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate point set: fewer than four non-coplanar points")]
    Degenerate,
    #[error("mesh is not closed: {0}")]
    NotWatertight(String),
    #[error("mesh has non-positive volume {0}")]
    NonPositiveVolume(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut b = Self::empty();
        for p in pts {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&o.min),
            max: self.max.sup(&o.max),
        }
    }

    pub fn extents(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    /// Slab test; returns the entry distance if the ray meets the box before `t_max`.
    #[inline]
    pub fn ray_entry(&self, origin: &Point3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let lo = (self.min[a] - origin[a]) * inv_dir[a];
            let hi = (self.max[a] - origin[a]) * inv_dir[a];
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// Möller–Trumbore; returns the hit distance along a unit `dir`.
#[inline]
pub fn ray_triangle(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qv = s.cross(&e1);
    let v = dir.dot(&qv) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&qv) * inv;
    (t > 1e-12).then_some(t)
}

#[derive(Clone, Debug)]
enum BvhNode {
    Inner { bounds: Aabb, left: u32, right: u32 },
    Leaf { bounds: Aabb, first: u32, count: u32 },
}

impl BvhNode {
    fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Inner { bounds, .. } | BvhNode::Leaf { bounds, .. } => bounds,
        }
    }
}

/// Bounding-volume hierarchy over a triangle list (median split, leaves of up to 4).
#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<u32>,
}

const BVH_LEAF: usize = 4;

impl Bvh {
    pub fn build(vertices: &[Point3<f64>], faces: &[[u32; 3]]) -> Self {
        let tri_bounds: Vec<Aabb> = faces
            .iter()
            .map(|f| Aabb::from_points(f.iter().map(|&i| &vertices[i as usize])))
            .collect();
        let centroids: Vec<Point3<f64>> = tri_bounds.iter().map(Aabb::center).collect();
        let mut order: Vec<u32> = (0..faces.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * faces.len().max(1));
        if !faces.is_empty() {
            Self::build_node(&mut nodes, &mut order, 0, faces.len(), &tri_bounds, &centroids);
        }
        Self { nodes, order }
    }

    fn build_node(
        nodes: &mut Vec<BvhNode>,
        order: &mut [u32],
        first: usize,
        count: usize,
        tri_bounds: &[Aabb],
        centroids: &[Point3<f64>],
    ) -> u32 {
        let slice = &mut order[first..first + count];
        let bounds = slice
            .iter()
            .fold(Aabb::empty(), |acc, &t| acc.merge(&tri_bounds[t as usize]));
        let idx = nodes.len() as u32;
        if count <= BVH_LEAF {
            nodes.push(BvhNode::Leaf {
                bounds,
                first: first as u32,
                count: count as u32,
            });
            return idx;
        }
        let cb = Aabb::from_points(slice.iter().map(|&t| &centroids[t as usize]));
        let ext = cb.extents();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        slice.sort_by(|&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        let half = count / 2;
        nodes.push(BvhNode::Leaf {
            bounds,
            first: 0,
            count: 0,
        });
        let left = Self::build_node(nodes, order, first, half, tri_bounds, centroids);
        let right = Self::build_node(nodes, order, first + half, count - half, tri_bounds, centroids);
        nodes[idx as usize] = BvhNode::Inner { bounds, left, right };
        idx
    }

    /// Nearest triangle hit closer than `t_max`.
    pub fn raycast(
        &self,
        vertices: &[Point3<f64>],
        faces: &[[u32; 3]],
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        t_max: f64,
    ) -> Option<(f64, u32)> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = dir.map(|d| if d == 0.0 { f64::INFINITY } else { 1.0 / d });
        let mut best: Option<(f64, u32)> = None;
        let mut limit = t_max;
        let mut stack = [0u32; 64];
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if node.bounds().ray_entry(origin, &inv, limit).is_none() {
                continue;
            }
            match node {
                BvhNode::Inner { left, right, .. } => {
                    stack[sp] = *right;
                    stack[sp + 1] = *left;
                    sp += 2;
                }
                BvhNode::Leaf { first, count, .. } => {
                    for &t in &self.order[*first as usize..(*first + *count) as usize] {
                        let f = faces[t as usize];
                        if let Some(d) = ray_triangle(
                            origin,
                            dir,
                            &vertices[f[0] as usize],
                            &vertices[f[1] as usize],
                            &vertices[f[2] as usize],
                        ) {
                            if d < limit {
                                limit = d;
                                best = Some((d, t));
                            }
                        }
                    }
                }
            }
        }
        best
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[BvhNode], i: u32) -> usize {
            match &nodes[i as usize] {
                BvhNode::Leaf { .. } => 1,
                BvhNode::Inner { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            go(&self.nodes, 0)
        }
    }
}

/// Volume, center of mass and inertia of a closed, outward-oriented mesh at unit density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassProperties {
    pub volume: f64,
    pub center: Point3<f64>,
    /// Inertia tensor about `center`, per unit density.
    pub inertia: Matrix3<f64>,
}

/// Signed-tetrahedron integration (covariance form).
pub fn mass_properties(vertices: &[Point3<f64>], faces: &[[u32; 3]]) -> MassProperties {
    let canonical = Matrix3::new(2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0) / 120.0;
    let mut volume = 0.0;
    let mut first = Vector3::zeros();
    let mut cov = Matrix3::zeros();
    for f in faces {
        let a = vertices[f[0] as usize].coords;
        let b = vertices[f[1] as usize].coords;
        let c = vertices[f[2] as usize].coords;
        let m = Matrix3::from_columns(&[a, b, c]);
        let det = m.determinant();
        volume += det / 6.0;
        first += det / 24.0 * (a + b + c);
        cov += det * m * canonical * m.transpose();
    }
    let center = first / volume;
    let cov_c = cov - volume * center * center.transpose();
    let inertia = Matrix3::identity() * cov_c.trace() - cov_c;
    MassProperties {
        volume,
        center: Point3::from(center),
        inertia,
    }
}

/// Incremental 3D convex hull. Returns compacted vertices and outward triangles.
pub fn convex_hull(points: &[Point3<f64>]) -> Result<(Vec<Point3<f64>>, Vec<[u32; 3]>), GeometryError> {
    if points.len() < 4 {
        return Err(GeometryError::Degenerate);
    }
    let scale = Aabb::from_points(points).extents().norm().max(1e-12);
    let eps = 1e-10 * scale;

    let i0 = (0..points.len())
        .min_by(|&a, &b| points[a].x.total_cmp(&points[b].x))
        .unwrap();
    let i1 = (0..points.len())
        .max_by(|&a, &b| (points[a] - points[i0]).norm().total_cmp(&(points[b] - points[i0]).norm()))
        .unwrap();
    let line = (points[i1] - points[i0]).normalize();
    let off_line = |p: &Point3<f64>| {
        let d = p - points[i0];
        (d - line * d.dot(&line)).norm()
    };
    let i2 = (0..points.len())
        .max_by(|&a, &b| off_line(&points[a]).total_cmp(&off_line(&points[b])))
        .unwrap();
    if off_line(&points[i2]) < eps {
        return Err(GeometryError::Degenerate);
    }
    let n = (points[i1] - points[i0]).cross(&(points[i2] - points[i0])).normalize();
    let i3 = (0..points.len())
        .max_by(|&a, &b| {
            n.dot(&(points[a] - points[i0]))
                .abs()
                .total_cmp(&n.dot(&(points[b] - points[i0])).abs())
        })
        .unwrap();
    if n.dot(&(points[i3] - points[i0])).abs() < eps {
        return Err(GeometryError::Degenerate);
    }

    let plane = |f: &[usize; 3]| {
        let a = points[f[0]];
        let nn = (points[f[1]] - a).cross(&(points[f[2]] - a));
        let nn = nn / nn.norm();
        (nn, nn.dot(&a.coords))
    };
    let interior = Point3::from(
        (points[i0].coords + points[i1].coords + points[i2].coords + points[i3].coords) / 4.0,
    );
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for f in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        let (nn, d) = plane(&f);
        if nn.dot(&interior.coords) - d > 0.0 {
            faces.push([f[0], f[2], f[1]]);
        } else {
            faces.push(f);
        }
    }

    for (pi, p) in points.iter().enumerate() {
        if [i0, i1, i2, i3].contains(&pi) {
            continue;
        }
        let visible: Vec<bool> = faces
            .iter()
            .map(|f| {
                let (nn, d) = plane(f);
                nn.dot(&p.coords) - d > eps
            })
            .collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut visible_edges: HashMap<(usize, usize), ()> = HashMap::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                visible_edges.insert((f[k], f[(k + 1) % 3]), ());
            }
        }
        let mut horizon = Vec::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if !visible_edges.contains_key(&(b, a)) {
                    horizon.push((a, b));
                }
            }
        }
        let mut kept: Vec<[usize; 3]> = faces
            .iter()
            .zip(&visible)
            .filter(|(_, &v)| !v)
            .map(|(f, _)| *f)
            .collect();
        kept.extend(horizon.into_iter().map(|(a, b)| [a, b, pi]));
        faces = kept;
    }

    let mut remap = HashMap::new();
    let mut verts = Vec::new();
    let mut out = Vec::with_capacity(faces.len());
    // deterministic compaction: order of first appearance
    for f in &faces {
        let mut g = [0u32; 3];
        for k in 0..3 {
            let next = verts.len() as u32;
            let id = *remap.entry(f[k]).or_insert_with(|| {
                verts.push(points[f[k]]);
                next
            });
            g[k] = id;
        }
        out.push(g);
    }
    Ok((verts, out))
}

/// Checks every undirected edge is shared by exactly two oppositely oriented faces.
pub fn check_watertight(faces: &[[u32; 3]]) -> Result<usize, GeometryError> {
    let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
    for f in faces {
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    for (&(a, b), &n) in &directed {
        if n != 1 {
            return Err(GeometryError::NotWatertight(format!("edge {a}-{b} used {n} times")));
        }
        if !directed.contains_key(&(b, a)) {
            return Err(GeometryError::NotWatertight(format!("edge {a}-{b} has no twin")));
        }
    }
    Ok(directed.len() / 2)
}

/// Closed convex triangle mesh in its body frame (center of mass at the origin).
#[derive(Clone, Debug)]
pub struct ConvexMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[u32; 3]>,
    /// Outward unit normal and offset per face: `n · x <= d` inside.
    pub planes: Vec<(Vector3<f64>, f64)>,
    pub volume: f64,
    /// Inertia about the origin per unit density.
    pub unit_inertia: Matrix3<f64>,
    pub radius: f64,
    pub aabb: Aabb,
    bvh: Bvh,
}

impl ConvexMesh {
    /// Builds from a closed outward mesh; vertices are shifted so the centroid is the origin.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        check_watertight(&faces)?;
        let props = mass_properties(&vertices, &faces);
        if !(props.volume > 0.0) {
            return Err(GeometryError::NonPositiveVolume(props.volume));
        }
        let shift = props.center.coords;
        let vertices: Vec<Point3<f64>> = vertices.into_iter().map(|v| v - shift).collect();
        let planes = faces
            .iter()
            .map(|f| {
                let a = vertices[f[0] as usize];
                let n = (vertices[f[1] as usize] - a).cross(&(vertices[f[2] as usize] - a));
                let n = n / n.norm();
                (n, n.dot(&a.coords))
            })
            .collect();
        let radius = vertices.iter().map(|v| v.coords.norm()).fold(0.0, f64::max);
        let aabb = Aabb::from_points(&vertices);
        let bvh = Bvh::build(&vertices, &faces);
        Ok(Self {
            vertices,
            faces,
            planes,
            volume: props.volume,
            unit_inertia: props.inertia,
            radius,
            aabb,
            bvh,
        })
    }

    /// Hull of a point cloud.
    pub fn from_points(points: &[Point3<f64>]) -> Result<Self, GeometryError> {
        let (v, f) = convex_hull(points)?;
        Self::new(v, f)
    }

    pub fn num_edges(&self) -> usize {
        check_watertight(&self.faces).unwrap_or(0)
    }

    /// Largest violation of any face halfspace by any vertex (≤ 0 for convex meshes).
    pub fn convexity_violation(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (n, d) in &self.planes {
            for v in &self.vertices {
                worst = worst.max(n.dot(&v.coords) - d);
            }
        }
        worst
    }

    /// Depth of `p` (body frame) below the nearest face, with that face index;
    /// `None` when `p` is outside.
    #[inline]
    pub fn penetration(&self, p: &Point3<f64>) -> Option<(f64, usize)> {
        let mut best = (f64::INFINITY, 0usize);
        for (i, (n, d)) in self.planes.iter().enumerate() {
            let gap = d - n.dot(&p.coords);
            if gap < 0.0 {
                return None;
            }
            if gap < best.0 {
                best = (gap, i);
            }
        }
        Some(best)
    }

    /// Largest plane distance of `p` (negative inside) and the face attaining it.
    /// Outside the hull this is a lower bound on the true distance.
    pub fn plane_distance(&self, p: &Point3<f64>) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, (n, d)) in self.planes.iter().enumerate() {
            let s = n.dot(&p.coords) - d;
            if s > best.0 {
                best = (s, i);
            }
        }
        best
    }

    pub fn raycast(&self, origin: &Point3<f64>, dir: &Vector3<f64>, t_max: f64) -> Option<(f64, u32)> {
        self.bvh.raycast(&self.vertices, &self.faces, origin, dir, t_max)
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }
}
