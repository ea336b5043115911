//! Indexed triangle meshes with validated manifold structure.

mod io;

use std::collections::HashMap;
use std::ops::Index;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub use io::{export, import, ImportedMesh, MeshFormat};

/// Faces smaller than this fraction of the mean face area are rejected.
pub const DEGENERATE_AREA_RATIO: f64 = 1e-8;

/// Default half-width of the excluded band around a cutting plane, relative to
/// the mean edge length.
pub const DEFAULT_PLANE_BAND: f64 = 0.5;

/// Fraction of excluded vertices above which a cutting plane is declared degenerate.
pub const DEGENERATE_PLANE_FRACTION: f64 = 0.99;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("face {face} repeats a vertex: {indices:?}")]
    RepeatedVertex { face: usize, indices: [usize; 3] },
    #[error("edge ({0}, {1}) is shared by more than two faces")]
    NonManifoldEdge(usize, usize),
    #[error("faces sharing edge ({0}, {1}) are inconsistently oriented")]
    InconsistentOrientation(usize, usize),
    #[error("face {face} is degenerate (area {area:e}, mean {mean:e})")]
    DegenerateFace { face: usize, area: f64, mean: f64 },
    #[error("plane contains {excluded} of {total} vertices in its exclusion band")]
    DegeneratePlane { excluded: usize, total: usize },
    #[error("normal vector must be nonzero and finite")]
    InvalidNormal,
    #[error("field has {got} values but the mesh has {expected} vertices")]
    FieldSize { expected: usize, got: usize },
    #[error("unknown mesh format `{0}`")]
    UnknownFormat(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Triangle surface in R³.
///
/// Immutable after construction. The constructor checks index ranges, edge
/// manifoldness, consistent orientation and face non-degeneracy, and derives
/// the vertex adjacency and boundary flags.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    adj_offsets: Vec<usize>,
    adj: Vec<usize>,
    edges: Vec<[usize; 2]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let n = vertices.len();
        for (f, tri) in faces.iter().enumerate() {
            for &i in tri {
                if i >= n {
                    return Err(MeshError::IndexOutOfRange { face: f, index: i, count: n });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::RepeatedVertex { face: f, indices: *tri });
            }
        }

        // directed half-edge -> owning face
        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3);
        let mut undirected: HashMap<(usize, usize), u8> = HashMap::with_capacity(faces.len() * 2);
        for (f, tri) in faces.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let count = undirected.entry(key).or_insert(0);
                *count += 1;
                if *count > 2 {
                    return Err(MeshError::NonManifoldEdge(key.0, key.1));
                }
                if directed.insert((a, b), f).is_some() {
                    return Err(MeshError::InconsistentOrientation(key.0, key.1));
                }
            }
        }

        if !faces.is_empty() {
            let areas: Vec<f64> = faces.iter().map(|t| tri_area(&vertices, t)).collect();
            let mean = areas.iter().sum::<f64>() / areas.len() as f64;
            for (f, &area) in areas.iter().enumerate() {
                if !(area > 0.0 && area >= DEGENERATE_AREA_RATIO * mean) {
                    return Err(MeshError::DegenerateFace { face: f, area, mean });
                }
            }
        }

        let mut edges: Vec<[usize; 2]> = undirected.keys().map(|&(a, b)| [a, b]).collect();
        edges.sort_unstable();
        let mut boundary = vec![false; n];
        for (&(a, b), &count) in &undirected {
            if count == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
        }

        let mut degree = vec![0usize; n];
        for &[a, b] in &edges {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut adj_offsets = Vec::with_capacity(n + 1);
        adj_offsets.push(0);
        for d in &degree {
            adj_offsets.push(adj_offsets.last().unwrap() + d);
        }
        let mut fill = adj_offsets[..n].to_vec();
        let mut adj = vec![0usize; 2 * edges.len()];
        for &[a, b] in &edges {
            adj[fill[a]] = b;
            fill[a] += 1;
            adj[fill[b]] = a;
            fill[b] += 1;
        }
        for i in 0..n {
            adj[adj_offsets[i]..adj_offsets[i + 1]].sort_unstable();
        }

        Ok(Self { vertices, faces, boundary, adj_offsets, adj, edges })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Unique undirected edges `[a, b]` with `a < b`, sorted.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Sorted edge neighbours of vertex `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[self.adj_offsets[i]..self.adj_offsets[i + 1]]
    }

    /// True if the vertex lies on an edge with a single incident face.
    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn has_boundary(&self) -> bool {
        self.boundary.iter().any(|&b| b)
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.faces.len() as i64
    }

    pub fn face_area(&self, f: usize) -> f64 {
        tri_area(&self.vertices, &self.faces[f])
    }

    pub fn face_centroid(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[f];
        (self.vertices[a] + self.vertices[b] + self.vertices[c]) / 3.0
    }

    /// Area-weighted (unnormalised: twice the area) face normal.
    pub fn face_normal_scaled(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[f];
        (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]))
    }

    /// Unit vertex normals from area-weighted face normals.
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for f in 0..self.faces.len() {
            let nf = self.face_normal_scaled(f);
            for &i in &self.faces[f] {
                normals[i] += nf;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn mean_edge_length(&self) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.edges.iter().map(|&[a, b]| (self.vertices[a] - self.vertices[b]).norm()).sum();
        sum / self.edges.len() as f64
    }

    /// Signed enclosed volume; positive for a closed, outward oriented surface.
    pub fn signed_volume(&self) -> f64 {
        self.faces.iter().map(|&[a, b, c]| self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])) / 6.0).sum()
    }

    /// Copy of the mesh with every face winding reversed.
    pub fn flipped(&self) -> Self {
        let mut out = self.clone();
        for f in &mut out.faces {
            f.swap(1, 2);
        }
        out
    }

    /// Image of the mesh under a linear map. Orientation-reversing maps also
    /// reverse the face winding so outward normals stay outward.
    pub fn transformed(&self, matrix: &Matrix3<f64>) -> Self {
        let mut out = self.clone();
        for p in &mut out.vertices {
            *p = matrix * *p;
        }
        if matrix.determinant() < 0.0 {
            for f in &mut out.faces {
                f.swap(1, 2);
            }
        }
        out
    }

    /// Same surface with vertices renumbered: new vertex `k` is old vertex `order[k]`.
    pub fn relabeled(&self, order: &[usize]) -> Result<Self, MeshError> {
        let mut inverse = vec![usize::MAX; self.vertices.len()];
        for (k, &old) in order.iter().enumerate() {
            inverse[old] = k;
        }
        let vertices = order.iter().map(|&old| self.vertices[old]).collect();
        let faces = self.faces.iter().map(|f| f.map(|i| inverse[i])).collect();
        Self::new(vertices, faces)
    }
}

fn tri_area(vertices: &[Vector3<f64>], tri: &[usize; 3]) -> f64 {
    let [a, b, c] = *tri;
    0.5 * (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a])).norm()
}

/// Scalar field with one value per mesh vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexScalarField(Vec<f64>);

impl VertexScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self(vec![value; len])
    }

    pub fn from_fn(mesh: &TriangleMesh, f: impl Fn(&Vector3<f64>) -> f64) -> Self {
        Self(mesh.vertices().iter().map(f).collect())
    }

    /// Coordinate function `x_axis` (axis 0, 1 or 2).
    pub fn coordinate(mesh: &TriangleMesh, axis: usize) -> Self {
        Self::from_fn(mesh, |p| p[axis])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|v| c * v).collect())
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + c * b).collect())
    }

    pub fn check_len(&self, mesh: &TriangleMesh) -> Result<(), MeshError> {
        if self.len() == mesh.num_vertices() {
            Ok(())
        } else {
            Err(MeshError::FieldSize { expected: mesh.num_vertices(), got: self.len() })
        }
    }
}

impl Index<usize> for VertexScalarField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for VertexScalarField {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Plane through the origin, stored by its unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneThroughOrigin {
    normal: Vector3<f64>,
}

impl PlaneThroughOrigin {
    /// Normalises `normal`; rejects zero or non-finite vectors.
    pub fn new(normal: Vector3<f64>) -> Result<Self, MeshError> {
        let len = normal.norm();
        if !(len.is_finite() && len > 0.0) {
            return Err(MeshError::InvalidNormal);
        }
        Ok(Self { normal: normal / len })
    }

    pub fn normal(&self) -> &Vector3<f64> {
        &self.normal
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p)
    }
}

/// Mixed Voronoi share of a triangle's area at each corner: the circumcentric
/// Voronoi split for non-obtuse triangles, otherwise half the area to the
/// obtuse corner and a quarter to each of the others. The shares sum to the
/// triangle area.
pub fn mixed_voronoi_split(p: [&Vector3<f64>; 3]) -> [f64; 3] {
    let double_area = (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
    if !(double_area > 0.0) {
        return [0.0; 3];
    }
    let mut dots = [0.0; 3];
    for c in 0..3 {
        dots[c] = (p[(c + 1) % 3] - p[c]).dot(&(p[(c + 2) % 3] - p[c]));
    }
    let area = 0.5 * double_area;
    if let Some(o) = (0..3).find(|&c| dots[c] < 0.0) {
        let mut out = [area / 4.0; 3];
        out[o] = area / 2.0;
        return out;
    }
    let mut out = [0.0; 3];
    for c in 0..3 {
        let (i, j) = ((c + 1) % 3, (c + 2) % 3);
        // edges c-i and c-j weighted by the cotangents of the opposite corners
        out[c] =
            ((p[i] - p[c]).norm_squared() * dots[j] + (p[j] - p[c]).norm_squared() * dots[i]) / (8.0 * double_area);
    }
    out
}

/// Per-vertex component labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    /// `None` for vertices excluded from the subgraph.
    pub labels: Vec<Option<usize>>,
    pub count: usize,
}

/// Connected components of the subgraph induced by the vertices where
/// `include` holds, using mesh edges. Labels are assigned in order of the
/// lowest vertex index in each component.
pub fn subgraph_components(mesh: &TriangleMesh, include: impl Fn(usize) -> bool) -> Components {
    let n = mesh.num_vertices();
    let mut labels = vec![None; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if labels[start].is_some() || !include(start) {
            continue;
        }
        labels[start] = Some(count);
        stack.push(start);
        while let Some(v) = stack.pop() {
            for &w in mesh.neighbors(v) {
                if labels[w].is_none() && include(w) {
                    labels[w] = Some(count);
                    stack.push(w);
                }
            }
        }
        count += 1;
    }
    Components { labels, count }
}

/// Edge-connected components over all vertices.
pub fn connected_components(mesh: &TriangleMesh) -> Components {
    subgraph_components(mesh, |_| true)
}

/// Component counts on either side of a cutting plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanePartition {
    pub positive: usize,
    pub negative: usize,
    pub excluded: usize,
}

/// Splits the vertex graph by the sign of `⟨normal, p⟩`, dropping vertices
/// within `band * mean_edge_length` of the plane.
pub fn plane_sign_partition(
    mesh: &TriangleMesh,
    plane: &PlaneThroughOrigin,
    band: f64,
) -> Result<PlanePartition, MeshError> {
    assert!(band >= 0.0, "band width must be non-negative");
    let h = band * mesh.mean_edge_length();
    let dist: Vec<f64> = mesh.vertices().iter().map(|p| plane.signed_distance(p)).collect();
    let excluded = dist.iter().filter(|d| d.abs() <= h).count();
    let total = mesh.num_vertices();
    if total == 0 || excluded as f64 >= DEGENERATE_PLANE_FRACTION * total as f64 {
        return Err(MeshError::DegeneratePlane { excluded, total });
    }
    let positive = subgraph_components(mesh, |i| dist[i] > h).count;
    let negative = subgraph_components(mesh, |i| dist[i] < -h).count;
    Ok(PlanePartition { positive, negative, excluded })
}
