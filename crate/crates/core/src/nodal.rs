//! Nodal domains and nodal curves of vertex fields, the Courant bound and the
//! plane two-piece test.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::eigen::Spectrum;
use crate::mesh::{
    plane_sign_partition, subgraph_components, MeshError, PlaneThroughOrigin, TriangleMesh, VertexScalarField,
};

pub const DEFAULT_ZERO_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum NodalError {
    #[error("zero function: every vertex is nodal")]
    ZeroFunction,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodalLabel {
    Positive(usize),
    Negative(usize),
    Nodal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodalDecomposition {
    pub vertex_labels: Vec<NodalLabel>,
    pub positive_count: usize,
    pub negative_count: usize,
    pub total_count: usize,
}

impl NodalDecomposition {
    pub fn nodal_vertices(&self) -> usize {
        self.vertex_labels.iter().filter(|l| **l == NodalLabel::Nodal).count()
    }
}

/// Sign components of `f`, with `|f| ≤ zero_tol · ‖f‖_∞` treated as nodal.
pub fn nodal_domains(
    mesh: &TriangleMesh,
    f: &VertexScalarField,
    zero_tol: f64,
) -> Result<NodalDecomposition, NodalError> {
    f.check_len(mesh)?;
    let cut = zero_tol * f.max_abs();
    let v = f.values();
    if v.iter().all(|x| x.abs() <= cut) {
        return Err(NodalError::ZeroFunction);
    }
    let pos = subgraph_components(mesh, |i| v[i] > cut);
    let neg = subgraph_components(mesh, |i| v[i] < -cut);
    let vertex_labels = (0..v.len())
        .map(|i| match (pos.labels[i], neg.labels[i]) {
            (Some(c), _) => NodalLabel::Positive(c),
            (_, Some(c)) => NodalLabel::Negative(c),
            _ => NodalLabel::Nodal,
        })
        .collect();
    Ok(NodalDecomposition {
        vertex_labels,
        positive_count: pos.count,
        negative_count: neg.count,
        total_count: pos.count + neg.count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CourantEntry {
    pub k: usize,
    pub eigenvalue: f64,
    pub count: usize,
    pub bound: usize,
    pub pass: bool,
}

/// Checks `count ≤ k + 1` for every eigenvector of `spectrum` (0-indexed).
pub fn courant_check(mesh: &TriangleMesh, spectrum: &Spectrum, zero_tol: f64) -> Result<Vec<CourantEntry>, NodalError> {
    spectrum
        .eigenvectors
        .iter()
        .zip(&spectrum.eigenvalues)
        .enumerate()
        .map(|(k, (u, &eigenvalue))| {
            let count = nodal_domains(mesh, u, zero_tol)?.total_count;
            Ok(CourantEntry { k, eigenvalue, count, bound: k + 1, pass: count <= k + 1 })
        })
        .collect()
}

/// Nodal counts of random unit combinations within one eigenvalue cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterCombinationReport {
    pub start: usize,
    pub multiplicity: usize,
    pub counts: Vec<usize>,
}

impl ClusterCombinationReport {
    pub fn all_equal(&self, expected: usize) -> bool {
        self.counts.iter().all(|&c| c == expected)
    }
}

/// Draws `samples` Gaussian coefficient vectors, normalises them and counts
/// the nodal domains of `Σ cᵢ u_{start+i}`. The eigenvectors are assumed
/// M-orthonormal, so each combination has unit M-norm.
pub fn cluster_combination_counts(
    mesh: &TriangleMesh,
    spectrum: &Spectrum,
    start: usize,
    multiplicity: usize,
    samples: usize,
    seed: u64,
    zero_tol: f64,
) -> Result<ClusterCombinationReport, NodalError> {
    if multiplicity == 0 || start + multiplicity > spectrum.eigenvectors.len() {
        return Err(NodalError::InvalidRequest(format!(
            "cluster [{start}, {}) outside the {} computed eigenvectors",
            start + multiplicity,
            spectrum.eigenvectors.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = &spectrum.eigenvectors[start..start + multiplicity];
    let mut counts = Vec::with_capacity(samples);
    for _ in 0..samples {
        let c = DVector::<f64>::from_fn(multiplicity, |_, _| StandardNormal.sample(&mut rng)).normalize();
        let mut acc = VertexScalarField::zeros(mesh.num_vertices());
        for (ci, u) in c.iter().zip(basis) {
            acc = acc.axpy(*ci, u);
        }
        counts.push(nodal_domains(mesh, &acc, zero_tol)?.total_count);
    }
    Ok(ClusterCombinationReport { start, multiplicity, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaneFailure {
    pub normal: [f64; 3],
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoPieceReport {
    pub planes_tested: usize,
    pub degenerate_skips: usize,
    pub failures: Vec<PlaneFailure>,
}

impl TwoPieceReport {
    pub fn pass(&self) -> bool {
        self.failures.is_empty()
    }
}

/// `count` unit normals drawn uniformly from the sphere.
pub fn random_normals(count: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v = Vector3::<f64>::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let n = v.norm();
        if n > 1e-12 {
            out.push(v / n);
        }
    }
    out
}

/// Requires `(1, 1)` components for every non-degenerate plane.
pub fn two_piece_check_planes(
    mesh: &TriangleMesh,
    normals: &[Vector3<f64>],
    band: f64,
) -> Result<TwoPieceReport, NodalError> {
    let mut report = TwoPieceReport { planes_tested: 0, degenerate_skips: 0, failures: Vec::new() };
    for n in normals {
        let plane = PlaneThroughOrigin::new(*n)?;
        match plane_sign_partition(mesh, &plane, band) {
            Err(MeshError::DegeneratePlane { .. }) => report.degenerate_skips += 1,
            Err(e) => return Err(e.into()),
            Ok(p) => {
                report.planes_tested += 1;
                if (p.positive, p.negative) != (1, 1) {
                    let u = plane.normal();
                    report.failures.push(PlaneFailure {
                        normal: [u.x, u.y, u.z],
                        positive: p.positive,
                        negative: p.negative,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// [`two_piece_check_planes`] with `n_planes` seeded random normals.
pub fn two_piece_check(
    mesh: &TriangleMesh,
    n_planes: usize,
    seed: u64,
    band: f64,
) -> Result<TwoPieceReport, NodalError> {
    if n_planes == 0 {
        return Err(NodalError::InvalidRequest("n_planes must be at least 1".into()));
    }
    two_piece_check_planes(mesh, &random_normals(n_planes, seed), band)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polyline {
    pub points: Vec<[f64; 3]>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodalCurves {
    pub polylines: Vec<Polyline>,
    pub closed_count: usize,
    pub open_count: usize,
}

impl NodalCurves {
    /// Wavefront OBJ with `v` records and one `l` element per polyline.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for pl in &self.polylines {
            for p in &pl.points {
                writeln!(s, "v {:?} {:?} {:?}", p[0], p[1], p[2]).unwrap();
            }
        }
        let mut base = 1;
        for pl in &self.polylines {
            s.push('l');
            for i in 0..pl.points.len() {
                write!(s, " {}", base + i).unwrap();
            }
            if pl.closed {
                write!(s, " {base}").unwrap();
            }
            s.push('\n');
            base += pl.points.len();
        }
        s
    }

    /// CSV with header `polyline,closed,x,y,z`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("polyline,closed,x,y,z\n");
        for (k, pl) in self.polylines.iter().enumerate() {
            for p in &pl.points {
                writeln!(s, "{k},{},{:?},{:?},{:?}", pl.closed as u8, p[0], p[1], p[2]).unwrap();
            }
        }
        s
    }
}

/// Zero set of the piecewise linear interpolant of `f`, chained into
/// polylines through shared edges. Vertex values equal to zero count as
/// positive so every crossing lies strictly inside an edge.
pub fn nodal_curve_extract(mesh: &TriangleMesh, f: &VertexScalarField) -> Result<NodalCurves, NodalError> {
    f.check_len(mesh)?;
    let v = f.values();
    let pos = |i: usize| v[i] >= 0.0;
    let key = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };

    let mut node_of: HashMap<(usize, usize), usize> = HashMap::new();
    let mut nodes: Vec<[f64; 3]> = Vec::new();
    let mut adj: Vec<Vec<usize>> = Vec::new();
    let mut node = |a: usize, b: usize, nodes: &mut Vec<[f64; 3]>, adj: &mut Vec<Vec<usize>>| -> usize {
        *node_of.entry(key(a, b)).or_insert_with(|| {
            let t = v[a] / (v[a] - v[b]);
            let p = mesh.vertices()[a] + (mesh.vertices()[b] - mesh.vertices()[a]) * t;
            nodes.push([p.x, p.y, p.z]);
            adj.push(Vec::new());
            nodes.len() - 1
        })
    };
    for face in mesh.faces() {
        let crossings: Vec<(usize, usize)> =
            (0..3).map(|e| (face[e], face[(e + 1) % 3])).filter(|&(a, b)| pos(a) != pos(b)).collect();
        if let [(a0, b0), (a1, b1)] = crossings[..] {
            let n0 = node(a0, b0, &mut nodes, &mut adj);
            let n1 = node(a1, b1, &mut nodes, &mut adj);
            adj[n0].push(n1);
            adj[n1].push(n0);
        }
    }

    let mut visited = vec![false; nodes.len()];
    let mut polylines = Vec::new();
    let walk = |start: usize, visited: &mut Vec<bool>| -> Vec<usize> {
        let mut path = vec![start];
        visited[start] = true;
        let mut cur = start;
        while let Some(&next) = adj[cur].iter().find(|&&w| !visited[w]) {
            visited[next] = true;
            path.push(next);
            cur = next;
        }
        path
    };
    // open chains start at endpoints of degree one
    for s in 0..nodes.len() {
        if !visited[s] && adj[s].len() == 1 {
            let path = walk(s, &mut visited);
            polylines.push(Polyline { points: path.iter().map(|&i| nodes[i]).collect(), closed: false });
        }
    }
    for s in 0..nodes.len() {
        if !visited[s] {
            let path = walk(s, &mut visited);
            polylines.push(Polyline { points: path.iter().map(|&i| nodes[i]).collect(), closed: true });
        }
    }
    let closed_count = polylines.iter().filter(|p| p.closed).count();
    let open_count = polylines.len() - closed_count;
    Ok(NodalCurves { polylines, closed_count, open_count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shrinkers::{make_cylinder, make_sphere};

    #[test]
    fn constant_field_is_one_domain() {
        let mesh = make_sphere(1).unwrap();
        let d = nodal_domains(&mesh, &VertexScalarField::constant(mesh.num_vertices(), 3.0), DEFAULT_ZERO_TOL).unwrap();
        assert_eq!((d.positive_count, d.negative_count, d.total_count), (1, 0, 1));
    }

    #[test]
    fn zero_field_is_rejected() {
        let mesh = make_sphere(0).unwrap();
        let r = nodal_domains(&mesh, &VertexScalarField::zeros(mesh.num_vertices()), DEFAULT_ZERO_TOL);
        assert!(matches!(r, Err(NodalError::ZeroFunction)));
    }

    #[test]
    fn cylinder_height_and_cos_two_theta() {
        let mesh = make_cylinder(8.0, 64, 64).unwrap();
        let z = VertexScalarField::coordinate(&mesh, 2);
        let d = nodal_domains(&mesh, &z, DEFAULT_ZERO_TOL).unwrap();
        assert_eq!(d.total_count, 2);
        assert!(d.nodal_vertices() > 0);
        let c2 = VertexScalarField::from_fn(&mesh, |p| p.x * p.x - p.y * p.y);
        assert_eq!(nodal_domains(&mesh, &c2, DEFAULT_ZERO_TOL).unwrap().total_count, 4);
    }

    #[test]
    fn sign_flip_swaps_counts() {
        let mesh = make_sphere(2).unwrap();
        let f = VertexScalarField::from_fn(&mesh, |p| p.x * p.y + 0.1 * p.z);
        let a = nodal_domains(&mesh, &f, DEFAULT_ZERO_TOL).unwrap();
        let b = nodal_domains(&mesh, &f.scaled(-2.5), DEFAULT_ZERO_TOL).unwrap();
        assert_eq!(a.positive_count, b.negative_count);
        assert_eq!(a.negative_count, b.positive_count);
    }

    #[test]
    fn sphere_equator_is_one_loop() {
        let mesh = make_sphere(3).unwrap();
        for f in [VertexScalarField::coordinate(&mesh, 2), VertexScalarField::from_fn(&mesh, |p| p.x + p.z)] {
            let c = nodal_curve_extract(&mesh, &f).unwrap();
            assert_eq!((c.closed_count, c.open_count), (1, 0));
        }
    }

    #[test]
    fn cylinder_x_gives_two_open_chains() {
        let mesh = make_cylinder(8.0, 48, 40).unwrap();
        let c = nodal_curve_extract(&mesh, &VertexScalarField::coordinate(&mesh, 0)).unwrap();
        assert_eq!((c.closed_count, c.open_count), (0, 2));
        for pl in &c.polylines {
            let ends = [pl.points[0][2], pl.points[pl.points.len() - 1][2]];
            assert!(ends.iter().all(|z| (z.abs() - 8.0).abs() < 1e-9), "{ends:?}");
        }
        let obj = c.to_obj();
        assert_eq!(obj.lines().filter(|l| l.starts_with("l ")).count(), 2);
        assert!(c.to_csv().starts_with("polyline,closed,x,y,z\n"));
    }

    #[test]
    fn sphere_planes_split_in_two() {
        let mesh = make_sphere(3).unwrap();
        let r = two_piece_check(&mesh, 50, 7, crate::mesh::DEFAULT_PLANE_BAND).unwrap();
        assert_eq!(r.planes_tested, 50);
        assert!(r.pass(), "{:?}", r.failures);
    }

    #[test]
    fn random_normals_are_unit_and_seeded() {
        let a = random_normals(20, 3);
        assert_eq!(a, random_normals(20, 3));
        assert_ne!(a, random_normals(20, 4));
        assert!(a.iter().all(|n| (n.norm() - 1.0).abs() < 1e-14));
    }
}
