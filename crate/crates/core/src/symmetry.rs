//! Dihedral and prismatic point groups and their action on meshes and fields.
//!
//! `D_n` (order `2n`) is generated by the half-turns `ρ_k` about the
//! horizontal axes `h_k` at angles `kπ/n`; it contains the rotations by
//! `2πj/n` about the vertical axis. The prismatic group `D_n × Z_2` (order `4n`)
//! adds the mid-plane reflection `(x, y, z) ↦ (x, y, −z)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{TriangleMesh, VertexScalarField};
use crate::operator::WeightedOperators;

/// Largest supported order parameter.
pub const MAX_ORDER_PARAMETER: usize = 64;

/// Default matching distance for induced vertex permutations.
pub const DEFAULT_MATCH_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum SymmetryError {
    #[error("group order parameter must satisfy 2 ≤ n ≤ {MAX_ORDER_PARAMETER}, got {0}")]
    InvalidOrder(usize),
    #[error("matrix is not orthogonal (‖MᵀM − I‖ = {0:e})")]
    NotOrthogonal(f64),
    #[error("vertex {vertex} maps {distance:e} away from the nearest mesh vertex")]
    NotInvariant { vertex: usize, distance: f64 },
    #[error("vertices {0} and {1} map to the same vertex")]
    NotInjective(usize, usize),
    #[error("field has {got} values, permutation has {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("group axiom violated: {0}")]
    Axiom(String),
    #[error("unrecognised group spec `{0}` (expected dihedral:n, prismatic:n or trivial)")]
    BadSpec(String),
}

/// Orthogonal linear map of R³.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Isometry {
    matrix: Matrix3<f64>,
}

impl Isometry {
    pub fn new(matrix: Matrix3<f64>) -> Result<Self, SymmetryError> {
        let defect = (matrix.transpose() * matrix - Matrix3::identity()).abs().max();
        if defect > 1e-12 {
            return Err(SymmetryError::NotOrthogonal(defect));
        }
        Ok(Self { matrix })
    }

    pub fn identity() -> Self {
        Self { matrix: Matrix3::identity() }
    }

    /// Rotation by `angle` about the z-axis.
    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { matrix: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0) }
    }

    /// Half-turn about the horizontal axis at polar angle `angle`: `2aaᵀ − I`.
    pub fn half_turn_horizontal(angle: f64) -> Self {
        let a = Vector3::new(angle.cos(), angle.sin(), 0.0);
        Self { matrix: 2.0 * a * a.transpose() - Matrix3::identity() }
    }

    /// `(x, y, z) ↦ (x, y, −z)`.
    pub fn z_reflection() -> Self {
        Self { matrix: Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0)) }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn determinant(&self) -> f64 {
        self.matrix.determinant()
    }

    pub fn compose(&self, other: &Isometry) -> Isometry {
        Isometry { matrix: self.matrix * other.matrix }
    }

    pub fn inverse(&self) -> Isometry {
        Isometry { matrix: self.matrix.transpose() }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.matrix * p
    }

    pub fn distance(&self, other: &Isometry) -> f64 {
        (self.matrix - other.matrix).abs().max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupSpec {
    Trivial,
    Dihedral(usize),
    Prismatic(usize),
}

impl GroupSpec {
    pub fn build(self) -> Result<SymmetryGroup, SymmetryError> {
        match self {
            GroupSpec::Trivial => Ok(SymmetryGroup::trivial()),
            GroupSpec::Dihedral(n) => SymmetryGroup::dihedral(n),
            GroupSpec::Prismatic(n) => SymmetryGroup::prismatic(n),
        }
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupSpec::Trivial => write!(f, "trivial"),
            GroupSpec::Dihedral(n) => write!(f, "dihedral:{n}"),
            GroupSpec::Prismatic(n) => write!(f, "prismatic:{n}"),
        }
    }
}

impl FromStr for GroupSpec {
    type Err = SymmetryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SymmetryError::BadSpec(s.to_string());
        if s == "trivial" {
            return Ok(GroupSpec::Trivial);
        }
        let (kind, n) = s.split_once(':').ok_or_else(bad)?;
        let n: usize = n.parse().map_err(|_| bad())?;
        match kind {
            "dihedral" => Ok(GroupSpec::Dihedral(n)),
            "prismatic" => Ok(GroupSpec::Prismatic(n)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for GroupSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroupSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Finite group of isometries stored as an explicit element list; element 0
/// is the identity.
#[derive(Debug, Clone)]
pub struct SymmetryGroup {
    spec: GroupSpec,
    elements: Vec<Isometry>,
}

impl SymmetryGroup {
    pub fn trivial() -> Self {
        Self { spec: GroupSpec::Trivial, elements: vec![Isometry::identity()] }
    }

    /// `D_n`: rotations by `2πj/n` about z (j = 0..n) followed by the
    /// half-turns `ρ_k` about `h_k`, k = 1..=n.
    pub fn dihedral(n: usize) -> Result<Self, SymmetryError> {
        if !(2..=MAX_ORDER_PARAMETER).contains(&n) {
            return Err(SymmetryError::InvalidOrder(n));
        }
        let mut elements: Vec<Isometry> =
            (0..n).map(|j| Isometry::rotation_z(2.0 * PI * j as f64 / n as f64)).collect();
        elements.extend((1..=n).map(|k| Isometry::half_turn_horizontal(k as f64 * PI / n as f64)));
        elements[0] = Isometry::identity();
        Ok(Self { spec: GroupSpec::Dihedral(n), elements })
    }

    /// `D_n × Z_2`: the elements of `D_n`, then each composed with the z-reflection.
    pub fn prismatic(n: usize) -> Result<Self, SymmetryError> {
        let d = Self::dihedral(n)?;
        let z = Isometry::z_reflection();
        let mut elements = d.elements.clone();
        elements.extend(d.elements.iter().map(|g| g.compose(&z)));
        Ok(Self { spec: GroupSpec::Prismatic(n), elements })
    }

    pub fn spec(&self) -> GroupSpec {
        self.spec
    }

    pub fn name(&self) -> String {
        match self.spec {
            GroupSpec::Trivial => "1".into(),
            GroupSpec::Dihedral(n) => format!("D{n}"),
            GroupSpec::Prismatic(n) => format!("D{n}xZ2"),
        }
    }

    pub fn elements(&self) -> &[Isometry] {
        &self.elements
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    /// Index of the element equal to `g` within `tol` (entrywise).
    pub fn find(&self, g: &Isometry, tol: f64) -> Option<usize> {
        self.elements.iter().position(|e| e.distance(g) <= tol)
    }

    /// Checks orthogonality, identity, closure, inverses and associativity
    /// exhaustively; products must match an element within `tol`.
    pub fn verify_axioms(&self, tol: f64) -> Result<(), SymmetryError> {
        for g in &self.elements {
            Isometry::new(g.matrix)?;
            let det = g.determinant();
            if (det.abs() - 1.0).abs() > 1e-12 {
                return Err(SymmetryError::Axiom(format!("determinant {det}")));
            }
        }
        if self.find(&Isometry::identity(), tol).is_none() {
            return Err(SymmetryError::Axiom("identity missing".into()));
        }
        for (i, a) in self.elements.iter().enumerate() {
            for j in (i + 1)..self.elements.len() {
                if a.distance(&self.elements[j]) <= tol {
                    return Err(SymmetryError::Axiom(format!("elements {i} and {j} coincide")));
                }
            }
        }
        let mut table = vec![0usize; self.order() * self.order()];
        for (i, a) in self.elements.iter().enumerate() {
            if self.find(&a.inverse(), tol).is_none() {
                return Err(SymmetryError::Axiom(format!("inverse of element {i} missing")));
            }
            for (j, b) in self.elements.iter().enumerate() {
                table[i * self.order() + j] = self
                    .find(&a.compose(b), tol)
                    .ok_or_else(|| SymmetryError::Axiom(format!("product {i}·{j} not in group")))?;
            }
        }
        let n = self.order();
        for a in 0..n {
            for b in 0..n {
                let ab = table[a * n + b];
                for c in 0..n {
                    if table[ab * n + c] != table[a * n + table[b * n + c]] {
                        return Err(SymmetryError::Axiom(format!("associativity fails at ({a}, {b}, {c})")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Unit normals of the two walls `Π⟨v, h_1⟩`, `Π⟨v, h_2⟩` bounding the
    /// fundamental wedge `π/n ≤ φ ≤ 2π/n`.
    fn walls(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let n = match self.spec {
            GroupSpec::Trivial => return None,
            GroupSpec::Dihedral(n) | GroupSpec::Prismatic(n) => n as f64,
        };
        let (a1, a2) = (PI / n, 2.0 * PI / n);
        Some((Vector3::new(-a1.sin(), a1.cos(), 0.0), Vector3::new(-a2.sin(), a2.cos(), 0.0)))
    }

    /// Whether `p` lies in the closed fundamental domain, enlarged by `tol`.
    /// For the prismatic group the domain is the upper half of the wedge.
    pub fn in_fundamental_domain(&self, p: &Vector3<f64>, tol: f64) -> bool {
        let Some((n1, n2)) = self.walls() else { return true };
        let wedge = n1.dot(p) >= -tol && n2.dot(p) <= tol;
        match self.spec {
            GroupSpec::Prismatic(_) => wedge && p.z >= -tol,
            _ => wedge,
        }
    }

    /// Distance from `p` to the nearest wall of the fundamental domain.
    pub fn wall_distance(&self, p: &Vector3<f64>) -> f64 {
        let Some((n1, n2)) = self.walls() else { return f64::INFINITY };
        let d = n1.dot(p).abs().min(n2.dot(p).abs());
        match self.spec {
            GroupSpec::Prismatic(_) => d.min(p.z.abs()),
            _ => d,
        }
    }

    /// Element matrices as nested row-major arrays.
    pub fn to_json(&self) -> serde_json::Value {
        let mats: Vec<[[f64; 3]; 3]> = self
            .elements
            .iter()
            .map(|g| {
                let m = g.matrix();
                [
                    [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                    [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                    [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
                ]
            })
            .collect();
        serde_json::json!({ "group": self.spec.to_string(), "order": self.order(), "elements": mats })
    }
}

/// Vertex map induced by an isometry on an invariant mesh:
/// `mapping[i] = j` with `p_j ≈ σ(p_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexPermutation {
    mapping: Vec<usize>,
    max_deviation: f64,
}

impl VertexPermutation {
    pub fn identity(n: usize) -> Self {
        Self { mapping: (0..n).collect(), max_deviation: 0.0 }
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn max_deviation(&self) -> f64 {
        self.max_deviation
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }
}

struct PointGrid<'a> {
    cell: f64,
    points: &'a [Vector3<f64>],
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [Vector3<f64>], cell: f64) -> Self {
        let mut grid = Self { cell, points, buckets: HashMap::with_capacity(points.len()) };
        for (i, p) in points.iter().enumerate() {
            let k = grid.key(p);
            grid.buckets.entry(k).or_default().push(i);
        }
        grid
    }

    fn key(&self, p: &Vector3<f64>) -> [i64; 3] {
        [(p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64, (p.z / self.cell).floor() as i64]
    }

    fn nearest_within(&self, q: &Vector3<f64>, tol: f64) -> Option<(usize, f64)> {
        let k = self.key(q);
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(list) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else { continue };
                    for &i in list {
                        let d = (self.points[i] - q).norm();
                        if d <= tol && best.is_none_or(|(_, bd)| d < bd) {
                            best = Some((i, d));
                        }
                    }
                }
            }
        }
        best
    }
}

/// Matches every `σ(p_i)` to the nearest mesh vertex within `tolerance`.
pub fn induced_permutation(
    mesh: &TriangleMesh,
    isometry: &Isometry,
    tolerance: f64,
) -> Result<VertexPermutation, SymmetryError> {
    let grid = PointGrid::new(mesh.vertices(), tolerance.max(1e-14));
    let mut mapping = Vec::with_capacity(mesh.num_vertices());
    let mut owner = vec![usize::MAX; mesh.num_vertices()];
    let mut max_deviation: f64 = 0.0;
    for (i, p) in mesh.vertices().iter().enumerate() {
        let q = isometry.apply(p);
        let (j, d) = grid.nearest_within(&q, tolerance).ok_or_else(|| {
            // report how far off the image actually is, for diagnostics
            let dist = mesh.vertices().iter().map(|v| (v - q).norm()).fold(f64::INFINITY, f64::min);
            SymmetryError::NotInvariant { vertex: i, distance: dist }
        })?;
        if owner[j] != usize::MAX {
            return Err(SymmetryError::NotInjective(owner[j], i));
        }
        owner[j] = i;
        max_deviation = max_deviation.max(d);
        mapping.push(j);
    }
    Ok(VertexPermutation { mapping, max_deviation })
}

/// Permutations for every element of `group`, or the first failure.
pub fn group_permutations(
    mesh: &TriangleMesh,
    group: &SymmetryGroup,
    tolerance: f64,
) -> Result<Vec<VertexPermutation>, SymmetryError> {
    group.elements().iter().map(|g| induced_permutation(mesh, g, tolerance)).collect()
}

pub fn is_invariant(mesh: &TriangleMesh, group: &SymmetryGroup, tolerance: f64) -> bool {
    group_permutations(mesh, group, tolerance).is_ok()
}

/// `(f∘σ)_i = f_{perm(i)}`.
pub fn pullback(field: &VertexScalarField, perm: &VertexPermutation) -> Result<VertexScalarField, SymmetryError> {
    if field.len() != perm.len() {
        return Err(SymmetryError::SizeMismatch { expected: perm.len(), got: field.len() });
    }
    Ok(VertexScalarField::new(perm.mapping.iter().map(|&j| field[j]).collect()))
}

/// `ψ = f − f∘σ`.
pub fn antisymmetrize(field: &VertexScalarField, perm: &VertexPermutation) -> Result<VertexScalarField, SymmetryError> {
    let pulled = pullback(field, perm)?;
    Ok(field.axpy(-1.0, &pulled))
}

/// Eigen-residual of `u∘σ` at eigenvalue `lambda`.
pub fn equivariance_residual(
    ops: &WeightedOperators,
    lambda: f64,
    u: &VertexScalarField,
    perm: &VertexPermutation,
) -> Result<f64, SymmetryError> {
    let pulled = pullback(u, perm)?;
    ops.eig_residual(lambda, &pulled).map_err(|_| SymmetryError::SizeMismatch { expected: ops.dim(), got: u.len() })
}

/// Largest relative M-norm defect `‖v − Πv‖ / ‖v‖` of `v = u∘σ` projected onto
/// the span of `basis` (assumed M-orthonormal), over `u` in the basis.
pub fn eigenspace_stability_defect(
    ops: &WeightedOperators,
    basis: &[&VertexScalarField],
    perm: &VertexPermutation,
) -> Result<f64, SymmetryError> {
    let mut worst: f64 = 0.0;
    for u in basis {
        let v = pullback(u, perm)?;
        let mut rest = v.clone();
        for b in basis {
            rest = rest.axpy(-ops.inner(b, &v), b);
        }
        let nv = ops.norm(&v);
        if nv > 0.0 {
            worst = worst.max(ops.norm(&rest) / nv);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shrinkers::make_sphere;

    #[test]
    fn dihedral_two_is_klein_four() {
        let g = SymmetryGroup::dihedral(2).unwrap();
        assert_eq!(g.order(), 4);
        for e in g.elements() {
            let m = e.matrix();
            assert!((e.determinant() - 1.0).abs() < 1e-12);
            for i in 0..3 {
                for j in 0..3 {
                    let v = m[(i, j)];
                    if i == j {
                        assert!((v.abs() - 1.0).abs() < 1e-12);
                    } else {
                        assert!(v.abs() < 1e-12);
                    }
                }
            }
        }
        g.verify_axioms(1e-10).unwrap();
    }

    #[test]
    fn composition_of_half_turns_is_vertical_rotation() {
        for n in 2..=12 {
            let rho1 = Isometry::half_turn_horizontal(PI / n as f64);
            let rho2 = Isometry::half_turn_horizontal(2.0 * PI / n as f64);
            let r = rho2.compose(&rho1);
            assert!(r.distance(&Isometry::rotation_z(2.0 * PI / n as f64)) < 1e-14, "n = {n}");
        }
    }

    #[test]
    fn invalid_orders_rejected() {
        assert_eq!(SymmetryGroup::dihedral(1).unwrap_err(), SymmetryError::InvalidOrder(1));
        assert_eq!(SymmetryGroup::prismatic(0).unwrap_err(), SymmetryError::InvalidOrder(0));
        assert!(SymmetryGroup::dihedral(65).is_err());
        assert!(Isometry::new(Matrix3::identity() * 2.0).is_err());
    }

    #[test]
    fn prismatic_contains_reflection() {
        let g = SymmetryGroup::prismatic(2).unwrap();
        assert_eq!(g.order(), 8);
        assert!(g.find(&Isometry::z_reflection(), 1e-12).is_some());
        assert!(g.elements().iter().all(|e| (e.determinant().abs() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("dihedral:7".parse::<GroupSpec>().unwrap(), GroupSpec::Dihedral(7));
        assert_eq!("prismatic:3".parse::<GroupSpec>().unwrap(), GroupSpec::Prismatic(3));
        assert_eq!("trivial".parse::<GroupSpec>().unwrap(), GroupSpec::Trivial);
        assert!("cyclic:3".parse::<GroupSpec>().is_err());
        assert!("dihedral:x".parse::<GroupSpec>().is_err());
        assert_eq!(GroupSpec::Prismatic(4).to_string(), "prismatic:4");
    }

    #[test]
    fn icosphere_permutations() {
        let s = make_sphere(2).unwrap();
        // the coordinate half-turns are symmetries of the standard icosahedron
        for g in SymmetryGroup::dihedral(2).unwrap().elements() {
            let p = induced_permutation(&s, g, DEFAULT_MATCH_TOLERANCE).unwrap();
            assert!(p.max_deviation() <= 1e-12, "{}", p.max_deviation());
        }
        let generic = Isometry::rotation_z(0.123);
        assert!(matches!(
            induced_permutation(&s, &generic, DEFAULT_MATCH_TOLERANCE),
            Err(SymmetryError::NotInvariant { .. })
        ));
    }

    #[test]
    fn pullback_and_antisymmetrize() {
        let s = make_sphere(2).unwrap();
        let id = VertexPermutation::identity(s.num_vertices());
        let x3 = VertexScalarField::coordinate(&s, 2);
        assert_eq!(pullback(&x3, &id).unwrap(), x3);

        let refl = induced_permutation(&s, &Isometry::z_reflection(), DEFAULT_MATCH_TOLERANCE).unwrap();
        let pulled = pullback(&x3, &refl).unwrap();
        assert!(pulled.values().iter().zip(x3.values()).all(|(a, b)| (a + b).abs() < 1e-12));
        let psi = antisymmetrize(&x3, &refl).unwrap();
        assert!(psi.values().iter().zip(x3.values()).all(|(a, b)| (a - 2.0 * b).abs() < 1e-12));

        let half = induced_permutation(&s, &Isometry::half_turn_horizontal(PI / 2.0), DEFAULT_MATCH_TOLERANCE).unwrap();
        let x1 = VertexScalarField::coordinate(&s, 0);
        let twice = pullback(&pullback(&x1, &half).unwrap(), &half).unwrap();
        assert_eq!(twice, x1);

        let r2 = VertexScalarField::from_fn(&s, |p| p.norm_squared());
        assert!(antisymmetrize(&r2, &half).unwrap().max_abs() < 1e-12);
        assert!(pullback(&VertexScalarField::zeros(3), &half).is_err());
    }
}
