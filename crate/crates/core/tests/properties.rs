use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;
use shrinker_spectra::eigen::multiplicity_clusters;
use shrinker_spectra::nodal::nodal_domains;
use shrinker_spectra::shrinkers;
use shrinker_spectra::{SymmetryGroup, TriangleMesh, VertexScalarField, WeightedOperators};

/// Icosphere level 2 with each vertex pushed radially by up to ±10%.
fn jittered_sphere(scales: &[f64]) -> TriangleMesh {
    let base = shrinkers::make_sphere(2).unwrap();
    let verts = base.vertices().iter().zip(scales.iter().cycle()).map(|(p, s)| p * *s).collect();
    TriangleMesh::new(verts, base.faces().to_vec()).unwrap()
}

fn scales() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.9..1.1f64, 162)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stiffness_is_symmetric_with_constant_kernel(s in scales()) {
        let ops = WeightedOperators::assemble(&jittered_sphere(&s)).unwrap();
        prop_assert!(ops.stiffness().is_symmetric());
        prop_assert!(ops.mass().is_symmetric());
        let k1 = ops.stiffness().mul_vec(&vec![1.0; ops.dim()]);
        let scale = ops.stiffness().diagonal().iter().cloned().fold(0.0, f64::max);
        prop_assert!(k1.iter().all(|v| v.abs() <= 1e-12 * scale));
    }

    #[test]
    fn masses_are_positive_and_consistent(s in scales()) {
        let ops = WeightedOperators::assemble(&jittered_sphere(&s)).unwrap();
        prop_assert!(ops.lumped_mass().iter().all(|&m| m > 0.0));
        let lumped: f64 = ops.lumped_mass().iter().sum();
        let rows: f64 = ops.mass_row_sums().iter().sum();
        prop_assert!((lumped - rows).abs() <= 1e-12 * rows);
        prop_assert!((ops.weighted_area() - rows).abs() <= 1e-12 * rows);
    }

    #[test]
    fn rayleigh_quotient_is_nonnegative(s in scales(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let mesh = jittered_sphere(&s);
        let ops = WeightedOperators::assemble(&mesh).unwrap();
        let f = VertexScalarField::from_fn(&mesh, |p| a * p.x + b * p.y * p.z + 0.3);
        prop_assert!(ops.rayleigh(&f).unwrap() >= -1e-12);
    }

    #[test]
    fn operators_are_rotation_invariant(axis in prop::array::uniform3(-1.0..1.0f64), angle in 0.0..std::f64::consts::TAU) {
        prop_assume!(Vector3::from(axis).norm() > 1e-3);
        let mesh = shrinkers::make_sphere(2).unwrap();
        let rot: Matrix3<f64> = *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::from(axis)), angle).matrix();
        let a = WeightedOperators::assemble(&mesh).unwrap();
        let b = WeightedOperators::assemble(&mesh.transformed(&rot)).unwrap();
        for ((i, j, x), (_, _, y)) in a.stiffness().triplets().into_iter().zip(b.stiffness().triplets()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "K[{i},{j}] {x} vs {y}");
        }
    }

    #[test]
    fn nodal_counts_ignore_positive_scaling(c in 0.01..100.0f64, tilt in -1.0..1.0f64) {
        let mesh = shrinkers::make_sphere(3).unwrap();
        let f = VertexScalarField::from_fn(&mesh, |p| p.z + tilt * p.x * p.y);
        let a = nodal_domains(&mesh, &f, 1e-9).unwrap();
        let b = nodal_domains(&mesh, &f.scaled(c), 1e-9).unwrap();
        let n = nodal_domains(&mesh, &f.scaled(-1.0), 1e-9).unwrap();
        prop_assert_eq!(a.total_count, b.total_count);
        prop_assert_eq!(a.positive_count, n.negative_count);
        prop_assert_eq!(a.negative_count, n.positive_count);
    }

    #[test]
    fn clusters_partition_the_sequence(mut vals in prop::collection::vec(0.0..5.0f64, 1..30), gap in 1e-4..1e-1f64) {
        vals.sort_by(f64::total_cmp);
        let clusters = multiplicity_clusters(&vals, gap);
        let mut next = 0;
        for c in &clusters {
            prop_assert_eq!(c.start, next);
            prop_assert!(c.multiplicity >= 1);
            next += c.multiplicity;
        }
        prop_assert_eq!(next, vals.len());
    }

    #[test]
    fn dihedral_and_prismatic_groups_close(n in 2usize..=12) {
        let d = SymmetryGroup::dihedral(n).unwrap();
        prop_assert_eq!(d.order(), 2 * n);
        prop_assert!(d.verify_axioms(1e-12).is_ok());
        let p = SymmetryGroup::prismatic(n).unwrap();
        prop_assert_eq!(p.order(), 4 * n);
        prop_assert!(p.verify_axioms(1e-12).is_ok());
    }
}

#[test]
fn order_parameter_below_two_is_rejected() {
    assert!(SymmetryGroup::dihedral(1).is_err());
    assert!(SymmetryGroup::prismatic(0).is_err());
}
