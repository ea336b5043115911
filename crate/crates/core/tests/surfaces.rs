use std::f64::consts::{E, SQRT_2};

use shrinker_spectra::pipeline::{generate_surface, SurfaceSpec};
use shrinker_spectra::shrinkers::angenent::{self, ShootingError, ShootingOptions};
use shrinker_spectra::shrinkers::{self, SURFACE_NORMALIZATION};
use shrinker_spectra::symmetry::{self, GroupSpec};
use shrinker_spectra::SymmetryGroup;

#[test]
fn closed_orbit_is_stable_under_finer_integration() {
    let tol = 1e-8;
    let coarse = ShootingOptions::new(tol);
    let fine = ShootingOptions { integrator_tolerance: coarse.integrator_tolerance / 32.0, ..coarse };
    let a = angenent::find_closed_orbit(angenent::DEFAULT_BRACKET, coarse).unwrap();
    let b = angenent::find_closed_orbit(angenent::DEFAULT_BRACKET, fine).unwrap();
    assert!(a.r0 > 0.0 && a.r0 < 2.0);
    assert!((a.r0 - b.r0).abs() <= 10.0 * tol, "r0 {} vs {}", a.r0, b.r0);
    assert!(a.closure_defect().abs() <= tol, "closure defect {}", a.closure_defect());
}

#[test]
fn profile_is_closed_simple_and_mirror_symmetric() {
    let (_, profile) = angenent::shoot_angenent_profile(angenent::DEFAULT_BRACKET, 1e-8, 512).unwrap();
    assert!(profile.is_closed());
    assert_eq!(profile.points().len(), 512);
    profile.check_simple().unwrap();
    assert!(profile.reflection_defect() < 1e-6, "reflection defect {}", profile.reflection_defect());
    assert!(profile.samples().iter().all(|s| s.r > 0.0 && s.r < 4.0));
}

#[test]
fn bracket_without_sign_change_is_reported() {
    let err = angenent::find_closed_orbit((0.5, 0.6), ShootingOptions::new(1e-8)).unwrap_err();
    assert!(matches!(err, ShootingError::BracketFailure { .. }), "{err:?}");
    let err = angenent::find_closed_orbit((0.5, 2.5), ShootingOptions::new(1e-8)).unwrap_err();
    assert!(matches!(err, ShootingError::InvalidBracket(..)));
}

#[test]
fn torus_has_small_residual_and_known_entropy() {
    let (_, profile) = angenent::shoot_angenent_profile(angenent::DEFAULT_BRACKET, 1e-8, 256).unwrap();
    let torus = shrinkers::revolve(&profile, 128).unwrap();
    assert_eq!(torus.euler_characteristic(), 0);
    assert!(!torus.has_boundary());
    let rep = shrinkers::shrinker_residual(&torus, SURFACE_NORMALIZATION);
    assert!(rep.max_abs_residual < 0.05, "{rep:?}");
    assert!((rep.weighted_area - 1.8512).abs() < 5e-3, "F = {}", rep.weighted_area);
}

#[test]
fn model_surfaces_satisfy_the_shrinker_equation() {
    let sphere = shrinkers::make_sphere(4).unwrap();
    let rep = shrinkers::shrinker_residual(&sphere, SURFACE_NORMALIZATION);
    assert!(rep.max_abs_residual < 1e-2, "{rep:?}");
    assert!((rep.weighted_area - 4.0 / E).abs() < 1e-2);

    let cyl = shrinkers::make_cylinder(8.0, 64, 128).unwrap();
    assert!(cyl.vertices().iter().all(|p| (p.xy().norm() - SQRT_2).abs() < 1e-12));
    let rep = shrinkers::shrinker_residual(&cyl, SURFACE_NORMALIZATION);
    assert!(rep.max_abs_residual < 1e-2, "{rep:?}");

    let disk = shrinkers::make_disk(8.0, 32).unwrap();
    assert!(disk.vertices().iter().all(|p| p.z == 0.0));
    let rep = shrinkers::shrinker_residual(&disk, SURFACE_NORMALIZATION);
    assert!(rep.max_abs_residual < 1e-12, "{rep:?}");
}

#[test]
fn patch_replication_reproduces_a_group_invariant_torus() {
    for spec in [GroupSpec::Dihedral(4), GroupSpec::Prismatic(3), GroupSpec::Dihedral(7)] {
        let surface = SurfaceSpec::Angenent { ode_tolerance: 1e-8, profile_samples: 64, angular: 48, bracket: None };
        let generated = generate_surface(&surface, Some(spec)).unwrap();
        let group = spec.build().unwrap();
        assert!(symmetry::is_invariant(&generated.mesh, &group, 1e-8), "{spec:?}");
        assert_eq!(generated.mesh.euler_characteristic(), 0);
        assert!(!generated.mesh.has_boundary());
    }
}

#[test]
fn octasphere_quarter_replicates_under_d2() {
    let sphere = shrinkers::make_octasphere(3).unwrap();
    let group = SymmetryGroup::dihedral(2).unwrap();
    let patch = shrinkers::fundamental_patch(&sphere, &group).unwrap();
    assert!(patch.num_faces() * group.order() == sphere.num_faces());
    let rebuilt = shrinkers::replicate_patch(&patch, &group).unwrap();
    assert_eq!(rebuilt.num_vertices(), sphere.num_vertices());
    assert_eq!(rebuilt.euler_characteristic(), 2);
    assert!(symmetry::is_invariant(&rebuilt, &group, 1e-10));
}

#[test]
fn antisymmetrized_coordinate_is_an_eigenfunction() {
    // the mesh is σ-invariant, so the residual of x∘σ is a permutation of that of x
    // and ‖res ψ‖ ≤ 2 ‖res x‖ for ψ = x − x∘σ
    let sphere = shrinkers::make_octasphere(4).unwrap();
    let ops = shrinker_spectra::WeightedOperators::assemble(&sphere).unwrap();
    let group = SymmetryGroup::prismatic(2).unwrap();
    let perms = symmetry::group_permutations(&sphere, &group, 1e-8).unwrap();
    let x = shrinker_spectra::VertexScalarField::coordinate(&sphere, 0);
    let bound = 2.0 * ops.eig_residual(0.5, &x).unwrap() * ops.norm(&x);
    let mut tested = 0;
    for perm in &perms {
        let psi = symmetry::antisymmetrize(&x, perm).unwrap();
        if psi.max_abs() < 1e-9 {
            continue;
        }
        tested += 1;
        let r = ops.eig_residual(0.5, &psi).unwrap() * ops.norm(&psi);
        assert!(r <= bound * (1.0 + 1e-9), "residual {r} vs {bound}");
    }
    assert!(tested > 0);
}
