//! End-to-end acceptance checks. Runs as a plain binary so each criterion can
//! print its own PASS/FAIL line; exits nonzero if any criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use shrinker_spectra::pipeline::{self, CompareTolerances, RunConfig, RunOutput, SurfaceSpec};
use shrinker_spectra::shrinkers::{self, angenent};
use shrinker_spectra::symmetry::GroupSpec;
use shrinker_spectra::{nodal, solve_smallest, EigenOptions, SymmetryGroup, WeightedOperators};

const SEED: u64 = 20240611;

type Fixture = OnceLock<(RunOutput, f64)>;

fn run_timed(config: RunConfig) -> (RunOutput, f64) {
    let t = Instant::now();
    let out = pipeline::run(&config).unwrap_or_else(|e| panic!("{}: {e}", config.surface.kind()));
    (out, t.elapsed().as_secs_f64())
}

fn full(surface: SurfaceSpec, group: Option<GroupSpec>) -> RunConfig {
    let mut c = RunConfig::new(surface, SEED);
    c.group = group;
    c.solver.k = 10;
    c
}

fn spectrum_only(surface: SurfaceSpec) -> RunConfig {
    let mut c = full(surface, None);
    c.analyses.courant = false;
    c.analyses.cluster_samples = 0;
    c.analyses.two_piece_planes = 0;
    c
}

fn sphere5() -> &'static (RunOutput, f64) {
    static F: Fixture = OnceLock::new();
    F.get_or_init(|| run_timed(full(SurfaceSpec::Sphere { level: 5 }, None)))
}

fn cylinder8() -> &'static (RunOutput, f64) {
    static F: Fixture = OnceLock::new();
    F.get_or_init(|| run_timed(full(SurfaceSpec::Cylinder { z_max: 8.0, angular: 64, axial: Some(128) }, None)))
}

fn cylinder10() -> &'static (RunOutput, f64) {
    static F: Fixture = OnceLock::new();
    // same axial spacing as the z_max = 8 mesh
    F.get_or_init(|| run_timed(spectrum_only(SurfaceSpec::Cylinder { z_max: 10.0, angular: 64, axial: Some(160) })))
}

fn disk() -> &'static (RunOutput, f64) {
    static F: Fixture = OnceLock::new();
    F.get_or_init(|| run_timed(full(SurfaceSpec::Disk { r_max: 8.0, rings: 64 }, None)))
}

fn torus_spec() -> SurfaceSpec {
    SurfaceSpec::Angenent { ode_tolerance: 1e-8, profile_samples: 512, angular: 256, bracket: None }
}

fn torus() -> &'static (RunOutput, f64) {
    static F: Fixture = OnceLock::new();
    F.get_or_init(|| run_timed(full(torus_spec(), None)))
}

fn torus_dihedral() -> &'static (RunOutput, f64) {
    static F: Fixture = OnceLock::new();
    F.get_or_init(|| run_timed(spectrum_only_with_group(GroupSpec::Dihedral(8))))
}

fn torus_prismatic() -> &'static (RunOutput, f64) {
    static F: Fixture = OnceLock::new();
    F.get_or_init(|| run_timed(spectrum_only_with_group(GroupSpec::Prismatic(4))))
}

fn spectrum_only_with_group(group: GroupSpec) -> RunConfig {
    let mut c = spectrum_only(torus_spec());
    c.group = Some(group);
    c
}

/// Checks that `eigs` starts with `expected` (value, multiplicity) blocks, each
/// nonzero value within `rel` relative error, and that the eigenvalue after
/// the last block no longer matches it.
fn spectrum_begins(eigs: &[f64], expected: &[(f64, usize)], rel: f64) -> Result<String, String> {
    let flat: Vec<f64> = expected.iter().flat_map(|&(v, m)| std::iter::repeat_n(v, m)).collect();
    if eigs.len() < flat.len() {
        return Err(format!("only {} eigenvalues", eigs.len()));
    }
    let mut worst: f64 = 0.0;
    for (i, (&got, &want)) in eigs.iter().zip(&flat).enumerate() {
        let err = if want == 0.0 { got.abs() } else { (got - want).abs() / want };
        let limit = if want == 0.0 { 1e-8 } else { rel };
        if err > limit {
            return Err(format!("λ{i} = {got:.6} vs {want} (error {err:.2e})"));
        }
        if want != 0.0 {
            worst = worst.max(err);
        }
    }
    let last = *flat.last().unwrap();
    if let Some(&next) = eigs.get(flat.len()) {
        if (next - last).abs() <= rel * last {
            return Err(format!(
                "multiplicity of {last} exceeds {}: λ{} = {next:.6}",
                expected.last().unwrap().1,
                flat.len()
            ));
        }
    }
    Ok(format!("worst relative error {worst:.2e}"))
}

fn first_cluster_rel_error(out: &RunOutput) -> (f64, f64, usize) {
    let c = out.spectrum.clusters(1e-2)[1];
    let vals = &out.spectrum.eigenvalues[c.start..c.start + c.multiplicity];
    let worst = vals.iter().map(|v| (v - 0.5).abs() / 0.5).fold(0.0, f64::max);
    (vals[0], worst, c.multiplicity)
}

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(ok: bool, msg: String) -> Verdict {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_sphere() -> Verdict {
    let (out, secs) = sphere5();
    let eigs = &out.spectrum.eigenvalues;
    let shape = spectrum_begins(eigs, &[(0.0, 1), (0.5, 3), (1.5, 5)], 0.01)?;
    let (l1, err, mult) = first_cluster_rel_error(out);
    ensure(err <= 0.01, format!("λ₁ = {l1:.6} ×{mult}, worst error {err:.2e} vs 1e-2"))?;
    ensure(*secs <= 60.0, format!("runtime {secs:.1} s vs 60 s"))?;
    Ok(format!("{} vertices, λ₁ = {l1:.6} ×{mult}, {shape}, runtime {secs:.1} s", out.mesh.num_vertices()))
}

fn criterion_cylinder() -> Verdict {
    let (a, _) = cylinder8();
    let (b, _) = cylinder10();
    let shape = spectrum_begins(&a.spectrum.eigenvalues, &[(0.0, 1), (0.5, 3), (1.0, 3)], 0.02)?;
    let (l1, err, mult) = first_cluster_rel_error(a);
    ensure(err <= 0.02, format!("λ₁ = {l1:.6}, worst error {err:.2e} vs 2e-2"))?;
    let l1b = b.spectrum.first_nonzero().ok_or("no nonzero eigenvalue at z_max 10")?;
    let shift = (l1b - l1).abs() / l1;
    ensure(shift <= 1e-3, format!("λ₁ moved by {shift:.2e} going to z_max 10 (limit 1e-3)"))?;
    Ok(format!("λ₁ = {l1:.6} ×{mult}, {shape}, z_max 8 → 10 shift {shift:.2e}"))
}

fn criterion_disk() -> Verdict {
    let (out, _) = disk();
    let shape = spectrum_begins(&out.spectrum.eigenvalues, &[(0.0, 1), (0.5, 2), (1.0, 3)], 0.02)?;
    let (l1, err, mult) = first_cluster_rel_error(out);
    ensure(err <= 0.02, format!("λ₁ = {l1:.6}, worst error {err:.2e} vs 2e-2"))?;
    Ok(format!("λ₁ = {l1:.6} ×{mult}, {shape}"))
}

fn criterion_torus() -> Verdict {
    let (out, secs) = torus();
    let rep = &out.report;
    ensure(
        rep.shrinker.max_abs_residual <= 0.05,
        format!("shrinker residual {:.3e} vs 0.05", rep.shrinker.max_abs_residual),
    )?;
    ensure(out.spectrum.converged, "solver did not converge".into())?;
    let l1 = out.spectrum.first_nonzero().ok_or("no nonzero eigenvalue")?;
    let err = (l1 - 0.5).abs() / 0.5;
    ensure(err <= 0.02, format!("λ₁ = {l1:.6}, error {err:.2e} vs 2e-2"))?;
    ensure((0.25 - 0.01..=0.5 + 0.01).contains(&l1), format!("λ₁ = {l1:.6} outside [0.24, 0.51]"))?;
    Ok(format!(
        "{} vertices, r0 = {:.6}, residual {:.2e}, F = {:.5}, λ₁ = {l1:.6}, {secs:.1} s",
        out.mesh.num_vertices(),
        rep.surface.profile_r0.unwrap_or(f64::NAN),
        rep.shrinker.max_abs_residual,
        rep.gaussian_area,
    ))
}

fn coordinate_residuals(mesh: &shrinker_spectra::TriangleMesh) -> [f64; 3] {
    let ops = WeightedOperators::assemble(mesh).expect("assembly");
    [0, 1, 2].map(|axis| ops.coordinate_residual(mesh, axis).expect("residual"))
}

fn criterion_coordinates() -> Verdict {
    let torus_fine = {
        let (_, profile) =
            angenent::shoot_angenent_profile(angenent::DEFAULT_BRACKET, 1e-8, 1024).map_err(|e| e.to_string())?;
        shrinkers::revolve(&profile, 512).map_err(|e| e.to_string())?
    };
    let cases = [
        ("sphere", sphere5().0.report.coordinate_residuals, shrinkers::make_sphere(6).unwrap()),
        ("cylinder", cylinder8().0.report.coordinate_residuals, shrinkers::make_cylinder(8.0, 128, 256).unwrap()),
        ("disk", disk().0.report.coordinate_residuals, shrinkers::make_disk(8.0, 128).unwrap()),
        ("torus", torus().0.report.coordinate_residuals, torus_fine),
    ];
    let mut parts = Vec::new();
    for (name, coarse, fine_mesh) in cases {
        let fine = coordinate_residuals(&fine_mesh);
        for axis in 0..3 {
            let (c, f) = (coarse[axis], fine[axis]);
            ensure(c <= 0.02, format!("{name} axis {axis}: residual {c:.3e} vs 2e-2"))?;
            // the disk's z coordinate vanishes identically and reports 0 on both meshes
            let zero = c == 0.0 && f == 0.0;
            ensure(zero || f < c, format!("{name} axis {axis}: {c:.3e} → {f:.3e} does not decrease"))?;
        }
        let worst = |r: [f64; 3]| r.iter().cloned().fold(0.0, f64::max);
        parts.push(format!("{name} {:.2e}→{:.2e}", worst(coarse), worst(fine)));
    }
    Ok(parts.join(", "))
}

fn criterion_courant() -> Verdict {
    let mut parts = Vec::new();
    for (name, out) in
        [("sphere", &sphere5().0), ("cylinder", &cylinder8().0), ("disk", &disk().0), ("torus", &torus().0)]
    {
        let entries = out.report.courant.as_ref().ok_or("Courant analysis missing")?;
        ensure(entries.len() == 10, format!("{name}: {} eigenfunctions checked", entries.len()))?;
        if let Some(bad) = entries.iter().find(|e| !e.pass) {
            return Err(format!("{name}: u{} has {} domains, bound {}", bad.k, bad.count, bad.bound));
        }
        let combos = out.report.cluster_combinations.as_ref().ok_or("cluster combinations missing")?;
        ensure(combos.counts.len() == 20, format!("{name}: {} combinations", combos.counts.len()))?;
        ensure(combos.all_equal(2), format!("{name}: combination counts {:?}", combos.counts))?;
        let counts: Vec<usize> = entries.iter().map(|e| e.count).collect();
        parts.push(format!("{name} {counts:?}, λ₁ cluster ×{}", combos.multiplicity));
    }
    Ok(parts.join("; "))
}

fn criterion_two_piece() -> Verdict {
    let mut parts = Vec::new();
    for (name, out) in
        [("sphere", &sphere5().0), ("cylinder", &cylinder8().0), ("disk", &disk().0), ("torus", &torus().0)]
    {
        let rep = out.report.two_piece.as_ref().ok_or("two-piece analysis missing")?;
        ensure(
            rep.planes_tested + rep.degenerate_skips == 100,
            format!("{name}: {} planes", rep.planes_tested + rep.degenerate_skips),
        )?;
        if let Some(f) = rep.failures.first() {
            return Err(format!("{name}: {} failures, first {f:?}", rep.failures.len()));
        }
        parts.push(format!("{name} {}/{} ok", rep.planes_tested, rep.planes_tested + rep.degenerate_skips));
    }
    // the disk's own plane is the degenerate case and must be skipped, not failed
    let disk_mesh = &disk().0.mesh;
    let rep =
        nodal::two_piece_check_planes(disk_mesh, &[nalgebra::Vector3::z()], shrinker_spectra::mesh::DEFAULT_PLANE_BAND)
            .map_err(|e| e.to_string())?;
    ensure(rep.degenerate_skips == 1 && rep.failures.is_empty(), format!("disk plane z = 0 not skipped: {rep:?}"))?;
    parts.push("disk z = 0 skipped".into());
    Ok(parts.join(", "))
}

fn criterion_symmetry() -> Verdict {
    for n in 2..=12 {
        for group in [SymmetryGroup::dihedral(n), SymmetryGroup::prismatic(n)] {
            let group = group.map_err(|e| e.to_string())?;
            group.verify_axioms(1e-12).map_err(|e| format!("{}: {e}", group.name()))?;
        }
    }
    let mut parts = vec!["axioms n = 2..12".to_string()];
    for (out, _) in [torus_dihedral(), torus_prismatic()] {
        let inv = out.report.invariance.as_ref().ok_or("invariance analysis missing")?;
        let tol = 10.0 * out.report.config.solver.tol;
        ensure(inv.invariant, format!("{}: mesh not invariant", inv.group))?;
        ensure(
            inv.equivariance_residual <= tol,
            format!("{}: equivariance residual {:.3e} vs {tol:.1e}", inv.group, inv.equivariance_residual),
        )?;
        ensure(
            inv.stability_defect <= 1e-6,
            format!("{}: stability defect {:.3e} vs 1e-6", inv.group, inv.stability_defect),
        )?;
        let l1 = out.spectrum.first_nonzero().unwrap_or(f64::NAN);
        parts.push(format!(
            "{} ({} elements) equivariance {:.2e}, defect {:.2e}, λ₁ = {l1:.6}",
            inv.group, inv.order, inv.equivariance_residual, inv.stability_defect
        ));
    }
    Ok(parts.join("; "))
}

fn criterion_oracle() -> Verdict {
    let (_, profile) =
        angenent::shoot_angenent_profile(angenent::DEFAULT_BRACKET, 1e-8, 24).map_err(|e| e.to_string())?;
    let meshes = [
        ("sphere", shrinkers::make_sphere(2).unwrap()),
        ("cylinder", shrinkers::make_cylinder(4.0, 12, 16).unwrap()),
        ("disk", shrinkers::make_disk(4.0, 8).unwrap()),
        ("torus", shrinkers::revolve(&profile, 12).unwrap()),
    ];
    let mut worst: f64 = 0.0;
    for (name, mesh) in meshes {
        ensure(mesh.num_vertices() <= 300, format!("{name}: {} vertices", mesh.num_vertices()))?;
        let ops = WeightedOperators::assemble(&mesh).map_err(|e| e.to_string())?;
        let dense = common::dense_generalized_eigenvalues(&ops);
        let spec = solve_smallest(&ops, &EigenOptions::new(12, SEED)).map_err(|e| e.to_string())?;
        for (i, (a, b)) in spec.eigenvalues.iter().zip(&dense).enumerate() {
            let d = (a - b).abs();
            ensure(d <= 1e-8, format!("{name} λ{i}: {a} vs {b}"))?;
            worst = worst.max(d);
        }
    }
    Ok(format!("4 meshes × 12 eigenvalues, max |Δλ| = {worst:.2e}"))
}

fn criterion_determinism() -> Verdict {
    let mut parts = Vec::new();
    let repeats = [
        (&sphere5().0, full(SurfaceSpec::Sphere { level: 5 }, None)),
        (&cylinder8().0, full(SurfaceSpec::Cylinder { z_max: 8.0, angular: 64, axial: Some(128) }, None)),
        (&torus_dihedral().0, spectrum_only_with_group(GroupSpec::Dihedral(8))),
    ];
    for (first, config) in repeats {
        let second = pipeline::run(&config).map_err(|e| e.to_string())?;
        let a = first.report.deterministic_json();
        let b = second.report.deterministic_json();
        let cmp = pipeline::compare(&a, &b, CompareTolerances { eigenvalue_rel: 1e-12 }).map_err(|e| e.to_string())?;
        ensure(cmp.pass, format!("{}: max relative difference {:.3e}", config.surface.kind(), cmp.max_rel_diff))?;
        parts.push(format!(
            "{} max rel diff {:.1e}, reports identical: {}",
            config.surface.kind(),
            cmp.max_rel_diff,
            a == b
        ));
    }
    Ok(parts.join("; "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("sphere spectrum", criterion_sphere),
        ("cylinder spectrum and truncation", criterion_cylinder),
        ("disk spectrum", criterion_disk),
        ("angenent torus λ₁", criterion_torus),
        ("coordinate eigenfunctions", criterion_coordinates),
        ("courant bounds", criterion_courant),
        ("two-piece planes", criterion_two_piece),
        ("symmetry suite", criterion_symmetry),
        ("dense oracle", criterion_oracle),
        ("determinism", criterion_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let verdict = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match verdict {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1} s",
        criteria.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
