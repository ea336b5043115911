//! Configurable end-to-end run: generate, validate, assemble, solve, analyse
//! and report.
//!
//! A run is fully described by a [`RunConfig`]; the same config always yields
//! the same [`RunReport`] apart from the `timings` entries.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigen::{self, Cluster, EigenOptions, Preconditioner, Spectrum};
use crate::mesh::{self, MeshFormat, TriangleMesh, VertexScalarField};
use crate::nodal::{self, ClusterCombinationReport, CourantEntry, TwoPieceReport};
use crate::operator::WeightedOperators;
use crate::shrinkers::angenent::{self, HalfOrbit, ProfileCurve};
use crate::shrinkers::{self, ShrinkerReport};
use crate::symmetry::{self, GroupSpec, SymmetryGroup};

/// Target value of the first nonzero eigenvalue.
pub const LAMBDA1_TARGET: f64 = 0.5;
/// Lower and upper ends of the admissible window for the first eigenvalue.
pub const LAMBDA1_WINDOW: (f64, f64) = (0.25, 0.5);

/// Pipeline stage, used to tag failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Generate,
    Symmetrize,
    Assemble,
    Solve,
    Analyze,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Generate => "generate",
            Stage::Symmetrize => "symmetrize",
            Stage::Assemble => "assemble",
            Stage::Solve => "solve",
            Stage::Analyze => "analyze",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
#[error("[{stage}] {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        Self { stage, message: message.to_string() }
    }
}

fn tag<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

fn default_level() -> u32 {
    4
}
fn default_truncation() -> f64 {
    shrinkers::DEFAULT_TRUNCATION
}
fn default_cylinder_angular() -> usize {
    64
}
fn default_rings() -> usize {
    64
}
fn default_ode_tolerance() -> f64 {
    1e-8
}
fn default_profile_samples() -> usize {
    512
}
fn default_torus_angular() -> usize {
    256
}

/// Surface to generate. The noncompact ones are truncated at `z_max` or
/// `r_max` with natural boundary conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    /// Icosphere of radius 2 after `level` subdivisions.
    Sphere {
        #[serde(default = "default_level")]
        level: u32,
    },
    /// Cylinder of radius √2. `axial` defaults to 16 quads per unit height.
    Cylinder {
        #[serde(default = "default_truncation")]
        z_max: f64,
        #[serde(default = "default_cylinder_angular")]
        angular: usize,
        #[serde(default)]
        axial: Option<usize>,
    },
    /// Flat disk through the origin with `rings` concentric rings.
    Disk {
        #[serde(default = "default_truncation")]
        r_max: f64,
        #[serde(default = "default_rings")]
        rings: usize,
    },
    /// Angenent torus from a shot profile revolved about the z-axis.
    Angenent {
        #[serde(default = "default_ode_tolerance")]
        ode_tolerance: f64,
        #[serde(default = "default_profile_samples")]
        profile_samples: usize,
        #[serde(default = "default_torus_angular")]
        angular: usize,
        #[serde(default)]
        bracket: Option<(f64, f64)>,
    },
}

impl SurfaceSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            SurfaceSpec::Sphere { .. } => "sphere",
            SurfaceSpec::Cylinder { .. } => "cylinder",
            SurfaceSpec::Disk { .. } => "disk",
            SurfaceSpec::Angenent { .. } => "angenent",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            SurfaceSpec::Sphere { level } if level > 7 => Err(format!("sphere level must be at most 7, got {level}")),
            SurfaceSpec::Cylinder { z_max, angular, axial } => {
                if !(z_max > 0.0 && z_max <= 50.0) {
                    return Err(format!("cylinder z_max must lie in (0, 50], got {z_max}"));
                }
                if !(3..=8192).contains(&angular) {
                    return Err(format!("cylinder angular resolution must lie in [3, 8192], got {angular}"));
                }
                match axial {
                    Some(a) if !(2..=8192).contains(&a) || a % 2 != 0 => {
                        Err(format!("cylinder axial resolution must be even and in [2, 8192], got {a}"))
                    }
                    _ => Ok(()),
                }
            }
            SurfaceSpec::Disk { r_max, rings } => {
                if !(r_max > 0.0 && r_max <= 50.0) {
                    return Err(format!("disk r_max must lie in (0, 50], got {r_max}"));
                }
                if !(1..=1024).contains(&rings) {
                    return Err(format!("disk rings must lie in [1, 1024], got {rings}"));
                }
                Ok(())
            }
            SurfaceSpec::Angenent { ode_tolerance, profile_samples, angular, bracket } => {
                if !(ode_tolerance > 0.0 && ode_tolerance <= 1e-3) {
                    return Err(format!("ode_tolerance must lie in (0, 1e-3], got {ode_tolerance}"));
                }
                if !(8..=16384).contains(&profile_samples) || profile_samples % 2 != 0 {
                    return Err(format!("profile_samples must be even and in [8, 16384], got {profile_samples}"));
                }
                if !(3..=8192).contains(&angular) {
                    return Err(format!("angular resolution must lie in [3, 8192], got {angular}"));
                }
                if let Some((a, b)) = bracket {
                    if !(a > 0.0 && a < b) {
                        return Err(format!("bracket must satisfy 0 < a < b, got ({a}, {b})"));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Parses `kind` or `kind:key=value,key=value`, e.g. `cylinder:z_max=10`.
impl FromStr for SurfaceSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, params) = s.split_once(':').unwrap_or((s, ""));
        let mut obj = serde_json::Map::new();
        obj.insert("kind".into(), serde_json::Value::String(kind.trim().to_string()));
        let mut pairs = Vec::new();
        let (mut depth, mut begin) = (0i32, 0);
        for (i, ch) in params.char_indices() {
            match ch {
                '(' => depth += 1,
                ')' => depth -= 1,
                ',' if depth == 0 => {
                    pairs.push(&params[begin..i]);
                    begin = i + 1;
                }
                _ => {}
            }
        }
        pairs.push(&params[begin..]);
        for pair in pairs.into_iter().map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair.split_once('=').ok_or_else(|| format!("expected key=value, got '{pair}'"))?;
            let value = value.trim();
            let parsed = if let Some(inner) = value.strip_prefix('(').and_then(|v| v.strip_suffix(')')) {
                serde_json::from_str(&format!("[{inner}]"))
            } else {
                serde_json::from_str(value)
            }
            .map_err(|_| format!("invalid value '{value}' for {key}"))?;
            obj.insert(key.trim().to_string(), parsed);
        }
        serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| format!("surface '{s}': {e}"))
    }
}

fn default_k() -> usize {
    10
}
fn default_tol() -> f64 {
    eigen::DEFAULT_TOLERANCE
}
fn default_max_iter() -> usize {
    eigen::DEFAULT_MAX_ITER
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub preconditioner: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            preconditioner: Preconditioner::default(),
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_planes() -> usize {
    100
}
fn default_samples() -> usize {
    20
}
fn default_zero_tol() -> f64 {
    nodal::DEFAULT_ZERO_TOL
}
fn default_band() -> f64 {
    mesh::DEFAULT_PLANE_BAND
}
fn default_gap_tol() -> f64 {
    1e-2
}
fn default_residual_gate() -> f64 {
    0.05
}
fn default_coordinate_tol() -> f64 {
    0.02
}
fn default_lambda1_tol() -> f64 {
    0.01
}

/// Which analyses run and the thresholds their checks use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_true")]
    pub courant: bool,
    /// Random λ₁-cluster combinations whose nodal count must be exactly 2.
    #[serde(default = "default_samples")]
    pub cluster_samples: usize,
    /// Random planes for the two-piece test; 0 disables it.
    #[serde(default = "default_planes")]
    pub two_piece_planes: usize,
    #[serde(default)]
    pub nodal_export: bool,
    #[serde(default)]
    pub mesh_export: Option<MeshFormat>,
    #[serde(default = "default_zero_tol")]
    pub zero_tol: f64,
    #[serde(default = "default_band")]
    pub plane_band: f64,
    #[serde(default = "default_gap_tol")]
    pub cluster_gap_tol: f64,
    #[serde(default = "default_residual_gate")]
    pub residual_gate: f64,
    #[serde(default = "default_coordinate_tol")]
    pub coordinate_tol: f64,
    /// Absolute tolerance on `|λ₁ − ½|`.
    #[serde(default = "default_lambda1_tol")]
    pub lambda1_tol: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

fn default_normalization() -> f64 {
    shrinkers::SURFACE_NORMALIZATION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub surface: SurfaceSpec,
    #[serde(default)]
    pub group: Option<GroupSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub analyses: AnalysisConfig,
    /// Seed for every random choice in the run. Required.
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Prefactor of the Gaussian area.
    #[serde(default = "default_normalization")]
    pub normalization: f64,
}

impl RunConfig {
    pub fn new(surface: SurfaceSpec, seed: u64) -> Self {
        Self {
            surface,
            group: None,
            solver: SolverConfig::default(),
            analyses: AnalysisConfig::default(),
            seed,
            out_dir: None,
            normalization: default_normalization(),
        }
    }

    /// Parses and validates a JSON config.
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let config: RunConfig = serde_json::from_str(text).map_err(tag(Stage::Config))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::new(Stage::Config, m));
        self.surface.validate().or_else(bad)?;
        let s = &self.solver;
        if s.k == 0 {
            return bad("solver.k must be at least 1".into());
        }
        if s.k > 200 {
            return bad(format!("solver.k must be at most 200, got {}", s.k));
        }
        if !(s.tol > 0.0 && s.tol < 1.0) {
            return bad(format!("solver.tol must lie in (0, 1), got {}", s.tol));
        }
        if s.max_iter == 0 {
            return bad("solver.max_iter must be at least 1".into());
        }
        if let Preconditioner::ShiftedCholesky { shift } = s.preconditioner {
            if !(shift > 0.0) {
                return bad(format!("preconditioner shift must be positive, got {shift}"));
            }
        }
        let a = &self.analyses;
        if !(a.zero_tol >= 0.0 && a.zero_tol < 1.0) {
            return bad(format!("analyses.zero_tol must lie in [0, 1), got {}", a.zero_tol));
        }
        if !(a.plane_band >= 0.0 && a.plane_band <= 10.0) {
            return bad(format!("analyses.plane_band must lie in [0, 10], got {}", a.plane_band));
        }
        if a.two_piece_planes > 100_000 || a.cluster_samples > 100_000 {
            return bad("analyses sample counts must be at most 100000".into());
        }
        for (name, v) in [
            ("cluster_gap_tol", a.cluster_gap_tol),
            ("residual_gate", a.residual_gate),
            ("coordinate_tol", a.coordinate_tol),
            ("lambda1_tol", a.lambda1_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("analyses.{name} must be positive, got {v}"));
            }
        }
        if !(self.normalization > 0.0 && self.normalization.is_finite()) {
            return bad(format!("normalization must be positive, got {}", self.normalization));
        }
        if let Some(g) = self.group {
            g.build().map_err(tag(Stage::Config))?;
        }
        Ok(())
    }

    fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            k: self.solver.k,
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            seed: self.seed,
            preconditioner: self.solver.preconditioner,
        }
    }
}

/// A generated mesh plus what was needed to build it.
#[derive(Debug, Clone)]
pub struct GeneratedSurface {
    pub mesh: TriangleMesh,
    pub profile: Option<(HalfOrbit, ProfileCurve)>,
    /// Parameter adjustments made so the mesh is invariant under the group.
    pub notes: Vec<String>,
}

fn group_order_parameter(group: Option<GroupSpec>) -> usize {
    match group {
        Some(GroupSpec::Dihedral(n)) | Some(GroupSpec::Prismatic(n)) => n,
        _ => 1,
    }
}

fn round_up(value: usize, multiple: usize) -> usize {
    value.div_ceil(multiple) * multiple
}

/// Builds the mesh for `spec`. With a group, angular resolutions are rounded
/// up to a multiple of `2n` so the wedge walls fall on mesh lines, and the
/// mesh is rebuilt from its fundamental patch so that the triangulation is
/// mapped to itself by every element.
pub fn generate_surface(spec: &SurfaceSpec, group: Option<GroupSpec>) -> Result<GeneratedSurface, PipelineError> {
    let n = group_order_parameter(group);
    let mut notes = Vec::new();
    let mut adjust = |name: &str, value: usize, multiple: usize| {
        let v = round_up(value, multiple);
        if v != value {
            notes.push(format!("{name} rounded from {value} to {v} for the symmetry group"));
        }
        v
    };
    let mut profile = None;
    let mesh = match *spec {
        SurfaceSpec::Sphere { level } => shrinkers::make_sphere(level).map_err(tag(Stage::Generate))?,
        SurfaceSpec::Cylinder { z_max, angular, axial } => {
            let angular = adjust("angular resolution", angular, 2 * n);
            let axial = axial.unwrap_or_else(|| round_up((16.0 * z_max).round().max(2.0) as usize, 2));
            shrinkers::make_cylinder(z_max, angular, axial).map_err(tag(Stage::Generate))?
        }
        SurfaceSpec::Disk { r_max, rings } => shrinkers::make_disk(r_max, rings).map_err(tag(Stage::Generate))?,
        SurfaceSpec::Angenent { ode_tolerance, profile_samples, angular, bracket } => {
            let angular = adjust("angular resolution", angular, 2 * n);
            let (orbit, curve) = angenent::shoot_angenent_profile(
                bracket.unwrap_or(angenent::DEFAULT_BRACKET),
                ode_tolerance,
                profile_samples,
            )
            .map_err(tag(Stage::Generate))?;
            let mesh = shrinkers::revolve(&curve, angular).map_err(tag(Stage::Generate))?;
            profile = Some((orbit, curve));
            mesh
        }
    };
    let mesh = match group {
        Some(g) if g != GroupSpec::Trivial => {
            let group = g.build().map_err(tag(Stage::Symmetrize))?;
            let patch = shrinkers::fundamental_patch(&mesh, &group).map_err(tag(Stage::Symmetrize))?;
            shrinkers::replicate_patch(&patch, &group).map_err(tag(Stage::Symmetrize))?
        }
        _ => mesh,
    };
    Ok(GeneratedSurface { mesh, profile, notes })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceSummary {
    pub kind: String,
    pub vertices: usize,
    pub faces: usize,
    pub euler_characteristic: i64,
    pub has_boundary: bool,
    pub mean_edge_length: f64,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile_r0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile_closure_defect: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSummary {
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub clusters: Vec<Cluster>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub group: String,
    pub order: usize,
    pub invariant: bool,
    pub max_vertex_deviation: f64,
    /// Largest eigen-residual of `u∘σ` over the λ₁ cluster and all elements.
    pub equivariance_residual: f64,
    /// Largest relative defect of `u∘σ` outside the λ₁ eigenspace.
    pub stability_defect: f64,
    pub nodal_counts_invariant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lambda1Verdict {
    pub value: f64,
    pub target: f64,
    pub deviation: f64,
    pub multiplicity: usize,
    pub within_tolerance: bool,
    pub within_window: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub surface: SurfaceSummary,
    pub shrinker: ShrinkerReport,
    pub gaussian_area: f64,
    pub spectrum: SpectrumSummary,
    pub coordinate_residuals: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub courant: Option<Vec<CourantEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_combinations: Option<ClusterCombinationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub two_piece: Option<TwoPieceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invariance: Option<InvarianceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<Lambda1Verdict>,
    pub checks: Vec<CheckOutcome>,
    pub pass: bool,
    /// Wall-clock seconds per stage. Not deterministic.
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    /// Report JSON with the timing entries removed.
    pub fn deterministic_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serialises");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timings");
        }
        v
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn spectrum_csv(&self) -> String {
        let mut s = String::from("index,eigenvalue,residual\n");
        for (i, (l, r)) in self.spectrum.eigenvalues.iter().zip(&self.spectrum.residuals).enumerate() {
            s.push_str(&format!("{i},{l:?},{r:?}\n"));
        }
        s
    }
}

/// Everything a run produced, including the in-memory objects.
#[derive(Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub mesh: TriangleMesh,
    pub ops: WeightedOperators,
    pub spectrum: Spectrum,
}

struct Timer {
    timings: BTreeMap<String, f64>,
    start: Instant,
}

impl Timer {
    fn new() -> Self {
        Self { timings: BTreeMap::new(), start: Instant::now() }
    }

    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.timings.insert(name.to_string(), (now - self.start).as_secs_f64());
        self.start = now;
    }
}

/// Analyses of the first eigenvalue cluster under a group.
pub fn invariance_report(
    mesh: &TriangleMesh,
    ops: &WeightedOperators,
    spectrum: &Spectrum,
    cluster: &Cluster,
    group: &SymmetryGroup,
    zero_tol: f64,
) -> Result<InvarianceReport, PipelineError> {
    let perms = match symmetry::group_permutations(mesh, group, symmetry::DEFAULT_MATCH_TOLERANCE) {
        Ok(p) => p,
        Err(_) => {
            return Ok(InvarianceReport {
                group: group.name(),
                order: group.order(),
                invariant: false,
                max_vertex_deviation: f64::INFINITY,
                equivariance_residual: f64::INFINITY,
                stability_defect: f64::INFINITY,
                nodal_counts_invariant: false,
            })
        }
    };
    let range = cluster.start..cluster.start + cluster.multiplicity;
    let basis: Vec<&VertexScalarField> = spectrum.eigenvectors[range.clone()].iter().collect();
    let mut equivariance: f64 = 0.0;
    let mut defect: f64 = 0.0;
    let mut deviation: f64 = 0.0;
    let mut nodal_ok = true;
    for perm in &perms {
        deviation = deviation.max(perm.max_deviation());
        for i in range.clone() {
            let u = &spectrum.eigenvectors[i];
            let r =
                symmetry::equivariance_residual(ops, spectrum.eigenvalues[i], u, perm).map_err(tag(Stage::Analyze))?;
            equivariance = equivariance.max(r);
            let pulled = symmetry::pullback(u, perm).map_err(tag(Stage::Analyze))?;
            let a = nodal::nodal_domains(mesh, u, zero_tol).map_err(tag(Stage::Analyze))?.total_count;
            let b = nodal::nodal_domains(mesh, &pulled, zero_tol).map_err(tag(Stage::Analyze))?.total_count;
            nodal_ok &= a == b;
        }
        defect = defect.max(symmetry::eigenspace_stability_defect(ops, &basis, perm).map_err(tag(Stage::Analyze))?);
    }
    Ok(InvarianceReport {
        group: group.name(),
        order: group.order(),
        invariant: true,
        max_vertex_deviation: deviation,
        equivariance_residual: equivariance,
        stability_defect: defect,
        nodal_counts_invariant: nodal_ok,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(|e| PipelineError::new(Stage::Output, format!("{}: {e}", path.display())))
}

/// Runs the whole pipeline. Artifacts written before a failure are kept.
pub fn run(config: &RunConfig) -> Result<RunOutput, PipelineError> {
    config.validate()?;
    let mut timer = Timer::new();
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir).map_err(|e| PipelineError::new(Stage::Output, format!("{}: {e}", dir.display())))?;
    }
    let out_path = |name: &str| config.out_dir.as_ref().map(|d| d.join(name));

    let generated = generate_surface(&config.surface, config.group)?;
    let mesh = generated.mesh;
    timer.lap("generate");
    if let (Some(path), Some((_, curve))) = (out_path("profile.csv"), &generated.profile) {
        write_file(&path, &curve.to_csv())?;
    }
    let shrinker = shrinkers::shrinker_residual(&mesh, config.normalization);

    let ops = WeightedOperators::assemble(&mesh).map_err(tag(Stage::Assemble))?;
    let mut coordinate_residuals = [0.0; 3];
    for (axis, r) in coordinate_residuals.iter_mut().enumerate() {
        *r = ops.coordinate_residual(&mesh, axis).map_err(tag(Stage::Assemble))?;
    }
    timer.lap("assemble");

    let spectrum = eigen::solve_smallest(&ops, &config.eigen_options()).map_err(tag(Stage::Solve))?;
    timer.lap("solve");
    let clusters = spectrum.clusters(config.analyses.cluster_gap_tol);
    if let Some(path) = out_path("spectrum.csv") {
        write_file(&path, &spectrum.to_csv())?;
    }

    let a = &config.analyses;
    let mut checks = Vec::new();
    let mut check =
        |name: &str, pass: bool, detail: String| checks.push(CheckOutcome { name: name.into(), pass, detail });

    check(
        "shrinker_residual",
        shrinker.max_abs_residual <= a.residual_gate,
        format!("max {:.3e} vs gate {:.3e}", shrinker.max_abs_residual, a.residual_gate),
    );
    check("solver_converged", spectrum.converged, format!("{} iterations", spectrum.iterations));
    let worst_coord = coordinate_residuals.iter().cloned().fold(0.0, f64::max);
    check(
        "coordinate_residual",
        worst_coord <= a.coordinate_tol,
        format!("max {:.3e} vs {:.3e}", worst_coord, a.coordinate_tol),
    );

    let first = clusters.get(1).copied();
    let lambda1 = first.map(|c| {
        let value = spectrum.eigenvalues[c.start];
        let deviation = (value - LAMBDA1_TARGET).abs();
        Lambda1Verdict {
            value,
            target: LAMBDA1_TARGET,
            deviation,
            multiplicity: c.multiplicity,
            within_tolerance: deviation <= a.lambda1_tol,
            within_window: value >= LAMBDA1_WINDOW.0 - a.lambda1_tol && value <= LAMBDA1_WINDOW.1 + a.lambda1_tol,
        }
    });
    match &lambda1 {
        Some(v) => {
            check(
                "lambda1",
                v.within_tolerance,
                format!(
                    "λ₁ = {:.8} (×{}), |λ₁ − ½| = {:.3e} vs {:.3e}",
                    v.value, v.multiplicity, v.deviation, a.lambda1_tol
                ),
            );
            check("lambda1_window", v.within_window, format!("λ₁ = {:.8} vs [¼, ½] ± {:.3e}", v.value, a.lambda1_tol));
        }
        None => check("lambda1", false, "k = 1: no nonzero eigenvalue computed".into()),
    }

    let courant = if a.courant {
        let entries = nodal::courant_check(&mesh, &spectrum, a.zero_tol).map_err(tag(Stage::Analyze))?;
        let bad: Vec<usize> = entries.iter().filter(|e| !e.pass).map(|e| e.k).collect();
        check("courant", bad.is_empty(), format!("{} eigenfunctions, violations at {bad:?}", entries.len()));
        Some(entries)
    } else {
        None
    };

    let cluster_combinations = match (a.cluster_samples, first) {
        (0, _) | (_, None) => None,
        (samples, Some(c)) => {
            let rep = nodal::cluster_combination_counts(
                &mesh,
                &spectrum,
                c.start,
                c.multiplicity,
                samples,
                config.seed.wrapping_add(1),
                a.zero_tol,
            )
            .map_err(tag(Stage::Analyze))?;
            check("cluster_two_domains", rep.all_equal(2), format!("counts {:?}", rep.counts));
            Some(rep)
        }
    };

    let two_piece = if a.two_piece_planes > 0 {
        let rep = nodal::two_piece_check(&mesh, a.two_piece_planes, config.seed.wrapping_add(2), a.plane_band)
            .map_err(tag(Stage::Analyze))?;
        check(
            "two_piece",
            rep.pass(),
            format!("{} planes, {} failures, {} skipped", rep.planes_tested, rep.failures.len(), rep.degenerate_skips),
        );
        Some(rep)
    } else {
        None
    };

    let invariance = match (config.group, first) {
        (Some(g), Some(c)) if g != GroupSpec::Trivial => {
            let group = g.build().map_err(tag(Stage::Analyze))?;
            let rep = invariance_report(&mesh, &ops, &spectrum, &c, &group, a.zero_tol)?;
            let eq_tol = 10.0 * config.solver.tol;
            check(
                "mesh_invariant",
                rep.invariant,
                format!("{} elements, deviation {:.3e}", rep.order, rep.max_vertex_deviation),
            );
            check(
                "equivariance",
                rep.equivariance_residual <= eq_tol,
                format!("residual {:.3e} vs {:.3e}", rep.equivariance_residual, eq_tol),
            );
            check("eigenspace_stability", rep.stability_defect <= 1e-6, format!("defect {:.3e}", rep.stability_defect));
            check("nodal_invariance", rep.nodal_counts_invariant, String::new());
            Some(rep)
        }
        _ => None,
    };
    timer.lap("analyze");

    if let Some(format) = a.mesh_export {
        if let Some(path) = out_path(&format!("mesh.{}", format.extension())) {
            let names: Vec<String> = (0..spectrum.len()).map(|i| format!("u{i}")).collect();
            let fields: Vec<(&str, &VertexScalarField)> =
                names.iter().map(String::as_str).zip(spectrum.eigenvectors.iter()).collect();
            mesh::export(&mesh, &fields, &path, format).map_err(tag(Stage::Output))?;
        }
    }
    if a.nodal_export {
        if let (Some(dir), Some(c)) = (&config.out_dir, first) {
            for i in c.start..c.start + c.multiplicity {
                let curves =
                    nodal::nodal_curve_extract(&mesh, &spectrum.eigenvectors[i]).map_err(tag(Stage::Analyze))?;
                write_file(&dir.join(format!("nodal_u{i}.obj")), &curves.to_obj())?;
                write_file(&dir.join(format!("nodal_u{i}.csv")), &curves.to_csv())?;
            }
        }
    }

    let (orbit_r0, closure) = match &generated.profile {
        Some((orbit, _)) => (Some(orbit.r0), Some(orbit.closure_defect())),
        None => (None, None),
    };
    let surface = SurfaceSummary {
        kind: config.surface.kind().into(),
        vertices: mesh.num_vertices(),
        faces: mesh.num_faces(),
        euler_characteristic: mesh.euler_characteristic(),
        has_boundary: mesh.has_boundary(),
        mean_edge_length: mesh.mean_edge_length(),
        notes: generated.notes,
        profile_r0: orbit_r0,
        profile_closure_defect: closure,
    };
    let pass = checks.iter().all(|c| c.pass);
    let mut report = RunReport {
        config: config.clone(),
        surface,
        gaussian_area: shrinker.weighted_area,
        shrinker,
        spectrum: SpectrumSummary {
            eigenvalues: spectrum.eigenvalues.clone(),
            residuals: spectrum.residuals.clone(),
            iterations: spectrum.iterations,
            converged: spectrum.converged,
            clusters,
        },
        coordinate_residuals,
        courant,
        cluster_combinations,
        two_piece,
        invariance,
        lambda1,
        checks,
        pass,
        timings: BTreeMap::new(),
    };
    timer.lap("output");
    report.timings = timer.timings;
    if let Some(path) = out_path("report.json") {
        write_file(&path, &report.to_json_pretty())?;
    }
    Ok(RunOutput { report, mesh, ops, spectrum })
}

fn default_rel_tol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareTolerances {
    /// Largest accepted relative eigenvalue difference.
    #[serde(default = "default_rel_tol")]
    pub eigenvalue_rel: f64,
}

impl Default for CompareTolerances {
    fn default() -> Self {
        Self { eigenvalue_rel: default_rel_tol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenvalueDiff {
    pub index: usize,
    pub a: f64,
    pub b: f64,
    pub rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSummary {
    /// Entries exceeding the tolerance.
    pub diffs: Vec<EigenvalueDiff>,
    pub max_rel_diff: f64,
    pub compared: usize,
    /// Non-fatal problems such as different lengths or surface kinds.
    pub warnings: Vec<String>,
    pub pass: bool,
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_difference(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares the eigenvalue tables of two report JSON documents.
pub fn compare(
    a: &serde_json::Value,
    b: &serde_json::Value,
    tolerances: CompareTolerances,
) -> Result<CompareSummary, PipelineError> {
    let table = |v: &serde_json::Value, which: &str| -> Result<Vec<f64>, PipelineError> {
        v.pointer("/spectrum/eigenvalues")
            .and_then(|e| e.as_array())
            .and_then(|e| e.iter().map(|x| x.as_f64()).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| {
                PipelineError::new(Stage::Config, format!("report {which} has no spectrum.eigenvalues table"))
            })
    };
    let (ta, tb) = (table(a, "a")?, table(b, "b")?);
    let mut warnings = Vec::new();
    if ta.len() != tb.len() {
        warnings.push(format!("eigenvalue tables differ in length: {} vs {}", ta.len(), tb.len()));
    }
    let kind = |v: &serde_json::Value| v.pointer("/surface/kind").and_then(|k| k.as_str()).map(str::to_string);
    if kind(a) != kind(b) {
        warnings.push(format!("surface kinds differ: {:?} vs {:?}", kind(a), kind(b)));
    }
    let mut diffs = Vec::new();
    let mut max_rel: f64 = 0.0;
    for (index, (&x, &y)) in ta.iter().zip(&tb).enumerate() {
        let rel_diff = relative_difference(x, y);
        max_rel = max_rel.max(rel_diff);
        if rel_diff > tolerances.eigenvalue_rel {
            diffs.push(EigenvalueDiff { index, a: x, b: y, rel_diff });
        }
    }
    let compared = ta.len().min(tb.len());
    Ok(CompareSummary {
        pass: diffs.is_empty() && warnings.is_empty(),
        diffs,
        max_rel_diff: max_rel,
        compared,
        warnings,
    })
}
