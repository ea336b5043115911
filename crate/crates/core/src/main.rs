use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use shrinker_spectra::eigen::{self, EigenOptions, Spectrum, SpectrumRecord};
use shrinker_spectra::mesh::{self, MeshFormat};
use shrinker_spectra::nodal;
use shrinker_spectra::pipeline::{self, CompareTolerances, PipelineError, RunConfig, Stage, SurfaceSpec};
use shrinker_spectra::shrinkers;
use shrinker_spectra::symmetry::GroupSpec;
use shrinker_spectra::WeightedOperators;

/// Discrete self-shrinkers and the spectrum of the drift Laplacian.
#[derive(Parser)]
#[command(name = "shrinker", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a surface mesh (and the profile curve for the Angenent torus).
    Generate(GenerateArgs),
    /// Assemble the weighted stiffness and mass matrices in Matrix Market form.
    Assemble(SurfaceArgs),
    /// Compute the smallest eigenpairs.
    Solve(SolveArgs),
    /// Nodal, Courant and two-piece analyses of a solved spectrum.
    Analyze(AnalyzeArgs),
    /// Full pipeline from a config file and/or flags.
    Run(RunArgs),
    /// Compare the eigenvalue tables of two reports.
    Compare(CompareArgs),
}

#[derive(Args)]
struct SurfaceArgs {
    /// Surface, e.g. `sphere:level=5`, `cylinder:z_max=10`, `disk`, `angenent`.
    #[arg(long)]
    surface: SurfaceSpec,
    /// Symmetry group, `dihedral:n` or `prismatic:n`.
    #[arg(long)]
    group: Option<GroupSpec>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    surface: SurfaceArgs,
    #[arg(long, default_value = "vtk")]
    format: MeshFormat,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    surface: SurfaceArgs,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = eigen::DEFAULT_TOLERANCE)]
    tol: f64,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Mesh file written by `solve` (any supported format).
    #[arg(long)]
    mesh: PathBuf,
    /// `spectrum.json` written by `solve`.
    #[arg(long)]
    spectrum: PathBuf,
    #[arg(long, default_value_t = 100)]
    planes: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; flags below override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    surface: Option<SurfaceSpec>,
    #[arg(long)]
    group: Option<GroupSpec>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    planes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also export the mesh with eigenvector fields in this format.
    #[arg(long)]
    format: Option<MeshFormat>,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Relative eigenvalue tolerance.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
}

fn io_err(stage: Stage, path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::new(stage, format!("{}: {e}", path.display()))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn generate(args: &GenerateArgs) -> Result<bool, PipelineError> {
    let s = &args.surface;
    fs::create_dir_all(&s.out).map_err(io_err(Stage::Output, &s.out))?;
    let g = pipeline::generate_surface(&s.surface, s.group)?;
    let path = s.out.join(format!("mesh.{}", args.format.extension()));
    mesh::export(&g.mesh, &[], &path, args.format).map_err(|e| PipelineError::new(Stage::Output, e))?;
    if let Some((_, curve)) = &g.profile {
        let p = s.out.join("profile.csv");
        fs::write(&p, curve.to_csv()).map_err(io_err(Stage::Output, &p))?;
    }
    let report = shrinkers::shrinker_residual(&g.mesh, shrinkers::SURFACE_NORMALIZATION);
    print_json(&json!({
        "mesh": path,
        "vertices": g.mesh.num_vertices(),
        "faces": g.mesh.num_faces(),
        "euler_characteristic": g.mesh.euler_characteristic(),
        "notes": g.notes,
        "shrinker": report,
    }));
    Ok(true)
}

fn assemble(args: &SurfaceArgs) -> Result<bool, PipelineError> {
    fs::create_dir_all(&args.out).map_err(io_err(Stage::Output, &args.out))?;
    let g = pipeline::generate_surface(&args.surface, args.group)?;
    let ops = WeightedOperators::assemble(&g.mesh).map_err(|e| PipelineError::new(Stage::Assemble, e))?;
    for (name, m) in [("stiffness.mtx", ops.stiffness()), ("mass.mtx", ops.mass())] {
        let p = args.out.join(name);
        m.write_matrix_market(&p, "weighted P1 operator of the drift Laplacian").map_err(io_err(Stage::Output, &p))?;
    }
    print_json(&json!({ "dimension": ops.dim(), "nnz": ops.stiffness().nnz(), "weighted_area": ops.weighted_area() }));
    Ok(true)
}

fn solve(args: &SolveArgs) -> Result<bool, PipelineError> {
    let s = &args.surface;
    fs::create_dir_all(&s.out).map_err(io_err(Stage::Output, &s.out))?;
    let g = pipeline::generate_surface(&s.surface, s.group)?;
    let mesh_path = s.out.join("mesh.json");
    mesh::export(&g.mesh, &[], &mesh_path, MeshFormat::Json).map_err(|e| PipelineError::new(Stage::Output, e))?;
    let ops = WeightedOperators::assemble(&g.mesh).map_err(|e| PipelineError::new(Stage::Assemble, e))?;
    let mut options = EigenOptions::new(args.k, args.seed);
    options.tol = args.tol;
    let spectrum = eigen::solve_smallest(&ops, &options).map_err(|e| PipelineError::new(Stage::Solve, e))?;
    let csv = s.out.join("spectrum.csv");
    fs::write(&csv, spectrum.to_csv()).map_err(io_err(Stage::Output, &csv))?;
    let js = s.out.join("spectrum.json");
    let record = serde_json::to_string(&spectrum.to_record(true)).expect("json");
    fs::write(&js, record).map_err(io_err(Stage::Output, &js))?;
    print_json(
        &json!({ "eigenvalues": spectrum.eigenvalues, "converged": spectrum.converged, "iterations": spectrum.iterations }),
    );
    Ok(spectrum.converged)
}

fn analyze(args: &AnalyzeArgs) -> Result<bool, PipelineError> {
    let an = |e: nodal::NodalError| PipelineError::new(Stage::Analyze, e);
    let format = MeshFormat::from_path(&args.mesh).map_err(|e| PipelineError::new(Stage::Config, e))?;
    let imported = mesh::import(&args.mesh, format).map_err(|e| PipelineError::new(Stage::Config, e))?;
    let mesh = imported.mesh;
    let text = fs::read_to_string(&args.spectrum).map_err(io_err(Stage::Config, &args.spectrum))?;
    let record: SpectrumRecord = serde_json::from_str(&text).map_err(|e| PipelineError::new(Stage::Config, e))?;
    let spectrum = Spectrum::from(record);
    if spectrum.eigenvectors.len() != spectrum.eigenvalues.len() {
        return Err(PipelineError::new(Stage::Config, "spectrum file carries no eigenvectors"));
    }
    for u in &spectrum.eigenvectors {
        u.check_len(&mesh).map_err(|e| PipelineError::new(Stage::Config, e))?;
    }
    fs::create_dir_all(&args.out).map_err(io_err(Stage::Output, &args.out))?;
    let courant = nodal::courant_check(&mesh, &spectrum, nodal::DEFAULT_ZERO_TOL).map_err(an)?;
    let two_piece =
        nodal::two_piece_check(&mesh, args.planes.max(1), args.seed, mesh::DEFAULT_PLANE_BAND).map_err(an)?;
    let clusters = spectrum.clusters(1e-2);
    let mut combos = None;
    if let Some(c) = clusters.get(1) {
        combos = Some(
            nodal::cluster_combination_counts(
                &mesh,
                &spectrum,
                c.start,
                c.multiplicity,
                20,
                args.seed,
                nodal::DEFAULT_ZERO_TOL,
            )
            .map_err(an)?,
        );
        for i in c.start..c.start + c.multiplicity {
            let curves = nodal::nodal_curve_extract(&mesh, &spectrum.eigenvectors[i]).map_err(an)?;
            let p = args.out.join(format!("nodal_u{i}.obj"));
            fs::write(&p, curves.to_obj()).map_err(io_err(Stage::Output, &p))?;
        }
    }
    let pass = courant.iter().all(|e| e.pass) && two_piece.pass() && combos.as_ref().is_none_or(|c| c.all_equal(2));
    let report = json!({ "courant": courant, "two_piece": two_piece, "cluster_combinations": combos, "clusters": clusters, "pass": pass });
    let p = args.out.join("analysis.json");
    fs::write(&p, serde_json::to_string_pretty(&report).expect("json")).map_err(io_err(Stage::Output, &p))?;
    print_json(&report);
    Ok(pass)
}

fn run(args: &RunArgs) -> Result<bool, PipelineError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(Stage::Config, path))?;
            let mut value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| PipelineError::new(Stage::Config, e))?;
            // a seed given on the command line satisfies the mandatory field
            if let (Some(seed), Some(obj)) = (args.seed, value.as_object_mut()) {
                obj.insert("seed".into(), json!(seed));
            }
            serde_json::from_value::<RunConfig>(value).map_err(|e| PipelineError::new(Stage::Config, e))?
        }
        None => {
            let surface = args
                .surface
                .ok_or_else(|| PipelineError::new(Stage::Config, "either --config or --surface is required"))?;
            let seed = args.seed.ok_or_else(|| PipelineError::new(Stage::Config, "--seed is required"))?;
            RunConfig::new(surface, seed)
        }
    };
    if let Some(s) = args.surface {
        config.surface = s;
    }
    if let Some(g) = args.group {
        config.group = Some(g);
    }
    if let Some(k) = args.k {
        config.solver.k = k;
    }
    if let Some(t) = args.tol {
        config.solver.tol = t;
    }
    if let Some(p) = args.planes {
        config.analyses.two_piece_planes = p;
    }
    if let Some(o) = &args.out {
        config.out_dir = Some(o.clone());
    }
    if let Some(f) = args.format {
        config.analyses.mesh_export = Some(f);
    }
    let output = pipeline::run(&config)?;
    let r = &output.report;
    for c in &r.checks {
        eprintln!("{} {:<22} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    print_json(&json!({
        "surface": r.surface,
        "eigenvalues": r.spectrum.eigenvalues,
        "lambda1": r.lambda1,
        "pass": r.pass,
    }));
    Ok(r.pass)
}

fn compare(args: &CompareArgs) -> Result<bool, PipelineError> {
    let load = |p: &Path| -> Result<serde_json::Value, PipelineError> {
        let text = fs::read_to_string(p).map_err(io_err(Stage::Config, p))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", p.display())))
    };
    let summary = pipeline::compare(&load(&args.a)?, &load(&args.b)?, CompareTolerances { eigenvalue_rel: args.tol })?;
    print_json(&serde_json::to_value(&summary).expect("json"));
    Ok(summary.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Assemble(a) => assemble(a),
        Command::Solve(a) => solve(a),
        Command::Analyze(a) => analyze(a),
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
