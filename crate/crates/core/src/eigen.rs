//! Smallest eigenpairs of `K u = λ M u` by block LOBPCG with the constant
//! mode deflated.
//!
//! The constant function spans the kernel of `K` exactly (natural boundary
//! conditions), so it is reported as `λ₀ = 0` directly and every iterate is
//! kept M-orthogonal to it. The remaining `k − 1` pairs come from a locally
//! optimal block iteration on the subspace `[X, T R, P]` with soft locking of
//! converged columns, where `T` is either the Jacobi preconditioner
//! `(diag K + diag M)⁻¹` or an exact sparse Cholesky solve with `K + σM`.

use std::fmt::Write as _;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::VertexScalarField;
use crate::operator::WeightedOperators;
use crate::sparse::CsrMatrix;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 2000;

#[derive(Debug, Error)]
pub enum EigenError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("mass matrix is not positive definite")]
    MassNotPositiveDefinite,
    #[error("preconditioner factorisation failed: {0}")]
    Factorization(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preconditioner {
    /// `(diag K + diag M)⁻¹`.
    Jacobi,
    /// Exact solve with `K + shift · M`.
    ShiftedCholesky { shift: f64 },
}

impl Default for Preconditioner {
    fn default() -> Self {
        Preconditioner::ShiftedCholesky { shift: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Number of eigenpairs, including the constant mode.
    pub k: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    #[serde(default)]
    pub preconditioner: Preconditioner,
}

impl EigenOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, tol: DEFAULT_TOLERANCE, max_iter: DEFAULT_MAX_ITER, seed, preconditioner: Preconditioner::default() }
    }

    /// Extra vectors carried in the block beyond the requested ones.
    pub fn guard(&self) -> usize {
        (self.k / 4).max(2)
    }
}

/// Ascending eigenpairs with M-orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<VertexScalarField>,
    /// `‖K u − λ M u‖_{M⁻¹} / ‖u‖_M` per pair.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub value: f64,
    pub multiplicity: usize,
    /// Index of the first eigenvalue in the cluster.
    pub start: usize,
}

/// Groups consecutive eigenvalues whose gap is at most `gap_tol · max(1, λ)`.
/// The reported value is the cluster mean.
pub fn multiplicity_clusters(eigenvalues: &[f64], gap_tol: f64) -> Vec<Cluster> {
    let mut out: Vec<Cluster> = Vec::new();
    for (i, &lam) in eigenvalues.iter().enumerate() {
        match out.last_mut() {
            Some(c) if lam - eigenvalues[i - 1] <= gap_tol * lam.abs().max(1.0) => {
                c.value = (c.value * c.multiplicity as f64 + lam) / (c.multiplicity + 1) as f64;
                c.multiplicity += 1;
            }
            _ => out.push(Cluster { value: lam, multiplicity: 1, start: i }),
        }
    }
    out
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn clusters(&self, gap_tol: f64) -> Vec<Cluster> {
        multiplicity_clusters(&self.eigenvalues, gap_tol)
    }

    /// Smallest nonzero eigenvalue (index 1).
    pub fn first_nonzero(&self) -> Option<f64> {
        self.eigenvalues.get(1).copied()
    }

    /// CSV with header `index,eigenvalue,residual`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,eigenvalue,residual\n");
        for (i, (l, r)) in self.eigenvalues.iter().zip(&self.residuals).enumerate() {
            writeln!(s, "{i},{l:?},{r:?}").unwrap();
        }
        s
    }

    pub fn to_record(&self, include_vectors: bool) -> SpectrumRecord {
        SpectrumRecord {
            eigenvalues: self.eigenvalues.clone(),
            residuals: self.residuals.clone(),
            iterations: self.iterations,
            converged: self.converged,
            eigenvectors: include_vectors.then(|| self.eigenvectors.iter().map(|v| v.values().to_vec()).collect()),
        }
    }
}

/// Serialisable form of a [`Spectrum`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvectors: Option<Vec<Vec<f64>>>,
}

impl From<SpectrumRecord> for Spectrum {
    fn from(r: SpectrumRecord) -> Self {
        Spectrum {
            eigenvectors: r.eigenvectors.unwrap_or_default().into_iter().map(VertexScalarField::new).collect(),
            eigenvalues: r.eigenvalues,
            residuals: r.residuals,
            iterations: r.iterations,
            converged: r.converged,
        }
    }
}

enum Precond {
    Jacobi(Vec<f64>),
    Cholesky(faer::sparse::linalg::solvers::Llt<usize, f64>),
}

impl Precond {
    fn build(kind: Preconditioner, k: &CsrMatrix, m: &CsrMatrix) -> Result<Self, EigenError> {
        match kind {
            Preconditioner::Jacobi => {
                let d: Vec<f64> = k.diagonal().iter().zip(m.diagonal()).map(|(a, b)| 1.0 / (a + b)).collect();
                Ok(Precond::Jacobi(d))
            }
            Preconditioner::ShiftedCholesky { shift } => {
                if !(shift > 0.0) {
                    return Err(EigenError::InvalidRequest(format!(
                        "preconditioner shift must be positive, got {shift}"
                    )));
                }
                let a = k.linear_combination(1.0, m, shift);
                let triplets: Vec<Triplet<usize, usize, f64>> = a
                    .triplets()
                    .into_iter()
                    .filter(|&(i, j, _)| i >= j)
                    .map(|(i, j, v)| Triplet::new(i, j, v))
                    .collect();
                let mat = SparseColMat::<usize, f64>::try_new_from_triplets(a.dim(), a.dim(), &triplets)
                    .map_err(|e| EigenError::Factorization(format!("{e:?}")))?;
                let llt = mat.sp_cholesky(Side::Lower).map_err(|e| EigenError::Factorization(format!("{e:?}")))?;
                Ok(Precond::Cholesky(llt))
            }
        }
    }

    fn apply(&self, cols: &mut [Vec<f64>]) {
        match self {
            Precond::Jacobi(d) => {
                for c in cols.iter_mut() {
                    for (v, s) in c.iter_mut().zip(d) {
                        *v *= s;
                    }
                }
            }
            Precond::Cholesky(llt) => {
                if cols.is_empty() {
                    return;
                }
                let n = cols[0].len();
                let mut rhs = Mat::<f64>::from_fn(n, cols.len(), |i, j| cols[j][i]);
                llt.solve_in_place(rhs.as_mut());
                for (j, c) in cols.iter_mut().enumerate() {
                    for (i, v) in c.iter_mut().enumerate() {
                        *v = rhs[(i, j)];
                    }
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Σ_j coeffs[(j, c)] · cols[j]` for every output column `c`.
fn combine(cols: &[&Vec<f64>], coeffs: &DMatrix<f64>, n: usize) -> Vec<Vec<f64>> {
    (0..coeffs.ncols())
        .map(|c| {
            let mut out = vec![0.0; n];
            for (j, col) in cols.iter().enumerate() {
                let w = coeffs[(j, c)];
                if w != 0.0 {
                    for (o, v) in out.iter_mut().zip(col.iter()) {
                        *o += w * v;
                    }
                }
            }
            out
        })
        .collect()
}

struct Deflation {
    /// M-normalised constant vector.
    unit: Vec<f64>,
    /// `M · unit`.
    m_unit: Vec<f64>,
}

impl Deflation {
    fn new(ops: &WeightedOperators) -> Self {
        let n = ops.dim();
        let c = 1.0 / ops.weighted_area().sqrt();
        let unit = vec![c; n];
        let m_unit = ops.mass().mul_vec(&unit);
        Self { unit, m_unit }
    }

    fn project(&self, v: &mut [f64]) {
        let a = dot(&self.m_unit, v);
        for (x, u) in v.iter_mut().zip(&self.unit) {
            *x -= a * u;
        }
    }
}

/// Rayleigh–Ritz on the span of `basis`: returns Ritz values (ascending) and
/// coefficient matrix, dropping numerically dependent directions.
fn rayleigh_ritz(basis: &[&Vec<f64>], k_basis: &[Vec<f64>], m_basis: &[Vec<f64>]) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let s = basis.len();
    let mut gk = DMatrix::<f64>::zeros(s, s);
    let mut gm = DMatrix::<f64>::zeros(s, s);
    for i in 0..s {
        for j in i..s {
            let kij = 0.5 * (dot(basis[i], &k_basis[j]) + dot(basis[j], &k_basis[i]));
            let mij = 0.5 * (dot(basis[i], &m_basis[j]) + dot(basis[j], &m_basis[i]));
            gk[(i, j)] = kij;
            gk[(j, i)] = kij;
            gm[(i, j)] = mij;
            gm[(j, i)] = mij;
        }
    }
    // scale to unit diagonal
    let scale: Vec<f64> = (0..s).map(|i| if gm[(i, i)] > 0.0 { 1.0 / gm[(i, i)].sqrt() } else { 0.0 }).collect();
    for i in 0..s {
        for j in 0..s {
            gk[(i, j)] *= scale[i] * scale[j];
            gm[(i, j)] *= scale[i] * scale[j];
        }
    }
    let em = SymmetricEigen::new(gm);
    let dmax = em.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..s).filter(|&i| em.eigenvalues[i] > 1e-12 * dmax).collect();
    if keep.is_empty() {
        return None;
    }
    let mut z = DMatrix::<f64>::zeros(s, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let inv = 1.0 / em.eigenvalues[i].sqrt();
        for r in 0..s {
            z[(r, c)] = em.eigenvectors[(r, i)] * inv;
        }
    }
    let a = z.transpose() * &gk * &z;
    let a = (&a + a.transpose()) * 0.5;
    let ea = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..keep.len()).collect();
    order.sort_by(|&i, &j| ea.eigenvalues[i].total_cmp(&ea.eigenvalues[j]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| ea.eigenvalues[i]).collect();
    let mut y = DMatrix::<f64>::zeros(keep.len(), keep.len());
    for (c, &i) in order.iter().enumerate() {
        y.set_column(c, &ea.eigenvectors.column(i));
    }
    let mut coeffs = z * y;
    for i in 0..s {
        for c in 0..coeffs.ncols() {
            coeffs[(i, c)] *= scale[i];
        }
    }
    Some((values, coeffs))
}

type Block = Vec<Vec<f64>>;

/// The `k` smallest eigenpairs of `(K, M)`; see the module docs.
pub fn solve_smallest(ops: &WeightedOperators, options: &EigenOptions) -> Result<Spectrum, EigenError> {
    let n = ops.dim();
    let k = options.k;
    if k == 0 {
        return Err(EigenError::InvalidRequest("k must be at least 1".into()));
    }
    if !(options.tol > 0.0) {
        return Err(EigenError::InvalidRequest("tolerance must be positive".into()));
    }
    if ops.mass().diagonal().iter().chain(ops.lumped_mass()).any(|&d| !(d > 0.0)) {
        return Err(EigenError::MassNotPositiveDefinite);
    }
    let nev = k - 1;
    let block = nev + options.guard();
    if k + options.guard() > n / 4 {
        return Err(EigenError::InvalidRequest(format!(
            "k + guard = {} exceeds a quarter of the vertex count {n}",
            k + options.guard()
        )));
    }

    let defl = Deflation::new(ops);
    let kmat = ops.stiffness();
    let mmat = ops.mass();
    let constant = VertexScalarField::new(defl.unit.clone());
    let constant_residual = ops.eig_residual(0.0, &constant).unwrap_or(0.0);
    if nev == 0 {
        return Ok(Spectrum {
            eigenvalues: vec![0.0],
            eigenvectors: vec![constant],
            residuals: vec![constant_residual],
            iterations: 0,
            converged: constant_residual <= options.tol,
        });
    }

    let precond = Precond::build(options.preconditioner, kmat, mmat)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut x: Vec<Vec<f64>> = (0..block)
        .map(|_| {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            defl.project(&mut v);
            v
        })
        .collect();

    let mut kx: Vec<Vec<f64>> = x.iter().map(|v| kmat.mul_vec(v)).collect();
    let mut mx: Vec<Vec<f64>> = x.iter().map(|v| mmat.mul_vec(v)).collect();
    let (mut lambda, coeffs) = {
        let refs: Vec<&Vec<f64>> = x.iter().collect();
        rayleigh_ritz(&refs, &kx, &mx)
            .ok_or_else(|| EigenError::InvalidRequest("initial block is degenerate".into()))?
    };
    if lambda.len() < block {
        return Err(EigenError::InvalidRequest("initial block is rank deficient".into()));
    }
    let c = coeffs.columns(0, block).into_owned();
    x = combine(&x.iter().collect::<Vec<_>>(), &c, n);
    kx = combine(&kx.iter().collect::<Vec<_>>(), &c, n);
    mx = combine(&mx.iter().collect::<Vec<_>>(), &c, n);
    lambda.truncate(block);

    // search directions with their K and M images
    let mut p: Option<(Block, Block, Block)> = None;
    let mut residuals = vec![f64::INFINITY; block];
    let mut iterations = 0;
    let mut converged = false;

    for iter in 0..=options.max_iter {
        let mut r: Vec<Vec<f64>> =
            (0..block).map(|j| kx[j].iter().zip(&mx[j]).map(|(a, b)| a - lambda[j] * b).collect()).collect();
        for j in 0..block {
            let norm = dot(&x[j], &mx[j]).max(f64::MIN_POSITIVE).sqrt();
            residuals[j] = ops.dual_norm(&r[j]) / norm;
        }
        iterations = iter;
        if residuals[..nev].iter().all(|&res| res <= options.tol) {
            converged = true;
            break;
        }
        if iter == options.max_iter {
            break;
        }
        let active: Vec<usize> = (0..block).filter(|&j| residuals[j] > options.tol).collect();
        let mut w: Vec<Vec<f64>> = active.iter().map(|&j| std::mem::take(&mut r[j])).collect();
        precond.apply(&mut w);
        for v in &mut w {
            defl.project(v);
        }
        let kw: Vec<Vec<f64>> = w.iter().map(|v| kmat.mul_vec(v)).collect();
        let mw: Vec<Vec<f64>> = w.iter().map(|v| mmat.mul_vec(v)).collect();

        let mut basis: Vec<&Vec<f64>> = x.iter().chain(w.iter()).collect();
        let mut k_basis: Vec<Vec<f64>> = kx.iter().chain(kw.iter()).cloned().collect();
        let mut m_basis: Vec<Vec<f64>> = mx.iter().chain(mw.iter()).cloned().collect();
        if let Some((pp, kp, mp)) = &p {
            for &j in &active {
                basis.push(&pp[j]);
                k_basis.push(kp[j].clone());
                m_basis.push(mp[j].clone());
            }
        }

        let rr = rayleigh_ritz(&basis, &k_basis, &m_basis).filter(|(vals, _)| vals.len() >= block).or_else(|| {
            // restart without the history block
            let trimmed = block + w.len();
            rayleigh_ritz(&basis[..trimmed], &k_basis[..trimmed], &m_basis[..trimmed])
                .filter(|(vals, _)| vals.len() >= block)
                .map(|(v, c)| {
                    let mut full = DMatrix::<f64>::zeros(basis.len(), c.ncols());
                    full.view_mut((0, 0), (trimmed, c.ncols())).copy_from(&c);
                    (v, full)
                })
        });
        let Some((vals, coeffs)) = rr else { break };
        let c = coeffs.columns(0, block).into_owned();
        let k_refs: Vec<&Vec<f64>> = k_basis.iter().collect();
        let m_refs: Vec<&Vec<f64>> = m_basis.iter().collect();

        // history directions: the part of the update outside span(X)
        let mut c_hist = c.clone();
        for i in 0..block {
            for col in 0..block {
                c_hist[(i, col)] = 0.0;
            }
        }
        let new_p = combine(&basis, &c_hist, n);
        let new_kp = combine(&k_refs, &c_hist, n);
        let new_mp = combine(&m_refs, &c_hist, n);

        x = combine(&basis, &c, n);
        kx = combine(&k_refs, &c, n);
        mx = combine(&m_refs, &c, n);
        lambda = vals[..block].to_vec();
        p = Some((new_p, new_kp, new_mp));
    }

    let mut eigenvalues = vec![0.0];
    let mut eigenvectors = vec![constant];
    let mut res = vec![constant_residual];
    for j in 0..nev {
        let norm = dot(&x[j], &mx[j]).sqrt();
        let v = VertexScalarField::new(x[j].iter().map(|a| a / norm).collect());
        eigenvalues.push(lambda[j]);
        res.push(ops.eig_residual(lambda[j], &v).unwrap_or(f64::INFINITY));
        eigenvectors.push(v);
    }
    Ok(Spectrum { eigenvalues, eigenvectors, residuals: res, iterations, converged })
}
