//! Approximate eigenfunctions of the inverse Perron-Frobenius operator from snapshot
//! pairs, and the spectral form of the KKL injection.
//!
//! A candidate eigenfunction is `ψ = Σ_i v_i κ(x_i, ·)`. The inverse operator maps
//! `κ(x_i, ·)` to `κ(f⁻¹(x_i), ·)`, so for `|λ| = 1` the squared RKHS residual
//! `‖Σ_i v_i [κ(f⁻¹(x_i), ·) − λ κ(x_i, ·)]‖²` equals `v* M(λ) v` with
//!
//! ```text
//! M(λ) = R + G − λ A − λ̄ Aᵀ
//! G_ij = κ(x_i, x_j),  A_ij = κ(f⁻¹(x_i), x_j),  R_ij = κ(f⁻¹(x_i), f⁻¹(x_j)).
//! ```
//!
//! Each grid point `λ_j` gets the minimiser of `v* M(λ_j) v` subject to
//! `v* (G + ε_G I) v = 1`. The problem is solved on a basis `W` with
//! `Wᵀ (G + ε_G I) W = I` built from the leading eigenvectors of `G`, which turns the
//! generalized problem into an ordinary Hermitian one of the basis size.

use std::f64::consts::PI;
use std::path::Path;

use faer::{Mat, MatRef, Side};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::dynamics::io::{fmt_f64, read_table, write_rows};
use crate::dynamics::SnapshotSet;
use crate::error::{Error, Result};
use crate::kernels::{gram, gram_symmetric, RadialKernel};
use crate::linalg::{complexify, HermitianSolver};
use crate::observer::{DeepKklParams, InjectionWeights};
use crate::points::Points;
use crate::regression::InterpolantModel;

/// Default ridge on `V*GV` when projecting kernel sections.
pub const DEFAULT_EPS_PSI: f64 = 1e-8;
/// Default ridge on `G`, relative to `trace(G)/n`.
pub const DEFAULT_EPS_G_REL: f64 = 1e-10;
/// Allowed `‖Im z̃‖ / ‖z̃‖` before the injection is rejected.
pub const IMAGINARY_TOL: f64 = 1e-6;
/// Basis directions with `λ_i(G) + ε_G` below this fraction of `λ_max(G)` are dropped.
const BASIS_CUTOFF: f64 = 1e-14;
const QUERY_CHUNK: usize = 1024;

/// Gram, shift and backward matrices of a snapshot set.
#[derive(Clone, Debug)]
pub struct SnapshotMatrices {
    pub g: Mat<f64>,
    pub a: Mat<f64>,
    pub r: Mat<f64>,
}

impl SnapshotMatrices {
    pub fn len(&self) -> usize {
        self.g.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `ε_G = 10⁻¹⁰ · trace(G)/n`.
    pub fn default_eps_g(&self) -> f64 {
        let n = self.len().max(1);
        DEFAULT_EPS_G_REL * (0..self.len()).map(|i| self.g[(i, i)]).sum::<f64>() / n as f64
    }
}

pub fn build_snapshot_matrices(snapshots: &SnapshotSet, kernel: &RadialKernel) -> Result<SnapshotMatrices> {
    if snapshots.len() == 0 {
        return Err(Error::arg("snapshot set is empty"));
    }
    let succ = snapshots.successors();
    let pred = snapshots.predecessors();
    Ok(SnapshotMatrices {
        g: gram_symmetric(kernel, succ)?,
        a: gram(kernel, pred, succ)?,
        r: gram_symmetric(kernel, pred)?,
    })
}

/// Midpoints of `p` equal arcs of the unit circle.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateGrid {
    angles: Vec<f64>,
    mesh: f64,
}

impl CandidateGrid {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Angles in `(0, 2π)`, increasing.
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn lambdas(&self) -> Vec<Complex64> {
        self.angles.iter().map(|&a| Complex64::from_polar(1.0, a)).collect()
    }

    /// `δ = 2 sin(π / (2 ⌊p/2⌋))`, the chord between neighbouring candidates; 2 for `p = 1`.
    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    /// Index of the conjugate candidate.
    pub fn partner(&self, j: usize) -> usize {
        self.len() - 1 - j
    }
}

/// `λ_j = exp(iπ(2j − 1)/p)`, `j = 1..p`.
pub fn candidate_grid(p: usize) -> Result<CandidateGrid> {
    if p == 0 {
        return Err(Error::arg("candidate grid needs p ≥ 1"));
    }
    let angles = (1..=p).map(|j| PI * (2 * j - 1) as f64 / p as f64).collect();
    let half = p / 2;
    let mesh = if half == 0 { 2.0 } else { 2.0 * (PI / (2 * half) as f64).sin() };
    Ok(CandidateGrid { angles, mesh })
}

/// `M(λ) = R + G − λA − λ̄Aᵀ` as a dense complex matrix.
pub fn residual_matrix(matrices: &SnapshotMatrices, lambda: Complex64) -> Mat<Complex64> {
    let (g, a, r) = (&matrices.g, &matrices.a, &matrices.r);
    Mat::from_fn(g.nrows(), g.ncols(), |i, j| {
        Complex64::from(r[(i, j)] + g[(i, j)]) - lambda * a[(i, j)] - lambda.conj() * a[(j, i)]
    })
}

/// Minimiser of the residual at one candidate.
#[derive(Clone, Debug)]
pub struct CandidateSolution {
    pub lambda: Complex64,
    /// Coefficients of `ψ̂` on the snapshot points, with `v*(G + ε_G I)v = 1`.
    pub v: Vec<Complex64>,
    pub residual: f64,
}

/// The residual problem restricted to a `G`-orthonormal basis.
pub struct ReducedProblem {
    w: Mat<f64>,
    s: Mat<f64>,
    sym: Mat<f64>,
    anti: Mat<f64>,
    eps_g: f64,
}

impl ReducedProblem {
    /// Uses the leading `rank` eigenvectors of `G` (all of them when `None`).
    pub fn new(matrices: &SnapshotMatrices, eps_g: f64, rank: Option<usize>) -> Result<Self> {
        let n = matrices.len();
        if n == 0 {
            return Err(Error::arg("snapshot matrices are empty"));
        }
        if !(eps_g >= 0.0 && eps_g.is_finite()) {
            return Err(Error::arg(format!("ε_G must be finite and non-negative, got {eps_g}")));
        }
        if rank == Some(0) {
            return Err(Error::arg("basis rank must be positive"));
        }
        let eig = matrices
            .g
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Numeric(format!("eigendecomposition of G failed: {e:?}")))?;
        let vals = eig.S().column_vector();
        let vecs = eig.U();
        let top = vals[n - 1] + eps_g;
        let cap = rank.unwrap_or(n).min(n);
        let keep: Vec<usize> = (0..n)
            .rev()
            .filter(|&i| vals[i] + eps_g > BASIS_CUTOFF * top)
            .take(cap)
            .collect();
        if keep.is_empty() {
            return Err(Error::Numeric("Gram matrix has no positive eigenvalues".into()));
        }
        let w = Mat::from_fn(n, keep.len(), |i, c| {
            let k = keep[c];
            vecs[(i, k)] / (vals[k] + eps_g).sqrt()
        });
        let rg = &matrices.r + &matrices.g;
        let s = w.transpose() * (&rg * &w);
        let at = w.transpose() * (&matrices.a * &w);
        let sym = &at + at.transpose();
        let anti = &at - at.transpose();
        let mut s = s;
        symmetrize(&mut s);
        Ok(Self { w, s, sym, anti, eps_g })
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn eps_g(&self) -> f64 {
        self.eps_g
    }

    /// `Wᵀ M(λ) W`.
    pub fn reduced_matrix(&self, lambda: Complex64) -> Mat<Complex64> {
        let (c, s) = (lambda.re, lambda.im);
        let re = &self.s - &self.sym * faer::Scale(c);
        let im = &self.anti * faer::Scale(-s);
        complexify(re.as_ref(), im.as_ref())
    }

    /// Smallest eigenpair of the reduced matrix, with `res = sqrt(max(0, μ))`.
    pub fn solve(&self, lambda: Complex64) -> Result<CandidateSolution> {
        let m = self.reduced_matrix(lambda);
        let eig = m.self_adjoint_eigen(Side::Lower).map_err(|e| {
            Error::Numeric(format!(
                "eigensolver failed at λ = {lambda} (basis size {}): {e:?}",
                self.rank()
            ))
        })?;
        let mu = eig.S().column_vector()[0].re;
        if !mu.is_finite() {
            return Err(Error::Numeric(format!("non-finite residual at λ = {lambda}")));
        }
        let u = eig.U().col(0);
        // Fix the phase: largest component real and positive.
        let (imax, _) = (0..u.nrows()).fold((0, -1.0), |acc, i| {
            let a = u[i].norm();
            if a > acc.1 {
                (i, a)
            } else {
                acc
            }
        });
        let phase = u[imax].conj() / u[imax].norm();
        let v = (0..self.w.nrows())
            .map(|i| {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..u.nrows() {
                    acc += u[k] * self.w[(i, k)];
                }
                acc * phase
            })
            .collect();
        Ok(CandidateSolution {
            lambda,
            v,
            residual: mu.max(0.0).sqrt(),
        })
    }

    /// Solves every grid point, using conjugate symmetry to halve the work.
    pub fn solve_grid(&self, grid: &CandidateGrid) -> Result<Vec<CandidateSolution>> {
        let lambdas = grid.lambdas();
        let p = grid.len();
        let upper: Vec<usize> = (0..p.div_ceil(2)).collect();
        let solved = upper
            .par_iter()
            .map(|&j| self.solve(lambdas[j]))
            .collect::<Result<Vec<_>>>()?;
        let mut out: Vec<Option<CandidateSolution>> = vec![None; p];
        for (j, sol) in upper.into_iter().zip(solved) {
            let k = grid.partner(j);
            if k != j {
                out[k] = Some(CandidateSolution {
                    lambda: lambdas[k],
                    v: sol.v.iter().map(|c| c.conj()).collect(),
                    residual: sol.residual,
                });
            }
            out[j] = Some(sol);
        }
        Ok(out.into_iter().map(|s| s.expect("every candidate solved")).collect())
    }
}

fn symmetrize(m: &mut Mat<f64>) {
    for j in 0..m.ncols() {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest generalized eigenpair of `(M(λ), G + ε_G I)` on the full basis.
pub fn solve_candidate(lambda: Complex64, matrices: &SnapshotMatrices, eps_g: f64) -> Result<CandidateSolution> {
    if ((lambda.norm() - 1.0).abs()) > 1e-12 {
        return Err(Error::arg(format!("candidate {lambda} is not on the unit circle")));
    }
    ReducedProblem::new(matrices, eps_g, None)?.solve(lambda)
}

/// Settings of the snapshot-regime eigenfunction search.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralOptions {
    /// Number of grid points on the unit circle.
    pub p: usize,
    /// Keep candidates with `res ≤ threshold`; keep all when `None`.
    pub threshold: Option<f64>,
    /// Ridge on `G`; `10⁻¹⁰ · trace(G)/n` when `None`.
    pub eps_g: Option<f64>,
    pub eps_psi: f64,
    /// Cap on the number of eigenvectors of `G` spanning the search space.
    pub basis_rank: Option<usize>,
}

impl SpectralOptions {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            threshold: None,
            eps_g: None,
            eps_psi: DEFAULT_EPS_PSI,
            basis_rank: None,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = Some(threshold);
        self
    }

    pub fn with_basis_rank(mut self, rank: usize) -> Self {
        self.basis_rank = Some(rank);
        self
    }

    pub fn with_eps_psi(mut self, eps_psi: f64) -> Self {
        self.eps_psi = eps_psi;
        self
    }

    pub fn with_eps_g(mut self, eps_g: f64) -> Self {
        self.eps_g = Some(eps_g);
        self
    }
}

/// Retained candidates `(λ_j, ψ̂_j, res_j)` with a factored projection matrix.
pub struct SpectralModel {
    kernel: RadialKernel,
    points: Points,
    lambdas: Vec<Complex64>,
    residuals: Vec<f64>,
    v: Mat<Complex64>,
    gv: Mat<Complex64>,
    eps_psi: f64,
    basis_rank: usize,
    psi: Option<HermitianSolver<Complex64>>,
    /// Candidate `p-1-j` is the exact conjugate of candidate `j`.
    paired: bool,
}

impl std::fmt::Debug for SpectralModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralModel")
            .field("kernel", &self.kernel)
            .field("points", &self.points.len())
            .field("candidates", &self.lambdas.len())
            .field("eps_psi", &self.eps_psi)
            .finish()
    }
}

fn angle_of(l: Complex64) -> f64 {
    l.arg().rem_euclid(2.0 * PI)
}

impl SpectralModel {
    fn assemble(
        kernel: RadialKernel,
        points: Points,
        mut cands: Vec<(Complex64, f64, Vec<Complex64>)>,
        g: MatRef<'_, f64>,
        eps_psi: f64,
        basis_rank: usize,
    ) -> Result<Self> {
        let n = points.len();
        if !(eps_psi >= 0.0 && eps_psi.is_finite()) {
            return Err(Error::arg(format!("ε_Ψ must be finite and non-negative, got {eps_psi}")));
        }
        if let Some(bad) = cands.iter().find(|c| c.2.len() != n) {
            return Err(Error::arg(format!(
                "coefficient vector of length {} for {n} points",
                bad.2.len()
            )));
        }
        cands.sort_by(|a, b| angle_of(a.0).total_cmp(&angle_of(b.0)));
        let p = cands.len();
        let v = Mat::from_fn(n, p, |i, j| cands[j].2[i]);
        let (vr, vi) = crate::linalg::split_complex(v.as_ref());
        let gv = complexify((g * &vr).as_ref(), (g * &vi).as_ref());
        let mut model = Self {
            kernel,
            points,
            lambdas: cands.iter().map(|c| c.0).collect(),
            residuals: cands.iter().map(|c| c.1).collect(),
            v,
            gv,
            eps_psi,
            basis_rank,
            psi: None,
            paired: false,
        };
        model.paired = model.conjugate_paired();
        model.factor()?;
        Ok(model)
    }

    fn conjugate_paired(&self) -> bool {
        let p = self.lambdas.len();
        (0..p).all(|j| {
            let q = p - 1 - j;
            (self.lambdas[q] - self.lambdas[j].conj()).norm() <= 1e-12
                && (0..self.v.nrows()).all(|i| self.v[(i, q)] == self.v[(i, j)].conj())
        })
    }

    fn factor(&mut self) -> Result<()> {
        let p = self.lambdas.len();
        if p == 0 {
            self.psi = None;
            return Ok(());
        }
        let mut psi = self.v.adjoint() * &self.gv;
        for j in 0..p {
            psi[(j, j)] += self.eps_psi;
        }
        self.psi = Some(HermitianSolver::new(psi, "eigenfunction projection")?);
        Ok(())
    }

    /// Builds a model from explicit candidates on `points`.
    pub fn from_parts(
        kernel: &RadialKernel,
        points: &Points,
        lambdas: &[Complex64],
        residuals: &[f64],
        v: &[Vec<Complex64>],
        eps_psi: f64,
    ) -> Result<Self> {
        if lambdas.len() != residuals.len() || lambdas.len() != v.len() {
            return Err(Error::arg("candidate, residual and coefficient counts differ"));
        }
        let g = gram_symmetric(kernel, points)?;
        let cands = lambdas
            .iter()
            .zip(residuals)
            .zip(v)
            .map(|((&l, &r), v)| (l, r, v.clone()))
            .collect();
        Self::assemble(*kernel, points.clone(), cands, g.as_ref(), eps_psi, points.len())
    }

    pub fn kernel(&self) -> &RadialKernel {
        &self.kernel
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambdas(&self) -> &[Complex64] {
        &self.lambdas
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// Coefficients `v_j` as columns.
    pub fn coefficients(&self) -> MatRef<'_, Complex64> {
        self.v.as_ref()
    }

    pub fn eps_psi(&self) -> f64 {
        self.eps_psi
    }

    /// Size of the basis the candidates were solved on.
    pub fn basis_rank(&self) -> usize {
        self.basis_rank
    }

    /// `v_j* G v_j` for each candidate.
    pub fn gram_norms(&self) -> Vec<f64> {
        (0..self.len())
            .map(|j| {
                (0..self.points.len())
                    .map(|i| (self.v[(i, j)].conj() * self.gv[(i, j)]).re)
                    .sum()
            })
            .collect()
    }

    /// Candidates with `res ≤ threshold`.
    pub fn retain_below(&self, threshold: f64) -> Result<Self> {
        let keep: Vec<usize> = (0..self.len()).filter(|&j| self.residuals[j] <= threshold).collect();
        let n = self.points.len();
        let mut model = Self {
            kernel: self.kernel,
            points: self.points.clone(),
            lambdas: keep.iter().map(|&j| self.lambdas[j]).collect(),
            residuals: keep.iter().map(|&j| self.residuals[j]).collect(),
            v: Mat::from_fn(n, keep.len(), |i, c| self.v[(i, keep[c])]),
            gv: Mat::from_fn(n, keep.len(), |i, c| self.gv[(i, keep[c])]),
            eps_psi: self.eps_psi,
            basis_rank: self.basis_rank,
            psi: None,
            paired: false,
        };
        model.paired = model.conjugate_paired();
        model.factor()?;
        Ok(model)
    }

    fn solver(&self) -> Result<&HermitianSolver<Complex64>> {
        self.psi
            .as_ref()
            .ok_or_else(|| Error::Precondition("spectral model has no retained candidates".into()))
    }

    /// `ψ̂_j(x) = Σ_i v_{j,i} κ(x_i, x)` for every candidate.
    pub fn eigenfunction_values(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        let k = self.kernel.section(&self.points, x)?;
        Ok((0..self.len())
            .map(|j| (0..k.len()).map(|i| self.v[(i, j)] * k[i]).sum())
            .collect())
    }

    /// `(V*GV + ε_Ψ I)⁻¹ V* K` for the columns of `k` (kernel sections).
    fn project(&self, k: MatRef<'_, f64>) -> Result<Mat<Complex64>> {
        let solver = self.solver()?;
        let (vr, vi) = crate::linalg::split_complex(self.v.as_ref());
        let re = vr.transpose() * k;
        let im = (vi.transpose() * k) * faer::Scale(-1.0);
        let mut c = solver.solve(complexify(re.as_ref(), im.as_ref()).as_ref())?;
        if self.paired {
            // For real queries the exact coefficients satisfy c̃_{p-1-j} = conj(c̃_j); restore
            // the symmetry that rounding in the (often ill-conditioned) solve breaks.
            let p = c.nrows();
            for q in 0..c.ncols() {
                for j in 0..p.div_ceil(2) {
                    let (a, b) = (c[(j, q)], c[(p - 1 - j, q)]);
                    let mean = (a + b.conj()) * 0.5;
                    c[(j, q)] = mean;
                    c[(p - 1 - j, q)] = mean.conj();
                }
            }
        }
        Ok(c)
    }

    /// Least-squares coefficients of `κ(x, ·)` on the retained eigenfunctions.
    pub fn decompose(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        let k = self.kernel.section(&self.points, x)?;
        let k = Mat::from_fn(k.len(), 1, |i, _| k[i]);
        let c = self.project(k.as_ref())?;
        Ok((0..c.nrows()).map(|j| c[(j, 0)]).collect())
    }

    /// Coefficients for many queries; column `q` belongs to `queries.row(q)`.
    pub fn decompose_batch(&self, queries: &Points) -> Result<Mat<Complex64>> {
        self.solver()?;
        let mut out = Mat::<Complex64>::zeros(self.len(), queries.len());
        for start in (0..queries.len()).step_by(QUERY_CHUNK) {
            let end = (start + QUERY_CHUNK).min(queries.len());
            let idx: Vec<usize> = (start..end).collect();
            let k = gram(&self.kernel, &self.points, &queries.select(&idx))?;
            let c = self.project(k.as_ref())?;
            out.subcols_mut(start, end - start).copy_from(&c);
        }
        Ok(out)
    }

    /// `‖κ(x, ·) − Σ_j c̃_j ψ̂_j‖` in the RKHS norm.
    pub fn reconstruction_error(&self, x: &[f64]) -> Result<f64> {
        let c = self.decompose(x)?;
        let k = self.kernel.section(&self.points, x)?;
        let kxx = self.kernel.eval(x, x)?;
        let p = self.len();
        let b: Vec<Complex64> = (0..p)
            .map(|j| (0..k.len()).map(|i| self.v[(i, j)].conj() * k[i]).sum())
            .collect();
        let cross: Complex64 = c.iter().zip(&b).map(|(c, b)| c.conj() * b).sum();
        let mut quad = Complex64::new(0.0, 0.0);
        for j in 0..p {
            let mut col = Complex64::new(0.0, 0.0);
            for l in 0..p {
                let psi_jl: Complex64 = (0..k.len()).map(|i| self.v[(i, j)].conj() * self.gv[(i, l)]).sum();
                col += psi_jl * c[l];
            }
            quad += c[j].conj() * col;
        }
        Ok((kxx - 2.0 * cross.re + quad.re).max(0.0).sqrt())
    }
}

/// Solves the whole grid and keeps the candidates allowed by `options.threshold`.
pub fn fit_spectral_model(
    snapshots: &SnapshotSet,
    kernel: &RadialKernel,
    options: &SpectralOptions,
) -> Result<SpectralModel> {
    let matrices = build_snapshot_matrices(snapshots, kernel)?;
    fit_spectral_model_from_matrices(snapshots.successors(), &matrices, kernel, options)
}

pub fn fit_spectral_model_from_matrices(
    points: &Points,
    matrices: &SnapshotMatrices,
    kernel: &RadialKernel,
    options: &SpectralOptions,
) -> Result<SpectralModel> {
    if matrices.len() != points.len() {
        return Err(Error::arg("snapshot matrices do not match the points"));
    }
    let eps_g = options.eps_g.unwrap_or_else(|| matrices.default_eps_g());
    let problem = ReducedProblem::new(matrices, eps_g, options.basis_rank)?;
    fit_spectral_model_reduced(points, matrices, &problem, kernel, options)
}

/// As [`fit_spectral_model_from_matrices`] with a prebuilt reduced problem; `options.eps_g`
/// and `options.basis_rank` are ignored in favour of the problem's own.
pub fn fit_spectral_model_reduced(
    points: &Points,
    matrices: &SnapshotMatrices,
    problem: &ReducedProblem,
    kernel: &RadialKernel,
    options: &SpectralOptions,
) -> Result<SpectralModel> {
    if matrices.len() != points.len() || problem.w.nrows() != points.len() {
        return Err(Error::arg("snapshot matrices do not match the points"));
    }
    let grid = candidate_grid(options.p)?;
    let solutions = problem.solve_grid(&grid)?;
    let cands = solutions
        .into_iter()
        .filter(|s| options.threshold.is_none_or(|t| s.residual <= t))
        .map(|s| (s.lambda, s.residual, s.v))
        .collect();
    SpectralModel::assemble(
        *kernel,
        points.clone(),
        cands,
        matrices.g.as_ref(),
        options.eps_psi,
        problem.rank(),
    )
}

/// Precomputed pieces of the spectral injection for a fixed model and output.
pub struct SpectralInjector<'a> {
    model: &'a SpectralModel,
    /// `s_{k,j} λ-sums times v_jᵀ G c^h`, row-major `m × p`.
    factors: Vec<Vec<Complex64>>,
}

impl<'a> SpectralInjector<'a> {
    pub fn new(model: &'a SpectralModel, h: &InterpolantModel, params: &DeepKklParams) -> Result<Self> {
        if h.centers() != model.points() {
            return Err(Error::arg("output interpolant and spectral model use different points"));
        }
        if h.kernel() != model.kernel() {
            return Err(Error::arg("output interpolant and spectral model use different kernels"));
        }
        model.solver()?;
        let ch = h.coefficients();
        let weights = InjectionWeights::new(*params);
        let factors = (0..params.m())
            .map(|k| {
                let w = weights.row(k);
                (0..model.len())
                    .map(|j| {
                        let theta = model.lambdas[j].arg();
                        let s: Complex64 = w
                            .iter()
                            .enumerate()
                            .map(|(t, &wt)| Complex64::from_polar(wt, theta * (k + t + 1) as f64))
                            .sum();
                        let q: Complex64 = (0..ch.len()).map(|i| model.gv[(i, j)] * ch[i]).sum();
                        s * q
                    })
                    .collect()
            })
            .collect();
        Ok(Self { model, factors })
    }

    fn combine(&self, c: impl Fn(usize) -> Complex64) -> Result<Vec<f64>> {
        let z: Vec<Complex64> = self
            .factors
            .iter()
            .map(|row| row.iter().enumerate().map(|(j, f)| c(j) * f).sum())
            .collect();
        let norm = z.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let imag = z.iter().map(|v| v.im * v.im).sum::<f64>().sqrt();
        if !(imag <= IMAGINARY_TOL * norm) {
            return Err(Error::Numeric(format!(
                "spectral injection has imaginary part {imag:e} against magnitude {norm:e}"
            )));
        }
        Ok(z.iter().map(|v| v.re).collect())
    }

    pub fn inject(&self, x: &[f64]) -> Result<Vec<f64>> {
        let c = self.model.decompose(x)?;
        self.combine(|j| c[j])
    }

    /// Injections at every row of `queries`.
    pub fn inject_batch(&self, queries: &Points) -> Result<Points> {
        let c = self.model.decompose_batch(queries)?;
        let rows = (0..queries.len())
            .into_par_iter()
            .map(|q| self.combine(|j| c[(j, q)]))
            .collect::<Result<Vec<_>>>()?;
        Points::from_rows(&rows)
    }
}

/// `z̃_k(x) = Σ_t w_{k,t} Σ_j c̃_j λ_j^{k+t+1} v_jᵀ G c^h`, real part.
pub fn spectral_injection(
    x: &[f64],
    model: &SpectralModel,
    h: &InterpolantModel,
    params: &DeepKklParams,
) -> Result<Vec<f64>> {
    SpectralInjector::new(model, h, params)?.inject(x)
}

/// Writes `(candidate_id, angle, re, im, residual)` rows and a
/// `(candidate_id, point_id, re, im)` coefficient table.
pub fn write_spectral_csv(
    model: &SpectralModel,
    candidates: impl AsRef<Path>,
    coefficients: impl AsRef<Path>,
) -> Result<()> {
    let header: Vec<String> = ["candidate_id", "angle", "re", "im", "residual"]
        .map(String::from)
        .to_vec();
    let rows = (0..model.len()).map(|j| {
        let l = model.lambdas[j];
        vec![
            j.to_string(),
            fmt_f64(angle_of(l)),
            fmt_f64(l.re),
            fmt_f64(l.im),
            fmt_f64(model.residuals[j]),
        ]
    });
    write_rows(candidates.as_ref(), &header, rows)?;
    let header: Vec<String> = ["candidate_id", "point_id", "re", "im"].map(String::from).to_vec();
    let n = model.points.len();
    let rows = (0..model.len()).flat_map(|j| {
        (0..n).map(move |i| {
            let c = model.v[(i, j)];
            vec![j.to_string(), i.to_string(), fmt_f64(c.re), fmt_f64(c.im)]
        })
    });
    write_rows(coefficients.as_ref(), &header, rows)
}

/// Candidates read back from [`write_spectral_csv`] output.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralParts {
    pub lambdas: Vec<Complex64>,
    pub residuals: Vec<f64>,
    pub v: Vec<Vec<Complex64>>,
}

pub fn read_spectral_csv(candidates: impl AsRef<Path>, coefficients: impl AsRef<Path>) -> Result<SpectralParts> {
    let cpath = candidates.as_ref();
    let table = read_table(cpath)?;
    let mut lambdas = Vec::new();
    let mut residuals = Vec::new();
    for (line, r) in &table.rows {
        if r.len() != 5 || r[0] != lambdas.len() as f64 {
            return Err(Error::Parse {
                path: cpath.into(),
                line: *line,
                message: format!("expected candidate {} with 5 fields", lambdas.len()),
            });
        }
        lambdas.push(Complex64::new(r[2], r[3]));
        residuals.push(r[4]);
    }
    let vpath = coefficients.as_ref();
    let table = read_table(vpath)?;
    let mut v: Vec<Vec<Complex64>> = vec![Vec::new(); lambdas.len()];
    for (line, r) in &table.rows {
        let bad = |message: String| Error::Parse {
            path: vpath.into(),
            line: *line,
            message,
        };
        if r.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", r.len())));
        }
        let j = r[0] as usize;
        if r[0] < 0.0 || r[0].fract() != 0.0 || j >= v.len() || r[1] != v[j].len() as f64 {
            return Err(bad(format!("unexpected candidate/point index ({}, {})", r[0], r[1])));
        }
        v[j].push(Complex64::new(r[2], r[3]));
    }
    if let Some(n) = v.first().map(Vec::len) {
        if v.iter().any(|c| c.len() != n) {
            return Err(Error::Parse {
                path: vpath.into(),
                line: 0,
                message: "candidates have different numbers of coefficients".into(),
            });
        }
    }
    Ok(SpectralParts { lambdas, residuals, v })
}
