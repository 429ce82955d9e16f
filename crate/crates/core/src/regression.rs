//! Kernel interpolation, kernel ridge regression and its hyperparameter search.
//!
//! Ridge fits solve `(G + αI) c_k = x_k`, with `α` the literal diagonal shift.

use std::fmt::Write as _;
use std::path::Path;

use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dynamics::io::{create, fmt_f64, write_rows};
use crate::dynamics::stream_rng;
use crate::error::{Error, Result};
use crate::kernels::{gram, gram_symmetric, KernelFamily, RadialKernel};
use crate::linalg::HermitianSolver;
use crate::observer::PseudoInverse;
use crate::points::{sq_dist, Points};

/// Jitter schedule for interpolation, relative to `trace(G)/n`.
pub const JITTER_LEVELS: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

fn mat_from_points(p: &Points) -> Mat<f64> {
    Mat::from_fn(p.len(), p.dim(), |i, j| p.row(i)[j])
}

fn points_from_mat(m: MatRef<'_, f64>) -> Points {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            data.push(m[(i, j)]);
        }
    }
    Points::new(m.ncols().max(1), data).expect("shape is consistent")
}

fn add_diagonal(g: &mut Mat<f64>, shift: f64) {
    for i in 0..g.nrows() {
        g[(i, i)] += shift;
    }
}

/// Kernel expansion `ζ†(z) = Σ_i c_i κ(z̃^(i), z)` fitted by ridge regression.
#[derive(Clone, Debug)]
pub struct PseudoInverseModel {
    kernel: RadialKernel,
    centers: Points,
    /// `n × d_x`; column `k` is `c_k`.
    coefficients: Mat<f64>,
    alpha: f64,
}

impl PseudoInverseModel {
    pub fn kernel(&self) -> &RadialKernel {
        &self.kernel
    }

    pub fn centers(&self) -> &Points {
        &self.centers
    }

    pub fn coefficients(&self) -> MatRef<'_, f64> {
        self.coefficients.as_ref()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        let k = self.kernel.section(&self.centers, z)?;
        let c = &self.coefficients;
        Ok((0..c.ncols())
            .map(|col| (0..c.nrows()).map(|i| c[(i, col)] * k[i]).sum())
            .collect())
    }

    /// Predictions at many inputs, one row per query.
    pub fn predict_batch(&self, queries: &Points) -> Result<Points> {
        if queries.is_empty() {
            return Points::new(self.coefficients.ncols(), Vec::new());
        }
        let k = gram(&self.kernel, queries, &self.centers)?;
        Ok(points_from_mat((&k * &self.coefficients).as_ref()))
    }

    /// `max_k ‖(G + αI) c_k - x_k‖ / ‖x_k‖` against the training targets.
    pub fn normal_equation_residual(&self, targets: &Points) -> Result<f64> {
        let mut g = gram_symmetric(&self.kernel, &self.centers)?;
        add_diagonal(&mut g, self.alpha);
        let x = mat_from_points(targets);
        let r = &g * &self.coefficients - &x;
        Ok((0..x.ncols())
            .map(|k| r.col(k).norm_l2() / x.col(k).norm_l2().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max))
    }

    /// Text format: a `key = value` header, then `[centers]` and `[coefficients]` CSV blocks.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = String::new();
        let (n, m, dx) = (self.centers.len(), self.centers.dim(), self.coefficients.ncols());
        writeln!(s, "kkl-pseudo-inverse 1").unwrap();
        writeln!(s, "kernel = {}", self.kernel).unwrap();
        writeln!(s, "alpha = {}", fmt_f64(self.alpha)).unwrap();
        writeln!(s, "m = {m}\nd_x = {dx}\nn = {n}").unwrap();
        writeln!(s, "[centers]").unwrap();
        writeln!(s, "{}", (1..=m).map(|i| format!("z_{i}")).collect::<Vec<_>>().join(",")).unwrap();
        for r in self.centers.iter() {
            writeln!(s, "{}", r.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",")).unwrap();
        }
        writeln!(s, "[coefficients]").unwrap();
        writeln!(s, "{}", (1..=dx).map(|i| format!("c_{i}")).collect::<Vec<_>>().join(",")).unwrap();
        for i in 0..n {
            let row: Vec<String> = (0..dx).map(|k| fmt_f64(self.coefficients[(i, k)])).collect();
            writeln!(s, "{}", row.join(",")).unwrap();
        }
        use std::io::Write;
        let mut w = create(path)?;
        w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.into(),
            line: line as u64,
            message: msg,
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first().map(|l| l.trim()) != Some("kkl-pseudo-inverse 1") {
            return Err(perr(1, "missing 'kkl-pseudo-inverse 1' header".into()));
        }
        let mut kernel = None;
        let mut alpha = None;
        let (mut m, mut dx, mut n) = (None, None, None);
        let mut idx = 1;
        while idx < lines.len() && !lines[idx].starts_with('[') {
            let line = lines[idx];
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| perr(idx + 1, format!("expected 'key = value', found {line:?}")))?;
            let v = v.trim();
            let num = |v: &str| v.parse::<usize>().map_err(|e| perr(idx + 1, e.to_string()));
            match k.trim() {
                "kernel" => kernel = Some(v.parse::<RadialKernel>().map_err(|e| perr(idx + 1, e.to_string()))?),
                "alpha" => alpha = Some(v.parse::<f64>().map_err(|e| perr(idx + 1, e.to_string()))?),
                "m" => m = Some(num(v)?),
                "d_x" => dx = Some(num(v)?),
                "n" => n = Some(num(v)?),
                other => return Err(perr(idx + 1, format!("unknown key {other:?}"))),
            }
            idx += 1;
        }
        let missing = |what: &str| perr(idx, format!("header lacks {what}"));
        let kernel = kernel.ok_or_else(|| missing("kernel"))?;
        let alpha = alpha.ok_or_else(|| missing("alpha"))?;
        let (m, dx, n) = (
            m.ok_or_else(|| missing("m"))?,
            dx.ok_or_else(|| missing("d_x"))?,
            n.ok_or_else(|| missing("n"))?,
        );
        let mut read_block = |name: &str, width: usize| -> Result<Vec<f64>> {
            if lines.get(idx).map(|l| l.trim()) != Some(name) {
                return Err(perr(idx + 1, format!("expected block {name}")));
            }
            idx += 2; // block marker and column header
            let mut out = Vec::with_capacity(n * width);
            for _ in 0..n {
                let line = lines.get(idx).ok_or_else(|| perr(idx + 1, format!("{name} block is truncated")))?;
                let vals = line
                    .split(',')
                    .map(|f| f.trim().parse::<f64>().map_err(|e| perr(idx + 1, format!("{f:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                if vals.len() != width {
                    return Err(perr(idx + 1, format!("expected {width} fields, found {}", vals.len())));
                }
                out.extend(vals);
                idx += 1;
            }
            Ok(out)
        };
        let centers = Points::new(m, read_block("[centers]", m)?)?;
        let coef = read_block("[coefficients]", dx)?;
        let coefficients = Mat::from_fn(n, dx, |i, k| coef[i * dx + k]);
        Ok(Self {
            kernel,
            centers,
            coefficients,
            alpha,
        })
    }
}

impl PseudoInverse for PseudoInverseModel {
    fn input_dim(&self) -> usize {
        self.centers.dim()
    }

    fn output_dim(&self) -> usize {
        self.coefficients.ncols()
    }

    fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        PseudoInverseModel::predict(self, z)
    }
}

fn check_pairs(a: &Points, b: &Points) -> Result<()> {
    if a.is_empty() {
        return Err(Error::arg("regression needs at least one sample"));
    }
    if a.len() != b.len() {
        return Err(Error::arg(format!("{} inputs but {} targets", a.len(), b.len())));
    }
    Ok(())
}

fn ridge_solve(mut g: Mat<f64>, alpha: f64, targets: MatRef<'_, f64>) -> Result<Mat<f64>> {
    add_diagonal(&mut g, alpha);
    HermitianSolver::new(g, "kernel ridge regression")?.solve(targets)
}

/// Ridge fit `c_k = (G + αI)⁻¹ x_k` of `targets` (one row per center).
pub fn krr_fit(
    centers: &Points,
    targets: &Points,
    kernel: &RadialKernel,
    alpha: f64,
) -> Result<PseudoInverseModel> {
    check_pairs(centers, targets)?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::arg(format!("ridge parameter must be non-negative, got {alpha}")));
    }
    let g = gram_symmetric(kernel, centers)?;
    let coefficients = ridge_solve(g, alpha, mat_from_points(targets).as_ref())?;
    Ok(PseudoInverseModel {
        kernel: *kernel,
        centers: centers.clone(),
        coefficients,
        alpha,
    })
}

pub fn krr_predict(model: &PseudoInverseModel, z: &[f64]) -> Result<Vec<f64>> {
    model.predict(z)
}

/// A factored interpolation matrix `G + jitter·I`, reusable for many right-hand sides.
pub struct InterpolationSolver {
    kernel: RadialKernel,
    centers: Points,
    solver: HermitianSolver<f64>,
    jitter: f64,
}

impl InterpolationSolver {
    pub fn new(kernel: &RadialKernel, centers: &Points) -> Result<Self> {
        let g = gram_symmetric(kernel, centers)?;
        Self::from_gram(kernel, centers, g)
    }

    /// Uses a precomputed self-Gram matrix of `centers`.
    pub fn from_gram(kernel: &RadialKernel, centers: &Points, g: Mat<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::arg("interpolation needs at least one point"));
        }
        if g.nrows() != centers.len() || g.ncols() != centers.len() {
            return Err(Error::arg("Gram matrix does not match the centers"));
        }
        let n = centers.len();
        let scale = (0..n).map(|i| g[(i, i)]).sum::<f64>() / n as f64;
        let mut last = None;
        for level in JITTER_LEVELS {
            let jitter = level * scale;
            let mut m = g.clone();
            add_diagonal(&mut m, jitter);
            match HermitianSolver::new_definite(m, "kernel interpolation") {
                Ok(solver) => {
                    return Ok(Self {
                        kernel: *kernel,
                        centers: centers.clone(),
                        solver,
                        jitter,
                    })
                }
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("jitter schedule is non-empty"))
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn centers(&self) -> &Points {
        &self.centers
    }

    pub fn kernel(&self) -> &RadialKernel {
        &self.kernel
    }

    /// `(G + jitter·I)⁻¹ B`.
    pub fn solve(&self, rhs: MatRef<'_, f64>) -> Result<Mat<f64>> {
        self.solver.solve(rhs)
    }

    pub fn interpolate(&self, values: &[f64]) -> Result<InterpolantModel> {
        if values.len() != self.centers.len() {
            return Err(Error::arg(format!(
                "{} values for {} interpolation points",
                values.len(),
                self.centers.len()
            )));
        }
        let rhs = Mat::from_fn(values.len(), 1, |i, _| values[i]);
        let c = self.solve(rhs.as_ref())?;
        Ok(InterpolantModel {
            kernel: self.kernel,
            centers: self.centers.clone(),
            coefficients: (0..values.len()).map(|i| c[(i, 0)]).collect(),
            jitter: self.jitter,
        })
    }
}

/// Kernel interpolant `ĥ(x) = Σ_i c_i κ(x^(i), x)`.
#[derive(Clone, Debug)]
pub struct InterpolantModel {
    kernel: RadialKernel,
    centers: Points,
    coefficients: Vec<f64>,
    jitter: f64,
}

impl InterpolantModel {
    pub fn kernel(&self) -> &RadialKernel {
        &self.kernel
    }

    pub fn centers(&self) -> &Points {
        &self.centers
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let k = self.kernel.section(&self.centers, x)?;
        Ok(k.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum())
    }

    pub fn predict_batch(&self, queries: &Points) -> Result<Vec<f64>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let k = gram(&self.kernel, queries, &self.centers)?;
        let c = Mat::from_fn(self.coefficients.len(), 1, |i, _| self.coefficients[i]);
        let out = &k * &c;
        Ok((0..queries.len()).map(|i| out[(i, 0)]).collect())
    }
}

/// Interpolates `values` at `points`, adding diagonal jitter only if the plain
/// Cholesky factorisation of `G` fails.
pub fn kernel_interpolate(points: &Points, values: &[f64], kernel: &RadialKernel) -> Result<InterpolantModel> {
    InterpolationSolver::new(kernel, points)?.interpolate(values)
}

/// Per-fold and mean validation error.
#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub fold_mse: Vec<f64>,
    pub mean: f64,
}

/// Seeded shuffle cut into `folds` contiguous blocks.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::arg(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::arg(format!("{n} samples cannot fill {folds} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, 0));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

fn submatrix(g: MatRef<'_, f64>, rows: &[usize], cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| g[(rows[i], cols[j])])
}

/// Validation MSE of every fold for a fixed full Gram matrix.
fn cv_with_gram(g: MatRef<'_, f64>, x: MatRef<'_, f64>, alpha: f64, folds: &[Vec<usize>]) -> Result<Vec<f64>> {
    let n = g.nrows();
    folds
        .par_iter()
        .map(|val| {
            let mut in_val = vec![false; n];
            val.iter().for_each(|&i| in_val[i] = true);
            let train: Vec<usize> = (0..n).filter(|&i| !in_val[i]).collect();
            let xt = Mat::from_fn(train.len(), x.ncols(), |i, k| x[(train[i], k)]);
            let c = ridge_solve(submatrix(g, &train, &train), alpha, xt.as_ref())?;
            let pred = submatrix(g, val, &train) * &c;
            let mut sum = 0.0;
            for (r, &i) in val.iter().enumerate() {
                for k in 0..x.ncols() {
                    let e = pred[(r, k)] - x[(i, k)];
                    sum += e * e;
                }
            }
            Ok(sum / val.len() as f64)
        })
        .collect()
}

/// K-fold cross-validation of the ridge fit; error is the mean squared Euclidean norm.
pub fn cross_validate(
    z: &Points,
    x: &Points,
    kernel: &RadialKernel,
    alpha: f64,
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    check_pairs(z, x)?;
    let assignment = fold_assignment(z.len(), folds, seed)?;
    let g = gram_symmetric(kernel, z)?;
    let fold_mse = cv_with_gram(g.as_ref(), mat_from_points(x).as_ref(), alpha, &assignment)?;
    let mean = fold_mse.iter().sum::<f64>() / fold_mse.len() as f64;
    Ok(CvResult { fold_mse, mean })
}

/// One `(σ, α)` cell of a grid search.
#[derive(Clone, Debug)]
pub struct GridCell {
    pub sigma: f64,
    pub alpha: f64,
    pub outcome: std::result::Result<CvResult, String>,
}

#[derive(Clone, Debug)]
pub struct GridSearchResult {
    /// Sorted by `σ`, then `α`.
    pub cells: Vec<GridCell>,
    pub best_sigma: f64,
    pub best_alpha: f64,
    pub best_mse: f64,
}

impl GridSearchResult {
    pub fn cell(&self, sigma: f64, alpha: f64) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.sigma == sigma && c.alpha == alpha)
    }

    /// Rows `(sigma, alpha, fold, mse)`; `fold = mean` rows carry the average, failed cells
    /// report `nan`, and a final `best` row holds the argmin.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let header: Vec<String> = ["sigma", "alpha", "fold", "mse"].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for c in &self.cells {
            match &c.outcome {
                Ok(cv) => {
                    for (f, e) in cv.fold_mse.iter().enumerate() {
                        rows.push(vec![fmt_f64(c.sigma), fmt_f64(c.alpha), f.to_string(), fmt_f64(*e)]);
                    }
                    rows.push(vec![fmt_f64(c.sigma), fmt_f64(c.alpha), "mean".into(), fmt_f64(cv.mean)]);
                }
                Err(_) => rows.push(vec![fmt_f64(c.sigma), fmt_f64(c.alpha), "mean".into(), "nan".into()]),
            }
        }
        rows.push(vec![
            fmt_f64(self.best_sigma),
            fmt_f64(self.best_alpha),
            "best".into(),
            fmt_f64(self.best_mse),
        ]);
        write_rows(path.as_ref(), &header, rows)
    }
}

/// `{1, 2, 5} × 10^j`, `j = -1..=2`.
pub fn default_sigma_grid() -> Vec<f64> {
    (-1..=2)
        .flat_map(|j| [1.0, 2.0, 5.0].map(|a| a * 10f64.powi(j)))
        .collect()
}

/// `10^j`, `j = -6..=0`.
pub fn default_alpha_grid() -> Vec<f64> {
    (-6..=0).map(|j| 10f64.powi(j)).collect()
}

fn sorted_unique(v: &[f64], what: &str) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::arg(format!("{what} grid is empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::arg(format!("{what} grid contains a non-finite value")));
    }
    let mut out = v.to_vec();
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

/// Cross-validates every `(σ, α)` pair. Failed cells are recorded, not fatal; the argmin
/// breaks ties toward larger `α`, then larger `σ`.
pub fn grid_search(
    z: &Points,
    x: &Points,
    family: KernelFamily,
    sigmas: &[f64],
    alphas: &[f64],
    folds: usize,
    seed: u64,
) -> Result<GridSearchResult> {
    check_pairs(z, x)?;
    let sigmas = sorted_unique(sigmas, "bandwidth")?;
    let alphas = sorted_unique(alphas, "ridge")?;
    let assignment = fold_assignment(z.len(), folds, seed)?;
    let xm = mat_from_points(x);
    let cells: Vec<GridCell> = sigmas
        .iter()
        .flat_map(|&sigma| {
            let prepared = RadialKernel::new(family, sigma).and_then(|k| gram_symmetric(&k, z));
            let xm = &xm;
            let assignment = &assignment;
            let rows: Vec<GridCell> = alphas
                .par_iter()
                .map(|&alpha| {
                    let outcome = match &prepared {
                        Ok(g) => cv_with_gram(g.as_ref(), xm.as_ref(), alpha, assignment)
                            .map(|fold_mse| {
                                let mean = fold_mse.iter().sum::<f64>() / fold_mse.len() as f64;
                                CvResult { fold_mse, mean }
                            })
                            .map_err(|e| e.to_string()),
                        Err(e) => Err(e.to_string()),
                    };
                    GridCell { sigma, alpha, outcome }
                })
                .collect();
            rows
        })
        .collect();

    let mut best: Option<(f64, f64, f64)> = None;
    for c in &cells {
        let Ok(cv) = &c.outcome else { continue };
        if !cv.mean.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some((s, a, e)) => {
                cv.mean < e || (cv.mean == e && (c.alpha > a || (c.alpha == a && c.sigma > s)))
            }
        };
        if better {
            best = Some((c.sigma, c.alpha, cv.mean));
        }
    }
    let (best_sigma, best_alpha, best_mse) =
        best.ok_or_else(|| Error::Numeric("every grid cell failed".into()))?;
    Ok(GridSearchResult {
        cells,
        best_sigma,
        best_alpha,
        best_mse,
    })
}

/// `max_{probe} min_{sample} ‖probe - sample‖`.
pub fn fill_distance(samples: &Points, probes: &Points) -> Result<f64> {
    if samples.is_empty() || probes.is_empty() {
        return Err(Error::arg("fill distance needs non-empty sample and probe sets"));
    }
    if samples.dim() != probes.dim() {
        return Err(Error::arg("sample and probe dimensions differ"));
    }
    let idx: Vec<usize> = (0..probes.len()).collect();
    let worst = idx
        .par_iter()
        .map(|&p| {
            let q = probes.row(p);
            samples.iter().map(|s| sq_dist(s, q)).fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst.sqrt())
}
