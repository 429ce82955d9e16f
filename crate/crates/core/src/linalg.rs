//! Dense Hermitian solves shared by the regression and spectral modules.
//!
//! Systems of the form `G + αI` are positive definite in exact arithmetic but lose
//! definiteness numerically for clustered points. Solves try a Cholesky factorisation
//! first and fall back to a Bunch-Kaufman `LBLᵀ` factorisation; one step of iterative
//! refinement is applied either way.

use faer::linalg::cholesky::llt::factor::LltError;
use faer::linalg::solvers::{Lblt, Llt, Solve};
use faer::traits::ComplexField;
use faer::{Mat, MatRef, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative residual above which a fallback solve is rejected.
pub const FALLBACK_RESIDUAL_TOL: f64 = 1e-6;

/// Scalars the solvers are instantiated for.
pub trait Scalar: ComplexField<Real = f64> + Copy + Send + Sync {
    fn modulus(self) -> f64;
    fn conjugate(self) -> Self;
    fn finite(self) -> bool;
}

impl Scalar for f64 {
    #[inline]
    fn modulus(self) -> f64 {
        self.abs()
    }
    #[inline]
    fn conjugate(self) -> Self {
        self
    }
    #[inline]
    fn finite(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for Complex64 {
    #[inline]
    fn modulus(self) -> f64 {
        self.norm()
    }
    #[inline]
    fn conjugate(self) -> Self {
        self.conj()
    }
    #[inline]
    fn finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

pub(crate) enum Factor<T: Scalar> {
    Llt(Llt<T>),
    Lblt(Lblt<T>),
}

/// Factorisation of a Hermitian matrix together with a copy of the matrix for refinement.
pub struct HermitianSolver<T: Scalar> {
    matrix: Mat<T>,
    factor: Factor<T>,
    context: String,
}

impl<T: Scalar> HermitianSolver<T> {
    /// Factors `matrix`, reading only its lower triangle.
    pub fn new(matrix: Mat<T>, context: impl Into<String>) -> Result<Self> {
        Self::factor(matrix, context.into(), true)
    }

    /// Like [`HermitianSolver::new`] but without the indefinite fallback: a failed
    /// Cholesky factorisation is reported as a conditioning error.
    pub fn new_definite(matrix: Mat<T>, context: impl Into<String>) -> Result<Self> {
        Self::factor(matrix, context.into(), false)
    }

    fn factor(mut matrix: Mat<T>, context: String, fallback: bool) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::arg(format!("{context}: matrix is not square")));
        }
        if let Some(bad) = (0..matrix.ncols())
            .flat_map(|j| (0..matrix.nrows()).map(move |i| (i, j)))
            .find(|&(i, j)| !matrix[(i, j)].finite())
        {
            return Err(Error::Numeric(format!(
                "{context}: non-finite matrix entry at {bad:?}"
            )));
        }
        mirror_lower(&mut matrix);
        let factor = match matrix.llt(Side::Lower) {
            Ok(llt) => Factor::Llt(llt),
            Err(_) if fallback => Factor::Lblt(matrix.lblt(Side::Lower)),
            Err(LltError::NonPositivePivot { index }) => {
                return Err(Error::Conditioning {
                    context: format!("{context}, Cholesky pivot {index}"),
                    pivot: 0.0,
                });
            }
        };
        Ok(Self {
            matrix,
            factor,
            context,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> MatRef<'_, T> {
        self.matrix.as_ref()
    }

    pub fn used_fallback(&self) -> bool {
        matches!(self.factor, Factor::Lblt(_))
    }

    /// Smallest pivot modulus of the factorisation: the squared Cholesky diagonal, or the
    /// smallest `B` diagonal entry of the indefinite factorisation.
    pub fn smallest_pivot(&self) -> f64 {
        match &self.factor {
            Factor::Llt(llt) => {
                let l = llt.L();
                (0..l.nrows())
                    .map(|i| l[(i, i)].modulus().powi(2))
                    .fold(f64::INFINITY, f64::min)
            }
            Factor::Lblt(lblt) => {
                let d = lblt.B_diag();
                (0..d.dim())
                    .map(|i| d[i].modulus())
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    fn apply_inverse(&self, rhs: &mut Mat<T>) {
        match &self.factor {
            Factor::Llt(f) => f.solve_in_place(rhs.as_mut()),
            Factor::Lblt(f) => f.solve_in_place(rhs.as_mut()),
        }
    }

    fn full_matrix_times(&self, x: &Mat<T>) -> Mat<T> {
        &self.matrix * x
    }

    /// Solves `M X = B` with one step of iterative refinement.
    pub fn solve(&self, rhs: MatRef<'_, T>) -> Result<Mat<T>> {
        if rhs.nrows() != self.dim() {
            return Err(Error::arg(format!(
                "{}: right-hand side has {} rows, matrix has {}",
                self.context,
                rhs.nrows(),
                self.dim()
            )));
        }
        let mut x = rhs.to_owned();
        self.apply_inverse(&mut x);
        let mut r = rhs.to_owned() - self.full_matrix_times(&x);
        self.apply_inverse(&mut r);
        x += &r;

        let finite = (0..x.ncols()).all(|j| (0..x.nrows()).all(|i| x[(i, j)].finite()));
        if !finite {
            return Err(Error::Conditioning {
                context: self.context.clone(),
                pivot: self.smallest_pivot(),
            });
        }
        if self.used_fallback() {
            let res = rhs.to_owned() - self.full_matrix_times(&x);
            let rel = res.norm_l2() / rhs.norm_l2().max(f64::MIN_POSITIVE);
            if !(rel <= FALLBACK_RESIDUAL_TOL) {
                return Err(Error::Conditioning {
                    context: self.context.clone(),
                    pivot: self.smallest_pivot(),
                });
            }
        }
        Ok(x)
    }
}

/// Copies the lower triangle of a Hermitian matrix into its upper triangle.
pub(crate) fn mirror_lower<T: Scalar>(m: &mut Mat<T>) {
    for j in 0..m.ncols() {
        for i in 0..j {
            m[(i, j)] = m[(j, i)].conjugate();
        }
    }
}

/// `M = re + i·im` as a complex matrix.
pub(crate) fn complexify(re: MatRef<'_, f64>, im: MatRef<'_, f64>) -> Mat<Complex64> {
    Mat::from_fn(re.nrows(), re.ncols(), |i, j| {
        Complex64::new(re[(i, j)], im[(i, j)])
    })
}

/// Real and imaginary parts of a complex matrix.
pub(crate) fn split_complex(m: MatRef<'_, Complex64>) -> (Mat<f64>, Mat<f64>) {
    (
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].re),
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].im),
    )
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
