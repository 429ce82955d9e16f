//! Radial kernels whose native spaces are Sobolev-Hilbert spaces, and Gram assembly.
//!
//! Every kernel is `κ(x, x') = ρ(‖x − x'‖ / σ)` for a univariate profile `ρ` with
//! `ρ(0) = 1`. Wendland profiles are the compactly supported piecewise polynomials
//! `I^k (1 − r)_+^ℓ` with `ℓ = ⌊d/2⌋ + k + 1` and `Iφ(r) = ∫_r^∞ s φ(s) ds`, stored in
//! closed form for `k ≤ 3`.

use std::fmt;

use faer::Mat;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::points::{sq_dist, Points};

/// Highest Wendland smoothness index with a closed-form profile.
pub const MAX_WENDLAND_K: u32 = 3;

/// Closed-form Wendland profile `ρ_{d,k}` normalised to `ρ(0) = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WendlandProfile {
    dim: usize,
    k: u32,
    ell: u32,
}

impl WendlandProfile {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// Exponent of the truncated power `(1 − r)_+^ℓ` the profile is built from.
    pub fn ell(&self) -> u32 {
        self.ell
    }

    /// Exponent of the leading `(1 − r)` factor of the closed form, `ℓ + k`.
    pub fn support_power(&self) -> u32 {
        self.ell + self.k
    }

    /// Evaluates the profile at the scaled radius `r ≥ 0`.
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        let l = self.ell as f64;
        let base = (1.0 - r).powi(self.support_power() as i32);
        let poly = match self.k {
            0 => 1.0,
            1 => (l + 1.0) * r + 1.0,
            2 => ((l * l + 4.0 * l + 3.0) * r * r + (3.0 * l + 6.0) * r + 3.0) / 3.0,
            _ => {
                ((l * l * l + 9.0 * l * l + 23.0 * l + 15.0) * r * r * r
                    + (6.0 * l * l + 36.0 * l + 45.0) * r * r
                    + (15.0 * l + 45.0) * r
                    + 15.0)
                    / 15.0
            }
        };
        base * poly
    }
}

/// Builds the Wendland profile for ambient dimension `dim` and smoothness `k`.
pub fn wendland_profile(dim: usize, k: u32) -> Result<WendlandProfile> {
    if dim == 0 {
        return Err(Error::arg("Wendland kernel needs a positive dimension"));
    }
    if k > MAX_WENDLAND_K {
        return Err(Error::Unsupported(format!(
            "Wendland smoothness k = {k}; closed forms exist for k <= {MAX_WENDLAND_K}"
        )));
    }
    let ell = (dim / 2) as u32 + k + 1;
    Ok(WendlandProfile { dim, k, ell })
}

/// Half-integer Matérn orders with elementary closed forms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaternOrder {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternOrder {
    pub fn nu(self) -> f64 {
        match self {
            MaternOrder::Half => 0.5,
            MaternOrder::ThreeHalves => 1.5,
            MaternOrder::FiveHalves => 2.5,
        }
    }

    pub fn from_nu(nu: f64) -> Result<Self> {
        match nu {
            x if x == 0.5 => Ok(MaternOrder::Half),
            x if x == 1.5 => Ok(MaternOrder::ThreeHalves),
            x if x == 2.5 => Ok(MaternOrder::FiveHalves),
            _ => Err(Error::Unsupported(format!(
                "Matérn order nu = {nu}; supported orders are 1/2, 3/2, 5/2"
            ))),
        }
    }

    #[inline]
    fn eval(self, r: f64) -> f64 {
        match self {
            MaternOrder::Half => (-r).exp(),
            MaternOrder::ThreeHalves => {
                let s = 3f64.sqrt() * r;
                (1.0 + s) * (-s).exp()
            }
            MaternOrder::FiveHalves => {
                let s = 5f64.sqrt() * r;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelFamily {
    Wendland(WendlandProfile),
    Matern(MaternOrder),
    Gaussian,
}

/// A positive-definite radial kernel with bandwidth `σ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialKernel {
    family: KernelFamily,
    sigma: f64,
}

impl RadialKernel {
    pub fn new(family: KernelFamily, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::arg(format!("kernel bandwidth must be positive, got {sigma}")));
        }
        Ok(Self { family, sigma })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, sigma)
    }

    pub fn wendland(dim: usize, k: u32, sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Wendland(wendland_profile(dim, k)?), sigma)
    }

    pub fn matern(nu: f64, sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern(MaternOrder::from_nu(nu)?), sigma)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Same family with a different bandwidth.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.family, sigma)
    }

    /// Profile value at an unscaled distance.
    #[inline]
    pub fn profile_at_distance(&self, dist: f64) -> f64 {
        let r = dist / self.sigma;
        match self.family {
            KernelFamily::Wendland(w) => w.eval(r),
            KernelFamily::Matern(m) => m.eval(r),
            KernelFamily::Gaussian => (-r * r).exp(),
        }
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2 = sq_dist(x, y);
        match self.family {
            KernelFamily::Gaussian => (-d2 / (self.sigma * self.sigma)).exp(),
            _ => self.profile_at_distance(d2.sqrt()),
        }
    }

    /// Checks that points of dimension `dim` are admissible inputs.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if let KernelFamily::Wendland(w) = self.family {
            if w.dim() != dim {
                return Err(Error::arg(format!(
                    "Wendland kernel declared for dimension {} applied to dimension {dim}",
                    w.dim()
                )));
            }
        }
        Ok(())
    }

    /// `κ(x, x')`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::arg(format!(
                "kernel arguments have dimensions {} and {}",
                x.len(),
                y.len()
            )));
        }
        self.check_dim(x.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Kernel section `(κ(p_i, x))_i` over a point set.
    pub fn section(&self, points: &Points, x: &[f64]) -> Result<Vec<f64>> {
        if points.dim() != x.len() {
            return Err(Error::arg(format!(
                "query of dimension {} against points of dimension {}",
                x.len(),
                points.dim()
            )));
        }
        self.check_dim(x.len())?;
        Ok(points.iter().map(|p| self.eval_unchecked(p, x)).collect())
    }
}

impl fmt::Display for RadialKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            KernelFamily::Wendland(w) => write!(
                f,
                "wendland dim={} k={} sigma={}",
                w.dim(),
                w.k(),
                self.sigma
            ),
            KernelFamily::Matern(m) => write!(f, "matern nu={} sigma={}", m.nu(), self.sigma),
            KernelFamily::Gaussian => write!(f, "gaussian sigma={}", self.sigma),
        }
    }
}

impl std::str::FromStr for RadialKernel {
    type Err = Error;

    /// Parses the `Display` form, e.g. `wendland dim=3 k=1 sigma=10`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let family = parts
            .next()
            .ok_or_else(|| Error::arg("empty kernel specification"))?;
        let mut dim = None;
        let mut k = None;
        let mut nu = None;
        let mut sigma = None;
        for kv in parts {
            let (key, val) = kv
                .split_once('=')
                .ok_or_else(|| Error::arg(format!("expected key=value in kernel spec, got {kv:?}")))?;
            let num: f64 = val
                .parse()
                .map_err(|_| Error::arg(format!("bad number {val:?} for kernel key {key}")))?;
            match key {
                "dim" => dim = Some(num as usize),
                "k" => k = Some(num as u32),
                "nu" => nu = Some(num),
                "sigma" => sigma = Some(num),
                _ => return Err(Error::arg(format!("unknown kernel key {key:?}"))),
            }
        }
        let sigma = sigma.ok_or_else(|| Error::arg("kernel spec lacks sigma"))?;
        match family {
            "gaussian" => RadialKernel::gaussian(sigma),
            "matern" => RadialKernel::matern(
                nu.ok_or_else(|| Error::arg("matern kernel spec lacks nu"))?,
                sigma,
            ),
            "wendland" => RadialKernel::wendland(
                dim.ok_or_else(|| Error::arg("wendland kernel spec lacks dim"))?,
                k.ok_or_else(|| Error::arg("wendland kernel spec lacks k"))?,
                sigma,
            ),
            other => Err(Error::arg(format!("unknown kernel family {other:?}"))),
        }
    }
}

fn check_sets(kernel: &RadialKernel, a: &Points, b: &Points) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("Gram assembly needs non-empty point sets"));
    }
    if a.dim() != b.dim() {
        return Err(Error::arg(format!(
            "point sets have dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    kernel.check_dim(a.dim())
}

/// Cross Gram matrix `K[i, j] = κ(a_i, b_j)`.
pub fn gram(kernel: &RadialKernel, a: &Points, b: &Points) -> Result<Mat<f64>> {
    check_sets(kernel, a, b)?;
    let mut out = Mat::<f64>::zeros(a.len(), b.len());
    out.par_col_iter_mut().enumerate().for_each(|(j, mut col)| {
        let bj = b.row(j);
        for i in 0..a.len() {
            col[i] = kernel.eval_unchecked(a.row(i), bj);
        }
    });
    Ok(out)
}

/// Self Gram matrix, bitwise symmetric: the lower triangle is computed and mirrored.
pub fn gram_symmetric(kernel: &RadialKernel, a: &Points) -> Result<Mat<f64>> {
    check_sets(kernel, a, a)?;
    let n = a.len();
    let mut out = Mat::<f64>::zeros(n, n);
    out.par_col_iter_mut().enumerate().for_each(|(j, mut col)| {
        let aj = a.row(j);
        for i in j..n {
            col[i] = kernel.eval_unchecked(a.row(i), aj);
        }
    });
    for j in 0..n {
        for i in 0..j {
            out[(i, j)] = out[(j, i)];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use faer::Side;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
    fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for j in 2..=n {
                    let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    }

    /// `I^k (1-r)_+^ell` at `r` by nested quadrature. Every integrand is a polynomial
    /// on `[r, 1]` of degree < 32, so 16-point Gauss-Legendre is exact.
    fn integral_operator(k: u32, ell: u32, r: f64, rule: &[(f64, f64)]) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        if k == 0 {
            return (1.0 - r).powi(ell as i32);
        }
        let half = 0.5 * (1.0 - r);
        let mid = 0.5 * (1.0 + r);
        rule.iter()
            .map(|&(t, w)| {
                let s = mid + half * t;
                w * half * s * integral_operator(k - 1, ell, s, rule)
            })
            .sum()
    }

    #[test]
    fn wendland_closed_form_matches_quadrature_oracle() {
        let rule = gauss_legendre(16);
        for dim in 1..=5 {
            for k in 0..=3 {
                let w = wendland_profile(dim, k).unwrap();
                let norm = integral_operator(k, w.ell(), 0.0, &rule);
                for i in 0..100 {
                    let r = i as f64 / 99.0;
                    let oracle = integral_operator(k, w.ell(), r, &rule) / norm;
                    assert!(
                        (w.eval(r) - oracle).abs() <= 1e-8,
                        "dim={dim} k={k} r={r}: {} vs {oracle}",
                        w.eval(r)
                    );
                }
            }
        }
    }

    #[test]
    fn wendland_examples() {
        let w30 = wendland_profile(3, 0).unwrap();
        let w31 = wendland_profile(3, 1).unwrap();
        let w10 = wendland_profile(1, 0).unwrap();
        for r in [0.0, 0.1, 0.5, 0.9] {
            assert_relative_eq!(w30.eval(r), (1.0 - r).powi(2), epsilon = 1e-15);
            assert_relative_eq!(w31.eval(r), (1.0 - r).powi(4) * (4.0 * r + 1.0), epsilon = 1e-15);
            assert_relative_eq!(w10.eval(r), 1.0 - r, epsilon = 1e-15);
        }
        assert!(matches!(wendland_profile(3, 4), Err(Error::Unsupported(_))));
    }

    #[test]
    fn eval_examples() {
        let k = RadialKernel::wendland(3, 1, 1.0).unwrap();
        let x = [0.3, -1.0, 2.0];
        assert_eq!(k.eval(&x, &x).unwrap(), 1.0);
        assert_eq!(k.eval(&[0.0, 0.0, 0.0], &[1.5, 0.0, 0.0]).unwrap(), 0.0);
        let half = k.eval(&[0.0, 0.0, 0.0], &[0.0, 0.5, 0.0]).unwrap();
        assert_relative_eq!(half, 0.5f64.powi(4) * 3.0, epsilon = 1e-15);

        let g = RadialKernel::gaussian(10.0).unwrap();
        let v = g.eval(&[0.0, 0.0], &[6.0, 8.0]).unwrap();
        assert_relative_eq!(v, (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(v, 0.367879, epsilon = 1e-6);

        assert!(k.eval(&[0.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(g.eval(&[0.0], &[0.0, 1.0]).is_err());
        assert!(RadialKernel::gaussian(0.0).is_err());
    }

    #[test]
    fn matern_profiles_normalised() {
        for nu in [0.5, 1.5, 2.5] {
            let k = RadialKernel::matern(nu, 2.0).unwrap();
            assert_eq!(k.eval(&[1.0], &[1.0]).unwrap(), 1.0);
            let a = k.eval(&[0.0], &[1.0]).unwrap();
            let b = k.eval(&[0.0], &[2.0]).unwrap();
            assert!(0.0 < b && b < a && a < 1.0);
        }
        assert!(RadialKernel::matern(1.0, 1.0).is_err());
    }

    #[test]
    fn wendland_support_is_exact() {
        let k = RadialKernel::wendland(2, 2, 0.7).unwrap();
        assert_eq!(k.eval(&[0.0, 0.0], &[0.7, 0.0]).unwrap(), 0.0);
        assert!(k.eval(&[0.0, 0.0], &[0.699_999, 0.0]).unwrap() > 0.0);
        assert_eq!(k.eval(&[0.0, 0.0], &[5.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn spec_round_trip() {
        for s in ["wendland dim=3 k=1 sigma=10", "gaussian sigma=0.5", "matern nu=1.5 sigma=2"] {
            let k: RadialKernel = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("cauchy sigma=1".parse::<RadialKernel>().is_err());
    }

    fn min_max_eig(m: &Mat<f64>) -> (f64, f64) {
        let ev = m.self_adjoint_eigenvalues(Side::Lower).unwrap();
        (ev[0], *ev.last().unwrap())
    }

    #[test]
    fn gram_small_cases() {
        let k = RadialKernel::gaussian(1.0).unwrap();
        let one = Points::from_rows(&[[0.2, 0.3]]).unwrap();
        let g = gram_symmetric(&k, &one).unwrap();
        assert_eq!(g[(0, 0)], 1.0);

        let two = Points::from_rows(&[[0.2, 0.3], [0.2, 0.3]]).unwrap();
        let g = gram_symmetric(&k, &two).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(g[(i, j)], 1.0);
            }
        }
        let (lo, hi) = min_max_eig(&g);
        assert!(lo.abs() < 1e-14);
        assert_relative_eq!(hi, 2.0, epsilon = 1e-14);

        let empty = Points::new(2, vec![]).unwrap();
        assert!(gram(&k, &empty, &one).is_err());
        let three = Points::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        assert!(gram(&k, &one, &three).is_err());
    }

    #[test]
    fn gram_random_cube_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..150).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pts = Points::new(3, data).unwrap();
        for kernel in [
            RadialKernel::wendland(3, 1, 2.0).unwrap(),
            RadialKernel::wendland(3, 3, 0.8).unwrap(),
            RadialKernel::gaussian(0.7).unwrap(),
            RadialKernel::matern(0.5, 1.0).unwrap(),
        ] {
            let g = gram_symmetric(&kernel, &pts).unwrap();
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    assert_eq!(g[(i, j)].to_bits(), g[(j, i)].to_bits());
                }
            }
            let (lo, hi) = min_max_eig(&g);
            assert!(lo >= -1e-8 * hi, "{kernel}: λ_min = {lo}, λ_max = {hi}");
            let cross = gram(&kernel, &pts, &pts).unwrap();
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    assert_eq!(cross[(i, j)], g[(i, j)]);
                }
            }
        }
    }

    fn rotation(angles: [f64; 3]) -> [[f64; 3]; 3] {
        let (a, b, c) = (angles[0], angles[1], angles[2]);
        let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
        let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
        let rx = [[1.0, 0.0, 0.0], [0.0, c.cos(), -c.sin()], [0.0, c.sin(), c.cos()]];
        let mul = |p: [[f64; 3]; 3], q: [[f64; 3]; 3]| {
            let mut o = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    o[i][j] = (0..3).map(|l| p[i][l] * q[l][j]).sum();
                }
            }
            o
        };
        mul(mul(rz, ry), rx)
    }

    fn rigid(q: [[f64; 3]; 3], t: [f64; 3], x: [f64; 3]) -> [f64; 3] {
        let mut y = t;
        for i in 0..3 {
            for j in 0..3 {
                y[i] += q[i][j] * x[j];
            }
        }
        y
    }

    proptest! {
        #[test]
        fn eval_is_invariant_under_rigid_motions(
            x in prop::array::uniform3(-2.0f64..2.0),
            y in prop::array::uniform3(-2.0f64..2.0),
            t in prop::array::uniform3(-5.0f64..5.0),
            ang in prop::array::uniform3(0.0f64..6.28),
            sigma in 0.3f64..4.0,
        ) {
            let q = rotation(ang);
            for kernel in [
                RadialKernel::wendland(3, 1, sigma).unwrap(),
                RadialKernel::gaussian(sigma).unwrap(),
                RadialKernel::matern(2.5, sigma).unwrap(),
            ] {
                let a = kernel.eval(&x, &y).unwrap();
                let b = kernel.eval(&rigid(q, t, x), &rigid(q, t, y)).unwrap();
                prop_assert!((a - b).abs() <= 1e-12);
                prop_assert!((a - kernel.eval(&y, &x).unwrap()).abs() == 0.0);
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }

        #[test]
        fn wendland_positive_inside_zero_outside(dist in 0.0f64..3.0, sigma in 0.1f64..2.0) {
            let k = RadialKernel::wendland(3, 2, sigma).unwrap();
            let v = k.eval(&[0.0, 0.0, 0.0], &[dist, 0.0, 0.0]).unwrap();
            if dist >= sigma {
                prop_assert_eq!(v, 0.0);
            } else {
                prop_assert!(v > 0.0);
            }
        }
    }
}
