//! The deep KKL observer.
//!
//! An observer of order `m` with parameter `β` is the cascade of first-order filters
//!
//! ```text
//! z₀⁺ = β z₀ + (1-β) y,    z_k⁺ = β z_k + (1-β) z_{k-1}
//! ```
//!
//! whose injection `ζ` is the series `ζ_k(x) = Σ_t w_{k,t} h(f^{-(k+t+1)}(x))` with
//! negative-binomial weights `w_{k,t} = C(k+t, k) β^t (1-β)^{k+1}`.

use std::path::Path;

use faer::Mat;
use num_complex::Complex64;

use crate::dynamics::io::{fmt_f64, read_table, write_rows};
use crate::error::{Error, Result};
use crate::linalg::CompensatedSum;
use crate::points::Points;

/// Order `m`, filter pole `β ∈ (0, 1)` and truncation length `ℓ ≥ m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeepKklParams {
    m: usize,
    beta: f64,
    ell: usize,
}

impl DeepKklParams {
    pub fn new(m: usize, beta: f64, ell: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::arg("observer order must be positive"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::arg(format!("β must lie in (0, 1), got {beta}")));
        }
        if ell < m {
            return Err(Error::arg(format!(
                "truncation length {ell} is shorter than the observer order {m}"
            )));
        }
        Ok(Self { m, beta, ell })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn with_ell(&self, ell: usize) -> Result<Self> {
        Self::new(self.m, self.beta, ell)
    }

    /// `β̃ = β (1 + (m-1)/(ℓ-m))`; infinite when `ℓ = m > 1`.
    pub fn beta_tilde(&self) -> f64 {
        if self.m == 1 {
            return self.beta;
        }
        if self.ell == self.m {
            return f64::INFINITY;
        }
        self.beta * (1.0 + (self.m - 1) as f64 / (self.ell - self.m) as f64)
    }

    /// Whether the truncation bound applies (`β̃ < 1`).
    pub fn bound_valid(&self) -> bool {
        self.beta_tilde() < 1.0
    }

    /// Smallest `ℓ` with `β̃ < 1` for this `m` and `β`.
    pub fn min_valid_ell(&self) -> usize {
        let threshold = self.m as f64 + (self.m - 1) as f64 / (1.0 / self.beta - 1.0);
        let mut ell = (threshold.floor() as usize + 1).max(self.m + usize::from(self.m > 1));
        // guard against rounding in the closed form
        while !(Self { ell, ..*self }).bound_valid() {
            ell += 1;
        }
        while ell > self.m + 1 && (Self { ell: ell - 1, ..*self }).bound_valid() {
            ell -= 1;
        }
        ell
    }
}

/// The pair `(A_β, b_β)`: `A_β` lower bidiagonal with `β` on the diagonal and `1-β`
/// below it, `b_β = (1-β, 0, …, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObserverMatrices {
    m: usize,
    beta: f64,
}

impl ObserverMatrices {
    pub fn new(params: &DeepKklParams) -> Self {
        Self {
            m: params.m,
            beta: params.beta,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn a(&self) -> Mat<f64> {
        Mat::from_fn(self.m, self.m, |i, j| {
            if i == j {
                self.beta
            } else if i == j + 1 {
                1.0 - self.beta
            } else {
                0.0
            }
        })
    }

    pub fn b(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.m];
        b[0] = 1.0 - self.beta;
        b
    }

    /// `z ← A_β z + b_β y`, in place.
    #[inline]
    pub fn step(&self, z: &mut [f64], y: f64) {
        let (beta, gain) = (self.beta, 1.0 - self.beta);
        let mut prev = y;
        for zk in z.iter_mut() {
            let old = *zk;
            *zk = beta * old + gain * prev;
            prev = old;
        }
    }
}

pub fn build_matrices(params: &DeepKklParams) -> ObserverMatrices {
    ObserverMatrices::new(params)
}

/// `w_{k,t}` for `t = 0..=horizon`.
pub fn series_weights(k: usize, beta: f64, horizon: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(horizon + 1);
    let mut cur = (1.0 - beta).powi(k as i32 + 1);
    for t in 0..=horizon {
        w.push(cur);
        cur *= beta * (k + t + 1) as f64 / (t + 1) as f64;
    }
    w
}

/// Weight table `w_{k,t}`, `k < m`, `t ≤ ℓ - m`, shared across anchors.
#[derive(Clone, Debug)]
pub struct InjectionWeights {
    params: DeepKklParams,
    rows: Vec<Vec<f64>>,
}

impl InjectionWeights {
    pub fn new(params: DeepKklParams) -> Self {
        let horizon = params.ell - params.m;
        let rows = (0..params.m)
            .map(|k| series_weights(k, params.beta, horizon))
            .collect();
        Self { params, rows }
    }

    pub fn params(&self) -> &DeepKklParams {
        &self.params
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    /// `z̃_k = Σ_{t=0}^{ℓ-m} w_{k,t} y_{-(k+t+1)}`, where `history[j] = y_{-(j+1)}`.
    pub fn apply(&self, history: &[f64]) -> Result<Vec<f64>> {
        let ell = self.params.ell;
        if history.len() < ell {
            return Err(Error::arg(format!(
                "history of {} outputs is shorter than ℓ = {ell}",
                history.len()
            )));
        }
        Ok(self
            .rows
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let mut acc = CompensatedSum::default();
                for (t, wt) in w.iter().enumerate() {
                    acc.add(wt * history[k + t]);
                }
                acc.value()
            })
            .collect())
    }
}

/// Truncated injection of one anchor from its backward outputs `y_{-1}, …, y_{-ℓ}`.
pub fn truncated_injection(history: &[f64], params: &DeepKklParams) -> Result<Vec<f64>> {
    InjectionWeights::new(*params).apply(history)
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let lg = |x: usize| libm::lgamma(x as f64 + 1.0);
    lg(n) - lg(k) - lg(n - k)
}

/// Bound `C(ℓ-1, m-1) √m υ_h (1-β)/(1-β̃) β̃ β^{ℓ-m}` on `‖z̃ - ζ(x)‖`, for `sup |h| ≤ υ_h`.
pub fn truncation_bound(params: &DeepKklParams, upsilon: f64) -> Result<f64> {
    if !(upsilon >= 0.0 && upsilon.is_finite()) {
        return Err(Error::arg(format!("output bound must be finite and non-negative, got {upsilon}")));
    }
    let bt = params.beta_tilde();
    if !(bt < 1.0) {
        return Err(Error::Precondition(format!(
            "truncation bound needs β̃ < 1 but β̃ = {bt} for m = {}, β = {}, ℓ = {}; use ℓ ≥ {}",
            params.m,
            params.beta,
            params.ell,
            params.min_valid_ell()
        )));
    }
    if upsilon == 0.0 {
        return Ok(0.0);
    }
    let (m, ell, beta) = (params.m, params.ell, params.beta);
    let log = ln_binomial(ell - 1, m - 1)
        + 0.5 * (m as f64).ln()
        + upsilon.ln()
        + (1.0 - beta).ln()
        - (1.0 - bt).ln()
        + bt.ln()
        + (ell - m) as f64 * beta.ln();
    Ok(log.exp())
}

/// `a = (1-β)/(e^{iγ} - β)`, the per-level factor of the rotation injection.
fn rotation_factor(beta: f64, gamma: f64) -> Complex64 {
    Complex64::new(1.0 - beta, 0.0) / (Complex64::from_polar(1.0, gamma) - beta)
}

/// Exact injection `ζ_k = 2 Re(a^{k+1} e^{iθ})`, `k < m`, of the circle rotation by `γ`
/// observed through `h = 2x₁`.
pub fn analytic_injection_m(theta: f64, beta: f64, gamma: f64, m: usize) -> Vec<f64> {
    let a = rotation_factor(beta, gamma);
    let u = Complex64::from_polar(1.0, theta);
    let mut ak = a;
    (0..m)
        .map(|_| {
            let v = 2.0 * (ak * u).re;
            ak *= a;
            v
        })
        .collect()
}

/// `(ζ₀, ζ₁)` of the circle rotation; see [`analytic_injection_m`].
pub fn analytic_injection(theta: f64, beta: f64, gamma: f64) -> [f64; 2] {
    let v = analytic_injection_m(theta, beta, gamma, 2);
    [v[0], v[1]]
}

/// A left inverse `ζ†: R^m → R^{d_x}` of the injection.
pub trait PseudoInverse: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn predict(&self, z: &[f64]) -> Result<Vec<f64>>;
}

/// Exact `ζ†` for the circle rotation with `m = 2`: solves
/// `[a ā; a² ā²] (u, ū)ᵀ = (ζ₀, ζ₁)ᵀ` for `u = e^{iθ}` and projects onto the circle.
#[derive(Clone, Copy, Debug)]
pub struct AnalyticCircleInverse {
    a: Complex64,
}

impl AnalyticCircleInverse {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        let a = rotation_factor(beta, gamma);
        if a.im.abs() < 1e-14 {
            return Err(Error::Precondition(format!(
                "rotation angle {gamma} makes (ζ₀, ζ₁) non-injective"
            )));
        }
        Ok(Self { a })
    }

    pub fn angle(&self, z: &[f64]) -> f64 {
        let u = self.unnormalised(z);
        u.im.atan2(u.re)
    }

    fn unnormalised(&self, z: &[f64]) -> Complex64 {
        let a = self.a;
        let ab = a.conj();
        let det = a * ab * ab - ab * a * a;
        (ab * ab * z[0] - ab * z[1]) / det
    }
}

impl PseudoInverse for AnalyticCircleInverse {
    fn input_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        2
    }

    fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != 2 {
            return Err(Error::arg(format!("expected a 2-vector, got dimension {}", z.len())));
        }
        let u = self.unnormalised(z);
        let r = u.norm();
        if !(r > 0.0 && r.is_finite()) {
            return Ok(vec![1.0, 0.0]);
        }
        Ok(vec![u.re / r, u.im / r])
    }
}

/// `ζ† ≡ 0`.
#[derive(Clone, Copy, Debug)]
pub struct ZeroModel {
    pub input_dim: usize,
    pub output_dim: usize,
}

impl PseudoInverse for ZeroModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn predict(&self, _z: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.output_dim])
    }
}

/// Filter states `z_t` and estimates `x̂_t = ζ†(z_t)` for `t = 0..T`.
#[derive(Clone, Debug)]
pub struct ObserverTrajectory {
    pub z: Points,
    pub estimates: Points,
}

/// Runs `z_{t+1} = A_β z_t + b_β y_t` from `z_init` (zero when `None`) and decodes each
/// `z_t` with `pseudo_inverse`.
pub fn run_observer(
    matrices: &ObserverMatrices,
    pseudo_inverse: &dyn PseudoInverse,
    outputs: &[f64],
    z_init: Option<&[f64]>,
) -> Result<ObserverTrajectory> {
    let m = matrices.m();
    if pseudo_inverse.input_dim() != m {
        return Err(Error::arg(format!(
            "pseudo-inverse expects {}-vectors but the observer has order {m}",
            pseudo_inverse.input_dim()
        )));
    }
    let mut z = match z_init {
        Some(z0) if z0.len() != m => {
            return Err(Error::arg(format!("initial filter state has dimension {}, expected {m}", z0.len())))
        }
        Some(z0) => z0.to_vec(),
        None => vec![0.0; m],
    };
    let mut zs = Points::with_capacity(m, outputs.len());
    let mut xs = Points::with_capacity(pseudo_inverse.output_dim(), outputs.len());
    for (t, &y) in outputs.iter().enumerate() {
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("observer state became non-finite at t = {t}")));
        }
        zs.push(&z)?;
        xs.push(&pseudo_inverse.predict(&z)?)?;
        matrices.step(&mut z, y);
    }
    Ok(ObserverTrajectory { z: zs, estimates: xs })
}

/// Anchors `x^(i)` paired with their injection values `z̃^(i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionSamples {
    pub states: Points,
    pub injections: Points,
}

impl InjectionSamples {
    pub fn new(states: Points, injections: Points) -> Result<Self> {
        if states.len() != injections.len() {
            return Err(Error::arg(format!(
                "{} states but {} injection values",
                states.len(),
                injections.len()
            )));
        }
        Ok(Self { states, injections })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Rows `(orbit_id, x_1..x_d, z_1..z_m)`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let (d, m) = (self.states.dim(), self.injections.dim());
        let header: Vec<String> = std::iter::once("orbit_id".to_string())
            .chain((1..=d).map(|i| format!("x_{i}")))
            .chain((1..=m).map(|i| format!("z_{i}")))
            .collect();
        let rows = (0..self.len()).map(|i| {
            std::iter::once(i.to_string())
                .chain(self.states.row(i).iter().map(|&v| fmt_f64(v)))
                .chain(self.injections.row(i).iter().map(|&v| fmt_f64(v)))
                .collect()
        });
        write_rows(path.as_ref(), &header, rows)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let table = read_table(path)?;
        let d = table.header.iter().filter(|h| h.starts_with("x_")).count();
        let m = table.header.iter().filter(|h| h.starts_with("z_")).count();
        if d == 0 || m == 0 || table.header.len() != 1 + d + m {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                message: format!("unexpected header {:?}", table.header),
            });
        }
        let mut states = Points::with_capacity(d, table.rows.len());
        let mut inj = Points::with_capacity(m, table.rows.len());
        for (line, r) in &table.rows {
            if r.len() != 1 + d + m {
                return Err(Error::Parse {
                    path: path.into(),
                    line: *line,
                    message: format!("expected {} fields, found {}", 1 + d + m, r.len()),
                });
            }
            states.push(&r[1..=d])?;
            inj.push(&r[1 + d..])?;
        }
        Self::new(states, inj)
    }
}

/// `max |y|` over a sample; a data-based stand-in for `sup |h|`.
pub fn output_sup(outputs: &[f64]) -> f64 {
    outputs.iter().fold(0.0, |acc, y| acc.max(y.abs()))
}
