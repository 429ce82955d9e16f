//! Reference dynamical systems and their discrete-time maps.
//!
//! A [`DiscreteSystem`] bundles a transition map `f`, an optional inverse `f⁻¹` and a
//! scalar output `h`. Continuous-time fields are turned into maps by fixed-step RK4
//! ([`OdeMap`]); the inverse integrates the time-reversed field with the same step.

mod datasets;
pub mod io;

pub use datasets::{
    generate_long_orbit, generate_orbit_set, generate_snapshots, stream_rng, InitBox, InitialState,
    LongOrbit, OrbitSet, SnapshotSet,
};

use faer::linalg::solvers::Solve;
use faer::Mat;

use crate::error::{Error, Result};

/// Right-hand side `ẋ = F(x)` of an autonomous ODE.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], dx: &mut [f64]);
}

/// Scalar output `h(x) = Σ wᵢ xᵢ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearOutput {
    weights: Vec<f64>,
}

impl LinearOutput {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    /// `h(x) = scale · x[index]` in dimension `dim`.
    pub fn component(dim: usize, index: usize, scale: f64) -> Self {
        let mut weights = vec![0.0; dim];
        weights[index] = scale;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum()
    }
}

/// Discrete-time system `x⁺ = f(x)`, `y = h(x)`.
pub trait DiscreteSystem: Send + Sync {
    fn dim(&self) -> usize;

    fn step(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// `f⁻¹(x)`; systems without an inverse return [`Error::Unsupported`].
    fn step_back(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn has_inverse(&self) -> bool;

    fn output(&self, x: &[f64]) -> f64;

    fn name(&self) -> &str;
}

fn check_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite state {x:?} during {what}")))
    }
}

/// Lorenz field with the classical parameters `(10, 28, 8/3)`.
#[derive(Clone, Copy, Debug)]
pub struct Lorenz {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for Lorenz {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }
}

impl VectorField for Lorenz {
    fn dim(&self) -> usize {
        3
    }

    #[inline]
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        dx[0] = self.sigma * (x[1] - x[0]);
        dx[1] = x[0] * (self.rho - x[2]) - x[1];
        dx[2] = x[0] * x[1] - self.beta * x[2];
    }
}

/// Planar field with an attracting unit circle rotated at angular speed `γ`.
#[derive(Clone, Copy, Debug)]
pub struct LimitCycle {
    pub alpha: f64,
    pub gamma: f64,
}

impl VectorField for LimitCycle {
    fn dim(&self) -> usize {
        2
    }

    #[inline]
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        let radial = self.alpha * (1.0 - x[0] * x[0] - x[1] * x[1]);
        dx[0] = radial * x[0] - self.gamma * x[1];
        dx[1] = radial * x[1] + self.gamma * x[0];
    }
}

/// Vector field defined by a closure.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        (self.f)(x, dx)
    }
}

/// Sampled flow of a vector field: `substeps` classical RK4 steps covering `dt`.
///
/// The inverse integrates the reversed field with the same steps and then solves
/// `f(y) = x` by Newton's method, so `f(f⁻¹(x)) = x` holds to rounding.
pub struct OdeMap<F> {
    field: F,
    dt: f64,
    substeps: usize,
    output: LinearOutput,
    name: String,
}

impl<F: VectorField> OdeMap<F> {
    /// Output defaults to the first state component.
    pub fn new(field: F, dt: f64, substeps: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::arg(format!("sampling time must be positive, got {dt}")));
        }
        if substeps == 0 {
            return Err(Error::arg("at least one integrator substep is required"));
        }
        let output = LinearOutput::component(field.dim(), 0, 1.0);
        Ok(Self {
            field,
            dt,
            substeps,
            output,
            name: "ode".into(),
        })
    }

    pub fn with_output(mut self, output: LinearOutput) -> Self {
        self.output = output;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn field(&self) -> &F {
        &self.field
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    fn integrate(&self, x: &[f64], sign: f64) -> Result<Vec<f64>> {
        if x.len() != self.field.dim() {
            return Err(Error::arg(format!(
                "state of dimension {} for a field of dimension {}",
                x.len(),
                self.field.dim()
            )));
        }
        let d = x.len();
        let h = sign * self.dt / self.substeps as f64;
        let mut state = x.to_vec();
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let mut tmp = vec![0.0; d];
        for _ in 0..self.substeps {
            self.field.eval(&state, &mut k1);
            for i in 0..d {
                tmp[i] = state[i] + 0.5 * h * k1[i];
            }
            self.field.eval(&tmp, &mut k2);
            for i in 0..d {
                tmp[i] = state[i] + 0.5 * h * k2[i];
            }
            self.field.eval(&tmp, &mut k3);
            for i in 0..d {
                tmp[i] = state[i] + h * k3[i];
            }
            self.field.eval(&tmp, &mut k4);
            for i in 0..d {
                state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            check_finite(&state, "RK4 integration")?;
        }
        Ok(state)
    }

    /// Newton polish of `f(y) = x` from `y`, so that `f⁻¹` inverts the discrete map
    /// rather than only the flow.
    fn invert_from(&self, x: &[f64], mut y: Vec<f64>) -> Result<Vec<f64>> {
        let d = x.len();
        let scale = 1.0 + crate::points::norm(x);
        let residual = |y: &[f64]| -> Result<Vec<f64>> {
            let fy = self.integrate(y, 1.0)?;
            Ok(fy.iter().zip(x).map(|(a, b)| a - b).collect())
        };
        let mut r = residual(&y)?;
        for _ in 0..INVERSE_NEWTON_ITERS {
            if crate::points::norm(&r) <= 1e-14 * scale {
                break;
            }
            let mut jac = Mat::<f64>::zeros(d, d);
            for j in 0..d {
                let h = 1e-6 * (1.0 + y[j].abs());
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[j] += h;
                ym[j] -= h;
                let fp = self.integrate(&yp, 1.0)?;
                let fm = self.integrate(&ym, 1.0)?;
                for i in 0..d {
                    jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
                }
            }
            let rhs = Mat::from_fn(d, 1, |i, _| r[i]);
            let delta = jac.partial_piv_lu().solve(&rhs);
            let next: Vec<f64> = (0..d).map(|i| y[i] - delta[(i, 0)]).collect();
            check_finite(&next, "inverse map")?;
            let r_next = residual(&next)?;
            if crate::points::norm(&r_next) >= crate::points::norm(&r) {
                break;
            }
            y = next;
            r = r_next;
        }
        Ok(y)
    }
}

const INVERSE_NEWTON_ITERS: usize = 8;

impl<F: VectorField> DiscreteSystem for OdeMap<F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.integrate(x, 1.0)
    }

    fn step_back(&self, x: &[f64]) -> Result<Vec<f64>> {
        let guess = self.integrate(x, -1.0)?;
        self.invert_from(x, guess)
    }

    fn has_inverse(&self) -> bool {
        true
    }

    fn output(&self, x: &[f64]) -> f64 {
        self.output.eval(x)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Fixed-step RK4 discretisation of a field; output is the first component.
pub fn discretize<F: VectorField>(field: F, dt: f64, substeps: usize) -> Result<OdeMap<F>> {
    OdeMap::new(field, dt, substeps)
}

/// Lorenz system sampled every 0.01 time units with `y = x₂`.
pub fn lorenz_system() -> OdeMap<Lorenz> {
    OdeMap::new(Lorenz::default(), 0.01, 1)
        .expect("static parameters are valid")
        .with_output(LinearOutput::component(3, 1, 1.0))
        .with_name("lorenz")
}

/// Limit-cycle system sampled every time unit (100 RK4 substeps) with `y = 2x₁`.
pub fn limit_cycle_system(alpha: f64, gamma: f64) -> Result<OdeMap<LimitCycle>> {
    if !(alpha > 0.0) {
        return Err(Error::arg(format!("limit-cycle rate must be positive, got {alpha}")));
    }
    Ok(OdeMap::new(LimitCycle { alpha, gamma }, 1.0, 100)?
        .with_output(LinearOutput::component(2, 0, 2.0))
        .with_name("limit-cycle"))
}

/// Exact rotation `θ ↦ θ + γ` of the unit circle, with `y = 2x₁` by default.
#[derive(Clone, Debug)]
pub struct CircleRotation {
    gamma: f64,
    cos: f64,
    sin: f64,
    output: LinearOutput,
}

impl CircleRotation {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            cos: gamma.cos(),
            sin: gamma.sin(),
            output: LinearOutput::component(2, 0, 2.0),
        }
    }

    pub fn with_output(mut self, output: LinearOutput) -> Self {
        self.output = output;
        self
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn rotate(&self, x: &[f64], sin: f64) -> Result<Vec<f64>> {
        if x.len() != 2 {
            return Err(Error::arg(format!("circle state must be planar, got dimension {}", x.len())));
        }
        Ok(vec![self.cos * x[0] - sin * x[1], sin * x[0] + self.cos * x[1]])
    }
}

/// Point `(cos θ, sin θ)` on the unit circle.
pub fn circle_point(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

pub fn circle_rotation(gamma: f64) -> CircleRotation {
    CircleRotation::new(gamma)
}

impl DiscreteSystem for CircleRotation {
    fn dim(&self) -> usize {
        2
    }

    fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.rotate(x, self.sin)
    }

    fn step_back(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.rotate(x, -self.sin)
    }

    fn has_inverse(&self) -> bool {
        true
    }

    fn output(&self, x: &[f64]) -> f64 {
        self.output.eval(x)
    }

    fn name(&self) -> &str {
        "circle"
    }
}

/// `f = id`; every function is invariant.
#[derive(Clone, Debug)]
pub struct Identity {
    dim: usize,
    output: LinearOutput,
}

impl Identity {
    pub fn new(dim: usize, output: LinearOutput) -> Self {
        Self { dim, output }
    }
}

impl DiscreteSystem for Identity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }

    fn step_back(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }

    fn has_inverse(&self) -> bool {
        true
    }

    fn output(&self, x: &[f64]) -> f64 {
        self.output.eval(x)
    }

    fn name(&self) -> &str {
        "identity"
    }
}

/// Iterates `f` for `steps` steps, returning the final state.
pub fn iterate(system: &dyn DiscreteSystem, x: &[f64], steps: usize) -> Result<Vec<f64>> {
    let mut s = x.to_vec();
    for _ in 0..steps {
        s = system.step(&s)?;
    }
    Ok(s)
}
