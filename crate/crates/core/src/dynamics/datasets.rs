use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::DiscreteSystem;
use crate::error::{Error, Result};
use crate::points::Points;

/// Random stream for sample `index` under `seed`; independent of scheduling order.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Axis-aligned box of initial conditions, sampled uniformly.
#[derive(Clone, Debug, PartialEq)]
pub struct InitBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl InitBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::arg("box corners must be non-empty and of equal dimension"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::arg(format!("invalid box {lower:?}..{upper:?}")));
        }
        Ok(Self { lower, upper })
    }

    /// `[-half, half]^dim`.
    pub fn cube(dim: usize, half: f64) -> Result<Self> {
        Self::new(vec![-half; dim], vec![half; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| if l == u { l } else { rng.random_range(l..u) })
            .collect()
    }
}

/// Starting point of a long orbit.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialState {
    Point(Vec<f64>),
    Random(InitBox),
}

fn check_box(system: &dyn DiscreteSystem, init: &InitBox) -> Result<()> {
    if init.dim() != system.dim() {
        return Err(Error::arg(format!(
            "initial box of dimension {} for a system of dimension {}",
            init.dim(),
            system.dim()
        )));
    }
    Ok(())
}

/// Simulates `burn_in` steps, then records `record` further states after the current one
/// (`record + 1` states in total).
fn simulate(
    system: &dyn DiscreteSystem,
    start: Vec<f64>,
    burn_in: usize,
    record: usize,
    out: &mut Vec<f64>,
) -> Result<()> {
    let mut x = start;
    for _ in 0..burn_in {
        x = system.step(&x)?;
    }
    out.extend_from_slice(&x);
    for _ in 0..record {
        x = system.step(&x)?;
        out.extend_from_slice(&x);
    }
    Ok(())
}

fn tag(kind: &str, i: usize, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("{kind} {i}: {msg}")),
        other => other,
    }
}

/// `n` anchors, each with backward history `x^(i,-t)` for `t = 0..=ell`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitSet {
    dim: usize,
    ell: usize,
    /// orbit-major, stored in forward time: entry `s` of orbit `i` is `x^(i, s - ell)`.
    data: Vec<f64>,
}

impl OrbitSet {
    /// Builds a set from forward-time segments of `ell + 1` states each.
    pub fn from_forward_segments(dim: usize, ell: usize, data: Vec<f64>) -> Result<Self> {
        let stride = dim * (ell + 1);
        if dim == 0 || data.is_empty() || data.len() % stride != 0 {
            return Err(Error::arg(format!(
                "orbit buffer of length {} does not split into segments of {} states in dimension {dim}",
                data.len(),
                ell + 1
            )));
        }
        Ok(Self { dim, ell, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.dim * (self.ell + 1))
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn history_len(&self) -> usize {
        self.ell
    }

    /// `x^(i,-t)`.
    pub fn state(&self, i: usize, t: usize) -> &[f64] {
        assert!(t <= self.ell, "history offset {t} beyond {}", self.ell);
        let s = i * (self.ell + 1) + (self.ell - t);
        &self.data[s * self.dim..(s + 1) * self.dim]
    }

    pub fn anchor(&self, i: usize) -> &[f64] {
        self.state(i, 0)
    }

    pub fn anchors(&self) -> Points {
        let mut p = Points::with_capacity(self.dim, self.len());
        for i in 0..self.len() {
            p.push(self.anchor(i)).expect("dimension is consistent");
        }
        p
    }

    /// Backward outputs `h(x^(i,-t))` for `t = 0..=ell`, indexed by `t`.
    pub fn outputs(&self, i: usize, h: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..=self.ell).map(|t| h(self.state(i, t))).collect()
    }
}

/// Consecutive states `x^(0), …, x^(n-1)` of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct LongOrbit {
    states: Points,
}

impl LongOrbit {
    pub fn new(states: Points) -> Self {
        Self { states }
    }

    pub fn states(&self) -> &Points {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.dim()
    }

    pub fn outputs(&self, h: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        self.states.iter().map(h).collect()
    }
}

/// Successor/predecessor pairs `(x^(i), f⁻¹(x^(i)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    successors: Points,
    predecessors: Points,
}

impl SnapshotSet {
    pub fn new(successors: Points, predecessors: Points) -> Result<Self> {
        if successors.len() != predecessors.len() || successors.dim() != predecessors.dim() {
            return Err(Error::arg(format!(
                "snapshot halves disagree: {}x{} vs {}x{}",
                successors.len(),
                successors.dim(),
                predecessors.len(),
                predecessors.dim()
            )));
        }
        if successors.is_empty() {
            return Err(Error::arg("snapshot set is empty"));
        }
        Ok(Self {
            successors,
            predecessors,
        })
    }

    pub fn successors(&self) -> &Points {
        &self.successors
    }

    pub fn predecessors(&self) -> &Points {
        &self.predecessors
    }

    pub fn len(&self) -> usize {
        self.successors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.successors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.successors.dim()
    }
}

/// Samples `n` initial points, runs each for `burn_in` steps and records the next `ell`
/// states; the last one is the anchor.
pub fn generate_orbit_set(
    system: &dyn DiscreteSystem,
    n: usize,
    ell: usize,
    burn_in: usize,
    init: &InitBox,
    seed: u64,
) -> Result<OrbitSet> {
    if n == 0 {
        return Err(Error::arg("orbit count must be positive"));
    }
    check_box(system, init)?;
    let chunks: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let start = init.sample(&mut stream_rng(seed, i as u64));
            let mut seg = Vec::with_capacity(system.dim() * (ell + 1));
            simulate(system, start, burn_in, ell, &mut seg).map_err(|e| tag("orbit", i, e))?;
            Ok(seg)
        })
        .collect::<Result<_>>()?;
    OrbitSet::from_forward_segments(system.dim(), ell, chunks.concat())
}

/// `n` consecutive states after `burn_in` steps from `init`.
pub fn generate_long_orbit(
    system: &dyn DiscreteSystem,
    init: &InitialState,
    burn_in: usize,
    n: usize,
    seed: u64,
) -> Result<LongOrbit> {
    if n < 2 {
        return Err(Error::arg(format!("a long orbit needs at least 2 states, got {n}")));
    }
    let start = match init {
        InitialState::Point(p) => {
            if p.len() != system.dim() {
                return Err(Error::arg(format!(
                    "initial state of dimension {} for a system of dimension {}",
                    p.len(),
                    system.dim()
                )));
            }
            p.clone()
        }
        InitialState::Random(b) => {
            check_box(system, b)?;
            b.sample(&mut stream_rng(seed, 0))
        }
    };
    let mut data = Vec::with_capacity(system.dim() * n);
    simulate(system, start, burn_in, n - 1, &mut data)?;
    Ok(LongOrbit::new(Points::new(system.dim(), data)?))
}

/// `n_orbits` random orbits of `steps_per_orbit` transitions each, as
/// (successor, predecessor) pairs.
pub fn generate_snapshots(
    system: &dyn DiscreteSystem,
    n_orbits: usize,
    steps_per_orbit: usize,
    burn_in: usize,
    init: &InitBox,
    seed: u64,
) -> Result<SnapshotSet> {
    if n_orbits == 0 || steps_per_orbit == 0 {
        return Err(Error::arg("snapshot generation needs at least one orbit and one step"));
    }
    check_box(system, init)?;
    let d = system.dim();
    let orbits: Vec<Vec<f64>> = (0..n_orbits)
        .into_par_iter()
        .map(|i| {
            let start = init.sample(&mut stream_rng(seed, i as u64));
            let mut seg = Vec::with_capacity(d * (steps_per_orbit + 1));
            simulate(system, start, burn_in, steps_per_orbit, &mut seg)
                .map_err(|e| tag("orbit", i, e))?;
            Ok(seg)
        })
        .collect::<Result<_>>()?;
    let total = n_orbits * steps_per_orbit;
    let mut succ = Points::with_capacity(d, total);
    let mut pred = Points::with_capacity(d, total);
    for seg in &orbits {
        for t in 0..steps_per_orbit {
            pred.push(&seg[t * d..(t + 1) * d])?;
            succ.push(&seg[(t + 1) * d..(t + 2) * d])?;
        }
    }
    SnapshotSet::new(succ, pred)
}
