//! End-to-end observer synthesis for the three data regimes, and closed-loop evaluation.
//!
//! Every pipeline produces injection samples `(x^(i), z̃^(i))` and fits the pseudo-inverse
//! `ζ†` by kernel ridge regression on them. They differ in how `z̃` is obtained:
//!
//! - many orbits: the truncated series over each orbit's recorded outputs;
//! - one long orbit: the same series over the interpolated output `ĥ` evaluated along the
//!   orbit, for anchors `x^(ℓ)..x^(n-1)`;
//! - snapshots: the spectral injection on approximate eigenfunctions.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use faer::Mat;

use crate::dynamics::io::{create, fmt_f64, write_rows};
use crate::dynamics::{iterate, stream_rng, DiscreteSystem, InitBox, LongOrbit, OrbitSet, SnapshotSet};
use crate::error::{Error, Result};
use crate::kernels::RadialKernel;
use crate::observer::{run_observer, DeepKklParams, InjectionSamples, InjectionWeights, ObserverMatrices, PseudoInverse};
use crate::points::Points;
use crate::regression::{
    default_alpha_grid, default_sigma_grid, grid_search, krr_fit, GridSearchResult, InterpolantModel,
    InterpolationSolver, PseudoInverseModel,
};
use crate::spectral::{
    build_snapshot_matrices, fit_spectral_model_reduced, ReducedProblem, SnapshotMatrices, SpectralInjector,
    SpectralModel, SpectralOptions,
};

/// Post-transient window start for closed-loop errors, in steps.
pub const DEFAULT_SETTLE_TIME: usize = 300;
/// Burn-in applied to random initial states before they count as on the attractor.
pub const DEFAULT_BURN_IN: usize = 300;

/// Output map `y = h(x)`.
pub type OutputFn<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// Hyperparameter grid for tuning the `z`-kernel bandwidth and ridge.
#[derive(Clone, Debug, PartialEq)]
pub struct KrrGrid {
    pub sigmas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub folds: usize,
}

impl Default for KrrGrid {
    fn default() -> Self {
        Self {
            sigmas: default_sigma_grid(),
            alphas: default_alpha_grid(),
            folds: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisConfig {
    pub params: DeepKklParams,
    pub x_kernel: RadialKernel,
    pub z_kernel: RadialKernel,
    pub alpha: f64,
    /// When set, `z_kernel`'s bandwidth and `alpha` are replaced by the CV argmin.
    pub grid: Option<KrrGrid>,
    pub spectral: SpectralOptions,
    pub seed: u64,
}

impl SynthesisConfig {
    /// Third-order observer with `β = 0.9`, `ℓ = 50`, Wendland(3,1) `σ_x = 10`, Gaussian
    /// `σ_z = 10`, `α = 10⁻⁴`, `p = 800`.
    pub fn lorenz() -> Self {
        Self {
            params: DeepKklParams::new(3, 0.9, 50).expect("valid defaults"),
            x_kernel: RadialKernel::wendland(3, 1, 10.0).expect("valid defaults"),
            z_kernel: RadialKernel::gaussian(10.0).expect("valid defaults"),
            alpha: 1e-4,
            grid: None,
            spectral: SpectralOptions::new(800),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::arg(format!("ridge parameter must be non-negative, got {}", self.alpha)));
        }
        if self.spectral.p == 0 {
            return Err(Error::arg("spectral grid size must be positive"));
        }
        if let Some(g) = &self.grid {
            if g.sigmas.is_empty() || g.alphas.is_empty() || g.folds < 2 {
                return Err(Error::arg("tuning grid needs bandwidths, ridges and at least 2 folds"));
            }
        }
        Ok(())
    }

    /// `key = value` lines describing the configuration.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        let _ = writeln!(s, "m = {}", p.m());
        let _ = writeln!(s, "beta = {}", p.beta());
        let _ = writeln!(s, "ell = {}", p.ell());
        let _ = writeln!(s, "x_kernel = \"{}\"", self.x_kernel);
        let _ = writeln!(s, "z_kernel = \"{}\"", self.z_kernel);
        let _ = writeln!(s, "alpha = {:e}", self.alpha);
        if let Some(g) = &self.grid {
            let _ = writeln!(s, "grid_sigmas = {:?}", g.sigmas);
            let _ = writeln!(s, "grid_alphas = {:?}", g.alphas);
            let _ = writeln!(s, "grid_folds = {}", g.folds);
        }
        let sp = &self.spectral;
        let _ = writeln!(s, "p = {}", sp.p);
        if let Some(t) = sp.threshold {
            let _ = writeln!(s, "eps_res = {t:e}");
        }
        if let Some(r) = sp.basis_rank {
            let _ = writeln!(s, "basis_rank = {r}");
        }
        let _ = writeln!(s, "eps_psi = {:e}", sp.eps_psi);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

/// Retained-candidate statistics of a snapshot synthesis.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSummary {
    pub p: usize,
    pub survivors: usize,
    pub max_residual: f64,
    pub basis_rank: usize,
}

/// Result of one synthesis run.
#[derive(Debug)]
pub struct Synthesis {
    pub model: PseudoInverseModel,
    pub samples: InjectionSamples,
    /// Mean of `‖ζ†(z̃^(i)) − x^(i)‖²` over the training samples.
    pub training_mse: f64,
    pub grid: Option<GridSearchResult>,
    /// Diagonal jitter of the output interpolation, when one was built.
    pub interpolation_jitter: Option<f64>,
    pub spectral: Option<SpectralSummary>,
    pub timings: Vec<(String, f64)>,
}

struct Stopwatch {
    start: Instant,
    laps: Vec<(String, f64)>,
}

impl Stopwatch {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            laps: Vec::new(),
        }
    }

    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.laps.push((name.to_string(), (now - self.start).as_secs_f64()));
        self.start = now;
    }
}

/// Mean squared row error between two point sets of equal shape.
pub fn mean_squared_error(pred: &Points, truth: &Points) -> Result<f64> {
    if pred.len() != truth.len() || pred.dim() != truth.dim() {
        return Err(Error::arg("prediction and truth shapes differ"));
    }
    if pred.is_empty() {
        return Err(Error::arg("empty sample"));
    }
    let total: f64 = pred
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>())
        .sum();
    Ok(total / pred.len() as f64)
}

fn fit_stage(
    samples: InjectionSamples,
    config: &SynthesisConfig,
    clock: &mut Stopwatch,
) -> Result<(PseudoInverseModel, InjectionSamples, f64, Option<GridSearchResult>)> {
    let (kernel, alpha, grid) = match &config.grid {
        Some(g) => {
            let res = grid_search(
                &samples.injections,
                &samples.states,
                config.z_kernel.family(),
                &g.sigmas,
                &g.alphas,
                g.folds,
                config.seed,
            )?;
            clock.lap("tune");
            (config.z_kernel.with_sigma(res.best_sigma)?, res.best_alpha, Some(res))
        }
        None => (config.z_kernel, config.alpha, None),
    };
    let model = krr_fit(&samples.injections, &samples.states, &kernel, alpha)?;
    let fitted = model.predict_batch(&samples.injections)?;
    let mse = mean_squared_error(&fitted, &samples.states)?;
    clock.lap("krr");
    Ok((model, samples, mse, grid))
}

/// Synthesis from orbits with recorded histories of length at least `ℓ`.
pub fn algorithm1(orbits: &OrbitSet, h: OutputFn<'_>, config: &SynthesisConfig) -> Result<Synthesis> {
    config.validate()?;
    let mut clock = Stopwatch::new();
    let samples = orbit_injections(orbits, h, &config.params)?;
    clock.lap("injection");
    let (model, samples, training_mse, grid) = fit_stage(samples, config, &mut clock)?;
    Ok(Synthesis {
        model,
        samples,
        training_mse,
        grid,
        interpolation_jitter: None,
        spectral: None,
        timings: clock.laps,
    })
}

/// `z̃^(i)` from each orbit's backward outputs.
pub fn orbit_injections(orbits: &OrbitSet, h: OutputFn<'_>, params: &DeepKklParams) -> Result<InjectionSamples> {
    let ell = params.ell();
    if orbits.history_len() < ell {
        return Err(Error::Precondition(format!(
            "orbits record {} past states but ℓ = {ell}",
            orbits.history_len()
        )));
    }
    let weights = InjectionWeights::new(*params);
    let mut inj = Points::with_capacity(params.m(), orbits.len());
    for i in 0..orbits.len() {
        let history: Vec<f64> = (1..=ell).map(|t| h(orbits.state(i, t))).collect();
        inj.push(&weights.apply(&history)?)?;
    }
    InjectionSamples::new(orbits.anchors(), inj)
}

/// Output interpolant on `x^(ℓ)..x^(n-1)` and the injection values at those anchors.
pub struct LongOrbitInjection {
    solver: InterpolationSolver,
    interpolant: InterpolantModel,
    samples: InjectionSamples,
}

impl LongOrbitInjection {
    pub fn new(orbit: &LongOrbit, h: OutputFn<'_>, x_kernel: &RadialKernel, params: &DeepKklParams) -> Result<Self> {
        let n = orbit.len();
        let ell = params.ell();
        if n <= ell {
            return Err(Error::Precondition(format!("orbit of {n} states is not longer than ℓ = {ell}")));
        }
        let idx: Vec<usize> = (ell..n).collect();
        let anchors = orbit.states().select(&idx);
        let values: Vec<f64> = anchors.iter().map(h).collect();
        let solver = InterpolationSolver::new(x_kernel, &anchors)?;
        let interpolant = solver.interpolate(&values)?;
        let h_hat = interpolant.predict_batch(orbit.states())?;
        let weights = InjectionWeights::new(*params);
        let mut inj = Points::with_capacity(params.m(), idx.len());
        for &j in &idx {
            let history: Vec<f64> = (0..ell).map(|q| h_hat[j - 1 - q]).collect();
            inj.push(&weights.apply(&history)?)?;
        }
        Ok(Self {
            solver,
            interpolant,
            samples: InjectionSamples::new(anchors, inj)?,
        })
    }

    pub fn interpolant(&self) -> &InterpolantModel {
        &self.interpolant
    }

    pub fn samples(&self) -> &InjectionSamples {
        &self.samples
    }

    /// Injection at an arbitrary state: interpolates `κ(x, ·)` on the anchors and carries
    /// the coefficients through the anchors' injection values.
    pub fn inject(&self, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.solver.kernel().section(self.solver.centers(), x)?;
        let rhs = Mat::from_fn(k.len(), 1, |i, _| k[i]);
        let c = self.solver.solve(rhs.as_ref())?;
        let m = self.samples.injections.dim();
        Ok((0..m)
            .map(|d| (0..k.len()).map(|j| c[(j, 0)] * self.samples.injections.row(j)[d]).sum())
            .collect())
    }
}

/// Synthesis from a single long orbit.
pub fn algorithm2(orbit: &LongOrbit, h: OutputFn<'_>, config: &SynthesisConfig) -> Result<Synthesis> {
    config.validate()?;
    let mut clock = Stopwatch::new();
    let inj = LongOrbitInjection::new(orbit, h, &config.x_kernel, &config.params)?;
    let jitter = inj.interpolant().jitter();
    clock.lap("injection");
    let (model, samples, training_mse, grid) = fit_stage(inj.samples, config, &mut clock)?;
    Ok(Synthesis {
        model,
        samples,
        training_mse,
        grid,
        interpolation_jitter: Some(jitter),
        spectral: None,
        timings: clock.laps,
    })
}

/// Shared pieces of snapshot synthesis, reusable across grid sizes and thresholds.
pub struct SnapshotStage {
    points: Points,
    matrices: SnapshotMatrices,
    interpolant: InterpolantModel,
    kernel: RadialKernel,
    /// Reduced problems keyed by `(basis rank, ε_G bits)`; building one dominates small fits.
    reduced: Mutex<Vec<(Option<usize>, u64, Arc<ReducedProblem>)>>,
}

impl SnapshotStage {
    pub fn new(snapshots: &SnapshotSet, h: OutputFn<'_>, x_kernel: &RadialKernel) -> Result<Self> {
        let matrices = build_snapshot_matrices(snapshots, x_kernel)?;
        let points = snapshots.successors().clone();
        let values: Vec<f64> = points.iter().map(h).collect();
        let interpolant = InterpolationSolver::from_gram(x_kernel, &points, matrices.g.clone())?.interpolate(&values)?;
        Ok(Self {
            points,
            matrices,
            interpolant,
            kernel: *x_kernel,
            reduced: Mutex::new(Vec::new()),
        })
    }

    pub fn matrices(&self) -> &SnapshotMatrices {
        &self.matrices
    }

    pub fn interpolant(&self) -> &InterpolantModel {
        &self.interpolant
    }

    pub fn fit_model(&self, options: &SpectralOptions) -> Result<SpectralModel> {
        let problem = self.reduced_problem(options)?;
        fit_spectral_model_reduced(&self.points, &self.matrices, &problem, &self.kernel, options)
    }

    fn reduced_problem(&self, options: &SpectralOptions) -> Result<Arc<ReducedProblem>> {
        let eps_g = options.eps_g.unwrap_or_else(|| self.matrices.default_eps_g());
        let key = (options.basis_rank, eps_g.to_bits());
        let mut cache = self.reduced.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((_, _, p)) = cache.iter().find(|(r, e, _)| (*r, *e) == key) {
            return Ok(Arc::clone(p));
        }
        let problem = Arc::new(ReducedProblem::new(&self.matrices, eps_g, options.basis_rank)?);
        cache.push((key.0, key.1, Arc::clone(&problem)));
        Ok(problem)
    }

    /// Spectral injections at the snapshot points followed by the KRR fit.
    pub fn synthesize(&self, model: &SpectralModel, p: usize, config: &SynthesisConfig) -> Result<Synthesis> {
        let mut clock = Stopwatch::new();
        let injector = SpectralInjector::new(model, &self.interpolant, &config.params)?;
        let inj = injector.inject_batch(&self.points)?;
        clock.lap("injection");
        let samples = InjectionSamples::new(self.points.clone(), inj)?;
        let (fitted, samples, training_mse, grid) = fit_stage(samples, config, &mut clock)?;
        Ok(Synthesis {
            model: fitted,
            samples,
            training_mse,
            grid,
            interpolation_jitter: Some(self.interpolant.jitter()),
            spectral: Some(SpectralSummary {
                p,
                survivors: model.len(),
                max_residual: model.max_residual(),
                basis_rank: model.basis_rank(),
            }),
            timings: clock.laps,
        })
    }
}

/// Synthesis from predecessor-successor pairs.
pub fn algorithm3(snapshots: &SnapshotSet, h: OutputFn<'_>, config: &SynthesisConfig) -> Result<Synthesis> {
    config.validate()?;
    let mut clock = Stopwatch::new();
    let stage = SnapshotStage::new(snapshots, h, &config.x_kernel)?;
    clock.lap("matrices");
    let model = stage.fit_model(&config.spectral)?;
    clock.lap("eigenfunctions");
    let mut out = stage.synthesize(&model, config.spectral.p, config)?;
    clock.laps.append(&mut out.timings);
    out.timings = clock.laps;
    Ok(out)
}

/// One row of a grid-size or threshold sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub p: usize,
    pub threshold: Option<f64>,
    pub survivors: usize,
    pub max_residual: f64,
    pub mse: f64,
    pub seconds: f64,
}

/// Training MSE of snapshot synthesis for each grid size.
pub fn p_sweep(stage: &SnapshotStage, config: &SynthesisConfig, ps: &[usize]) -> Result<Vec<SweepRow>> {
    ps.iter()
        .map(|&p| {
            let start = Instant::now();
            let mut opts = config.spectral.clone();
            opts.p = p;
            opts.threshold = None;
            let model = stage.fit_model(&opts)?;
            let s = stage.synthesize(&model, p, config)?;
            Ok(SweepRow {
                p,
                threshold: None,
                survivors: model.len(),
                max_residual: model.max_residual(),
                mse: s.training_mse,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

/// Training MSE after discarding candidates with residual above each threshold.
pub fn threshold_sweep(
    stage: &SnapshotStage,
    full: &SpectralModel,
    config: &SynthesisConfig,
    thresholds: &[f64],
) -> Result<Vec<SweepRow>> {
    thresholds
        .iter()
        .map(|&t| {
            let start = Instant::now();
            let kept = full.retain_below(t)?;
            if kept.is_empty() {
                return Err(Error::Precondition(format!("no candidate has residual ≤ {t}")));
            }
            let s = stage.synthesize(&kept, config.spectral.p, config)?;
            Ok(SweepRow {
                p: config.spectral.p,
                threshold: Some(t),
                survivors: kept.len(),
                max_residual: kept.max_residual(),
                mse: s.training_mse,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let header: Vec<String> = ["p", "eps_res", "survivors", "max_residual", "mse", "seconds"]
        .map(String::from)
        .to_vec();
    let rows = rows.iter().map(|r| {
        vec![
            r.p.to_string(),
            r.threshold.map_or_else(|| "none".to_string(), fmt_f64),
            r.survivors.to_string(),
            fmt_f64(r.max_residual),
            fmt_f64(r.mse),
            format!("{:.3}", r.seconds),
        ]
    });
    write_rows(path.as_ref(), &header, rows)
}

/// Rows `(x_1..x_d, xhat_1..xhat_d)` pairing each training state with its fitted estimate.
pub fn write_fit_csv(path: impl AsRef<Path>, synthesis: &Synthesis) -> Result<()> {
    let states = &synthesis.samples.states;
    let fitted = synthesis.model.predict_batch(&synthesis.samples.injections)?;
    let d = states.dim();
    let header: Vec<String> = (1..=d)
        .map(|i| format!("x_{i}"))
        .chain((1..=d).map(|i| format!("xhat_{i}")))
        .collect();
    let rows = states
        .iter()
        .zip(fitted.iter())
        .map(|(x, xh)| x.iter().chain(xh).map(|&v| fmt_f64(v)).collect());
    write_rows(path.as_ref(), &header, rows)
}

/// Closed-loop observation error against the state spread.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    /// Mean of `‖x̂_t − x_t‖²` over `t ≥ settle_time`.
    pub mse: f64,
    /// Mean of `‖x_t − x̄‖²` over the same window.
    pub variance: f64,
    pub settle_time: usize,
    pub steps: usize,
}

impl EvaluationReport {
    pub fn relative_mse(&self) -> f64 {
        self.mse / self.variance
    }
}

/// True and estimated trajectories of one closed-loop run.
#[derive(Clone, Debug)]
pub struct ClosedLoopRun {
    pub report: EvaluationReport,
    pub states: Points,
    pub estimates: Points,
}

impl ClosedLoopRun {
    /// Rows `(t, x_1..x_d, xhat_1..xhat_d)`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let d = self.states.dim();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=d).map(|i| format!("x_{i}")))
            .chain((1..=d).map(|i| format!("xhat_{i}")))
            .collect();
        let rows = (0..self.states.len()).map(|t| {
            std::iter::once(t.to_string())
                .chain(self.states.row(t).iter().map(|&v| fmt_f64(v)))
                .chain(self.estimates.row(t).iter().map(|&v| fmt_f64(v)))
                .collect()
        });
        write_rows(path.as_ref(), &header, rows)
    }
}

/// Random draw from `init` advanced by `burn_in` steps.
pub fn settled_initial_state(system: &dyn DiscreteSystem, init: &InitBox, burn_in: usize, seed: u64) -> Result<Vec<f64>> {
    if init.dim() != system.dim() {
        return Err(Error::arg("initial box dimension does not match the system"));
    }
    let start = init.sample(&mut stream_rng(seed, 0));
    iterate(system, &start, burn_in)
}

/// Simulates `steps` states from `init`, runs the observer from `z = 0` on their outputs
/// and scores the estimates after `settle_time`.
pub fn evaluate_observer(
    system: &dyn DiscreteSystem,
    model: &dyn PseudoInverse,
    matrices: &ObserverMatrices,
    init: &[f64],
    steps: usize,
    settle_time: usize,
) -> Result<ClosedLoopRun> {
    if steps <= settle_time {
        return Err(Error::Precondition(format!(
            "trajectory of {steps} steps does not extend past the settle time {settle_time}"
        )));
    }
    if init.len() != system.dim() || model.output_dim() != system.dim() {
        return Err(Error::arg("initial state, model and system dimensions disagree"));
    }
    let mut states = Points::with_capacity(system.dim(), steps);
    let mut x = init.to_vec();
    for _ in 0..steps {
        states.push(&x)?;
        x = system.step(&x)?;
    }
    let outputs: Vec<f64> = states.iter().map(|x| system.output(x)).collect();
    let traj = run_observer(matrices, model, &outputs, None)?;
    let window = steps - settle_time;
    let d = system.dim();
    let mut mean = vec![0.0; d];
    for t in settle_time..steps {
        for (m, v) in mean.iter_mut().zip(states.row(t)) {
            *m += v / window as f64;
        }
    }
    let mut se = 0.0;
    let mut var = 0.0;
    for t in settle_time..steps {
        let (x, xh) = (states.row(t), traj.estimates.row(t));
        se += x.iter().zip(xh).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        var += x.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(ClosedLoopRun {
        report: EvaluationReport {
            mse: se / window as f64,
            variance: var / window as f64,
            settle_time,
            steps,
        },
        states,
        estimates: traj.estimates,
    })
}

/// Rows `(label, mse, variance, relative_mse, settle_time, steps)`.
pub fn write_reports_csv(path: impl AsRef<Path>, reports: &[(String, EvaluationReport)]) -> Result<()> {
    let header: Vec<String> = ["label", "mse", "variance", "relative_mse", "settle_time", "steps"]
        .map(String::from)
        .to_vec();
    let rows = reports.iter().map(|(label, r)| {
        vec![
            label.clone(),
            fmt_f64(r.mse),
            fmt_f64(r.variance),
            fmt_f64(r.relative_mse()),
            r.settle_time.to_string(),
            r.steps.to_string(),
        ]
    });
    write_rows(path.as_ref(), &header, rows)
}

/// Config echo, seed, timings and free-form notes of one pipeline run.
#[derive(Clone, Debug, Default)]
pub struct RunManifest {
    pub command: String,
    pub config: String,
    pub config_hash: String,
    pub seed: u64,
    pub timings: Vec<(String, f64)>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let path = path.as_ref();
        let mut w = create(path)?;
        let io = |e| Error::io(path, e);
        let mut s = String::new();
        let _ = writeln!(s, "command = {:?}", self.command);
        let _ = writeln!(s, "config_hash = {:?}", self.config_hash);
        let _ = writeln!(s, "seed = {}", self.seed);
        for n in &self.notes {
            let _ = writeln!(s, "note = {n:?}");
        }
        let _ = writeln!(s, "\n[timings]");
        for (k, v) in &self.timings {
            let _ = writeln!(s, "{k} = {v:.3}");
        }
        let _ = writeln!(s, "\n[config]");
        s.push_str(&self.config);
        w.write_all(s.as_bytes()).map_err(io)?;
        w.flush().map_err(io)
    }
}
