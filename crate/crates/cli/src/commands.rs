use std::path::{Path, PathBuf};
use std::time::Instant;

use kkl_core::dynamics::io::{
    read_long_orbit, read_orbit_set, read_snapshots, write_long_orbit, write_orbit_set, write_snapshots,
};
use kkl_core::dynamics::{generate_long_orbit, generate_orbit_set, generate_snapshots, SnapshotSet};
use kkl_core::observer::ZeroModel;
use kkl_core::pipelines::{
    algorithm1, algorithm2, evaluate_observer, p_sweep, settled_initial_state, threshold_sweep, write_fit_csv,
    write_reports_csv, write_sweep_csv, EvaluationReport, RunManifest, SnapshotStage, SweepRow, Synthesis,
};
use kkl_core::spectral::write_spectral_csv;
use kkl_core::{DiscreteSystem, ObserverMatrices, Points, PseudoInverse, PseudoInverseModel, SynthesisConfig};

use crate::config::RunConfig;
use crate::error::{CliError, StageExt};
use crate::{EvaluateArgs, GenerateArgs, Regime, SynthesizeArgs, Table};

/// Snapshot count of the full-size Lorenz experiment.
const FULL_SNAPSHOT_COUNT: usize = 5000;

struct Run<'a> {
    config: &'a RunConfig,
    manifest: RunManifest,
    outputs: Vec<PathBuf>,
}

impl<'a> Run<'a> {
    fn new(config: &'a RunConfig, command: &str) -> Self {
        Self {
            config,
            manifest: RunManifest {
                command: command.to_string(),
                config: config.to_toml(),
                config_hash: config.hash(),
                seed: config.run.seed,
                ..Default::default()
            },
            outputs: Vec::new(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.config.run.out_dir.join(name)
    }

    fn wrote(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    fn time(&mut self, name: &str, start: Instant) {
        self.manifest.timings.push((name.to_string(), start.elapsed().as_secs_f64()));
    }

    fn timings(&mut self, prefix: &str, laps: &[(String, f64)]) {
        for (k, v) in laps {
            self.manifest.timings.push((format!("{prefix}.{k}"), *v));
        }
    }

    fn note(&mut self, note: String) {
        self.manifest.notes.push(note);
    }

    /// Writes the manifest and lists every output with the config hash.
    fn finish(mut self, manifest: PathBuf) -> Result<(), CliError> {
        for p in &self.outputs {
            self.manifest.notes.push(format!("output {}", p.display()));
        }
        self.manifest.write(&manifest).stage("writing manifest")?;
        println!("config hash {}", self.manifest.config_hash);
        println!("manifest {}", manifest.display());
        Ok(())
    }
}

fn fmt_box(points: &Points) -> String {
    match points.bounding_box() {
        Some((lo, hi)) => lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| format!("[{a:.3}, {b:.3}]"))
            .collect::<Vec<_>>()
            .join(" x "),
        None => "empty".into(),
    }
}

fn check_readable(path: &Path) -> Result<(), CliError> {
    std::fs::metadata(path).map(|_| ()).map_err(|e| CliError::Io {
        path: path.into(),
        source: e,
    })
}

fn manifest_beside(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

pub fn generate(config: &RunConfig, args: &GenerateArgs) -> Result<(), CliError> {
    let system = config.system()?;
    let init = config.init_box()?;
    let (seed, burn_in) = (config.run.seed, config.system.burn_in);
    let output = args.output.clone().unwrap_or_else(|| {
        config
            .run
            .out_dir
            .join(format!("{}-{}.csv", system.name(), args.regime.name()))
    });
    let mut run = Run::new(config, "generate");
    let start = Instant::now();
    let summary = match args.regime {
        Regime::Orbits => {
            let set = generate_orbit_set(system.as_ref(), config.run.orbits, config.history(), burn_in, &init, seed)
                .stage("orbit generation")?;
            write_orbit_set(&output, &set).stage("writing orbits")?;
            format!(
                "n = {}, history = {}, anchors in {}",
                set.len(),
                set.history_len(),
                fmt_box(&set.anchors())
            )
        }
        Regime::LongOrbit => {
            let orbit = generate_long_orbit(
                system.as_ref(),
                &config.long_orbit_start()?,
                burn_in,
                config.run.long_orbit_len,
                seed,
            )
            .stage("long-orbit generation")?;
            write_long_orbit(&output, &orbit).stage("writing long orbit")?;
            format!("n = {}, states in {}", orbit.len(), fmt_box(orbit.states()))
        }
        Regime::Snapshots => {
            let snaps = generate_snapshots(
                system.as_ref(),
                config.run.snapshot_orbits,
                config.run.snapshot_steps,
                burn_in,
                &init,
                seed,
            )
            .stage("snapshot generation")?;
            write_snapshots(&output, &snaps).stage("writing snapshots")?;
            format!("n = {} pairs, successors in {}", snaps.len(), fmt_box(snaps.successors()))
        }
    };
    run.time("generate", start);
    println!("{} {}: {summary}", system.name(), args.regime.name());
    println!("wrote {}", output.display());
    run.note(summary);
    run.wrote(output.clone());
    run.finish(manifest_beside(&output))
}

/// Synthesis from a snapshot set, keeping the spectral model for export.
fn snapshot_synthesis(
    snaps: &SnapshotSet,
    system: &dyn DiscreteSystem,
    synth: &SynthesisConfig,
    run: &mut Run<'_>,
    prefix: &str,
) -> Result<Synthesis, CliError> {
    let h = |x: &[f64]| system.output(x);
    let start = Instant::now();
    let stage = SnapshotStage::new(snaps, &h, &synth.x_kernel).stage("snapshot matrices")?;
    run.time(&format!("{prefix}.matrices"), start);
    let start = Instant::now();
    let model = stage.fit_model(&synth.spectral).stage("approximate eigenfunctions")?;
    run.time(&format!("{prefix}.eigenfunctions"), start);
    let (cand, coef) = (
        run.path(&format!("{prefix}-candidates.csv")),
        run.path(&format!("{prefix}-coefficients.csv")),
    );
    write_spectral_csv(&model, &cand, &coef).stage("writing eigenfunctions")?;
    run.wrote(cand);
    run.wrote(coef);
    note_subsampling(run, snaps.len());
    run.note(format!(
        "{} of {} candidates retained, max residual {:.4}, basis rank {}",
        model.len(),
        synth.spectral.p,
        model.max_residual(),
        model.basis_rank()
    ));
    stage.synthesize(&model, synth.spectral.p, synth).stage("spectral injection and KRR")
}

fn load_and_synthesize(
    config: &RunConfig,
    system: &dyn DiscreteSystem,
    regime: Regime,
    data: &Path,
    run: &mut Run<'_>,
) -> Result<Synthesis, CliError> {
    let synth = config.synthesis()?;
    let h = |x: &[f64]| system.output(x);
    let start = Instant::now();
    let s = match regime {
        Regime::Orbits => {
            let orbits = read_orbit_set(data).stage("reading orbits")?;
            algorithm1(&orbits, &h, &synth).stage("synthesis from orbits")?
        }
        Regime::LongOrbit => {
            let orbit = read_long_orbit(data).stage("reading long orbit")?;
            algorithm2(&orbit, &h, &synth).stage("synthesis from a long orbit")?
        }
        Regime::Snapshots => {
            let snaps = read_snapshots(data).stage("reading snapshots")?;
            snapshot_synthesis(&snaps, system, &synth, run, "spectral")?
        }
    };
    run.time("synthesis", start);
    run.timings("synthesis", &s.timings);
    Ok(s)
}

fn closed_loop(
    config: &RunConfig,
    system: &dyn DiscreteSystem,
    model: &dyn PseudoInverse,
    label: &str,
    run: &mut Run<'_>,
) -> Result<EvaluationReport, CliError> {
    let params = config.synthesis()?.params;
    let init = settled_initial_state(system, &config.init_box()?, config.system.burn_in, config.run.test_seed)
        .stage("test trajectory")?;
    let start = Instant::now();
    let out = evaluate_observer(
        system,
        model,
        &ObserverMatrices::new(&params),
        &init,
        config.run.steps,
        config.run.settle_time,
    )
    .stage("closed-loop evaluation")?;
    run.time(&format!("{label}.closed-loop"), start);
    let path = run.path(&format!("{label}-trajectory.csv"));
    out.write_csv(&path).stage("writing trajectory")?;
    run.wrote(path);
    run.note(format!("test trajectory seed {}", config.run.test_seed));
    Ok(out.report)
}

fn print_report(label: &str, r: &EvaluationReport) {
    println!(
        "{label}: closed-loop MSE {:.4} (t >= {}), state variance {:.4}, ratio {:.4}",
        r.mse,
        r.settle_time,
        r.variance,
        r.relative_mse()
    );
}

pub fn synthesize(config: &RunConfig, args: &SynthesizeArgs, command: &str) -> Result<(), CliError> {
    check_readable(&args.data)?;
    let system = config.system()?;
    let mut run = Run::new(config, command);
    let s = load_and_synthesize(config, system.as_ref(), args.regime, &args.data, &mut run)?;
    println!("training MSE {:.6e} on {} samples", s.training_mse, s.samples.len());
    if let Some(g) = &s.grid {
        let path = run.path("grid.csv");
        g.write_csv(&path).stage("writing grid")?;
        run.wrote(path);
        println!(
            "cross-validation argmin sigma_z = {}, alpha = {:e} (CV MSE {:.6e})",
            g.best_sigma, g.best_alpha, g.best_mse
        );
        run.note(format!("tuned sigma_z = {} alpha = {:e}", g.best_sigma, g.best_alpha));
    }
    let model_path = run.path("model.txt");
    s.model.save(&model_path).stage("writing model")?;
    run.wrote(model_path);
    let path = run.path("injections.csv");
    s.samples.write_csv(&path).stage("writing injections")?;
    run.wrote(path);
    let path = run.path("fit.csv");
    write_fit_csv(&path, &s).stage("writing fit")?;
    run.wrote(path);
    run.note(format!("training MSE {:e}", s.training_mse));
    if !args.no_evaluate {
        let r = closed_loop(config, system.as_ref(), &s.model, "observer", &mut run)?;
        print_report("observer", &r);
        let path = run.path("report.csv");
        write_reports_csv(&path, &[(args.regime.name().to_string(), r)]).stage("writing report")?;
        run.wrote(path);
    }
    let manifest = run.path(&format!("{command}.manifest"));
    run.finish(manifest)
}

pub fn evaluate(config: &RunConfig, args: &EvaluateArgs) -> Result<(), CliError> {
    let system = config.system()?;
    let mut run = Run::new(config, "evaluate");
    let (label, model): (&str, Box<dyn PseudoInverse>) = match &args.model {
        Some(path) if !args.zero_model => {
            check_readable(path)?;
            ("model", Box::new(PseudoInverseModel::load(path).stage("reading model")?))
        }
        _ => (
            "zero",
            Box::new(ZeroModel {
                input_dim: config.observer.m,
                output_dim: config.dim(),
            }),
        ),
    };
    let r = closed_loop(config, system.as_ref(), model.as_ref(), label, &mut run)?;
    print_report(label, &r);
    let path = run.path("report.csv");
    write_reports_csv(&path, &[(label.to_string(), r)]).stage("writing report")?;
    run.wrote(path);
    let manifest = run.path("evaluate.manifest");
    run.finish(manifest)
}

fn print_row(name: &str, cells: impl IntoIterator<Item = String>) {
    let cells: Vec<String> = cells.into_iter().map(|c| format!("{c:>9}")).collect();
    println!("{name:>8} |{}", cells.join(""));
}

fn generate_snapshot_data(config: &RunConfig, system: &dyn DiscreteSystem) -> Result<SnapshotSet, CliError> {
    generate_snapshots(
        system,
        config.run.snapshot_orbits,
        config.run.snapshot_steps,
        config.system.burn_in,
        &config.init_box()?,
        config.run.seed,
    )
    .stage("snapshot generation")
}

fn note_subsampling(run: &mut Run<'_>, n: usize) {
    if n < FULL_SNAPSHOT_COUNT {
        run.note(format!("{n} snapshots instead of {FULL_SNAPSHOT_COUNT}: subsampled run"));
    }
}

fn write_rows(run: &mut Run<'_>, name: &str, rows: &[SweepRow]) -> Result<(), CliError> {
    let path = run.path(name);
    write_sweep_csv(&path, rows).stage("writing sweep")?;
    run.wrote(path);
    Ok(())
}

pub fn reproduce(config: &RunConfig, table: Table) -> Result<(), CliError> {
    let system = config.system()?;
    let synth = config.synthesis()?;
    let h = |x: &[f64]| system.output(x);
    match table {
        Table::PSweep => {
            let mut run = Run::new(config, "reproduce p-sweep");
            let snaps = generate_snapshot_data(config, system.as_ref())?;
            note_subsampling(&mut run, snaps.len());
            let start = Instant::now();
            let stage = SnapshotStage::new(&snaps, &h, &synth.x_kernel).stage("snapshot matrices")?;
            run.time("matrices", start);
            let rows = p_sweep(&stage, &synth, &config.spectral.p_values).stage("grid-size sweep")?;
            for r in &rows {
                run.manifest.timings.push((format!("p={}", r.p), r.seconds));
            }
            println!("{} snapshots", snaps.len());
            print_row("p", rows.iter().map(|r| r.p.to_string()));
            print_row("MSE", rows.iter().map(|r| format!("{:.2}", r.mse)));
            write_rows(&mut run, "p-sweep.csv", &rows)?;
            let manifest = run.path("p-sweep.manifest");
            run.finish(manifest)
        }
        Table::ThresholdSweep => {
            let mut run = Run::new(config, "reproduce threshold-sweep");
            let snaps = generate_snapshot_data(config, system.as_ref())?;
            note_subsampling(&mut run, snaps.len());
            let start = Instant::now();
            let stage = SnapshotStage::new(&snaps, &h, &synth.x_kernel).stage("snapshot matrices")?;
            run.time("matrices", start);
            let mut opts = synth.spectral.clone();
            opts.threshold = None;
            let start = Instant::now();
            let full = stage.fit_model(&opts).stage("approximate eigenfunctions")?;
            run.time("eigenfunctions", start);
            let rows =
                threshold_sweep(&stage, &full, &synth, &config.spectral.thresholds).stage("threshold sweep")?;
            println!(
                "{} snapshots, p = {}, max residual {:.4}",
                snaps.len(),
                synth.spectral.p,
                full.max_residual()
            );
            print_row("eps_res", rows.iter().map(|r| format!("{}", r.threshold.unwrap_or(f64::NAN))));
            print_row("p", rows.iter().map(|r| r.survivors.to_string()));
            print_row("MSE", rows.iter().map(|r| format!("{:.2}", r.mse)));
            write_rows(&mut run, "threshold-sweep.csv", &rows)?;
            let manifest = run.path("threshold-sweep.manifest");
            run.finish(manifest)
        }
        Table::ClosedLoop => {
            let mut run = Run::new(config, "reproduce closed-loop");
            let (seed, burn_in, init) = (config.run.seed, config.system.burn_in, config.init_box()?);
            let start = Instant::now();
            let orbits = generate_orbit_set(system.as_ref(), config.run.orbits, config.history(), burn_in, &init, seed)
                .stage("orbit generation")?;
            let orbit = generate_long_orbit(
                system.as_ref(),
                &config.long_orbit_start()?,
                burn_in,
                config.run.long_orbit_len,
                seed,
            )
            .stage("long-orbit generation")?;
            let snaps = generate_snapshot_data(config, system.as_ref())?;
            run.time("data", start);
            let mut models = Vec::new();
            let start = Instant::now();
            models.push(("orbits", algorithm1(&orbits, &h, &synth).stage("synthesis from orbits")?));
            run.time("orbits.synthesis", start);
            let start = Instant::now();
            models.push(("long-orbit", algorithm2(&orbit, &h, &synth).stage("synthesis from a long orbit")?));
            run.time("long-orbit.synthesis", start);
            models.push(("snapshots", snapshot_synthesis(&snaps, system.as_ref(), &synth, &mut run, "snapshots")?));
            let mut reports = Vec::new();
            for (label, s) in &models {
                let path = run.path(&format!("{label}-fit.csv"));
                write_fit_csv(&path, s).stage("writing fit")?;
                run.wrote(path);
                let path = run.path(&format!("{label}-model.txt"));
                s.model.save(&path).stage("writing model")?;
                run.wrote(path);
                let r = closed_loop(config, system.as_ref(), &s.model, label, &mut run)?;
                reports.push((label.to_string(), r));
            }
            print_row("", ["orbits", "long", "snaps"].map(String::from));
            print_row("train", models.iter().map(|(_, s)| format!("{:.4}", s.training_mse)));
            print_row("MSE", reports.iter().map(|(_, r)| format!("{:.2}", r.mse)));
            print_row("variance", reports.iter().map(|(_, r)| format!("{:.2}", r.variance)));
            print_row("ratio", reports.iter().map(|(_, r)| format!("{:.4}", r.relative_mse())));
            let path = run.path("closed-loop.csv");
            write_reports_csv(&path, &reports).stage("writing report")?;
            run.wrote(path);
            let manifest = run.path("closed-loop.manifest");
            run.finish(manifest)
        }
    }
}
