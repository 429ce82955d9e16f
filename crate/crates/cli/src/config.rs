//! Run configuration: a TOML file with fixed sections, overridden by flags.

use std::path::{Path, PathBuf};

use kkl_core::dynamics::{circle_rotation, limit_cycle_system, lorenz_system, InitBox, InitialState};
use kkl_core::pipelines::KrrGrid;
use kkl_core::regression::{default_alpha_grid, default_sigma_grid};
use kkl_core::{DeepKklParams, DiscreteSystem, RadialKernel, SpectralOptions, SynthesisConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SystemName {
    Lorenz,
    Circle,
    LimitCycle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub name: SystemName,
    /// Rotation angle per step (circle) or angular speed (limit cycle).
    pub gamma: f64,
    /// Radial contraction rate of the limit cycle.
    pub rate: f64,
    /// Initial states are drawn from `[-half_width, half_width]^d`.
    pub half_width: Option<f64>,
    pub burn_in: usize,
    /// Fixed start of a long orbit; `(5, 5, 5)` for Lorenz and drawn from the box
    /// otherwise when absent.
    pub initial_state: Option<Vec<f64>>,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            name: SystemName::Lorenz,
            gamma: 0.25,
            rate: 0.2,
            half_width: None,
            burn_in: 300,
            initial_state: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverSection {
    pub m: usize,
    pub beta: f64,
    pub ell: usize,
}

impl Default for ObserverSection {
    fn default() -> Self {
        Self { m: 3, beta: 0.9, ell: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: String,
    pub sigma: f64,
    /// Wendland smoothness index.
    pub k: Option<u32>,
    /// Matérn order.
    pub nu: Option<f64>,
}

impl KernelSpec {
    pub fn build(&self, dim: usize) -> Result<RadialKernel, CliError> {
        let kernel = match self.family.as_str() {
            "gaussian" => RadialKernel::gaussian(self.sigma),
            "wendland" => RadialKernel::wendland(dim, self.k.unwrap_or(1), self.sigma),
            "matern" => RadialKernel::matern(self.nu.unwrap_or(1.5), self.sigma),
            other => {
                return Err(CliError::Config(format!(
                    "unknown kernel family {other:?} (expected gaussian, wendland or matern)"
                )))
            }
        };
        kernel.map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub x: KernelSpec,
    pub z: KernelSpec,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            x: KernelSpec {
                family: "wendland".into(),
                sigma: 10.0,
                k: Some(1),
                nu: None,
            },
            z: KernelSpec {
                family: "gaussian".into(),
                sigma: 10.0,
                k: None,
                nu: None,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrrSection {
    pub alpha: f64,
    /// Replace `kernel.z.sigma` and `alpha` by the cross-validated argmin.
    pub tune: bool,
    pub sigmas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub folds: usize,
}

impl Default for KrrSection {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            tune: false,
            sigmas: default_sigma_grid(),
            alphas: default_alpha_grid(),
            folds: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralSection {
    pub p: usize,
    pub eps_res: Option<f64>,
    pub basis_rank: Option<usize>,
    pub eps_psi: f64,
    /// Grid sizes of `reproduce p-sweep`.
    pub p_values: Vec<usize>,
    /// Thresholds of `reproduce threshold-sweep`.
    pub thresholds: Vec<f64>,
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self {
            p: 800,
            eps_res: None,
            basis_rank: Some(400),
            eps_psi: kkl_core::spectral::DEFAULT_EPS_PSI,
            p_values: vec![100, 200, 400, 600, 800, 1000, 2000],
            thresholds: vec![0.04, 0.03, 0.02, 0.01, 0.0075, 0.005],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Seed of the closed-loop test trajectory.
    pub test_seed: u64,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
    /// Number of orbits of an orbit dataset.
    pub orbits: usize,
    /// Recorded history per orbit; defaults to `observer.ell`.
    pub history: Option<usize>,
    pub long_orbit_len: usize,
    pub snapshot_orbits: usize,
    pub snapshot_steps: usize,
    /// Closed-loop trajectory length.
    pub steps: usize,
    pub settle_time: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            test_seed: 1000,
            threads: None,
            out_dir: PathBuf::from("kkl-out"),
            orbits: 1000,
            history: None,
            long_orbit_len: 1000,
            snapshot_orbits: 250,
            snapshot_steps: 20,
            steps: 2000,
            settle_time: kkl_core::pipelines::DEFAULT_SETTLE_TIME,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemSection,
    pub observer: ObserverSection,
    pub kernel: KernelSection,
    pub krr: KrrSection,
    pub spectral: SpectralSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.into(),
            source: e,
        })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// SHA-256 of the canonical TOML, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn dim(&self) -> usize {
        match self.system.name {
            SystemName::Lorenz => 3,
            SystemName::Circle | SystemName::LimitCycle => 2,
        }
    }

    pub fn system(&self) -> Result<Box<dyn DiscreteSystem>, CliError> {
        let s = &self.system;
        Ok(match s.name {
            SystemName::Lorenz => Box::new(lorenz_system()),
            SystemName::Circle => Box::new(circle_rotation(s.gamma)),
            SystemName::LimitCycle => {
                Box::new(limit_cycle_system(s.rate, s.gamma).map_err(|e| CliError::Config(e.to_string()))?)
            }
        })
    }

    pub fn init_box(&self) -> Result<InitBox, CliError> {
        let half = self.system.half_width.unwrap_or(match self.system.name {
            SystemName::Lorenz => 15.0,
            SystemName::Circle => 1.0,
            SystemName::LimitCycle => 1.5,
        });
        InitBox::cube(self.dim(), half).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn long_orbit_start(&self) -> Result<InitialState, CliError> {
        match &self.system.initial_state {
            Some(p) if p.len() == self.dim() => Ok(InitialState::Point(p.clone())),
            Some(p) => Err(CliError::Config(format!(
                "system.initial_state has {} entries for a system of dimension {}",
                p.len(),
                self.dim()
            ))),
            None if self.system.name == SystemName::Lorenz => Ok(InitialState::Point(vec![5.0; 3])),
            None => Ok(InitialState::Random(self.init_box()?)),
        }
    }

    pub fn history(&self) -> usize {
        self.run.history.unwrap_or(self.observer.ell)
    }

    pub fn synthesis(&self) -> Result<SynthesisConfig, CliError> {
        let cfg = |e: kkl_core::Error| CliError::Config(e.to_string());
        let o = &self.observer;
        let sp = &self.spectral;
        let mut spectral = SpectralOptions::new(sp.p).with_eps_psi(sp.eps_psi);
        if let Some(t) = sp.eps_res {
            spectral = spectral.with_threshold(t);
        }
        if let Some(r) = sp.basis_rank {
            spectral = spectral.with_basis_rank(r);
        }
        let grid = self.krr.tune.then(|| KrrGrid {
            sigmas: self.krr.sigmas.clone(),
            alphas: self.krr.alphas.clone(),
            folds: self.krr.folds,
        });
        let config = SynthesisConfig {
            params: DeepKklParams::new(o.m, o.beta, o.ell).map_err(cfg)?,
            x_kernel: self.kernel.x.build(self.dim())?,
            z_kernel: self.kernel.z.build(o.m)?,
            alpha: self.krr.alpha,
            grid,
            spectral,
            seed: self.run.seed,
        };
        config.validate().map_err(cfg)?;
        Ok(config)
    }

    /// Checks everything that can be checked before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        self.system()?;
        self.init_box()?;
        self.synthesis()?;
        if self.run.steps <= self.run.settle_time {
            return Err(CliError::Config(format!(
                "run.steps ({}) must exceed run.settle_time ({})",
                self.run.steps, self.run.settle_time
            )));
        }
        if self.history() < self.observer.ell {
            return Err(CliError::Config(format!(
                "run.history ({}) is shorter than observer.ell ({})",
                self.history(),
                self.observer.ell
            )));
        }
        if self.run.threads == Some(0) {
            return Err(CliError::Config("run.threads must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_describe_the_lorenz_setup() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let s = c.synthesis().unwrap();
        assert_eq!(s.params.m(), 3);
        assert_eq!(s.params.ell(), 50);
        assert_eq!(s.z_kernel, RadialKernel::gaussian(10.0).unwrap());
        assert_eq!(s.x_kernel, RadialKernel::wendland(3, 1, 10.0).unwrap());
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c = RunConfig::parse("[observer]\nbeta = 0.95\n\n[kernel.z]\nfamily = \"gaussian\"\nsigma = 1.0\n").unwrap();
        assert_eq!(c.observer.beta, 0.95);
        assert_eq!(c.observer.m, 3);
        assert_eq!(c.kernel.z.sigma, 1.0);
        assert_eq!(c.kernel.x.family, "wendland");
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        assert!(matches!(RunConfig::parse("[observer]\ngamma = 1\n"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("[plots]\n"), Err(CliError::Config(_))));
    }

    #[test]
    fn canonical_form_round_trips_with_a_stable_hash() {
        let mut c = RunConfig::default();
        c.spectral.eps_res = Some(0.01);
        let back = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        c.run.seed = 1;
        assert_ne!(back.hash(), c.hash());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut c = RunConfig::default();
        c.kernel.x.family = "cauchy".into();
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let mut c = RunConfig::default();
        c.observer.beta = 1.5;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let mut c = RunConfig::default();
        c.run.steps = 100;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }
}
