//! Data-driven synthesis of Kazantzis-Kravaris/Luenberger (KKL) observers for
//! measure-preserving discrete-time systems.
//!
//! The crate is organised bottom-up:
//!
//! - [`kernels`]: radial kernel families (Wendland, Matérn, Gaussian) and Gram assembly.
//! - [`dynamics`]: reference systems, RK4 discretisation and the three dataset regimes.
//! - [`observer`]: the deep KKL observer realisation, injection series and runtime filter.
//! - [`regression`]: kernel interpolation, kernel ridge regression and hyperparameter search.
//! - [`spectral`]: residual-based approximate eigenfunctions of the inverse Perron-Frobenius
//!   operator and the spectral injection formula for snapshot data.
//! - [`pipelines`]: end-to-end synthesis from orbits, a long orbit, or snapshots, plus
//!   closed-loop evaluation.

pub mod dynamics;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod observer;
pub mod pipelines;
pub mod points;
pub mod regression;
pub mod spectral;

pub use error::{Error, Result};
pub use points::Points;

pub use dynamics::{
    CircleRotation, DiscreteSystem, Identity, InitBox, LinearOutput, LongOrbit, OdeMap, OrbitSet,
    SnapshotSet,
};
pub use kernels::{KernelFamily, RadialKernel};
pub use observer::{DeepKklParams, ObserverMatrices, PseudoInverse};
pub use pipelines::{EvaluationReport, SynthesisConfig};
pub use regression::{InterpolantModel, PseudoInverseModel};
pub use spectral::{SpectralModel, SpectralOptions};

/// Re-exported so downstream crates share one matrix and complex type.
pub use faer;
pub use num_complex::Complex64;
