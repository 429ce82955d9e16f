//! Fixtures shared by the benchmarks.

use kkl_core::dynamics::{generate_snapshots, lorenz_system, InitBox, SnapshotSet};
use kkl_core::pipelines::DEFAULT_BURN_IN;
use kkl_core::Points;

/// `n` Lorenz snapshot pairs on the attractor, 20 transitions per orbit.
pub fn lorenz_snapshots(n: usize) -> SnapshotSet {
    let orbits = n.div_ceil(20);
    let steps = n / orbits;
    generate_snapshots(&lorenz_system(), orbits, steps, DEFAULT_BURN_IN, &InitBox::cube(3, 15.0).unwrap(), 0)
        .expect("valid snapshot settings")
}

/// Successor points of [`lorenz_snapshots`].
pub fn lorenz_points(n: usize) -> Points {
    lorenz_snapshots(n).successors().clone()
}
