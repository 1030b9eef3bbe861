//! Shared fixtures for benchmarks.

use thermoscope::dataset::pauli_observables;
use thermoscope::sim::{simulate_dataset, Preset};
use thermoscope::{Dataset, DensityMatrix, HermitianOperator, LevelOfDescription};

/// Simulated dataset for a named preset with a fixed seed.
pub fn preset_dataset(preset: Preset) -> Dataset {
    simulate_dataset(&preset.config(1, None).expect("preset config")).expect("preset simulation")
}

/// A Bloch-vector state and the Pauli level, for projection benchmarks.
pub fn projection_fixture() -> (DensityMatrix, LevelOfDescription, DensityMatrix) {
    let mu = DensityMatrix::from_bloch([0.1, -0.05, 0.2]).expect("valid Bloch vector");
    let level = LevelOfDescription::new("F", pauli_observables().into_iter().map(|o| o.operator).collect())
        .expect("Pauli level");
    (mu, level, DensityMatrix::maximally_mixed(2))
}

/// A qutrit state and a two-observable level.
pub fn qutrit_fixture() -> (DensityMatrix, LevelOfDescription, DensityMatrix) {
    let mu = DensityMatrix::from_rows(&vec![
        vec![[0.4, 0.0], [0.05, 0.02], [0.0, 0.0]],
        vec![[0.05, -0.02], [0.35, 0.0], [0.03, 0.0]],
        vec![[0.0, 0.0], [0.03, 0.0], [0.25, 0.0]],
    ])
    .expect("valid qutrit state");
    let level = LevelOfDescription::new(
        "G",
        vec![
            HermitianOperator::diagonal(&[1.0, 0.0, -1.0]),
            HermitianOperator::diagonal(&[1.0, -2.0, 1.0]),
        ],
    )
    .expect("qutrit level");
    (mu, level, DensityMatrix::maximally_mixed(3))
}
