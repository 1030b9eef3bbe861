mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use thermoscope::dataset::pauli_observables;
use thermoscope::gibbs::{
    center_of_mass, gaussian_regime, interpolate, project, pythagoras_residual, sample_geometries, tomographic_image,
    GibbsState,
};
use thermoscope::operator::{expectation, relative_entropy};
use thermoscope::{DensityMatrix, Error, HermitianOperator, LevelOfDescription};

fn pauli_level() -> LevelOfDescription {
    LevelOfDescription::new("F", pauli_observables().into_iter().map(|o| o.operator).collect()).unwrap()
}

fn z_level() -> LevelOfDescription {
    LevelOfDescription::new("Z", vec![HermitianOperator::pauli_z()]).unwrap()
}

#[test]
fn projection_onto_z_matches_brute_force_minimization() {
    let sigma = DensityMatrix::maximally_mixed(2);
    let mu = DensityMatrix::from_bloch([0.1, 0.0, 0.02]).unwrap();
    let pi = project(&mu, &z_level(), &sigma).unwrap();
    // among states with ⟨Z⟩ = 0.02, scan the transverse Bloch components for the minimum of S(·‖σ)
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in -40..=40 {
        for j in -40..=40 {
            let (x, y) = (i as f64 * 0.005, j as f64 * 0.005);
            let cand = DensityMatrix::from_bloch([x, y, 0.02]).unwrap();
            let s = relative_entropy(&cand, &sigma).unwrap();
            if s < best.0 {
                best = (s, x, y);
            }
        }
    }
    assert_eq!((best.1, best.2), (0.0, 0.0));
    let b = pi.state.bloch_vector().unwrap();
    assert!(b[0].abs() < 1e-12 && b[1].abs() < 1e-12 && (b[2] - 0.02).abs() < 1e-10);
    assert!((relative_entropy(&pi.state, &sigma).unwrap() - best.0).abs() < 1e-12);
}

#[test]
fn tomography_reproduces_bloch_vectors_and_rejects_outside_points() {
    let sigma = DensityMatrix::maximally_mixed(2);
    let rho = tomographic_image(&[0.1, 0.0, 0.02], &pauli_level(), &sigma).unwrap();
    let b = rho.bloch_vector().unwrap();
    assert!((b[0] - 0.1).abs() < 1e-10 && b[1].abs() < 1e-10 && (b[2] - 0.02).abs() < 1e-10);
    let err = tomographic_image(&[0.99999, 0.99999, 0.99999], &pauli_level(), &sigma).unwrap_err();
    assert!(matches!(err, Error::InfeasibleMoments { .. }), "{err:?}");
}

#[test]
fn pythagoras_holds_for_a_qutrit_with_a_diagonal_observable() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let level = LevelOfDescription::new("D", vec![HermitianOperator::diagonal(&[1.0, 0.0, -1.0])]).unwrap();
    for _ in 0..20 {
        let mu = random_density(&mut rng, 3, 0.05);
        let sigma = random_density(&mut rng, 3, 0.3);
        let omega = GibbsState::from_lagrange(&sigma, &level, vec![rng.random_range(-2.0..2.0)]).unwrap();
        assert!(pythagoras_residual(&mu, &level, &sigma, &omega).unwrap().abs() < 1e-8);
    }
}

#[test]
fn interpolation_moves_monotonically_towards_the_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for d in [2, 3] {
        let sigma = random_density(&mut rng, d, 0.3);
        let mu = random_density(&mut rng, d, 0.05);
        let level = LevelOfDescription::new("G", vec![random_traceless(&mut rng, d)]).unwrap();
        let pi = project(&mu, &level, &sigma).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..=20 {
            let x = k as f64 / 20.0;
            let s = relative_entropy(&interpolate(&pi, &sigma, x).unwrap(), &sigma).unwrap();
            assert!(s <= last + 1e-12, "x = {x}: {s} > {last}");
            last = s;
        }
        assert!(last.abs() < 1e-12);
    }
}

#[test]
fn centers_of_a_tight_cluster_nearly_coincide() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let states: Vec<DensityMatrix> = (0..10)
        .map(|_| {
            let u = unit_vector(&mut rng);
            let r = 0.05 * rng.random_range(0.0..1.0_f64);
            DensityMatrix::from_bloch([0.3 + r * u[0], r * u[1], 0.2 + r * u[2]]).unwrap()
        })
        .collect();
    let w = vec![0.1; 10];
    let com = center_of_mass(&states, &w).unwrap();
    let regime = gaussian_regime(&states, &com.mixture_mean).unwrap();
    assert!(regime.is_gaussian);
    let gap = com.exponential_mean.frobenius_distance(&com.mixture_mean);
    assert!(gap < 1e-2);
    assert!(gap <= 10.0 * regime.max_pairwise_entropy);
}

#[test]
fn sample_projections_match_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let sigma = random_density(&mut rng, 3, 0.3);
    let level = LevelOfDescription::new("G", vec![random_traceless(&mut rng, 3), random_traceless(&mut rng, 3)]).unwrap();
    let images: Vec<DensityMatrix> = (0..6).map(|_| random_density(&mut rng, 3, 0.1)).collect();
    let sizes = [100, 200, 300, 400, 500, 600];
    let geo = sample_geometries(&images, &sizes, &level, &sigma, 5.0).unwrap();
    let total: f64 = geo.iter().map(|g| g.weight).sum();
    assert!((total - 1.0).abs() < 1e-12);
    for (g, n) in geo.iter().zip(sizes) {
        assert!((g.mixing - 5.0 / (5.0 + n as f64)).abs() < 1e-15);
        for op in level.observables() {
            let diff = expectation(op, &g.projection.state).unwrap() - expectation(op, &g.image).unwrap();
            assert!(diff.abs() <= 1e-9);
        }
    }
}

fn level_from_seed(rng: &mut ChaCha8Rng, d: usize, p: usize) -> LevelOfDescription {
    LevelOfDescription::new("G", (0..p).map(|_| random_traceless(rng, d)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_idempotent(seed in any::<u64>(), d in 2usize..=3, p in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = random_density(&mut rng, d, 0.3);
        let level = level_from_seed(&mut rng, d, p);
        let lambda: Vec<f64> = (0..p).map(|_| rng.random_range(-0.5..0.5)).collect();
        let omega = GibbsState::from_lagrange(&sigma, &level, lambda.clone()).unwrap();
        let again = project(&omega.state, &level, &sigma).unwrap();
        prop_assert!(again.state.frobenius_distance(&omega.state) < 1e-9);
        for (a, b) in again.lagrange.iter().zip(&lambda) {
            prop_assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn nested_projections_compose(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let sigma = random_density(&mut rng, d, 0.3);
        let mu = random_density(&mut rng, d, 0.1);
        let a = random_traceless(&mut rng, d).scale(0.5);
        let b = random_traceless(&mut rng, d).scale(0.5);
        let small = LevelOfDescription::new("G", vec![a.clone()]).unwrap();
        let large = LevelOfDescription::new("H", vec![a, b]).unwrap();
        let direct = project(&mu, &small, &sigma).unwrap();
        let via = project(&project(&mu, &large, &sigma).unwrap().state, &small, &sigma).unwrap();
        prop_assert!(direct.state.frobenius_distance(&via.state) < 1e-9);
    }

    #[test]
    fn empty_level_projects_to_the_reference(seed in any::<u64>(), d in 2usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = random_density(&mut rng, d, 0.3);
        let mu = random_density(&mut rng, d, 0.1);
        let pi = project(&mu, &LevelOfDescription::empty("0", d), &sigma).unwrap();
        prop_assert!(pi.state.frobenius_distance(&sigma) < 1e-12);
    }

    #[test]
    fn mixture_mean_is_the_linear_combination(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states: Vec<DensityMatrix> = (0..4).map(|_| random_density(&mut rng, 3, 0.1)).collect();
        let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let com = center_of_mass(&states, &w).unwrap();
        let mut sum = states[0].matrix() * num_complex::Complex64::new(w[0], 0.0);
        for (s, wi) in states.iter().zip(&w).skip(1) {
            sum += s.matrix() * num_complex::Complex64::new(*wi, 0.0);
        }
        prop_assert!((com.mixture_mean.matrix() - sum).norm() < 1e-14);
    }
}
