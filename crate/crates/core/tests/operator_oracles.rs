mod common;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use thermoscope::operator::{
    centered_kubo_mori_matrix, expectation, gibbs_normalize, kubo_mori, matrix_log, relative_entropy,
    spectral_decompose,
};
use thermoscope::{DensityMatrix, HermitianOperator};

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `e^{iK}` for Hermitian `K`, via its spectrum.
fn random_unitary(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<Complex64> {
    let k = HermitianOperator::new(random_hermitian(rng, d)).unwrap();
    let s = spectral_decompose(&k).unwrap();
    let phases = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            Complex64::from_polar(1.0, s.values[i])
        } else {
            c(0.0)
        }
    });
    &s.vectors * phases * s.vectors.adjoint()
}

#[test]
fn spectral_round_trip_on_random_4x4() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let a = random_hermitian(&mut rng, 4);
        let s = spectral_decompose(&HermitianOperator::new(a.clone()).unwrap()).unwrap();
        assert!(s.values.windows(2).all(|w| w[0] <= w[1]));
        let diag = DMatrix::from_fn(4, 4, |i, j| if i == j { c(s.values[i]) } else { c(0.0) });
        let back = &s.vectors * diag * s.vectors.adjoint();
        assert!((back - &a).norm() < 1e-10);
        let unit = s.vectors.adjoint() * &s.vectors - DMatrix::<Complex64>::identity(4, 4);
        assert!(unit.norm() < 1e-10);
    }
}

#[test]
fn log_inverts_gibbs_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for d in [2, 3, 4] {
        let a = HermitianOperator::new(random_hermitian(&mut rng, d)).unwrap();
        let rho = gibbs_normalize(&a).unwrap();
        let s = spectral_decompose(&a).unwrap();
        let log_z = s.values.iter().map(|v| v.exp()).sum::<f64>().ln();
        let expected = a.shifted(-log_z);
        let got = matrix_log(&rho).unwrap();
        assert!((got.matrix() - expected.matrix()).norm() < 1e-9);
    }
}

#[test]
fn qubit_gibbs_state_has_tanh_bloch_length() {
    let n = [0.48, -0.6, 0.64];
    let op = bloch_operator(n).scale(-1.0);
    let rho = gibbs_normalize(&op).unwrap();
    let b = rho.bloch_vector().unwrap();
    let len = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((len - 1f64.tanh()).abs() < 1e-12);
    for k in 0..3 {
        assert!((b[k] + 1f64.tanh() * n[k]).abs() < 1e-12);
    }
}

#[test]
fn relative_entropy_matches_direct_spectral_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let rho = random_state(&mut rng, 2, 0.05);
        let tau = random_state(&mut rng, 2, 0.05);
        // tr ρ ln ρ − tr ρ ln τ, with logs from a fresh eigendecomposition
        let log = |m: &DMatrix<Complex64>| {
            let e = nalgebra::SymmetricEigen::new(m.clone());
            let diag = DMatrix::from_fn(2, 2, |i, j| if i == j { c(e.eigenvalues[i].ln()) } else { c(0.0) });
            &e.eigenvectors * diag * e.eigenvectors.adjoint()
        };
        let oracle = (&rho * (log(&rho) - log(&tau))).trace().re;
        let got = relative_entropy(
            &DensityMatrix::new(rho.clone()).unwrap(),
            &DensityMatrix::new(tau.clone()).unwrap(),
        )
        .unwrap();
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
    }
}

#[test]
fn kubo_mori_matches_dense_quadrature_on_qubits() {
    let nodes = gauss_legendre(2000);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..10 {
        let rho = random_state(&mut rng, 2, 0.05);
        let x = random_hermitian(&mut rng, 2);
        let y = random_hermitian(&mut rng, 2);
        let oracle = kubo_mori_quadrature_dense(&x, &y, &rho, &nodes);
        let got = kubo_mori(
            &HermitianOperator::new(x).unwrap(),
            &HermitianOperator::new(y).unwrap(),
            &DensityMatrix::new(rho).unwrap(),
        )
        .unwrap();
        assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
    }
}

#[test]
fn metric_along_z_matches_quadrature() {
    let nodes = gauss_legendre(2000);
    for b in [0.05, 0.3, 0.8] {
        let rho = DensityMatrix::from_bloch([0.0, 0.0, b]).unwrap();
        let paulis = HermitianOperator::paulis();
        let metric = centered_kubo_mori_matrix(&paulis, &rho).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let raw = kubo_mori_quadrature(paulis[i].matrix(), paulis[j].matrix(), rho.matrix(), &nodes);
                let centered = raw
                    - expectation(&paulis[i], &rho).unwrap() * expectation(&paulis[j], &rho).unwrap();
                assert!((metric[(i, j)] - centered).abs() < 1e-8);
            }
        }
        assert!((metric[(2, 2)] - (1.0 - b * b)).abs() < 1e-12);
        let transverse = b / b.atanh();
        assert!((metric[(0, 0)] - transverse).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unitary_conjugation_invariance(seed in any::<u64>(), d in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_unitary(&mut rng, d);
        let conj = |m: &DMatrix<Complex64>| &u * m * u.adjoint();
        let rho = random_state(&mut rng, d, 0.1);
        let tau = random_state(&mut rng, d, 0.1);
        let x = random_hermitian(&mut rng, d);
        let y = random_hermitian(&mut rng, d);
        let dm = |m: DMatrix<Complex64>| DensityMatrix::new(m).unwrap();
        let op = |m: DMatrix<Complex64>| HermitianOperator::new(m).unwrap();

        let s0 = relative_entropy(&dm(rho.clone()), &dm(tau.clone())).unwrap();
        let s1 = relative_entropy(&dm(conj(&rho)), &dm(conj(&tau))).unwrap();
        prop_assert!((s0 - s1).abs() < 1e-9);

        let k0 = kubo_mori(&op(x.clone()), &op(y.clone()), &dm(rho.clone())).unwrap();
        let k1 = kubo_mori(&op(conj(&x)), &op(conj(&y)), &dm(conj(&rho))).unwrap();
        prop_assert!((k0 - k1).abs() < 1e-9);

        let e0 = expectation(&op(x.clone()), &dm(rho.clone())).unwrap();
        let e1 = expectation(&op(conj(&x)), &dm(conj(&rho))).unwrap();
        prop_assert!((e0 - e1).abs() < 1e-9);

        let l0 = conj(matrix_log(&dm(rho.clone())).unwrap().matrix());
        let l1 = matrix_log(&dm(conj(&rho))).unwrap();
        prop_assert!((l0 - l1.matrix()).norm() < 1e-9);
    }

    #[test]
    fn relative_entropy_is_nonnegative(seed in any::<u64>(), d in 2usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density(&mut rng, d, 0.05);
        let tau = random_density(&mut rng, d, 0.05);
        prop_assert!(relative_entropy(&rho, &tau).unwrap() >= -1e-12);
        prop_assert!(relative_entropy(&rho, &rho).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kubo_mori_is_symmetric_and_positive(seed in any::<u64>(), d in 2usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density(&mut rng, d, 0.05);
        let x = HermitianOperator::new(random_hermitian(&mut rng, d)).unwrap();
        let y = HermitianOperator::new(random_hermitian(&mut rng, d)).unwrap();
        let xy = kubo_mori(&x, &y, &rho).unwrap();
        let yx = kubo_mori(&y, &x, &rho).unwrap();
        prop_assert!((xy - yx).abs() < 1e-10 * (1.0 + xy.abs()));
        prop_assert!(kubo_mori(&x, &x, &rho).unwrap() >= 0.0);
    }
}
