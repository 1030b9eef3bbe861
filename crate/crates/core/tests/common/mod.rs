//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use thermoscope::dataset::{pauli_observables, Dataset, ReferenceState, Sample};
use thermoscope::{DensityMatrix, HermitianOperator};

/// Gauss–Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// `ρ^ν` from a fresh eigendecomposition.
fn matrix_power(rho: &DMatrix<Complex64>, nu: f64) -> DMatrix<Complex64> {
    let eig = SymmetricEigen::new(rho.clone());
    let d = rho.nrows();
    let diag = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            Complex64::new(eig.eigenvalues[i].max(0.0).powf(nu), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    &eig.eigenvectors * diag * eig.eigenvectors.adjoint()
}

/// `∫₀¹ tr(ρ^ν X ρ^{1−ν} Y) dν` by quadrature.
pub fn kubo_mori_quadrature(x: &DMatrix<Complex64>, y: &DMatrix<Complex64>, rho: &DMatrix<Complex64>, nodes: &(Vec<f64>, Vec<f64>)) -> f64 {
    let eig = SymmetricEigen::new(rho.clone());
    let v = &eig.eigenvectors;
    let xt = v.adjoint() * x * v;
    let yt = v.adjoint() * y * v;
    let p: Vec<f64> = eig.eigenvalues.iter().map(|e| e.max(0.0)).collect();
    let d = rho.nrows();
    let mut total = 0.0;
    for (nu, w) in nodes.0.iter().zip(&nodes.1) {
        let mut acc = 0.0;
        for j in 0..d {
            for k in 0..d {
                acc += (xt[(j, k)] * yt[(k, j)]).re * p[j].powf(*nu) * p[k].powf(1.0 - nu);
            }
        }
        total += w * acc;
    }
    total
}

/// Same integral with the powers formed as full matrices, for small checks.
pub fn kubo_mori_quadrature_dense(x: &DMatrix<Complex64>, y: &DMatrix<Complex64>, rho: &DMatrix<Complex64>, nodes: &(Vec<f64>, Vec<f64>)) -> f64 {
    nodes
        .0
        .iter()
        .zip(&nodes.1)
        .map(|(nu, w)| w * (matrix_power(rho, *nu) * x * matrix_power(rho, 1.0 - nu) * y).trace().re)
        .sum()
}

pub fn random_hermitian<R: Rng>(rng: &mut R, d: usize) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(d, d, |_, _| {
        Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    });
    (&g + g.adjoint()) * Complex64::new(0.5, 0.0)
}

pub fn random_traceless<R: Rng>(rng: &mut R, d: usize) -> HermitianOperator {
    let h = random_hermitian(rng, d);
    let tr = h.trace() / Complex64::new(d as f64, 0.0);
    let h = h - DMatrix::identity(d, d) * tr;
    HermitianOperator::new(h).unwrap()
}

/// Random full-rank state, mixed with the identity so that `λ_min ≥ floor/d`.
pub fn random_state<R: Rng>(rng: &mut R, d: usize, floor: f64) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(d, d, |_, _| {
        Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    });
    let rho = &g * g.adjoint();
    let rho = &rho / rho.trace();
    rho * Complex64::new(1.0 - floor, 0.0) + DMatrix::identity(d, d) * Complex64::new(floor / d as f64, 0.0)
}

pub fn random_density<R: Rng>(rng: &mut R, d: usize, floor: f64) -> DensityMatrix {
    DensityMatrix::new(random_state(rng, d, floor)).unwrap()
}

pub fn unit_vector<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

pub fn qubit_dataset(blochs: &[[f64; 3]], size: u64) -> Dataset {
    let samples = blochs
        .iter()
        .map(|b| Sample {
            size,
            means: b.to_vec(),
        })
        .collect();
    Dataset::new(pauli_observables(), ReferenceState::Uniform, samples, None).unwrap()
}

/// `n·σ`
pub fn bloch_operator(n: [f64; 3]) -> HermitianOperator {
    HermitianOperator::linear_combination(&n, &HermitianOperator::paulis()).unwrap()
}

/// Qubit likelihood objective with the exact Bloch relation
/// `⟨F⟩_{π̄(ξ)} = (ξ·f̄ / |ξ|²) ξ` in Euclidean components.
pub fn qubit_objective(xi: &DVector<f64>, c: &DMatrix<f64>, gamma: &DMatrix<f64>, f_bar: &DVector<f64>) -> f64 {
    let norm2 = xi.dot(&(c * xi));
    let gm = xi.dot(&(gamma * xi)) / norm2;
    let means = xi * (xi.dot(f_bar) / xi.dot(xi));
    let df = means - f_bar;
    let c_inv = c.clone().try_inverse().unwrap();
    gm - df.dot(&(c_inv * &df))
}

fn spherical(t: f64, p: f64) -> DVector<f64> {
    DVector::from_vec(vec![t.sin() * p.cos(), t.sin() * p.sin(), t.cos()])
}

/// Fibonacci-lattice search over the sphere followed by a shrinking pattern search.
pub fn grid_search_xi(c: &DMatrix<f64>, gamma: &DMatrix<f64>, f_bar: &DVector<f64>, points: usize) -> DVector<f64> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for k in 0..points {
        let z = 1.0 - 2.0 * (k as f64 + 0.5) / points as f64;
        let t = z.clamp(-1.0, 1.0).acos();
        let p = golden * k as f64;
        let j = qubit_objective(&spherical(t, p), c, gamma, f_bar);
        if j > best.0 {
            best = (j, t, p);
        }
    }
    let center = spherical(best.1, best.2);
    // tangent chart around the best lattice point
    let seed = if center[0].abs() < 0.9 { DVector::from_vec(vec![1.0, 0.0, 0.0]) } else { DVector::from_vec(vec![0.0, 1.0, 0.0]) };
    let u = (&seed - &center * center.dot(&seed)).normalize();
    let v = center.cross(&u);
    let at = |a: f64, b: f64| (&center + &u * a + &v * b).normalize();
    let (mut j, mut a, mut b) = (best.0, 0.0, 0.0);
    let mut step = 0.05;
    while step > 1e-12 {
        let mut moved = false;
        for (da, db) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step), (step, step), (-step, -step), (step, -step), (-step, step)] {
            let cand = qubit_objective(&at(a + da, b + db), c, gamma, f_bar);
            if cand > j {
                j = cand;
                a += da;
                b += db;
                moved = true;
                break;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    at(a, b)
}

/// Undirected angle between two directions in the metric `c`, in degrees.
pub fn line_angle_degrees(c: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let cos = x.dot(&(c * y)) / (x.dot(&(c * x)) * y.dot(&(c * y))).sqrt();
    cos.abs().clamp(0.0, 1.0).acos().to_degrees()
}

pub fn report(criterion: usize, pass: bool, detail: &str) {
    println!("criterion {criterion}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}
