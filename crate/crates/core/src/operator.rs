//! Dense Hermitian operator algebra.
//!
//! Every matrix function (logarithm, exponential, fractional power) goes through
//! the spectral decomposition, which for the small dimensions handled here is
//! both the most accurate and the simplest route. Density matrices cache their
//! spectrum at construction so repeated entropies and correlations are cheap.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Eigenvalue floor applied when regularizing states.
pub const EPS_RANK: f64 = 1e-12;

/// Asymmetry above which a matrix is rejected as non-Hermitian.
const HERMITIAN_REJECT: f64 = 1e-8;

/// Trace deviation tolerated (and renormalized away) when building a state.
const TRACE_TOLERANCE: f64 = 1e-8;

/// Most negative eigenvalue tolerated before clamping.
const NEGATIVE_TOLERANCE: f64 = 1e-12;

const EIGEN_MAX_ITER: usize = 10_000;

/// Serialized form of a complex matrix: row-major nested arrays of `[re, im]`.
pub type MatrixRows = Vec<Vec<[f64; 2]>>;

pub fn matrix_to_rows(m: &DMatrix<Complex64>) -> MatrixRows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn rows_to_matrix(rows: &MatrixRows) -> Result<DMatrix<Complex64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::NotSquare { rows: 0, cols: 0 });
    }
    for row in rows {
        if row.len() != n {
            return Err(Error::NotSquare {
                rows: n,
                cols: row.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(rows[i][j][0], rows[i][j][1])
    }))
}

fn max_asymmetry(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn symmetrize(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()).scale(0.5)
}

/// A finite-dimensional Hermitian operator (observable, Hamiltonian, logarithm of a state).
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    mat: DMatrix<Complex64>,
}

impl HermitianOperator {
    /// Validates and symmetrizes `mat`.
    pub fn new(mat: DMatrix<Complex64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::NotSquare {
                rows: mat.nrows(),
                cols: mat.ncols(),
            });
        }
        if mat.nrows() < 2 {
            return Err(Error::DimensionTooSmall(mat.nrows()));
        }
        let asymmetry = max_asymmetry(&mat);
        if !asymmetry.is_finite() || asymmetry > HERMITIAN_REJECT {
            return Err(Error::NotHermitian { asymmetry });
        }
        Ok(Self {
            mat: symmetrize(&mat),
        })
    }

    pub(crate) fn from_matrix_unchecked(mat: DMatrix<Complex64>) -> Self {
        Self {
            mat: symmetrize(&mat),
        }
    }

    pub fn from_real(mat: DMatrix<f64>) -> Result<Self> {
        Self::new(mat.map(|x| Complex64::new(x, 0.0)))
    }

    pub fn from_rows(rows: &MatrixRows) -> Result<Self> {
        Self::new(rows_to_matrix(rows)?)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: DMatrix::zeros(dim, dim),
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        Self {
            mat: DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    Complex64::new(values[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }),
        }
    }

    pub fn pauli_x() -> Self {
        Self::from_matrix_unchecked(DMatrix::from_row_slice(
            2,
            2,
            &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
        ))
    }

    pub fn pauli_y() -> Self {
        Self::from_matrix_unchecked(DMatrix::from_row_slice(
            2,
            2,
            &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)],
        ))
    }

    pub fn pauli_z() -> Self {
        Self::diagonal(&[1.0, -1.0])
    }

    /// Pauli X, Y, Z in that order.
    pub fn paulis() -> [Self; 3] {
        [Self::pauli_x(), Self::pauli_y(), Self::pauli_z()]
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    pub fn to_rows(&self) -> MatrixRows {
        matrix_to_rows(&self.mat)
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    /// Hilbert–Schmidt inner product `tr(AB)`.
    pub fn hs_inner(&self, other: &Self) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self.mat[(i, j)] * other.mat[(j, i)]).re;
            }
        }
        acc
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.norm()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            mat: self.mat.scale(factor),
        }
    }

    /// `self + factor * other`
    pub fn add_scaled(&self, factor: f64, other: &Self) -> Self {
        Self {
            mat: &self.mat + other.mat.scale(factor),
        }
    }

    /// `self + shift * 1`
    pub fn shifted(&self, shift: f64) -> Self {
        let mut mat = self.mat.clone();
        for i in 0..mat.nrows() {
            mat[(i, i)] += Complex64::new(shift, 0.0);
        }
        Self { mat }
    }

    /// `Σ_k coeffs[k] * ops[k]`
    pub fn linear_combination(coeffs: &[f64], ops: &[HermitianOperator]) -> Result<Self> {
        let first = ops
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty operator list".into()))?;
        if coeffs.len() != ops.len() {
            return Err(Error::DimMismatch {
                expected: ops.len(),
                found: coeffs.len(),
            });
        }
        let d = first.dim();
        let mut mat = DMatrix::<Complex64>::zeros(d, d);
        for (w, op) in coeffs.iter().zip(ops) {
            check_dims(d, op.dim())?;
            mat += op.mat.scale(*w);
        }
        Ok(Self { mat })
    }
}

impl Serialize for HermitianOperator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for HermitianOperator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = MatrixRows::deserialize(d)?;
        HermitianOperator::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[inline]
fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// Eigen-decomposition `A = V diag(values) V†`, values ascending.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

impl Spectrum {
    /// Rebuilds `V diag(f(λ)) V†`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<Complex64> {
        compose(&self.vectors, &self.values.iter().map(|&x| f(x)).collect::<Vec<_>>())
    }
}

fn compose(vectors: &DMatrix<Complex64>, values: &[f64]) -> DMatrix<Complex64> {
    let n = vectors.nrows();
    let mut scaled = vectors.clone();
    for j in 0..n {
        for i in 0..n {
            scaled[(i, j)] *= values[j];
        }
    }
    symmetrize(&(scaled * vectors.adjoint()))
}

fn eigh(mat: &DMatrix<Complex64>) -> Result<Spectrum> {
    let eig = SymmetricEigen::try_new(mat.clone(), f64::EPSILON, EIGEN_MAX_ITER).ok_or(
        Error::EigenNonConvergence {
            iterations: EIGEN_MAX_ITER,
        },
    )?;
    let n = mat.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(Spectrum { values, vectors })
}

pub fn spectral_decompose(a: &HermitianOperator) -> Result<Spectrum> {
    eigh(&a.mat)
}

/// A density matrix with its cached spectrum.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    mat: DMatrix<Complex64>,
    spectrum: Spectrum,
}

impl DensityMatrix {
    /// Validates `mat` as a state and regularizes it so that every eigenvalue
    /// is at least [`EPS_RANK`].
    pub fn new(mat: DMatrix<Complex64>) -> Result<Self> {
        Ok(Self::new_unregularized(mat)?.regularized())
    }

    /// Validates `mat` as a state without lifting small eigenvalues; tiny
    /// negative eigenvalues are clamped to zero.
    pub fn new_unregularized(mat: DMatrix<Complex64>) -> Result<Self> {
        let op = HermitianOperator::new(mat)?;
        let tr = op.trace();
        if !tr.is_finite() || (tr - 1.0).abs() > TRACE_TOLERANCE {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let spectrum = eigh(&op.mat.scale(1.0 / tr))?;
        if spectrum.values[0] < -NEGATIVE_TOLERANCE {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {:.3e}",
                spectrum.values[0]
            )));
        }
        let values: Vec<f64> = spectrum.values.iter().map(|&x| x.max(0.0)).collect();
        Ok(Self::from_spectrum(values, spectrum.vectors))
    }

    pub fn from_operator(op: &HermitianOperator) -> Result<Self> {
        Self::new(op.mat.clone())
    }

    pub fn from_rows(rows: &MatrixRows) -> Result<Self> {
        Self::new(rows_to_matrix(rows)?)
    }

    /// Builds a state from a nonnegative spectrum (renormalized to unit trace).
    pub(crate) fn from_spectrum(mut values: Vec<f64>, vectors: DMatrix<Complex64>) -> Self {
        let total: f64 = values.iter().sum();
        for v in values.iter_mut() {
            *v /= total;
        }
        let mat = compose(&vectors, &values);
        Self {
            mat,
            spectrum: Spectrum { values, vectors },
        }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self::from_spectrum(vec![1.0; dim], DMatrix::identity(dim, dim))
    }

    /// Qubit state `(1 + b·σ)/2`.
    pub fn from_bloch(b: [f64; 3]) -> Result<Self> {
        let [x, y, z] = b;
        let mat = DMatrix::from_row_slice(
            2,
            2,
            &[
                c(0.5 * (1.0 + z), 0.0),
                c(0.5 * x, -0.5 * y),
                c(0.5 * x, 0.5 * y),
                c(0.5 * (1.0 - z), 0.0),
            ],
        );
        Self::new(mat)
    }

    /// Convex combination `Σ w_i ρ_i`.
    pub fn mixture(states: &[&DensityMatrix], weights: &[f64]) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty state list".into()))?;
        if states.len() != weights.len() {
            return Err(Error::DimMismatch {
                expected: states.len(),
                found: weights.len(),
            });
        }
        let d = first.dim();
        let mut mat = DMatrix::<Complex64>::zeros(d, d);
        for (s, w) in states.iter().zip(weights) {
            check_dims(d, s.dim())?;
            mat += s.mat.scale(*w);
        }
        let tr = mat.trace().re;
        Self::new(mat.scale(1.0 / tr))
    }

    /// Lifts eigenvalues below [`EPS_RANK`] and renormalizes the trace.
    pub fn regularized(&self) -> Self {
        if self.spectrum.values[0] >= EPS_RANK {
            return self.clone();
        }
        let values = self
            .spectrum
            .values
            .iter()
            .map(|&x| x.max(EPS_RANK))
            .collect();
        Self::from_spectrum(values, self.spectrum.vectors.clone())
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    pub fn to_rows(&self) -> MatrixRows {
        matrix_to_rows(&self.mat)
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.spectrum.values
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.spectrum.values[0]
    }

    pub fn as_operator(&self) -> HermitianOperator {
        HermitianOperator {
            mat: self.mat.clone(),
        }
    }

    pub(crate) fn ensure_full_rank(&self) -> Result<()> {
        // renormalization after clamping can leave the floor a hair below EPS_RANK
        if self.min_eigenvalue() < EPS_RANK * (1.0 - 1e-6) {
            Err(Error::RankDeficient {
                min_eigenvalue: self.min_eigenvalue(),
            })
        } else {
            Ok(())
        }
    }

    pub fn log(&self) -> Result<HermitianOperator> {
        matrix_log(self)
    }

    /// `ρ^ν` for `ν >= 0`.
    pub fn power(&self, nu: f64) -> HermitianOperator {
        HermitianOperator {
            mat: self.spectrum.map(|x| if x > 0.0 { x.powf(nu) } else { 0.0 }),
        }
    }

    pub fn frobenius_distance(&self, other: &DensityMatrix) -> f64 {
        (&self.mat - &other.mat).norm()
    }

    /// Bloch vector `(⟨X⟩, ⟨Y⟩, ⟨Z⟩)` of a qubit state.
    pub fn bloch_vector(&self) -> Result<[f64; 3]> {
        check_dims(2, self.dim())?;
        let m = &self.mat;
        Ok([2.0 * m[(0, 1)].re, -2.0 * m[(0, 1)].im, (m[(0, 0)] - m[(1, 1)]).re])
    }
}

pub fn matrix_log(rho: &DensityMatrix) -> Result<HermitianOperator> {
    rho.ensure_full_rank()?;
    Ok(HermitianOperator {
        mat: rho.spectrum.map(f64::ln),
    })
}

/// `exp(A) / tr exp(A)` together with `ln tr exp(A)`.
pub fn gibbs_with_log_partition(a: &HermitianOperator) -> Result<(DensityMatrix, f64)> {
    let spec = spectral_decompose(a)?;
    let top = *spec.values.last().expect("nonempty spectrum");
    let weights: Vec<f64> = spec.values.iter().map(|&x| (x - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let log_z = top + total.ln();
    let state = DensityMatrix::from_spectrum(weights, spec.vectors).regularized();
    Ok((state, log_z))
}

pub fn gibbs_normalize(a: &HermitianOperator) -> Result<DensityMatrix> {
    gibbs_with_log_partition(a).map(|(rho, _)| rho)
}

pub fn expectation(x: &HermitianOperator, rho: &DensityMatrix) -> Result<f64> {
    check_dims(rho.dim(), x.dim())?;
    Ok(x.hs_inner(&rho.as_operator()))
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Quantum relative entropy `S(ρ‖τ) = tr ρ(ln ρ − ln τ)`.
pub fn relative_entropy(rho: &DensityMatrix, tau: &DensityMatrix) -> Result<f64> {
    check_dims(rho.dim(), tau.dim())?;
    tau.ensure_full_rank()?;
    let p = &rho.spectrum.values;
    let q = &tau.spectrum.values;
    let overlap = rho.spectrum.vectors.adjoint() * &tau.spectrum.vectors;
    let n = p.len();
    let mut s: f64 = p.iter().map(|&x| xlogx(x)).sum();
    for j in 0..n {
        if p[j] <= 0.0 {
            continue;
        }
        for k in 0..n {
            s -= p[j] * overlap[(j, k)].norm_sqr() * q[k].ln();
        }
    }
    Ok(s.max(0.0))
}

/// Logarithmic mean `(p − q)/(ln p − ln q)`, equal to `p` on the diagonal.
pub fn log_mean(p: f64, q: f64) -> f64 {
    let r = q / p;
    let u = r - 1.0;
    if u.abs() < 1e-4 {
        // (r-1)/ln r expanded around r = 1
        p * (1.0 + u / 2.0 - u * u / 12.0 + u * u * u / 24.0)
    } else if u.abs() < 0.5 {
        p * u / u.ln_1p()
    } else {
        (p - q) / (p.ln() - q.ln())
    }
}

fn to_eigenbasis(x: &HermitianOperator, rho: &DensityMatrix) -> DMatrix<Complex64> {
    let v = &rho.spectrum.vectors;
    v.adjoint() * &x.mat * v
}

fn weight_matrix(rho: &DensityMatrix) -> DMatrix<f64> {
    let p = &rho.spectrum.values;
    DMatrix::from_fn(p.len(), p.len(), |j, k| log_mean(p[j], p[k]))
}

fn km_contract(xt: &DMatrix<Complex64>, yt: &DMatrix<Complex64>, w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for k in 0..n {
            acc += (xt[(j, k)] * yt[(k, j)]).re * w[(j, k)];
        }
    }
    acc
}

/// Kubo–Mori canonical correlation `⟨X;Y⟩_ρ = ∫₀¹ tr(ρ^ν X ρ^{1−ν} Y) dν`,
/// evaluated in closed form in the eigenbasis of `ρ`.
pub fn kubo_mori(x: &HermitianOperator, y: &HermitianOperator, rho: &DensityMatrix) -> Result<f64> {
    check_dims(rho.dim(), x.dim())?;
    check_dims(rho.dim(), y.dim())?;
    rho.ensure_full_rank()?;
    let w = weight_matrix(rho);
    Ok(km_contract(&to_eigenbasis(x, rho), &to_eigenbasis(y, rho), &w))
}

/// Matrix of canonical correlations `⟨δA_a; δB_b⟩_ρ` between centered operators.
pub fn centered_kubo_mori_matrix(ops: &[HermitianOperator], rho: &DensityMatrix) -> Result<DMatrix<f64>> {
    rho.ensure_full_rank()?;
    let w = weight_matrix(rho);
    let transformed = ops
        .iter()
        .map(|op| {
            check_dims(rho.dim(), op.dim())?;
            Ok(to_eigenbasis(op, rho))
        })
        .collect::<Result<Vec<_>>>()?;
    let means = ops
        .iter()
        .map(|op| expectation(op, rho))
        .collect::<Result<Vec<_>>>()?;
    let m = ops.len();
    let mut k = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let v = km_contract(&transformed[a], &transformed[b], &w) - means[a] * means[b];
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    Ok(k)
}
