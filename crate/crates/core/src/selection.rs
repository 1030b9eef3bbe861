//! Bayesian scoring of candidate levels of description.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gibbs::{gaussian_regime, project, GaussianRegime, GibbsState, LevelOfDescription};
use crate::operator::{
    centered_kubo_mori_matrix, expectation, relative_entropy, DensityMatrix, HermitianOperator,
};

/// Smallest metric eigenvalue accepted.
pub const MIN_METRIC_EIGENVALUE: f64 = 1e-12;

/// Generalized eigenvalues closer than this are treated as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-10;

/// Search interval for `ln α`.
pub const LN_ALPHA_RANGE: (f64, f64) = (-30.0, 30.0);

/// Kubo–Mori metric of the measured observables at the mixture center `μ̄`.
#[derive(Clone, Debug)]
pub struct CorrelationMetric {
    pub base_state: DensityMatrix,
    pub matrix: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
}

impl CorrelationMetric {
    pub fn at(state: &DensityMatrix, observables: &[HermitianOperator]) -> Result<Self> {
        let matrix = centered_kubo_mori_matrix(observables, state)?;
        let min_eigenvalue = SymmetricEigen::new(matrix.clone()).eigenvalues.min();
        if min_eigenvalue <= MIN_METRIC_EIGENVALUE {
            return Err(Error::SingularMetric { min_eigenvalue });
        }
        let inverse = matrix
            .clone()
            .cholesky()
            .ok_or(Error::SingularMetric { min_eigenvalue })?
            .inverse();
        Ok(Self {
            base_state: state.clone(),
            matrix,
            inverse,
        })
    }

    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    /// `x·y = C_ab x^a y^b` for upper-index vectors.
    pub fn dot(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.matrix * y))
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        self.dot(x, x).max(0.0).sqrt()
    }

    pub fn normalize(&self, x: &DVector<f64>) -> DVector<f64> {
        x / self.norm(x)
    }

    /// `f·g = (C⁻¹)^{ab} f_a g_b` for lower-index vectors.
    pub fn dual_dot(&self, f: &DVector<f64>, g: &DVector<f64>) -> f64 {
        f.dot(&(&self.inverse * g))
    }

    pub fn lower(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    pub fn raise(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.inverse * f
    }

    /// `tr Γ = (C⁻¹)^{ab} Γ_ab`
    pub fn trace(&self, gamma: &DMatrix<f64>) -> f64 {
        self.inverse.component_mul(gamma).sum()
    }

    /// Angle in radians between two upper-index vectors.
    pub fn angle(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let c = self.dot(x, y) / (self.norm(x) * self.norm(y));
        c.clamp(-1.0, 1.0).acos()
    }
}

/// Sample covariance `Γ_ab` and weighted mean `f̄_b` of the measured means.
#[derive(Clone, Debug)]
pub struct Covariance {
    pub gamma: DMatrix<f64>,
    pub mean: DVector<f64>,
}

pub fn covariance_matrix(dataset: &Dataset) -> Covariance {
    let m = dataset.m();
    let weights = dataset.weights();
    let mut mean = DVector::zeros(m);
    for (s, w) in dataset.samples().iter().zip(&weights) {
        mean += DVector::from_column_slice(&s.means) * *w;
    }
    let mut gamma = DMatrix::zeros(m, m);
    for (s, w) in dataset.samples().iter().zip(&weights) {
        let d = DVector::from_column_slice(&s.means) - &mean;
        gamma += &d * d.transpose() * *w;
    }
    Covariance { gamma, mean }
}

pub fn correlation_metric(dataset: &Dataset) -> Result<CorrelationMetric> {
    let images = dataset.images()?;
    let refs: Vec<&DensityMatrix> = images.iter().collect();
    let center = DensityMatrix::mixture(&refs, &dataset.weights())?;
    CorrelationMetric::at(&center, dataset.observable_operators())
}

/// Evidence-based estimate of the prior hyperparameter `α`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub alpha: f64,
    /// `−α² ∂²L/∂α²` at the root.
    pub curvature: f64,
    /// `pR/2`, the large-sample value of the curvature.
    pub nominal_curvature: f64,
    pub reliable: bool,
}

fn evidence_condition(alpha: f64, sizes: &[f64], a: &[f64], p: f64) -> f64 {
    sizes
        .iter()
        .zip(a)
        .map(|(&n, &ai)| {
            let q = alpha + n;
            alpha * ai * n * n / (q * q) - 0.5 * p * n / q
        })
        .sum()
}

fn evidence_curvature(alpha: f64, sizes: &[f64], a: &[f64], p: f64) -> f64 {
    sizes
        .iter()
        .zip(a)
        .map(|(&n, &ai)| {
            let q = alpha + n;
            -2.0 * alpha * alpha * ai * n * n / (q * q * q) + 0.5 * p * (1.0 - alpha * alpha / (q * q))
        })
        .sum()
}

/// Solves the evidence condition for `α` given per-sample entropies
/// `S(π_i‖π̄)` and the reference term `S(π̄‖σ)`.
pub fn solve_alpha(sizes: &[f64], entropies: &[f64], reference_entropy: f64, p: usize) -> Result<AlphaEstimate> {
    if sizes.len() != entropies.len() {
        return Err(Error::DimMismatch {
            expected: sizes.len(),
            found: entropies.len(),
        });
    }
    let a: Vec<f64> = entropies.iter().map(|s| s + reference_entropy).collect();
    if a.iter().all(|&x| x <= 0.0) {
        return Err(Error::AlphaUnbounded);
    }
    if p == 0 {
        return Err(Error::NoRoot);
    }
    let pf = p as f64;
    let g = |ln_alpha: f64| evidence_condition(ln_alpha.exp(), sizes, &a, pf);
    let (mut lo, mut hi) = LN_ALPHA_RANGE;
    let (g_lo, g_hi) = (g(lo), g(hi));
    if g_lo < 0.0 && g_hi < 0.0 {
        return Err(Error::AlphaUnbounded);
    }
    if g_lo >= 0.0 {
        return Err(Error::NoRoot);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let alpha = (0.5 * (lo + hi)).exp();
    let curvature = evidence_curvature(alpha, sizes, &a, pf);
    let nominal_curvature = 0.5 * pf * sizes.len() as f64;
    Ok(AlphaEstimate {
        alpha,
        curvature,
        nominal_curvature,
        reliable: curvature >= 0.5 * nominal_curvature,
    })
}

/// Full log-likelihood assembled from its entropic parts.
#[allow(clippy::too_many_arguments)]
pub fn full_log_likelihood_from_parts(
    sizes: &[f64],
    entropies: &[f64],
    misfit: f64,
    reference_entropy: f64,
    p: usize,
    log_size_sum: f64,
    alpha: f64,
) -> f64 {
    let pf = p as f64;
    let mut total = -0.5 * pf * log_size_sum;
    for (&n, &s) in sizes.iter().zip(entropies) {
        let x = alpha / (alpha + n);
        total += n * (s - misfit) - x * n * (s + reference_entropy) + 0.5 * pf * (x * n).ln();
    }
    total
}

/// Projections of every sample onto one level, with the entropies entering `L`.
#[derive(Clone, Debug)]
pub struct LevelFit {
    pub projections: Vec<GibbsState>,
    /// `π̄ = Σ w_i π_i`
    pub center: DensityMatrix,
    /// `S(π_i‖π̄)`
    pub entropies: Vec<f64>,
    /// `S(μ̄‖π̄)`
    pub misfit: f64,
    /// `S(π̄‖σ)`
    pub reference_entropy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelScore {
    pub label: String,
    pub p: usize,
    pub asymptotic_log_likelihood: f64,
    /// `Σ N_i S(π_i‖π̄)`
    pub data_fit: f64,
    pub misfit: f64,
    pub reference_entropy: f64,
    pub penalty: f64,
    pub per_sample_entropies: Vec<f64>,
    pub alpha: Option<AlphaEstimate>,
    pub full_log_likelihood: Option<f64>,
    pub orientation: Orientation,
    /// Coefficients `v^b` of the spanning observables `Σ_b v^b F_b`, when generated.
    pub directions: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    Explicit,
    Empty,
    Full,
    Pca,
    Anchored,
}

/// A level generated from a generalized eigenproblem.
#[derive(Clone, Debug)]
pub struct OrientedLevel {
    pub level: LevelOfDescription,
    pub orientation: Orientation,
    pub eigenvalues: Vec<f64>,
    pub directions: Vec<DVector<f64>>,
}

/// Generalized symmetric eigenproblem `A v = λ C v`, eigenvalues descending,
/// eigenvectors `C`-orthonormal with a canonical basis on degenerate clusters.
pub fn generalized_eigen(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let m = c.nrows();
    let chol = c.clone().cholesky().ok_or_else(|| Error::SingularMetric {
        min_eigenvalue: SymmetricEigen::new(c.clone()).eigenvalues.min(),
    })?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or(Error::SingularMetric { min_eigenvalue: 0.0 })?;
    let mut reduced = &l_inv * a * l_inv.transpose();
    reduced = (&reduced + reduced.transpose()) * 0.5;
    let eig = SymmetricEigen::new(reduced);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors: Vec<DVector<f64>> = order
        .iter()
        .map(|&i| l_inv.transpose() * eig.eigenvectors.column(i))
        .collect();

    let scale = values.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && (values[end - 1] - values[end]).abs() < DEGENERACY_GAP * scale {
            end += 1;
        }
        out.extend(canonical_cluster_basis(&vectors[start..end], c));
        start = end;
    }
    Ok((values, out))
}

fn sign_fixed(mut v: DVector<f64>) -> DVector<f64> {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v = -v;
        }
    }
    v
}

/// Replaces an arbitrary basis of a degenerate eigenspace by the
/// `C`-orthonormalized projections of the coordinate axes.
fn canonical_cluster_basis(cluster: &[DVector<f64>], c: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let k = cluster.len();
    if k == 1 {
        return vec![sign_fixed(cluster[0].clone())];
    }
    let m = c.nrows();
    let dot = |x: &DVector<f64>, y: &DVector<f64>| x.dot(&(c * y));
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(k);
    for j in 0..m {
        if basis.len() == k {
            break;
        }
        let axis = DVector::from_fn(m, |i, _| if i == j { 1.0 } else { 0.0 });
        let mut v = DVector::zeros(m);
        for u in cluster {
            v += u * dot(u, &axis);
        }
        for b in &basis {
            let overlap = dot(b, &v);
            v -= b * overlap;
        }
        let n = dot(&v, &v).max(0.0).sqrt();
        if n > 1e-6 {
            basis.push(v / n);
        }
    }
    let mut basis: Vec<DVector<f64>> = basis.into_iter().map(sign_fixed).collect();
    basis.sort_by(|x, y| {
        for (a, b) in x.iter().zip(y.iter()) {
            if (a - b).abs() > 1e-12 {
                return b.total_cmp(a);
            }
        }
        std::cmp::Ordering::Equal
    });
    basis
}

/// Everything derived from a dataset that the scoring routines share.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub dataset: Dataset,
    pub images: Vec<DensityMatrix>,
    pub weights: Vec<f64>,
    pub sizes: Vec<f64>,
    /// `μ̄ = Σ w_i μ_i`
    pub center: DensityMatrix,
    pub metric: CorrelationMetric,
    pub covariance: Covariance,
    /// `⟨F_b⟩_σ`
    pub reference_means: DVector<f64>,
    pub regime: GaussianRegime,
}

impl Analysis {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        if dataset.r() < 2 {
            return Err(Error::InvalidDataset(format!(
                "samples: at least two samples are required for covariance-based inference, found {}",
                dataset.r()
            )));
        }
        let images = dataset.images()?;
        let weights = dataset.weights();
        let refs: Vec<&DensityMatrix> = images.iter().collect();
        let center = DensityMatrix::mixture(&refs, &weights)?;
        let metric = CorrelationMetric::at(&center, dataset.observable_operators())?;
        let covariance = covariance_matrix(dataset);
        let sigma = dataset.reference_state();
        let reference_means = DVector::from_iterator(
            dataset.m(),
            dataset
                .observable_operators()
                .iter()
                .map(|f| expectation(f, sigma))
                .collect::<Result<Vec<_>>>()?,
        );
        let regime = gaussian_regime(&images, &center)?;
        Ok(Self {
            dataset: dataset.clone(),
            sizes: dataset.samples().iter().map(|s| s.size as f64).collect(),
            images,
            weights,
            center,
            metric,
            covariance,
            reference_means,
            regime,
        })
    }

    pub fn reference(&self) -> &DensityMatrix {
        self.dataset.reference_state()
    }

    pub fn total_size(&self) -> f64 {
        self.dataset.total_size()
    }

    pub fn log_size_sum(&self) -> f64 {
        self.dataset.log_size_sum()
    }

    fn check_subspace(&self, level: &LevelOfDescription) -> Result<()> {
        if level.dim() != self.dataset.dim() {
            return Err(Error::DimMismatch {
                expected: self.dataset.dim(),
                found: level.dim(),
            });
        }
        let residual = level.containment_residual(self.dataset.level());
        if residual > crate::gibbs::SPAN_TOLERANCE || level.p() > self.dataset.m() {
            return Err(Error::NotSubspace {
                label: level.label().to_string(),
                residual,
            });
        }
        Ok(())
    }

    pub fn fit(&self, level: &LevelOfDescription) -> Result<LevelFit> {
        self.check_subspace(level)?;
        let sigma = self.reference();
        let projections = self
            .images
            .par_iter()
            .map(|mu| project(mu, level, sigma))
            .collect::<Result<Vec<_>>>()?;
        let states: Vec<&DensityMatrix> = projections.iter().map(|g| &g.state).collect();
        let center = DensityMatrix::mixture(&states, &self.weights)?;
        let entropies = projections
            .iter()
            .map(|g| relative_entropy(&g.state, &center))
            .collect::<Result<Vec<_>>>()?;
        let misfit = relative_entropy(&self.center, &center)?;
        let reference_entropy = relative_entropy(&center, sigma)?;
        Ok(LevelFit {
            projections,
            center,
            entropies,
            misfit,
            reference_entropy,
        })
    }

    fn score_from_fit(&self, level: &LevelOfDescription, fit: &LevelFit, orientation: Orientation) -> ModelScore {
        let p = level.p();
        let data_fit: f64 = self.sizes.iter().zip(&fit.entropies).map(|(n, s)| n * s).sum();
        let penalty = 0.5 * p as f64 * self.log_size_sum();
        ModelScore {
            label: level.label().to_string(),
            p,
            asymptotic_log_likelihood: data_fit - self.total_size() * fit.misfit - penalty,
            data_fit,
            misfit: fit.misfit,
            reference_entropy: fit.reference_entropy,
            penalty,
            per_sample_entropies: fit.entropies.clone(),
            alpha: None,
            full_log_likelihood: None,
            orientation,
            directions: None,
        }
    }

    /// `L(G) = Σ N_i [S(π_i‖π̄) − S(μ̄‖π̄)] − pΛ/2`
    pub fn asymptotic_log_likelihood(&self, level: &LevelOfDescription) -> Result<ModelScore> {
        let fit = self.fit(level)?;
        Ok(self.score_from_fit(level, &fit, Orientation::Explicit))
    }

    /// Scores a level and attaches the evidence estimate of `α` (or the given value).
    pub fn score(
        &self,
        level: &LevelOfDescription,
        orientation: Orientation,
        fixed_alpha: Option<f64>,
    ) -> Result<(ModelScore, Option<Error>)> {
        let fit = self.fit(level)?;
        let mut score = self.score_from_fit(level, &fit, orientation);
        let mut alpha_error = None;
        let alpha = match fixed_alpha {
            Some(a) => Some(a),
            None => match solve_alpha(&self.sizes, &fit.entropies, fit.reference_entropy, level.p()) {
                Ok(est) => {
                    score.alpha = Some(est);
                    Some(est.alpha)
                }
                Err(e) => {
                    alpha_error = Some(e);
                    None
                }
            },
        };
        if let Some(a) = alpha {
            if !(a > 0.0) {
                return Err(Error::InvalidArgument(format!("alpha must be positive, got {a}")));
            }
            score.full_log_likelihood = Some(full_log_likelihood_from_parts(
                &self.sizes,
                &fit.entropies,
                fit.misfit,
                fit.reference_entropy,
                level.p(),
                self.log_size_sum(),
                a,
            ));
        }
        Ok((score, alpha_error))
    }

    pub fn full_log_likelihood(&self, level: &LevelOfDescription, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        let fit = self.fit(level)?;
        Ok(full_log_likelihood_from_parts(
            &self.sizes,
            &fit.entropies,
            fit.misfit,
            fit.reference_entropy,
            level.p(),
            self.log_size_sum(),
            alpha,
        ))
    }

    pub fn estimate_alpha(&self, level: &LevelOfDescription) -> Result<AlphaEstimate> {
        let fit = self.fit(level)?;
        solve_alpha(&self.sizes, &fit.entropies, fit.reference_entropy, level.p())
    }

    /// `L(H) − L(G)` through the reference-shifted projection route.
    pub fn compare_levels(&self, g: &LevelOfDescription, h: &LevelOfDescription) -> Result<f64> {
        if g.dim() != h.dim() || !g.is_contained_in(h) {
            return Err(Error::NotNested {
                smaller: g.label().to_string(),
                larger: h.label().to_string(),
            });
        }
        self.check_subspace(h)?;
        let s = h.p() - g.p();
        if s == 0 {
            return Ok(0.0);
        }
        let center = &self.center;
        let per_sample = self
            .images
            .par_iter()
            .map(|mu| {
                let ph = project(mu, h, center)?;
                let pg = project(mu, g, center)?;
                relative_entropy(&ph.state, &pg.state)
            })
            .collect::<Result<Vec<_>>>()?;
        let sigma = self.reference();
        let ch = project(center, h, sigma)?;
        let cg = project(center, g, sigma)?;
        let shift = relative_entropy(&ch.state, &cg.state)?;
        let fit: f64 = self.sizes.iter().zip(&per_sample).map(|(n, s)| n * s).sum();
        Ok(fit + self.total_size() * shift - 0.5 * s as f64 * self.log_size_sum())
    }

    /// `(N/2) tr Γ − (Λ/2) m`, the Gaussian value of `L(F)`.
    pub fn perfect_fit_log_likelihood(&self) -> f64 {
        0.5 * self.total_size() * self.metric.trace(&self.covariance.gamma)
            - 0.5 * self.log_size_sum() * self.dataset.m() as f64
    }

    /// `Δf̄ = f̄ − ⟨F⟩_σ`
    pub fn anchored_mean(&self) -> DVector<f64> {
        &self.covariance.mean - &self.reference_means
    }

    fn oriented(&self, matrix: &DMatrix<f64>, p: usize, orientation: Orientation, prefix: &str) -> Result<OrientedLevel> {
        let m = self.dataset.m();
        if p == 0 || p > m {
            return Err(Error::InvalidArgument(format!("orientation dimension {p} outside 1..={m}")));
        }
        let (eigenvalues, vectors) = generalized_eigen(matrix, &self.metric.matrix)?;
        let directions: Vec<DVector<f64>> = vectors.into_iter().take(p).collect();
        let ops = directions
            .iter()
            .map(|v| HermitianOperator::linear_combination(v.as_slice(), self.dataset.observable_operators()))
            .collect::<Result<Vec<_>>>()?;
        let level = LevelOfDescription::new(format!("{prefix}-p{p}"), ops)?;
        Ok(OrientedLevel {
            level,
            orientation,
            eigenvalues,
            directions,
        })
    }

    /// Level spanned by the top-`p` generalized eigenvectors of `(Γ, C)`.
    pub fn pca_orientation(&self, p: usize) -> Result<OrientedLevel> {
        self.oriented(&self.covariance.gamma, p, Orientation::Pca, "pca")
    }

    /// Like [`Analysis::pca_orientation`] but with the second moments taken
    /// about `⟨F⟩_σ` instead of `f̄`, so the offset of the data from the
    /// reference state counts as spread.
    pub fn anchored_orientation(&self, p: usize) -> Result<OrientedLevel> {
        let d = self.anchored_mean();
        let matrix = &self.covariance.gamma + &d * d.transpose();
        self.oriented(&matrix, p, Orientation::Anchored, "anchored")
    }
}
